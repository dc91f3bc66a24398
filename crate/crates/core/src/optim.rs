//! Adam with one learning rate per Gaussian parameter group.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::RenderGradients;
use crate::scene::{quat_normalize, GaussianScene};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    pub position: f64,
    pub rotation: f64,
    pub log_scale: f64,
    pub opacity_logit: f64,
    pub color: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self { position: 1.6e-4, rotation: 1e-3, log_scale: 5e-3, opacity_logit: 5e-2, color: 2.5e-3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr: LearningRates,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-15, lr: LearningRates::default() }
    }
}

/// Parameter groups in flattening order, with their per-Gaussian widths.
const GROUPS: [(&str, usize); 5] = [("position", 3), ("rotation", 4), ("log_scale", 3), ("opacity_logit", 1), ("color", 3)];

/// First and second moments for one parameter group, `width` values per
/// Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub name: &'static str,
    pub width: usize,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    pub groups: Vec<Moments>,
}

fn group_values(scene: &GaussianScene, group: usize) -> Vec<f64> {
    scene
        .gaussians
        .iter()
        .flat_map(|g| match group {
            0 => g.position.as_slice().to_vec(),
            1 => g.rotation.to_vec(),
            2 => g.log_scale.as_slice().to_vec(),
            3 => vec![g.opacity_logit],
            _ => g.color.as_slice().to_vec(),
        })
        .collect()
}

fn grad_values(grads: &RenderGradients, group: usize) -> Vec<f64> {
    grads
        .gaussians
        .iter()
        .flat_map(|g| match group {
            0 => g.position.as_slice().to_vec(),
            1 => g.rotation.to_vec(),
            2 => g.log_scale.as_slice().to_vec(),
            3 => vec![g.opacity_logit],
            _ => g.color.as_slice().to_vec(),
        })
        .collect()
}

fn write_group(scene: &mut GaussianScene, group: usize, values: &[f64]) {
    let w = GROUPS[group].1;
    for (g, v) in scene.gaussians.iter_mut().zip(values.chunks_exact(w)) {
        match group {
            0 => g.position.copy_from_slice(v),
            1 => g.rotation.copy_from_slice(v),
            2 => g.log_scale.copy_from_slice(v),
            3 => g.opacity_logit = v[0],
            _ => g.color.copy_from_slice(v),
        }
    }
}

impl OptimizerState {
    pub fn new(config: AdamConfig, scene: &GaussianScene) -> Self {
        let n = scene.len();
        let groups = GROUPS
            .iter()
            .map(|&(name, width)| Moments { name, width, m: vec![0.0; n * width], v: vec![0.0; n * width] })
            .collect();
        Self { config, step: 0, groups }
    }

    pub fn learning_rate(&self, group: usize) -> f64 {
        let lr = &self.config.lr;
        [lr.position, lr.rotation, lr.log_scale, lr.opacity_logit, lr.color][group]
    }

    pub fn is_finite(&self) -> bool {
        self.groups.iter().all(|g| g.m.iter().chain(&g.v).all(|x| x.is_finite()))
    }

    /// One bias-corrected Adam update. Afterwards quaternions are
    /// renormalized and colors clamped to `[0, 1]`.
    pub fn step(&mut self, scene: &mut GaussianScene, grads: &RenderGradients) -> Result<()> {
        if grads.gaussians.len() != scene.len() || self.groups[0].m.len() != scene.len() * 3 {
            return Err(Error::ShapeMismatch(format!(
                "{} gradients / {} moment rows for {} gaussians",
                grads.gaussians.len(),
                self.groups[0].m.len() / 3,
                scene.len()
            )));
        }
        self.step += 1;
        let (b1, b2, eps) = (self.config.beta1, self.config.beta2, self.config.eps);
        let t = self.step as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for gi in 0..GROUPS.len() {
            let lr = self.learning_rate(gi);
            let grad = grad_values(grads, gi);
            let mut values = group_values(scene, gi);
            let mom = &mut self.groups[gi];
            for k in 0..values.len() {
                let g = grad[k];
                mom.m[k] = b1 * mom.m[k] + (1.0 - b1) * g;
                mom.v[k] = b2 * mom.v[k] + (1.0 - b2) * g * g;
                let mhat = mom.m[k] / c1;
                let vhat = mom.v[k] / c2;
                values[k] -= lr * mhat / (vhat.sqrt() + eps);
            }
            write_group(scene, gi, &values);
        }
        for g in &mut scene.gaussians {
            g.rotation = quat_normalize(&g.rotation);
            g.color = g.color.map(|c| c.clamp(0.0, 1.0));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GaussianGrad;
    use crate::scene::{Gaussian3D, IDENTITY_QUAT};
    use nalgebra::Vector3;

    fn scene() -> GaussianScene {
        let g = Gaussian3D::new(Vector3::new(0.0, 0.0, 3.0), IDENTITY_QUAT, Vector3::repeat(0.1), 0.5, Vector3::new(0.5, 0.5, 0.5));
        GaussianScene::new(vec![g], Vector3::zeros())
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut s = scene();
        let before = s.clone();
        let mut opt = OptimizerState::new(AdamConfig::default(), &s);
        opt.step(&mut s, &RenderGradients::zeros(1)).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = scene();
        let mut opt = OptimizerState::new(AdamConfig::default(), &s);
        let mut g = GaussianGrad::default();
        g.position = Vector3::new(2.0, -3.0, 0.0);
        g.opacity_logit = 0.7;
        opt.step(&mut s, &RenderGradients { gaussians: vec![g] }).unwrap();
        let p = s.gaussians[0].position;
        assert!((p.x + 1.6e-4).abs() < 1e-12 && (p.y - 1.6e-4).abs() < 1e-12 && p.z == 3.0);
        assert!((s.gaussians[0].opacity_logit + 5e-2).abs() < 1e-12);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn rotation_stays_unit_and_colors_clamped() {
        let mut s = scene();
        let mut opt = OptimizerState::new(AdamConfig::default(), &s);
        let mut g = GaussianGrad::default();
        g.rotation = [0.3, -1.0, 2.0, 0.5];
        g.color = Vector3::new(-1e3, 1e3, 0.0);
        s.gaussians[0].color = Vector3::new(0.9995, 0.0001, 0.5);
        for _ in 0..10 {
            opt.step(&mut s, &RenderGradients { gaussians: vec![g.clone()] }).unwrap();
            let q = s.gaussians[0].rotation;
            assert!((q.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() < 1e-12);
        }
        assert_eq!(s.gaussians[0].color.x, 1.0);
        assert_eq!(s.gaussians[0].color.y, 0.0);
    }

    #[test]
    fn shape_mismatch() {
        let mut s = scene();
        let mut opt = OptimizerState::new(AdamConfig::default(), &s);
        assert!(opt.step(&mut s, &RenderGradients::zeros(2)).is_err());
    }
}
