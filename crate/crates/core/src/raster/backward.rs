//! Analytic gradients of a scalar loss through compositing, the 2D falloff,
//! the EWA projection and the rotation/scale factorization.
//!
//! Pixels are partitioned into horizontal bands of `tile_size` rows. Each band
//! accumulates into its own buffer and the buffers are summed in band order,
//! so results do not depend on the worker count.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use super::{conic_of, projection_parts, RasterConfig, RenderPass};
use crate::error::{Error, Result};
use crate::scene::{quat_normalize, quat_norm, Camera, GaussianScene, Quat};

/// Partial derivatives of the loss for one gaussian.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GaussianGrad {
    pub position: Vector3<f64>,
    pub rotation: Quat,
    pub log_scale: Vector3<f64>,
    pub opacity_logit: f64,
    pub color: Vector3<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderGradients {
    pub gaussians: Vec<GaussianGrad>,
}

impl RenderGradients {
    pub fn zeros(n: usize) -> Self {
        Self { gaussians: vec![GaussianGrad::default(); n] }
    }

    pub fn is_finite(&self) -> bool {
        self.gaussians.iter().all(|g| {
            g.position.iter().all(|v| v.is_finite())
                && g.rotation.iter().all(|v| v.is_finite())
                && g.log_scale.iter().all(|v| v.is_finite())
                && g.opacity_logit.is_finite()
                && g.color.iter().all(|v| v.is_finite())
        })
    }
}

/// Screen-space gradient of one splat.
#[derive(Clone, Copy, Default)]
struct SplatGrad {
    mean: Vector2<f64>,
    conic: Matrix2<f64>,
    opacity: f64,
    color: Vector3<f64>,
}

impl std::ops::AddAssign for SplatGrad {
    fn add_assign(&mut self, o: Self) {
        self.mean += o.mean;
        self.conic += o.conic;
        self.opacity += o.opacity;
        self.color += o.color;
    }
}

/// Backpropagates `upstream` (dL/dpixel, row-major `h × w × 3`) through a
/// render of `scene` from `cam`.
pub fn render_backward(
    scene: &GaussianScene,
    cam: &Camera,
    cfg: &RasterConfig,
    upstream: &[f64],
) -> Result<RenderGradients> {
    let pass = RenderPass::new(scene, cam, cfg)?;
    let expected = pass.width * pass.height * 3;
    if upstream.len() != expected {
        return Err(Error::MismatchedForward { expected, got: upstream.len() });
    }
    // splat position in the sorted list, keyed by scene index
    let mut slot = vec![usize::MAX; scene.len()];
    for (k, (i, _)) in pass.splats.iter().enumerate() {
        slot[*i] = k;
    }

    let band = cfg.tile_size.max(1);
    let bands = pass.height.div_ceil(band);
    let partials: Vec<Vec<SplatGrad>> = (0..bands)
        .into_par_iter()
        .map(|b| {
            let mut acc = vec![SplatGrad::default(); pass.splats.len()];
            for y in b * band..((b + 1) * band).min(pass.height) {
                for x in 0..pass.width {
                    let i = (y * pass.width + x) * 3;
                    let g = Vector3::new(upstream[i], upstream[i + 1], upstream[i + 2]);
                    if g == Vector3::zeros() {
                        continue;
                    }
                    backprop_pixel(&pass, x, y, &g, &slot, &mut acc);
                }
            }
            acc
        })
        .collect();

    let mut total = vec![SplatGrad::default(); pass.splats.len()];
    for part in partials {
        for (t, p) in total.iter_mut().zip(part) {
            *t += p;
        }
    }

    let mut grads = RenderGradients::zeros(scene.len());
    let per_splat: Vec<(usize, GaussianGrad)> = pass
        .splats
        .par_iter()
        .zip(total.par_iter())
        .map(|((i, _), sg)| (*i, backprop_projection(scene, *i, cam, cfg, sg)))
        .collect();
    for (i, g) in per_splat {
        grads.gaussians[i] = g;
    }
    Ok(grads)
}

fn backprop_pixel(pass: &RenderPass, x: usize, y: usize, g: &Vector3<f64>, slot: &[usize], acc: &mut [SplatGrad]) {
    let (contribs, t_final) = pass.contributions(x, y);
    // suffix: color composited behind the current splat, background included
    let mut behind = pass.background * t_final;
    for k in contribs.iter().rev() {
        let s = slot[k.gaussian];
        let splat = &pass.splats[s].1;
        let weight = k.alpha * k.transmittance;
        let entry = &mut acc[s];
        entry.color += g * weight;
        let d_alpha = g.dot(&(splat.color * k.transmittance - behind / (1.0 - k.alpha)));
        behind += splat.color * weight;
        if k.clamped {
            continue;
        }
        entry.opacity += d_alpha * k.falloff;
        // q = dᵀ Q d, α = o·exp(-q/2)
        let d_q = -0.5 * d_alpha * splat.opacity * k.falloff;
        let d = k.offset;
        entry.mean += -2.0 * d_q * (splat.conic * d);
        entry.conic += d_q * (d * d.transpose());
    }
}

fn backprop_projection(scene: &GaussianScene, i: usize, cam: &Camera, cfg: &RasterConfig, sg: &SplatGrad) -> GaussianGrad {
    let gauss = &scene.gaussians[i];
    let parts = projection_parts(gauss, cam, cfg);
    let (x, y, z) = (parts.cam_point.x, parts.cam_point.y, parts.cam_point.z);

    // Q = C⁻¹  ⇒  dC = -Q dQ Q
    let conic = conic_of(&parts.cov2d);
    let d_cov2d: Matrix2<f64> = -(conic * sg.conic * conic);
    let j: Matrix2x3<f64> = parts.jacobian;
    let d_cov_cam: Matrix3<f64> = j.transpose() * d_cov2d * j;
    let d_j: Matrix2x3<f64> = (d_cov2d + d_cov2d.transpose()) * j * parts.cov_cam;

    // camera-space point, through the mean and the Jacobian
    let (fx, fy) = (cam.fx, cam.fy);
    let mut d_t = Vector3::new(
        sg.mean.x * fx / z,
        sg.mean.y * fy / z,
        -sg.mean.x * fx * x / (z * z) - sg.mean.y * fy * y / (z * z),
    );
    let z2 = z * z;
    let z3 = z2 * z;
    d_t.x += d_j[(0, 2)] * (-fx / z2);
    d_t.y += d_j[(1, 2)] * (-fy / z2);
    d_t.z += d_j[(0, 0)] * (-fx / z2)
        + d_j[(0, 2)] * (2.0 * fx * x / z3)
        + d_j[(1, 1)] * (-fy / z2)
        + d_j[(1, 2)] * (2.0 * fy * y / z3);
    let position = cam.rotation.transpose() * d_t;

    // Σ = M Mᵀ, M = R S
    let d_sigma: Matrix3<f64> = cam.rotation.transpose() * d_cov_cam * cam.rotation;
    let m = parts.rotation * Matrix3::from_diagonal(&parts.scale);
    let d_m: Matrix3<f64> = (d_sigma + d_sigma.transpose()) * m;
    let d_r: Matrix3<f64> = d_m * Matrix3::from_diagonal(&parts.scale);
    let rt_dm = parts.rotation.transpose() * d_m;
    let log_scale = Vector3::new(
        rt_dm[(0, 0)] * parts.scale.x,
        rt_dm[(1, 1)] * parts.scale.y,
        rt_dm[(2, 2)] * parts.scale.z,
    );
    let rotation = rotation_grad(&gauss.rotation, &d_r);

    let o = gauss.opacity();
    GaussianGrad {
        position,
        rotation,
        log_scale,
        opacity_logit: sg.opacity * o * (1.0 - o),
        color: sg.color,
    }
}

/// dL/dq for the unnormalized quaternion given dL/dR, with `R = R(q/|q|)`.
fn rotation_grad(q: &Quat, d_r: &Matrix3<f64>) -> Quat {
    let [w, x, y, z] = quat_normalize(q);
    let dw = Matrix3::new(0.0, -2.0 * z, 2.0 * y, 2.0 * z, 0.0, -2.0 * x, -2.0 * y, 2.0 * x, 0.0);
    let dx = Matrix3::new(0.0, 2.0 * y, 2.0 * z, 2.0 * y, -4.0 * x, -2.0 * w, 2.0 * z, 2.0 * w, -4.0 * x);
    let dy = Matrix3::new(-4.0 * y, 2.0 * x, 2.0 * w, 2.0 * x, 0.0, 2.0 * z, -2.0 * w, 2.0 * z, -4.0 * y);
    let dz = Matrix3::new(-4.0 * z, -2.0 * w, 2.0 * x, 2.0 * w, -4.0 * z, 2.0 * y, 2.0 * x, 2.0 * y, 0.0);
    let gn = [d_r.dot(&dw), d_r.dot(&dx), d_r.dot(&dy), d_r.dot(&dz)];
    // project out the radial component of q̂ = q/|q|
    let n = quat_norm(q);
    let radial = gn[0] * w + gn[1] * x + gn[2] * y + gn[3] * z;
    [
        (gn[0] - radial * w) / n,
        (gn[1] - radial * x) / n,
        (gn[2] - radial * y) / n,
        (gn[3] - radial * z) / n,
    ]
}
