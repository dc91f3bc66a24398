//! Finetuning objectives: L1 color loss, nearest-neighbor feature matching
//! (NNFM) and their weighted sum.

pub mod features;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::ImageRGB;

pub use features::{ExtractorConfig, FeatureExtractor, FeatureMap};

#[derive(Clone, Debug, PartialEq)]
pub struct NnfmOutput {
    pub loss: f64,
    /// dL/dF_r, laid out like the render feature map.
    pub grad: Vec<f64>,
    /// Index of the matched style position for each render position.
    pub matches: Vec<usize>,
    /// All-zero feature vectors seen in either map.
    pub zero_vectors: usize,
}

/// Cosine distance `1 - cos(a, b)`, clamped to `[0, 2]`; 1 when either
/// vector is zero.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let na2: f64 = a.iter().map(|v| v * v).sum();
    let nb2: f64 = b.iter().map(|v| v * v).sum();
    if na2 == 0.0 || nb2 == 0.0 {
        return 1.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    cos_to_distance(dot, na2, nb2)
}

/// `sqrt(|a|²|b|²)` rather than `|a||b|` so that identical vectors give
/// exactly zero.
#[inline]
fn cos_to_distance(dot: f64, na2: f64, nb2: f64) -> f64 {
    (1.0 - dot / (na2 * nb2).sqrt()).clamp(0.0, 2.0)
}

/// Mean over render positions of the smallest cosine distance to any style
/// position. The gradient flows through each position's argmin only; ties
/// resolve to the lowest style index.
pub fn nnfm_loss(render: &FeatureMap, style: &FeatureMap) -> Result<NnfmOutput> {
    if render.channels != style.channels {
        return Err(Error::ChannelMismatch { render: render.channels, style: style.channels });
    }
    if render.positions() == 0 || style.positions() == 0 || render.channels == 0 {
        return Err(Error::EmptyFeatureMap);
    }
    let c = render.channels;
    let style_sq: Vec<f64> = (0..style.positions()).map(|j| style.vector(j).iter().map(|v| v * v).sum()).collect();
    let zero_style = style_sq.iter().filter(|&&n| n == 0.0).count();

    let per_position: Vec<(f64, Vec<f64>, usize, bool)> = (0..render.positions())
        .into_par_iter()
        .map(|i| {
            let r = render.vector(i);
            let nr2: f64 = r.iter().map(|v| v * v).sum();
            if nr2 == 0.0 {
                return (1.0, vec![0.0; c], 0, true);
            }
            let mut best = (f64::INFINITY, 0usize);
            for (j, &ns2) in style_sq.iter().enumerate() {
                let d = if ns2 == 0.0 {
                    1.0
                } else {
                    let dot: f64 = r.iter().zip(style.vector(j)).map(|(a, b)| a * b).sum();
                    cos_to_distance(dot, nr2, ns2)
                };
                if d < best.0 {
                    best = (d, j);
                }
            }
            let (d, j) = best;
            let (nr, ns) = (nr2.sqrt(), style_sq[j].sqrt());
            let grad = if ns == 0.0 {
                vec![0.0; c]
            } else {
                let s = style.vector(j);
                let dot: f64 = r.iter().zip(s).map(|(a, b)| a * b).sum();
                r.iter()
                    .zip(s)
                    .map(|(rk, sk)| -(sk / (nr * ns) - dot * rk / (nr * nr * nr * ns)))
                    .collect()
            };
            (d, grad, j, false)
        })
        .collect();

    let m = render.positions() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(render.data.len());
    let mut matches = Vec::with_capacity(render.positions());
    let mut zero_vectors = zero_style;
    for (d, g, j, zero) in per_position {
        loss += d;
        grad.extend(g.into_iter().map(|v| v / m));
        matches.push(j);
        zero_vectors += zero as usize;
    }
    if zero_vectors > 0 {
        log::warn!("nnfm: {zero_vectors} all-zero feature vectors treated as distance 1");
    }
    Ok(NnfmOutput { loss: loss / m, grad, matches, zero_vectors })
}

/// Mean absolute per-channel difference and its subgradient (0 at ties).
pub fn l1_rgb_loss(render: &ImageRGB, target: &ImageRGB) -> Result<(f64, Vec<f64>)> {
    if !render.same_shape(target) {
        return Err(Error::ShapeMismatch(format!(
            "render {}x{} vs target {}x{}",
            render.width, render.height, target.width, target.height
        )));
    }
    let n = render.data.len() as f64;
    let mut loss = 0.0;
    let grad = render
        .data
        .iter()
        .zip(&target.data)
        .map(|(r, t)| {
            let d = r - t;
            loss += d.abs();
            if d > 0.0 {
                1.0 / n
            } else if d < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect();
    Ok((loss / n, grad))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub rgb: f64,
    pub nnfm: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { rgb: 1.0, nnfm: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneLoss {
    pub total: f64,
    pub l1: f64,
    pub nnfm: f64,
    /// dL/dpixels of the render.
    pub grad: Vec<f64>,
    pub zero_vectors: usize,
}

/// `w_rgb · L1(render, target) + w_nnfm · NNFM(φ(render), style_features)`.
/// The NNFM term is skipped entirely when its weight is zero.
pub fn finetune_loss(
    render: &ImageRGB,
    target: &ImageRGB,
    style_features: &FeatureMap,
    ext: &FeatureExtractor,
    weights: &LossWeights,
) -> Result<FinetuneLoss> {
    let (l1, l1_grad) = l1_rgb_loss(render, target)?;
    let mut grad: Vec<f64> = l1_grad.iter().map(|g| g * weights.rgb).collect();
    let mut out = FinetuneLoss { total: weights.rgb * l1, l1, nnfm: 0.0, grad: Vec::new(), zero_vectors: 0 };
    if weights.nnfm != 0.0 {
        let (features, tape) = ext.forward(render)?;
        let nn = nnfm_loss(&features, style_features)?;
        let pixel_grad = ext.backward(&tape, &nn.grad)?;
        for (g, p) in grad.iter_mut().zip(pixel_grad) {
            *g += weights.nnfm * p;
        }
        out.nnfm = nn.loss;
        out.total += weights.nnfm * nn.loss;
        out.zero_vectors = nn.zero_vectors;
    }
    out.grad = grad;
    Ok(out)
}
