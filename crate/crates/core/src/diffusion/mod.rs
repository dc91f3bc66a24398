//! Content/style conditioned latent denoiser with neighboring-view attention.

pub mod attention;
pub mod codec;
pub mod model;
pub mod scheduler;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grouping::ViewGroup;
use crate::scene::ImageRGB;

pub use attention::{attention, nv_attention, self_attention, Tokens};
pub use codec::{LatentCodec, LatentGrid};
pub use model::{ContentControl, DenoiserWeights, NvDiffusionModel, StyleControl};
pub use scheduler::{ddim_update, SchedulerConfig};

/// Independent deterministic stream for component `stream` of seed `seed`.
pub(crate) fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionConfig {
    pub steps: usize,
    pub alpha_start: f64,
    pub alpha_end: f64,
    pub token_dim: usize,
    pub patch_size: usize,
    pub style_tokens: usize,
    pub blocks: usize,
    pub mlp_ratio: usize,
    pub content_scale: f64,
    pub style_scale: f64,
    pub control_scale: f64,
    pub weight_seed: u64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            steps: 20,
            alpha_start: 0.999,
            alpha_end: 0.1,
            token_dim: 64,
            patch_size: 8,
            style_tokens: 4,
            blocks: 4,
            mlp_ratio: 2,
            content_scale: 1.0,
            style_scale: 0.6,
            control_scale: 1.0,
            weight_seed: 0,
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.token_dim < 3 {
            return Err(Error::Config("token_dim must be at least 3".into()));
        }
        if self.patch_size == 0 || self.style_tokens == 0 || self.mlp_ratio == 0 {
            return Err(Error::Config("patch_size, style_tokens and mlp_ratio must be positive".into()));
        }
        self.scheduler().map(|_| ())
    }

    pub fn scheduler(&self) -> Result<SchedulerConfig> {
        SchedulerConfig::linear(self.steps, self.alpha_start, self.alpha_end)
    }
}

/// DDIM step `step` for one latent; the result sits one noise level lower.
pub fn ddim_step(z: &LatentGrid, eps: &Tokens, step: usize, sched: &SchedulerConfig) -> Result<LatentGrid> {
    let (alpha, alpha_next) = sched.step_alphas(step)?;
    if eps.shape() != z.tokens.shape() {
        return Err(Error::ShapeMismatch("noise and latent shapes differ".into()));
    }
    let level = sched.steps() - step;
    // Tokens are column-major; the update is elementwise so storage order is irrelevant.
    let next = ddim_update(z.tokens.as_slice(), eps.as_slice(), alpha, alpha_next)?;
    Ok(LatentGrid {
        rows: z.rows,
        cols: z.cols,
        tokens: DMatrix::from_vec(z.tokens.nrows(), z.tokens.ncols(), next),
        timestep: level - 1,
    })
}

/// Initial noise latent of view `view` under `seed`; independent of grouping.
pub fn initial_noise(rows: usize, cols: usize, dim: usize, level: usize, seed: u64, view: usize) -> LatentGrid {
    let mut rng = seeded_rng(seed, 0x4E01_5E00_0000 + view as u64);
    let tokens = DMatrix::from_fn(rows * cols, dim, |_, _| StandardNormal.sample(&mut rng));
    LatentGrid { rows, cols, tokens, timestep: level }
}

/// Jointly stylizes the views of `group`. `contents[k]` is the content image
/// of `group.view_indices[k]`.
pub fn stylize_group(
    model: &NvDiffusionModel,
    group: &ViewGroup,
    contents: &[ImageRGB],
    style: &ImageRGB,
    seed: u64,
) -> Result<Vec<ImageRGB>> {
    if contents.len() != group.len() || contents.is_empty() {
        return Err(Error::ShapeMismatch(format!("{} content images for a group of {}", contents.len(), group.len())));
    }
    let sched = model.config.scheduler()?;
    let d_s = model.encode_style(style)?;
    let (w, h) = (contents[0].width, contents[0].height);
    if contents.iter().any(|c| c.width != w || c.height != h) {
        return Err(Error::ShapeMismatch("content images in a group must share a resolution".into()));
    }
    model.codec.check_resolution(w, h)?;
    let p = model.config.patch_size;
    let mut latents: Vec<LatentGrid> = group
        .view_indices
        .iter()
        .map(|&v| initial_noise(h / p, w / p, model.config.token_dim, sched.start_level(), seed, v))
        .collect();
    for step in 0..sched.steps() {
        let controls = model.encode_content_group(&latents, contents, &d_s)?;
        let eps = model.predict_noise(&latents, &controls, &d_s, &sched)?;
        latents = latents
            .iter()
            .zip(&eps)
            .map(|(z, e)| ddim_step(z, e, step, &sched))
            .collect::<Result<_>>()?;
    }
    latents.iter().map(|z| model.latent_decode(z)).collect()
}
