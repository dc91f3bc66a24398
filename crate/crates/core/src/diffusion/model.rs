//! Seeded toy denoiser with separated content and style conditioning.
//!
//! Main stream, per block: neighboring-view self-attention, one
//! cross-attention over the content tokens and a second, independent one over
//! the style tokens, the control-branch residual, then an MLP.
//!
//! The control branch mirrors the block structure. It reads the noisy latent
//! plus the content patches, attends over the style tokens, and emits one
//! residual per block.
//!
//! The network predicts a clean latent `x̂₀` and reports noise as
//! `ε = g (z - √α x̂₀) / √(1-α)` with a learnable-style gain `g`.

use nalgebra::DMatrix;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::attention::{attention, nv_attention, Tokens};
use super::codec::{LatentCodec, LatentGrid};
use super::scheduler::SchedulerConfig;
use super::{seeded_rng, DiffusionConfig};
use crate::error::{Error, Result};
use crate::scene::ImageRGB;

#[derive(Clone, Debug)]
pub struct AttnWeights {
    pub q: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub o: DMatrix<f64>,
}

#[derive(Clone, Debug)]
pub struct MlpWeights {
    pub up: DMatrix<f64>,
    pub down: DMatrix<f64>,
}

#[derive(Clone, Debug)]
pub struct BlockWeights {
    pub self_attn: AttnWeights,
    pub content_attn: AttnWeights,
    pub style_attn: AttnWeights,
    pub mlp: MlpWeights,
}

#[derive(Clone, Debug)]
pub struct ControlBlockWeights {
    pub self_attn: AttnWeights,
    pub style_attn: AttnWeights,
    pub mlp: MlpWeights,
    /// Output projection of this block's residual.
    pub out: DMatrix<f64>,
}

/// All denoiser parameters; fixed after construction.
#[derive(Clone, Debug)]
pub struct DenoiserWeights {
    pub seed: u64,
    pub input: DMatrix<f64>,
    pub time: DMatrix<f64>,
    pub blocks: Vec<BlockWeights>,
    pub control_latent: DMatrix<f64>,
    pub control_content: DMatrix<f64>,
    pub control_blocks: Vec<ControlBlockWeights>,
    pub output: DMatrix<f64>,
    pub eps_gain: f64,
    /// Content projection (patch → token).
    pub content_proj: DMatrix<f64>,
    /// Style patch embedding (patch → token).
    pub style_embed: DMatrix<f64>,
    /// One pooling query per style token.
    pub style_heads: DMatrix<f64>,
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        let s: f64 = StandardNormal.sample(rng);
        s * std
    })
}

fn near_identity(rng: &mut ChaCha8Rng, d: usize, gain: f64, noise: f64) -> DMatrix<f64> {
    DMatrix::identity(d, d) * gain + gaussian(rng, d, d, noise / (d as f64).sqrt())
}

impl AttnWeights {
    fn random(rng: &mut ChaCha8Rng, d: usize, out_gain: f64) -> Self {
        let s = 1.0 / (d as f64).sqrt();
        Self {
            q: gaussian(rng, d, d, s),
            k: gaussian(rng, d, d, s),
            v: gaussian(rng, d, d, s),
            o: gaussian(rng, d, d, out_gain * s),
        }
    }

    fn value_passing(rng: &mut ChaCha8Rng, d: usize, out_gain: f64) -> Self {
        let s = 1.0 / (d as f64).sqrt();
        Self {
            q: gaussian(rng, d, d, s),
            k: gaussian(rng, d, d, s),
            v: near_identity(rng, d, 1.0, 0.2),
            o: near_identity(rng, d, out_gain, 0.1 * out_gain),
        }
    }

    fn zeros(d: usize) -> Self {
        let z = DMatrix::zeros(d, d);
        Self { q: z.clone(), k: z.clone(), v: z.clone(), o: z }
    }
}

impl MlpWeights {
    fn random(rng: &mut ChaCha8Rng, d: usize, hidden: usize, out_gain: f64) -> Self {
        Self {
            up: gaussian(rng, d, hidden, 1.0 / (d as f64).sqrt()),
            down: gaussian(rng, hidden, d, out_gain / (hidden as f64).sqrt()),
        }
    }

    fn zeros(d: usize, hidden: usize) -> Self {
        Self { up: DMatrix::zeros(d, hidden), down: DMatrix::zeros(hidden, d) }
    }
}

impl DenoiserWeights {
    pub fn seeded(cfg: &DiffusionConfig, codec: &LatentCodec) -> Self {
        let d = cfg.token_dim;
        let hidden = d * cfg.mlp_ratio;
        let patch_dim = cfg.patch_size * cfg.patch_size * 3;
        let depth = cfg.blocks as f64;
        let mut rng = seeded_rng(cfg.weight_seed, 0xDE7015E);
        let color = codec.patch_mean_lift();
        let texture = 1.0 / (patch_dim as f64).sqrt();

        let input = gaussian(&mut rng, d, d, 0.2 / (d as f64).sqrt());
        let time = gaussian(&mut rng, d, d, 0.1 / (d as f64).sqrt());
        let blocks = (0..cfg.blocks)
            .map(|_| BlockWeights {
                self_attn: AttnWeights::random(&mut rng, d, 0.3),
                content_attn: AttnWeights::random(&mut rng, d, 0.2),
                style_attn: AttnWeights::value_passing(&mut rng, d, 0.6 / depth),
                mlp: MlpWeights::random(&mut rng, d, hidden, 0.2),
            })
            .collect();
        let control_latent = gaussian(&mut rng, d, d, 0.2 / (d as f64).sqrt());
        let control_content = &color + gaussian(&mut rng, patch_dim, d, 0.1 * texture);
        let control_blocks = (0..cfg.blocks)
            .map(|_| ControlBlockWeights {
                self_attn: AttnWeights::random(&mut rng, d, 0.3),
                style_attn: AttnWeights::random(&mut rng, d, 0.2),
                mlp: MlpWeights::random(&mut rng, d, hidden, 0.2),
                out: near_identity(&mut rng, d, 1.0 / depth, 0.05),
            })
            .collect();
        let output = near_identity(&mut rng, d, 1.0, 0.05);
        let content_proj = &color + gaussian(&mut rng, patch_dim, d, 0.5 * texture);
        let style_embed = &color + gaussian(&mut rng, patch_dim, d, 0.5 * texture);
        let style_heads = gaussian(&mut rng, cfg.style_tokens, d, 1.0);
        Self {
            seed: cfg.weight_seed,
            input,
            time,
            blocks,
            control_latent,
            control_content,
            control_blocks,
            output,
            eps_gain: 1.0,
            content_proj,
            style_embed,
            style_heads,
        }
    }

    /// Every parameter zero.
    pub fn zeros(cfg: &DiffusionConfig) -> Self {
        let d = cfg.token_dim;
        let hidden = d * cfg.mlp_ratio;
        let patch_dim = cfg.patch_size * cfg.patch_size * 3;
        let z = |r, c| DMatrix::zeros(r, c);
        Self {
            seed: cfg.weight_seed,
            input: z(d, d),
            time: z(d, d),
            blocks: (0..cfg.blocks)
                .map(|_| BlockWeights {
                    self_attn: AttnWeights::zeros(d),
                    content_attn: AttnWeights::zeros(d),
                    style_attn: AttnWeights::zeros(d),
                    mlp: MlpWeights::zeros(d, hidden),
                })
                .collect(),
            control_latent: z(d, d),
            control_content: z(patch_dim, d),
            control_blocks: (0..cfg.blocks)
                .map(|_| ControlBlockWeights {
                    self_attn: AttnWeights::zeros(d),
                    style_attn: AttnWeights::zeros(d),
                    mlp: MlpWeights::zeros(d, hidden),
                    out: z(d, d),
                })
                .collect(),
            output: z(d, d),
            eps_gain: 0.0,
            content_proj: z(patch_dim, d),
            style_embed: z(patch_dim, d),
            style_heads: z(cfg.style_tokens, d),
        }
    }
}

/// Style conditioning tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleControl {
    pub tokens: Tokens,
}

/// Content conditioning for one view.
#[derive(Clone, Debug, PartialEq)]
pub struct ContentControl {
    pub proj_tokens: Tokens,
    /// One residual per denoiser block, shaped like the block activations.
    pub control_residuals: Vec<Tokens>,
}

/// Codec, weights and configuration of the conditioned denoiser.
#[derive(Clone, Debug)]
pub struct NvDiffusionModel {
    pub config: DiffusionConfig,
    pub codec: LatentCodec,
    pub weights: DenoiserWeights,
}

/// Token-wise normalization without learned parameters.
fn layer_norm(x: &Tokens) -> Tokens {
    let d = x.ncols() as f64;
    let mut out = x.clone();
    for mut row in out.row_iter_mut() {
        let mean = row.sum() / d;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        let inv = 1.0 / (var + 1e-6).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * inv;
        }
    }
    out
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (0.797_884_560_802_865_4 * (x + 0.044_715 * x * x * x)).tanh())
}

fn mlp(w: &MlpWeights, x: &Tokens) -> Tokens {
    (x * &w.up).map(gelu) * &w.down
}

fn cross_attention(w: &AttnWeights, x: &Tokens, context: &Tokens) -> Result<Tokens> {
    Ok(attention(&(x * &w.q), &(context * &w.k), &(context * &w.v))? * &w.o)
}

/// Neighboring-view self-attention across a group of token streams.
fn group_self_attention(w: &AttnWeights, streams: &[Tokens]) -> Result<Vec<Tokens>> {
    let normed: Vec<Tokens> = streams.iter().map(layer_norm).collect();
    let q: Vec<Tokens> = normed.iter().map(|x| x * &w.q).collect();
    let k: Vec<Tokens> = normed.iter().map(|x| x * &w.k).collect();
    let v: Vec<Tokens> = normed.iter().map(|x| x * &w.v).collect();
    Ok(nv_attention(&q, &k, &v)?.into_iter().map(|o| o * &w.o).collect())
}

fn time_embedding(t: usize, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(1, d, |_, i| {
        let freq = (10_000f64).powf(-((i / 2) as f64) / (d / 2).max(1) as f64);
        let phase = t as f64 * freq;
        if i % 2 == 0 {
            phase.sin()
        } else {
            phase.cos()
        }
    })
}

impl NvDiffusionModel {
    pub fn new(config: DiffusionConfig) -> Result<Self> {
        config.validate()?;
        let codec = LatentCodec::new(config.token_dim, config.patch_size, config.weight_seed);
        let weights = DenoiserWeights::seeded(&config, &codec);
        Ok(Self { config, codec, weights })
    }

    pub fn with_weights(config: DiffusionConfig, weights: DenoiserWeights) -> Result<Self> {
        config.validate()?;
        let codec = LatentCodec::new(config.token_dim, config.patch_size, config.weight_seed);
        Ok(Self { config, codec, weights })
    }

    pub fn latent_encode(&self, img: &ImageRGB) -> Result<LatentGrid> {
        self.codec.encode(img)
    }

    pub fn latent_decode(&self, z: &LatentGrid) -> Result<ImageRGB> {
        self.codec.decode(z)
    }

    /// Patch-embeds the style image and pools it into `style_tokens` tokens,
    /// each a softmax-weighted mean of patch embeddings, scaled by
    /// `style_scale`.
    pub fn encode_style(&self, style: &ImageRGB) -> Result<StyleControl> {
        let embeds = self.codec.patches(style)? * &self.weights.style_embed;
        let pooled = attention(&self.weights.style_heads, &embeds, &embeds)?;
        Ok(StyleControl { tokens: pooled * self.config.style_scale })
    }

    /// Content controls for every view of a group; self-attention in the
    /// control branch is shared across the group.
    pub fn encode_content_group(
        &self,
        latents: &[LatentGrid],
        contents: &[ImageRGB],
        style: &StyleControl,
    ) -> Result<Vec<ContentControl>> {
        if latents.len() != contents.len() || latents.is_empty() {
            return Err(Error::ShapeMismatch(format!("{} latents for {} content images", latents.len(), contents.len())));
        }
        let d = self.config.token_dim;
        if style.tokens.ncols() != d {
            return Err(Error::ShapeMismatch(format!("style tokens have dim {}, expected {d}", style.tokens.ncols())));
        }
        let w = &self.weights;
        let mut proj = Vec::with_capacity(latents.len());
        let mut streams = Vec::with_capacity(latents.len());
        for (z, img) in latents.iter().zip(contents) {
            let patches = self.codec.patches(img)?;
            if patches.nrows() != z.tokens.nrows() || z.dim() != d {
                return Err(Error::ShapeMismatch(format!(
                    "content image has {} patches, latent has {} tokens of dim {}",
                    patches.nrows(),
                    z.tokens.nrows(),
                    z.dim()
                )));
            }
            proj.push(&patches * &w.content_proj * self.config.content_scale);
            streams.push(&z.tokens * &w.control_latent + &patches * &w.control_content);
        }

        let mut residuals: Vec<Vec<Tokens>> = vec![Vec::with_capacity(w.control_blocks.len()); latents.len()];
        for block in &w.control_blocks {
            let attn = group_self_attention(&block.self_attn, &streams)?;
            for (i, h) in streams.iter_mut().enumerate() {
                *h += &attn[i];
                *h += cross_attention(&block.style_attn, &layer_norm(h), &style.tokens)?;
                *h += mlp(&block.mlp, &layer_norm(h));
                residuals[i].push(&*h * &block.out * self.config.control_scale);
            }
        }
        Ok(proj
            .into_iter()
            .zip(residuals)
            .map(|(proj_tokens, control_residuals)| ContentControl { proj_tokens, control_residuals })
            .collect())
    }

    /// Single-view content control.
    pub fn encode_content(&self, z: &LatentGrid, content: &ImageRGB, style: &StyleControl) -> Result<ContentControl> {
        Ok(self
            .encode_content_group(std::slice::from_ref(z), std::slice::from_ref(content), style)?
            .remove(0))
    }

    /// Clean-latent estimate `x̂₀` for every view of the group.
    pub fn predict_clean(
        &self,
        latents: &[LatentGrid],
        controls: &[ContentControl],
        style: &StyleControl,
    ) -> Result<Vec<Tokens>> {
        let Some(first) = latents.first() else {
            return Err(Error::ShapeMismatch("empty view group".into()));
        };
        if latents.iter().any(|z| z.timestep != first.timestep) {
            return Err(Error::TimestepMismatch);
        }
        if controls.len() != latents.len() {
            return Err(Error::ShapeMismatch(format!("{} controls for {} latents", controls.len(), latents.len())));
        }
        let w = &self.weights;
        for c in controls {
            if c.control_residuals.len() != w.blocks.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{} control residuals for {} blocks",
                    c.control_residuals.len(),
                    w.blocks.len()
                )));
            }
        }
        let temb = time_embedding(first.timestep, self.config.token_dim) * &w.time;
        let mut streams: Vec<Tokens> = latents
            .iter()
            .map(|z| {
                let mut h = &z.tokens * &w.input;
                for mut row in h.row_iter_mut() {
                    row += &temb;
                }
                h
            })
            .collect();
        for (b, block) in w.blocks.iter().enumerate() {
            let attn = group_self_attention(&block.self_attn, &streams)?;
            for (i, h) in streams.iter_mut().enumerate() {
                *h += &attn[i];
                let normed = layer_norm(h);
                let from_content = cross_attention(&block.content_attn, &normed, &controls[i].proj_tokens)?;
                let from_style = cross_attention(&block.style_attn, &normed, &style.tokens)?;
                *h += from_content + from_style;
                let residual = &controls[i].control_residuals[b];
                if residual.shape() != h.shape() {
                    return Err(Error::ShapeMismatch("control residual does not match block activations".into()));
                }
                *h += residual;
                *h += mlp(&block.mlp, &layer_norm(h));
            }
        }
        Ok(streams.into_iter().map(|h| h * &w.output).collect())
    }

    /// Predicted noise `ε` for each view of the group at its current level.
    pub fn predict_noise(
        &self,
        latents: &[LatentGrid],
        controls: &[ContentControl],
        style: &StyleControl,
        sched: &SchedulerConfig,
    ) -> Result<Vec<Tokens>> {
        let clean = self.predict_clean(latents, controls, style)?;
        let level = latents[0].timestep;
        let alpha = *sched
            .alphas
            .get(level)
            .ok_or(Error::IndexOutOfRange { index: level, steps: sched.steps() })?;
        let signal = alpha.sqrt();
        let noise = (1.0 - alpha).sqrt().max(1e-12);
        let gain = self.weights.eps_gain;
        Ok(latents
            .iter()
            .zip(clean)
            .map(|(z, x0)| (&z.tokens - x0 * signal) * (gain / noise))
            .collect())
    }
}
