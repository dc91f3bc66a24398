//! Deterministic DDIM update.
//!
//! `alphas[t]` is the cumulative signal coefficient at noise level `t`,
//! strictly decreasing from the clean end (`t = 0`) to the noisy end
//! (`t = T`). Sampling step `s` moves a latent from level `T - s` to
//! `T - s - 1`.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SchedulerConfig {
    pub alphas: Vec<f64>,
}

impl SchedulerConfig {
    /// `steps + 1` levels spaced linearly from `start` (clean) to `end` (noisy).
    pub fn linear(steps: usize, start: f64, end: f64) -> Result<Self> {
        let alphas = if steps == 0 {
            vec![end]
        } else {
            (0..=steps).map(|i| start + (end - start) * i as f64 / steps as f64).collect()
        };
        let sched = Self { alphas };
        sched.validate()?;
        Ok(sched)
    }

    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() {
            return Err(Error::Config("scheduler needs at least one level".into()));
        }
        if self.alphas[0] > 1.0 || self.alphas.iter().any(|a| !(*a > 0.0) || *a > 1.0) {
            return Err(Error::Config("scheduling coefficients must lie in (0, 1]".into()));
        }
        if self.alphas.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config("scheduling coefficients must strictly decrease with noise level".into()));
        }
        Ok(())
    }

    /// Number of sampling steps.
    pub fn steps(&self) -> usize {
        self.alphas.len() - 1
    }

    /// Noise level a latent starts from.
    pub fn start_level(&self) -> usize {
        self.steps()
    }

    /// `(α_t, α_{t+1})` for sampling step `step`.
    pub fn step_alphas(&self, step: usize) -> Result<(f64, f64)> {
        let steps = self.steps();
        if step >= steps {
            return Err(Error::IndexOutOfRange { index: step, steps });
        }
        let level = steps - step;
        let current = self.alphas[level];
        if !(current > 0.0) {
            return Err(Error::DegenerateAlpha(level));
        }
        Ok((current, self.alphas[level - 1]))
    }
}

/// One DDIM update,
/// `z' = √α' (z - √(1-α) ε) / √α + √(1-α') ε`,
/// evaluated as `c₁ z + c₂ ε` with `c₁ = √(α'/α)` and
/// `c₂ = √(1-α') - c₁ √(1-α)`. The coefficient form makes `ε = 0` and
/// `α' = α` reproduce `c₁ z` and `z` bit for bit.
pub fn ddim_update(z: &[f64], eps: &[f64], alpha: f64, alpha_next: f64) -> Result<Vec<f64>> {
    if z.len() != eps.len() {
        return Err(Error::ShapeMismatch(format!("latent has {} values, noise {}", z.len(), eps.len())));
    }
    if !(alpha > 0.0) {
        return Err(Error::DegenerateAlpha(0));
    }
    let c1 = (alpha_next / alpha).sqrt();
    let c2 = (1.0 - alpha_next).sqrt() - c1 * (1.0 - alpha).sqrt();
    Ok(z.iter().zip(eps).map(|(z, e)| c1 * z + c2 * e).collect())
}
