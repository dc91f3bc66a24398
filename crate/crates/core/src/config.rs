//! Run configuration as TOML, one table per subsystem. Every field has a
//! default, so an empty file is a valid config.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::DiffusionConfig;
use crate::error::{Error, Result};
use crate::losses::{ExtractorConfig, LossWeights};
use crate::optim::AdamConfig;
use crate::raster::RasterConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupingConfig {
    /// Target group size N.
    pub views_per_group: usize,
}

impl Default for GroupingConfig {
    fn default() -> Self {
        Self { views_per_group: 15 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub iterations: usize,
    /// Gaussians spawned when training from scratch.
    pub scratch_gaussians: usize,
    /// Camera-space depth range sampled for scratch initialization.
    pub scratch_depth_near: f64,
    pub scratch_depth_far: f64,
    pub scratch_opacity: f64,
    pub optimizer: AdamConfig,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            scratch_gaussians: 5000,
            scratch_depth_near: 1.0,
            scratch_depth_far: 8.0,
            scratch_opacity: 0.1,
            optimizer: AdamConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationFlags {
    /// Discard the input scene and fit a fresh one to the targets.
    pub from_scratch: bool,
    /// Stylize every view on its own.
    pub no_nv_attention: bool,
    /// Drop the feature-matching term.
    pub no_nnfm: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Drives denoiser noise and scratch initialization.
    pub seed: u64,
    pub rasterizer: RasterConfig,
    pub grouping: GroupingConfig,
    pub diffusion: DiffusionConfig,
    pub losses: LossWeights,
    pub extractor: ExtractorConfig,
    pub finetune: FinetuneConfig,
    pub ablation: AblationFlags,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim().replace('\n', " ")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path).map_err(crate::error::io_at(path))?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// Loss weights after applying the ablation flags.
    pub fn effective_loss_weights(&self) -> LossWeights {
        let mut w = self.losses.clone();
        if self.ablation.no_nnfm {
            w.nnfm = 0.0;
        }
        w
    }

    pub fn validate(&self) -> Result<()> {
        self.diffusion.validate()?;
        if self.grouping.views_per_group == 0 {
            return Err(Error::InvalidGroupSize);
        }
        let r = &self.rasterizer;
        if r.tile_size == 0 || !(r.alpha_max > 0.0 && r.alpha_max < 1.0) || r.near_plane <= 0.0 || r.cutoff_sigma <= 0.0 {
            return Err(Error::Config("rasterizer: need tile_size > 0, 0 < alpha_max < 1, near_plane > 0, cutoff_sigma > 0".into()));
        }
        if self.extractor.channels.is_empty() || self.extractor.channels.contains(&0) {
            return Err(Error::Config("extractor.channels must be non-empty and positive".into()));
        }
        let f = &self.finetune;
        if !(f.scratch_depth_near > 0.0 && f.scratch_depth_far > f.scratch_depth_near) {
            return Err(Error::Config("finetune: need 0 < scratch_depth_near < scratch_depth_far".into()));
        }
        if !(f.scratch_opacity > 0.0 && f.scratch_opacity < 1.0) {
            return Err(Error::Config("finetune.scratch_opacity must be in (0, 1)".into()));
        }
        let o = &f.optimizer;
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || o.eps < 0.0 {
            return Err(Error::Config("finetune.optimizer: betas must be in [0, 1), eps >= 0".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(Config::from_toml_str("").unwrap(), Config::default());
    }

    #[test]
    fn dump_round_trips() {
        let mut c = Config::default();
        c.seed = 7;
        c.grouping.views_per_group = 4;
        c.finetune.optimizer.lr.color = 0.01;
        assert_eq!(Config::from_toml_str(&c.to_toml_string()).unwrap(), c);
    }

    #[test]
    fn partial_sections() {
        let c = Config::from_toml_str("[finetune]\niterations = 5\n[ablation]\nno_nnfm = true\n").unwrap();
        assert_eq!(c.finetune.iterations, 5);
        assert_eq!(c.finetune.scratch_gaussians, 5000);
        assert_eq!(c.effective_loss_weights().nnfm, 0.0);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(Config::from_toml_str("[grouping]\nn = 3\n"), Err(Error::Config(_))));
        assert!(matches!(Config::from_toml_str("[grouping]\nviews_per_group = 0\n"), Err(Error::InvalidGroupSize)));
    }
}
