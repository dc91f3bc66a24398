//! Full stylization run: render content views, stylize them in view groups,
//! then finetune the scene against the stylized targets.

use nalgebra::Vector3;
use rand::Rng;
use rayon::prelude::*;

use crate::config::{AblationFlags, Config};
use crate::diffusion::{stylize_group, NvDiffusionModel};
use crate::error::{Error, Result};
use crate::grouping::{group_views, singleton_groups, ViewGroup};
use crate::losses::{finetune_loss, FeatureExtractor, FeatureMap, LossWeights};
use crate::metrics::{evaluate, ImportedDescriptors, MetricReport};
use crate::optim::OptimizerState;
use crate::raster::{render, render_backward, RasterConfig};
use crate::scene::{Camera, Gaussian3D, GaussianScene, ImageRGB, IDENTITY_QUAT};

/// Inputs and dataset state of one stylization run.
#[derive(Clone, Debug)]
pub struct StylizationRun {
    pub scene: GaussianScene,
    pub cameras: Vec<Camera>,
    pub style: ImageRGB,
    pub config: Config,
    /// Content renders `I_c`, one per camera.
    pub contents: Vec<ImageRGB>,
    pub groups: Vec<ViewGroup>,
    /// Stylized targets aligned with `cameras`.
    pub targets: Vec<ImageRGB>,
}

impl StylizationRun {
    pub fn new(scene: GaussianScene, cameras: Vec<Camera>, style: ImageRGB, config: Config) -> Result<Self> {
        if cameras.is_empty() {
            return Err(Error::EmptyCameraList);
        }
        if scene.is_empty() {
            return Err(Error::EmptyScene);
        }
        for c in &cameras {
            c.validate()?;
        }
        config.validate()?;
        Ok(Self { scene, cameras, style, config, contents: Vec::new(), groups: Vec::new(), targets: Vec::new() })
    }

    pub fn flags(&self) -> &AblationFlags {
        &self.config.ablation
    }

    pub fn with_flags(mut self, flags: AblationFlags) -> Self {
        self.config.ablation = flags;
        self
    }
}

pub fn render_views(scene: &GaussianScene, cameras: &[Camera], cfg: &RasterConfig) -> Result<Vec<ImageRGB>> {
    cameras.par_iter().map(|c| render(scene, c, cfg)).collect()
}

/// Renders the content views, groups them and stylizes each group. With
/// `no_nv_attention` every view forms its own group.
pub fn dataset_update(run: &mut StylizationRun) -> Result<()> {
    let cfg = &run.config;
    let model = NvDiffusionModel::new(cfg.diffusion.clone())?;
    let contents = render_views(&run.scene, &run.cameras, &cfg.rasterizer)?;
    let groups = if cfg.ablation.no_nv_attention {
        singleton_groups(run.cameras.len())
    } else {
        group_views(&run.cameras, cfg.grouping.views_per_group)?
    };
    let stylized: Vec<Vec<ImageRGB>> = groups
        .par_iter()
        .map(|g| {
            let imgs: Vec<ImageRGB> = g.view_indices.iter().map(|&v| contents[v].clone()).collect();
            stylize_group(&model, g, &imgs, &run.style, cfg.seed)
        })
        .collect::<Result<_>>()?;
    let mut targets = vec![None; run.cameras.len()];
    for (g, imgs) in groups.iter().zip(stylized) {
        for (&v, img) in g.view_indices.iter().zip(imgs) {
            targets[v] = Some(img);
        }
    }
    log::info!("dataset update: {} views in {} groups", run.cameras.len(), groups.len());
    run.targets = targets.into_iter().map(|t| t.expect("groups partition the views")).collect();
    run.contents = contents;
    run.groups = groups;
    Ok(())
}

/// Fresh scene for training from scratch: Gaussians at random target pixels
/// of round-robin cameras, unprojected to a depth drawn uniformly from the
/// configured range, colored by the target pixel.
pub fn scratch_scene(cameras: &[Camera], targets: &[ImageRGB], cfg: &Config) -> Result<GaussianScene> {
    if cameras.is_empty() {
        return Err(Error::EmptyCameraList);
    }
    if targets.len() != cameras.len() {
        return Err(Error::MissingTargets);
    }
    let f = &cfg.finetune;
    if f.scratch_gaussians == 0 {
        return Err(Error::EmptyScene);
    }
    let mut rng = crate::diffusion::seeded_rng(cfg.seed, 0x5C2A_7C40);
    let gaussians = (0..f.scratch_gaussians)
        .map(|i| {
            let v = i % cameras.len();
            let (cam, img) = (&cameras[v], &targets[v]);
            let px = rng.random_range(0..img.width);
            let py = rng.random_range(0..img.height);
            let depth = rng.random_range(f.scratch_depth_near..f.scratch_depth_far);
            let local = Vector3::new((px as f64 - cam.cx) / cam.fx * depth, (py as f64 - cam.cy) / cam.fy * depth, depth);
            let world = cam.rotation.transpose() * (local - cam.translation);
            // isotropic footprint of about two pixels
            let size = 2.0 * depth / cam.fx.min(cam.fy);
            let c = img.pixel(px, py);
            Gaussian3D::new(world, IDENTITY_QUAT, Vector3::repeat(size), f.scratch_opacity, Vector3::new(c[0], c[1], c[2]))
        })
        .collect();
    Ok(GaussianScene::new(gaussians, Vector3::zeros()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneReport {
    /// Loss of the view sampled at each iteration, before its update.
    pub iteration_losses: Vec<f64>,
    /// Mean loss over all views before the first and after the last update.
    pub initial_dataset_loss: f64,
    pub final_dataset_loss: f64,
    pub zero_feature_vectors: usize,
}

impl FinetuneReport {
    pub fn relative_reduction(&self) -> f64 {
        1.0 - self.final_dataset_loss / self.initial_dataset_loss
    }
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    pub initial_scene: GaussianScene,
    pub scene: GaussianScene,
    pub report: FinetuneReport,
}

struct LossContext<'a> {
    raster: &'a RasterConfig,
    ext: FeatureExtractor,
    style_features: FeatureMap,
    weights: LossWeights,
}

impl LossContext<'_> {
    fn dataset_loss(&self, scene: &GaussianScene, cameras: &[Camera], targets: &[ImageRGB]) -> Result<f64> {
        let losses: Vec<f64> = cameras
            .par_iter()
            .zip(targets)
            .map(|(c, t)| {
                let r = render(scene, c, self.raster)?;
                Ok(finetune_loss(&r, t, &self.style_features, &self.ext, &self.weights)?.total)
            })
            .collect::<Result<_>>()?;
        Ok(losses.iter().sum::<f64>() / losses.len() as f64)
    }
}

/// Runs the configured number of Adam iterations, visiting cameras in
/// round-robin order. `observe` sees the scene after every update.
pub fn finetune_with(
    run: &StylizationRun,
    mut observe: impl FnMut(usize, &GaussianScene),
) -> Result<FinetuneOutcome> {
    if run.targets.len() != run.cameras.len() {
        return Err(Error::MissingTargets);
    }
    let cfg = &run.config;
    let ext = FeatureExtractor::new(&cfg.extractor);
    let ctx = LossContext {
        raster: &cfg.rasterizer,
        style_features: ext.extract(&run.style)?,
        ext,
        weights: cfg.effective_loss_weights(),
    };
    let mut scene = if cfg.ablation.from_scratch {
        scratch_scene(&run.cameras, &run.targets, cfg)?
    } else {
        run.scene.clone()
    };
    let initial_scene = scene.clone();
    let initial = ctx.dataset_loss(&scene, &run.cameras, &run.targets)?;
    if !initial.is_finite() {
        return Err(Error::DivergenceDetected { iteration: 0, value: initial });
    }
    let mut opt = OptimizerState::new(cfg.finetune.optimizer.clone(), &scene);
    let mut losses = Vec::with_capacity(cfg.finetune.iterations);
    let mut zero_vectors = 0;
    for it in 0..cfg.finetune.iterations {
        let v = it % run.cameras.len();
        let cam = &run.cameras[v];
        let img = render(&scene, cam, &cfg.rasterizer)?;
        let loss = finetune_loss(&img, &run.targets[v], &ctx.style_features, &ctx.ext, &ctx.weights)?;
        if !loss.total.is_finite() {
            return Err(Error::DivergenceDetected { iteration: it + 1, value: loss.total });
        }
        zero_vectors += loss.zero_vectors;
        losses.push(loss.total);
        let grads = render_backward(&scene, cam, &cfg.rasterizer, &loss.grad)?;
        if !grads.is_finite() {
            return Err(Error::DivergenceDetected { iteration: it + 1, value: f64::NAN });
        }
        opt.step(&mut scene, &grads)?;
        observe(it + 1, &scene);
    }
    let final_loss = ctx.dataset_loss(&scene, &run.cameras, &run.targets)?;
    if !final_loss.is_finite() {
        return Err(Error::DivergenceDetected { iteration: cfg.finetune.iterations, value: final_loss });
    }
    log::info!(
        "finetune: {} iterations, dataset loss {:.6} -> {:.6}",
        cfg.finetune.iterations,
        initial,
        final_loss
    );
    Ok(FinetuneOutcome {
        initial_scene,
        scene,
        report: FinetuneReport {
            iteration_losses: losses,
            initial_dataset_loss: initial,
            final_dataset_loss: final_loss,
            zero_feature_vectors: zero_vectors,
        },
    })
}

pub fn finetune(run: &StylizationRun) -> Result<FinetuneOutcome> {
    finetune_with(run, |_, _| {})
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AblationVariant {
    Full,
    FromScratch,
    NoNvAttention,
    NoNnfm,
    /// One full run per group size.
    NSweep(Vec<usize>),
}

impl AblationVariant {
    pub fn parse(name: &str, sweep: &[usize]) -> Result<Self> {
        Ok(match name {
            "full" => Self::Full,
            "from-scratch" | "from_scratch" => Self::FromScratch,
            "no-nv" | "no_nv_attention" | "no-nv-attention" => Self::NoNvAttention,
            "no-nnfm" | "no_nnfm" => Self::NoNnfm,
            "n-sweep" | "n_sweep" => Self::NSweep(sweep.to_vec()),
            other => return Err(Error::Config(format!("unknown ablation variant {other:?}"))),
        })
    }

    /// `(label, flags, group size override)` of each run in this variant.
    fn runs(&self) -> Vec<(String, AblationFlags, Option<usize>)> {
        let f = AblationFlags::default();
        match self {
            Self::Full => vec![("full".into(), f, None)],
            Self::FromScratch => vec![("from_scratch".into(), AblationFlags { from_scratch: true, ..f }, None)],
            Self::NoNvAttention => vec![("no_nv_attention".into(), AblationFlags { no_nv_attention: true, ..f }, None)],
            Self::NoNnfm => vec![("no_nnfm".into(), AblationFlags { no_nnfm: true, ..f }, None)],
            Self::NSweep(ns) => ns.iter().map(|&n| (format!("n_sweep_n{n}"), f.clone(), Some(n))).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct AblationOutcome {
    pub label: String,
    pub run: StylizationRun,
    pub finetune: FinetuneOutcome,
    pub report: MetricReport,
}

/// Runs `variant` from the same inputs as `base`. Flags already set on
/// `base` are replaced by the variant's flags.
pub fn run_ablation(base: &StylizationRun, variant: &AblationVariant) -> Result<Vec<AblationOutcome>> {
    let ext = FeatureExtractor::new(&base.config.extractor);
    let mut out = Vec::new();
    for (label, flags, n) in variant.runs() {
        let mut run = base.clone().with_flags(flags);
        if let Some(n) = n {
            if n == 0 {
                return Err(Error::InvalidGroupSize);
            }
            run.config.grouping.views_per_group = n;
        }
        dataset_update(&mut run)?;
        let ft = finetune(&run)?;
        let renders = render_views(&ft.scene, &run.cameras, &run.config.rasterizer)?;
        let report = evaluate(&label, &run.contents, &renders, &run.style, &ext, &ImportedDescriptors::default())?;
        log::info!("ablation {label}: {}", report.table_row());
        out.push(AblationOutcome { label, run, finetune: ft, report });
    }
    Ok(out)
}
