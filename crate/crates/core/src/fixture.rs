//! Seeded synthetic scene: a cluster of Gaussians viewed by cameras on a
//! ring, plus a procedural style image.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, UnitSphere};

use crate::config::Config;
use crate::diffusion::seeded_rng;
use crate::scene::{quat_normalize, Camera, Gaussian3D, GaussianScene, ImageRGB};

#[derive(Clone, Debug)]
pub struct FixtureSpec {
    pub gaussians: usize,
    pub cameras: usize,
    pub resolution: usize,
    pub ring_radius: f64,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self { gaussians: 100, cameras: 8, resolution: 64, ring_radius: 4.0, seed: 7 }
    }
}

#[derive(Clone, Debug)]
pub struct Fixture {
    pub scene: GaussianScene,
    pub cameras: Vec<Camera>,
    pub style: ImageRGB,
    pub config: Config,
}

impl Fixture {
    /// 100 Gaussians, 8 ring cameras at 64×64, groups of 4, 20 denoising
    /// steps, seed 7, 200 finetuning iterations.
    pub fn synthetic() -> Self {
        let mut config = Config::default();
        config.seed = 7;
        config.grouping.views_per_group = 4;
        config.diffusion.steps = 20;
        config.finetune.iterations = 200;
        config.finetune.scratch_depth_near = 2.5;
        config.finetune.scratch_depth_far = 5.5;
        Self::build(&FixtureSpec::default(), config)
    }

    /// Reduced variant for fast unit tests.
    pub fn small() -> Self {
        let spec = FixtureSpec { gaussians: 24, cameras: 4, resolution: 32, ..FixtureSpec::default() };
        let mut config = Config::default();
        config.seed = 7;
        config.grouping.views_per_group = 2;
        config.diffusion.steps = 4;
        config.finetune.iterations = 8;
        config.finetune.scratch_gaussians = 200;
        config.finetune.scratch_depth_near = 2.5;
        config.finetune.scratch_depth_far = 5.5;
        Self::build(&spec, config)
    }

    pub fn build(spec: &FixtureSpec, config: Config) -> Self {
        Self {
            scene: synthetic_scene(spec.gaussians, spec.seed),
            cameras: ring_cameras(spec.cameras, spec.ring_radius, spec.resolution),
            style: style_image(spec.resolution, spec.resolution),
            config,
        }
    }
}

/// Gaussians scattered in a unit ball with random orientation, anisotropic
/// scale, opacity and color.
pub fn synthetic_scene(n: usize, seed: u64) -> GaussianScene {
    let mut rng = seeded_rng(seed, 0xF1C5);
    let gaussians = (0..n)
        .map(|_| {
            let dir: [f64; 3] = UnitSphere.sample(&mut rng);
            let r = rng.random::<f64>().cbrt();
            let position = Vector3::from(dir) * r;
            let q = quat_normalize(&[rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
            let scale = Vector3::from_fn(|_, _| rng.random_range(0.08..0.25));
            let opacity = rng.random_range(0.5..0.95);
            let color = Vector3::from_fn(|_, _| rng.random_range(0.1..0.9));
            Gaussian3D::new(position, q, scale, opacity, color)
        })
        .collect();
    GaussianScene::new(gaussians, Vector3::new(0.05, 0.05, 0.05))
}

/// `n` cameras evenly spaced on a horizontal ring, slightly above the
/// origin and looking at it. Horizontal field of view is about 53°.
pub fn ring_cameras(n: usize, radius: f64, resolution: usize) -> Vec<Camera> {
    (0..n)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / n as f64;
            let eye = Vector3::new(radius * a.cos(), -0.8, radius * a.sin());
            Camera::look_at(eye, Vector3::zeros(), Vector3::new(0.0, -1.0, 0.0), resolution as f64, resolution, resolution)
                .expect("ring cameras are well formed")
        })
        .collect()
}

/// Warm diagonal waves with dark brush-like bands.
pub fn style_image(width: usize, height: usize) -> ImageRGB {
    let mut img = ImageRGB::new(width, height);
    for y in 0..height {
        for x in 0..width {
            let u = x as f64 / width as f64;
            let v = y as f64 / height as f64;
            let wave = (12.0 * (u + 0.6 * v) + 3.0 * (7.0 * v).sin()).sin();
            let band = (0.5 + 0.5 * (20.0 * (u - v)).cos()).powi(4);
            let r = 0.85 + 0.1 * wave - 0.5 * band;
            let g = 0.45 + 0.25 * wave - 0.3 * band;
            let b = 0.15 + 0.1 * wave + 0.2 * band;
            img.set_pixel(x, y, [r.clamp(0.0, 1.0), g.clamp(0.0, 1.0), b.clamp(0.0, 1.0)]);
        }
    }
    img
}
