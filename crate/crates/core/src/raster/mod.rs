//! CPU gaussian splatting rasterizer.
//!
//! Gaussians are projected with the EWA approximation `Σ' = J W Σ Wᵀ Jᵀ`,
//! dilated by a low-pass floor, depth sorted once per pass and alpha
//! composited front to back. Pixel centers sit at integer coordinates.
//!
//! A splat touches a pixel only inside its `cutoff_sigma` ellipse. Tile
//! binning uses the exact ellipse/rectangle overlap test so the tiled path
//! evaluates the same ordered contributor list as the untiled loop and the
//! two images are bit-identical.

mod backward;

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{Camera, Gaussian3D, GaussianScene, ImageRGB};

pub use backward::{render_backward, GaussianGrad, RenderGradients};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RasterConfig {
    /// Added to the diagonal of every projected covariance, in px².
    pub low_pass: f64,
    pub alpha_max: f64,
    pub near_plane: f64,
    /// Compositing stops before transmittance would drop below this.
    pub min_transmittance: f64,
    pub tile_size: usize,
    pub cutoff_sigma: f64,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self {
            low_pass: 0.3,
            alpha_max: 0.999,
            near_plane: 0.01,
            min_transmittance: 1e-4,
            tile_size: 16,
            cutoff_sigma: 3.0,
        }
    }
}

/// A gaussian after projection to the image plane.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedGaussian {
    pub mean2d: Vector2<f64>,
    /// Dilated screen-space covariance.
    pub cov2d: Matrix2<f64>,
    /// Inverse of `cov2d`.
    pub conic: Matrix2<f64>,
    pub depth: f64,
    pub color: Vector3<f64>,
    pub opacity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Projection {
    Visible(ProjectedGaussian),
    Culled,
}

/// Intermediate values of the projection, reused by the backward pass.
pub(crate) struct ProjectionParts {
    pub cam_point: Vector3<f64>,
    pub jacobian: Matrix2x3<f64>,
    pub rotation: Matrix3<f64>,
    pub scale: Vector3<f64>,
    pub cov_cam: Matrix3<f64>,
    pub cov2d: Matrix2<f64>,
}

pub(crate) fn projection_parts(g: &Gaussian3D, cam: &Camera, cfg: &RasterConfig) -> ProjectionParts {
    let cam_point = cam.world_to_camera(&g.position);
    let (x, y, z) = (cam_point.x, cam_point.y, cam_point.z);
    let jacobian = Matrix2x3::new(
        cam.fx / z,
        0.0,
        -cam.fx * x / (z * z),
        0.0,
        cam.fy / z,
        -cam.fy * y / (z * z),
    );
    let rotation = g.rotation_matrix();
    let scale = g.scale();
    let m = rotation * Matrix3::from_diagonal(&scale);
    let cov_world = m * m.transpose();
    let cov_cam = cam.rotation * cov_world * cam.rotation.transpose();
    let mut cov2d = jacobian * cov_cam * jacobian.transpose();
    cov2d[(0, 0)] += cfg.low_pass;
    cov2d[(1, 1)] += cfg.low_pass;
    // exact symmetry so the conic is symmetric too
    let off = 0.5 * (cov2d[(0, 1)] + cov2d[(1, 0)]);
    cov2d[(0, 1)] = off;
    cov2d[(1, 0)] = off;
    ProjectionParts { cam_point, jacobian, rotation, scale, cov_cam, cov2d }
}

pub(crate) fn conic_of(cov: &Matrix2<f64>) -> Matrix2<f64> {
    let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(0, 1)];
    Matrix2::new(cov[(1, 1)] / det, -cov[(0, 1)] / det, -cov[(0, 1)] / det, cov[(0, 0)] / det)
}

/// Projects one gaussian, or culls it when it sits behind the near plane
/// or its cutoff ellipse misses the image.
pub fn project_gaussian(g: &Gaussian3D, cam: &Camera, cfg: &RasterConfig) -> Projection {
    let cam_point = cam.world_to_camera(&g.position);
    if cam_point.z <= cfg.near_plane {
        return Projection::Culled;
    }
    let parts = projection_parts(g, cam, cfg);
    let mean2d = Vector2::new(
        cam.fx * cam_point.x / cam_point.z + cam.cx,
        cam.fy * cam_point.y / cam_point.z + cam.cy,
    );
    let conic = conic_of(&parts.cov2d);
    let cutoff2 = cfg.cutoff_sigma * cfg.cutoff_sigma;
    let (w, h) = ((cam.width - 1) as f64, (cam.height - 1) as f64);
    if !ellipse_hits_rect(&mean2d, &conic, cutoff2, [0.0, 0.0, w, h]) {
        return Projection::Culled;
    }
    Projection::Visible(ProjectedGaussian {
        mean2d,
        cov2d: parts.cov2d,
        conic,
        depth: cam_point.z,
        color: g.color,
        opacity: g.opacity(),
    })
}

#[inline]
fn quad_form(conic: &Matrix2<f64>, dx: f64, dy: f64) -> f64 {
    conic[(0, 0)] * dx * dx + 2.0 * conic[(0, 1)] * dx * dy + conic[(1, 1)] * dy * dy
}

/// Whether the ellipse `dᵀ conic d ≤ cutoff2` around `mean` meets the closed
/// rectangle `[x0, y0, x1, y1]`. Errs on the inclusive side by a relative
/// 1e-9 so it is never stricter than the per-pixel test.
pub fn ellipse_hits_rect(mean: &Vector2<f64>, conic: &Matrix2<f64>, cutoff2: f64, rect: [f64; 4]) -> bool {
    let [x0, y0, x1, y1] = rect;
    if mean.x >= x0 && mean.x <= x1 && mean.y >= y0 && mean.y <= y1 {
        return true;
    }
    let (a, b, c) = (conic[(0, 0)], conic[(0, 1)], conic[(1, 1)]);
    let mut best = f64::INFINITY;
    for xe in [x0, x1] {
        let dx = xe - mean.x;
        let dy = (-b * dx / c).clamp(y0 - mean.y, y1 - mean.y);
        best = best.min(quad_form(conic, dx, dy));
    }
    for ye in [y0, y1] {
        let dy = ye - mean.y;
        let dx = (-b * dy / a).clamp(x0 - mean.x, x1 - mean.x);
        best = best.min(quad_form(conic, dx, dy));
    }
    best <= cutoff2 * (1.0 + 1e-9) + 1e-12
}

/// One splat's effect on one pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contribution {
    /// Index into the scene's gaussian list.
    pub gaussian: usize,
    pub alpha: f64,
    /// Transmittance in front of this splat.
    pub transmittance: f64,
    /// Unclamped gaussian falloff `exp(-½ dᵀ Σ'⁻¹ d)`.
    pub falloff: f64,
    pub clamped: bool,
    pub offset: Vector2<f64>,
}

/// Depth-sorted visible splats for one (scene, camera) pair.
#[derive(Clone, Debug)]
pub struct RenderPass {
    /// `(scene index, projection)`, front to back; ties by scene index.
    pub splats: Vec<(usize, ProjectedGaussian)>,
    pub width: usize,
    pub height: usize,
    pub background: Vector3<f64>,
    pub config: RasterConfig,
}

impl RenderPass {
    pub fn new(scene: &GaussianScene, cam: &Camera, cfg: &RasterConfig) -> Result<Self> {
        if scene.is_empty() {
            return Err(Error::EmptyScene);
        }
        let mut splats: Vec<(usize, ProjectedGaussian)> = scene
            .gaussians
            .par_iter()
            .enumerate()
            .filter_map(|(i, g)| match project_gaussian(g, cam, cfg) {
                Projection::Visible(p) => Some((i, p)),
                Projection::Culled => None,
            })
            .collect();
        splats.sort_by(|a, b| a.1.depth.total_cmp(&b.1.depth).then(a.0.cmp(&b.0)));
        Ok(Self {
            splats,
            width: cam.width,
            height: cam.height,
            background: scene.background,
            config: cfg.clone(),
        })
    }

    /// Alpha of `splat` at pixel `(px, py)`, or `None` outside its cutoff.
    #[inline]
    fn evaluate(&self, splat: &ProjectedGaussian, px: f64, py: f64) -> Option<(f64, f64, bool, Vector2<f64>)> {
        let d = Vector2::new(px - splat.mean2d.x, py - splat.mean2d.y);
        let q = quad_form(&splat.conic, d.x, d.y);
        let cutoff = self.config.cutoff_sigma * self.config.cutoff_sigma;
        if !(q <= cutoff) {
            return None;
        }
        let falloff = (-0.5 * q).exp();
        let raw = splat.opacity * falloff;
        let clamped = raw > self.config.alpha_max;
        Some((if clamped { self.config.alpha_max } else { raw }, falloff, clamped, d))
    }

    /// Walks the ordered candidate list for one pixel, calling `visit` for
    /// each accepted contribution. Returns the final transmittance.
    #[inline]
    fn walk<'a, I, F>(&self, candidates: I, x: usize, y: usize, mut visit: F) -> f64
    where
        I: Iterator<Item = &'a (usize, ProjectedGaussian)>,
        F: FnMut(&ProjectedGaussian, Contribution),
    {
        let (px, py) = (x as f64, y as f64);
        let mut t = 1.0;
        for (index, splat) in candidates {
            let Some((alpha, falloff, clamped, offset)) = self.evaluate(splat, px, py) else {
                continue;
            };
            let next = t * (1.0 - alpha);
            if next < self.config.min_transmittance {
                break;
            }
            visit(
                splat,
                Contribution { gaussian: *index, alpha, transmittance: t, falloff, clamped, offset },
            );
            t = next;
        }
        t
    }

    fn shade<'a, I>(&self, candidates: I, x: usize, y: usize) -> [f64; 3]
    where
        I: Iterator<Item = &'a (usize, ProjectedGaussian)>,
    {
        let mut c = [0.0; 3];
        let t = self.walk(candidates, x, y, |splat, k| {
            let w = k.alpha * k.transmittance;
            for ch in 0..3 {
                c[ch] += splat.color[ch] * w;
            }
        });
        for ch in 0..3 {
            c[ch] += self.background[ch] * t;
        }
        c
    }

    /// Ordered contributions at one pixel plus the final transmittance.
    pub fn contributions(&self, x: usize, y: usize) -> (Vec<Contribution>, f64) {
        let mut out = Vec::new();
        let t = self.walk(self.splats.iter(), x, y, |_, k| out.push(k));
        (out, t)
    }

    /// Reference per-pixel loop over every visible splat.
    pub fn render_untiled(&self) -> ImageRGB {
        let width = self.width;
        let rows: Vec<Vec<f64>> = (0..self.height)
            .into_par_iter()
            .map(|y| {
                let mut row = Vec::with_capacity(width * 3);
                for x in 0..width {
                    row.extend_from_slice(&self.shade(self.splats.iter(), x, y));
                }
                row
            })
            .collect();
        ImageRGB { width, height: self.height, data: rows.concat() }
    }

    pub fn render_tiled(&self) -> ImageRGB {
        let index = self.tile_bin();
        let ts = index.tile_size;
        let blocks: Vec<(usize, Vec<[f64; 3]>)> = (0..index.lists.len())
            .into_par_iter()
            .map(|t| {
                let (x0, y0, x1, y1) = index.tile_bounds(t, self.width, self.height);
                let list = &index.lists[t];
                let mut block = Vec::with_capacity(ts * ts);
                for y in y0..y1 {
                    for x in x0..x1 {
                        block.push(self.shade(list.iter().map(|&k| &self.splats[k]), x, y));
                    }
                }
                (t, block)
            })
            .collect();
        let mut img = ImageRGB::new(self.width, self.height);
        for (t, block) in blocks {
            let (x0, y0, x1, _) = index.tile_bounds(t, self.width, self.height);
            let bw = x1 - x0;
            for (i, rgb) in block.into_iter().enumerate() {
                img.set_pixel(x0 + i % bw, y0 + i / bw, rgb);
            }
        }
        img
    }

    pub fn tile_bin(&self) -> TileIndex {
        let projected: Vec<ProjectedGaussian> = self.splats.iter().map(|(_, p)| p.clone()).collect();
        tile_bin(&projected, self.width, self.height, &self.config)
    }
}

/// Per-tile lists of splats (indices into the projected list, in list order).
#[derive(Clone, Debug, PartialEq)]
pub struct TileIndex {
    pub tile_size: usize,
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub lists: Vec<Vec<usize>>,
}

impl TileIndex {
    /// Pixel bounds `[x0, x1) × [y0, y1)` of tile `t`.
    pub fn tile_bounds(&self, t: usize, width: usize, height: usize) -> (usize, usize, usize, usize) {
        let (tx, ty) = (t % self.tiles_x, t / self.tiles_x);
        let x0 = tx * self.tile_size;
        let y0 = ty * self.tile_size;
        (x0, y0, (x0 + self.tile_size).min(width), (y0 + self.tile_size).min(height))
    }
}

/// Lists every splat in each tile whose pixel-center rectangle its cutoff
/// ellipse overlaps.
pub fn tile_bin(projected: &[ProjectedGaussian], width: usize, height: usize, cfg: &RasterConfig) -> TileIndex {
    let ts = cfg.tile_size.max(1);
    let tiles_x = width.div_ceil(ts);
    let tiles_y = height.div_ceil(ts);
    let mut index = TileIndex { tile_size: ts, tiles_x, tiles_y, lists: vec![Vec::new(); tiles_x * tiles_y] };
    let cutoff2 = cfg.cutoff_sigma * cfg.cutoff_sigma;
    for (k, p) in projected.iter().enumerate() {
        // axis-aligned bounds of the ellipse narrow the candidate tiles
        let rx = cfg.cutoff_sigma * p.cov2d[(0, 0)].sqrt() + 1.0;
        let ry = cfg.cutoff_sigma * p.cov2d[(1, 1)].sqrt() + 1.0;
        let tx0 = ((p.mean2d.x - rx).max(0.0) / ts as f64).floor() as usize;
        let ty0 = ((p.mean2d.y - ry).max(0.0) / ts as f64).floor() as usize;
        let tx1 = (((p.mean2d.x + rx).max(0.0) / ts as f64).floor() as usize).min(tiles_x - 1);
        let ty1 = (((p.mean2d.y + ry).max(0.0) / ts as f64).floor() as usize).min(tiles_y - 1);
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                let t = ty * tiles_x + tx;
                let (x0, y0, x1, y1) = index.tile_bounds(t, width, height);
                let rect = [x0 as f64, y0 as f64, (x1 - 1) as f64, (y1 - 1) as f64];
                if ellipse_hits_rect(&p.mean2d, &p.conic, cutoff2, rect) {
                    index.lists[t].push(k);
                }
            }
        }
    }
    index
}

/// Renders through the tiled path.
pub fn render(scene: &GaussianScene, cam: &Camera, cfg: &RasterConfig) -> Result<ImageRGB> {
    Ok(RenderPass::new(scene, cam, cfg)?.render_tiled())
}

/// Renders through the untiled reference loop.
pub fn render_untiled(scene: &GaussianScene, cam: &Camera, cfg: &RasterConfig) -> Result<ImageRGB> {
    Ok(RenderPass::new(scene, cam, cfg)?.render_untiled())
}
