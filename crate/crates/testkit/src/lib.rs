//! Brute-force reference implementations and random generators for the
//! nvsplat test suites. Everything here is written independently of the
//! optimized code paths it checks: explicit loops, no shared helpers.

use nalgebra::{Matrix3, Vector3};
use nvsplat_core::io::ply::SH_C0;
use nvsplat_core::raster::RasterConfig;
use nvsplat_core::scene::{Camera, Gaussian3D, GaussianScene, ImageRGB};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use rand_chacha::ChaCha8Rng as TestRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// Geometry

/// Rotation matrix of a (not necessarily unit) quaternion `(w, x, y, z)`,
/// written out term by term.
pub fn quat_matrix_oracle(q: [f64; 4]) -> Matrix3<f64> {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// `Σ = R diag(s²) Rᵀ` accumulated entry by entry.
pub fn covariance_oracle(q: [f64; 4], log_scale: [f64; 3]) -> Matrix3<f64> {
    let r = quat_matrix_oracle(q);
    let mut out = Matrix3::zeros();
    for i in 0..3 {
        for j in 0..3 {
            let mut acc = 0.0;
            for k in 0..3 {
                let s = log_scale[k].exp();
                acc += r[(i, k)] * s * s * r[(j, k)];
            }
            out[(i, j)] = acc;
        }
    }
    out
}

/// Central-difference Jacobian of the pinhole map at a camera-space point.
pub fn projection_jacobian_fd(fx: f64, fy: f64, p: Vector3<f64>, h: f64) -> [[f64; 3]; 2] {
    let f = |p: Vector3<f64>| [fx * p.x / p.z, fy * p.y / p.z];
    let mut out = [[0.0; 3]; 2];
    for k in 0..3 {
        let mut a = p;
        let mut b = p;
        a[k] += h;
        b[k] -= h;
        let (fa, fb) = (f(a), f(b));
        for r in 0..2 {
            out[r][k] = (fa[r] - fb[r]) / (2.0 * h);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Rendering

/// One splat projected by the oracle.
#[derive(Clone, Debug)]
struct OracleSplat {
    index: usize,
    depth: f64,
    mean: [f64; 2],
    /// inverse covariance `(a, b, c)` for `[[a, b], [b, c]]`
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
}

fn oracle_project(i: usize, g: &Gaussian3D, cam: &Camera, cfg: &RasterConfig) -> Option<OracleSplat> {
    let r = cam.rotation;
    let p = r * g.position + cam.translation;
    if p.z <= cfg.near_plane {
        return None;
    }
    let sigma = covariance_oracle(g.rotation, [g.log_scale.x, g.log_scale.y, g.log_scale.z]);
    let sc = r * sigma * r.transpose();
    let j = [
        [cam.fx / p.z, 0.0, -cam.fx * p.x / (p.z * p.z)],
        [0.0, cam.fy / p.z, -cam.fy * p.y / (p.z * p.z)],
    ];
    let mut c2 = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            let mut acc = 0.0;
            for k in 0..3 {
                for l in 0..3 {
                    acc += j[a][k] * sc[(k, l)] * j[b][l];
                }
            }
            c2[a][b] = acc;
        }
    }
    let (a, b, c) = (c2[0][0] + cfg.low_pass, 0.5 * (c2[0][1] + c2[1][0]), c2[1][1] + cfg.low_pass);
    let det = a * c - b * b;
    Some(OracleSplat {
        index: i,
        depth: p.z,
        mean: [cam.fx * p.x / p.z + cam.cx, cam.fy * p.y / p.z + cam.cy],
        conic: [c / det, -b / det, a / det],
        opacity: 1.0 / (1.0 + (-g.opacity_logit).exp()),
        color: [g.color.x, g.color.y, g.color.z],
    })
}

fn oracle_splats(scene: &GaussianScene, cam: &Camera, cfg: &RasterConfig) -> Vec<OracleSplat> {
    let mut s: Vec<OracleSplat> = scene
        .gaussians
        .iter()
        .enumerate()
        .filter_map(|(i, g)| oracle_project(i, g, cam, cfg))
        .collect();
    s.sort_by(|x, y| x.depth.partial_cmp(&y.depth).unwrap().then(x.index.cmp(&y.index)));
    s
}

fn quad(s: &OracleSplat, x: f64, y: f64) -> f64 {
    let (dx, dy) = (x - s.mean[0], y - s.mean[1]);
    s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy
}

/// Per-pixel decisions of one render: for every pixel, the ordered
/// `(gaussian index, clamped)` pairs that were composited.
#[derive(Clone, Debug)]
pub struct FrozenDecisions {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<Vec<(usize, bool)>>,
}

/// Plain per-pixel loop over every non-culled gaussian, no tiling, no
/// image-bounds culling. Returns the image and the decisions it took.
pub fn render_oracle(scene: &GaussianScene, cam: &Camera, cfg: &RasterConfig) -> (ImageRGB, FrozenDecisions) {
    let splats = oracle_splats(scene, cam, cfg);
    let (w, h) = (cam.width, cam.height);
    let mut img = ImageRGB::new(w, h);
    let mut pixels = Vec::with_capacity(w * h);
    let cut = cfg.cutoff_sigma * cfg.cutoff_sigma;
    for y in 0..h {
        for x in 0..w {
            let mut t = 1.0;
            let mut c = [0.0; 3];
            let mut used = Vec::new();
            for s in &splats {
                let q = quad(s, x as f64, y as f64);
                if q > cut {
                    continue;
                }
                let raw = s.opacity * (-0.5 * q).exp();
                let clamped = raw > cfg.alpha_max;
                let alpha = if clamped { cfg.alpha_max } else { raw };
                if t * (1.0 - alpha) < cfg.min_transmittance {
                    break;
                }
                for k in 0..3 {
                    c[k] += s.color[k] * alpha * t;
                }
                t *= 1.0 - alpha;
                used.push((s.index, clamped));
            }
            for k in 0..3 {
                c[k] += scene.background[k] * t;
            }
            img.set_pixel(x, y, c);
            pixels.push(used);
        }
    }
    (img, FrozenDecisions { width: w, height: h, pixels })
}

/// Image of `scene` composited with `frozen`'s contributor lists and clamp
/// flags instead of re-deciding them. Smooth in every scene parameter.
pub fn render_frozen(scene: &GaussianScene, cam: &Camera, cfg: &RasterConfig, frozen: &FrozenDecisions) -> ImageRGB {
    let projected: Vec<Option<OracleSplat>> =
        scene.gaussians.iter().enumerate().map(|(i, g)| oracle_project(i, g, cam, cfg)).collect();
    let mut img = ImageRGB::new(frozen.width, frozen.height);
    for y in 0..frozen.height {
        for x in 0..frozen.width {
            let mut t = 1.0;
            let mut c = [0.0; 3];
            for &(i, clamped) in &frozen.pixels[y * frozen.width + x] {
                let s = projected[i].as_ref().expect("frozen splat left the near plane");
                let alpha = if clamped { cfg.alpha_max } else { s.opacity * (-0.5 * quad(s, x as f64, y as f64)).exp() };
                for k in 0..3 {
                    c[k] += s.color[k] * alpha * t;
                }
                t *= 1.0 - alpha;
            }
            for k in 0..3 {
                c[k] += scene.background[k] * t;
            }
            img.set_pixel(x, y, c);
        }
    }
    img
}

pub const PARAMS_PER_GAUSSIAN: usize = 14;

/// Parameters in the order position, rotation, log_scale, opacity_logit,
/// color.
pub fn gaussian_params(g: &Gaussian3D) -> [f64; PARAMS_PER_GAUSSIAN] {
    [
        g.position.x,
        g.position.y,
        g.position.z,
        g.rotation[0],
        g.rotation[1],
        g.rotation[2],
        g.rotation[3],
        g.log_scale.x,
        g.log_scale.y,
        g.log_scale.z,
        g.opacity_logit,
        g.color.x,
        g.color.y,
        g.color.z,
    ]
}

pub fn set_gaussian_param(g: &mut Gaussian3D, k: usize, v: f64) {
    match k {
        0..=2 => g.position[k] = v,
        3..=6 => g.rotation[k - 3] = v,
        7..=9 => g.log_scale[k - 7] = v,
        10 => g.opacity_logit = v,
        _ => g.color[k - 11] = v,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Central finite differences of `Σ upstream · render` with decisions
/// frozen at the unperturbed scene.
pub fn render_gradients_fd(
    scene: &GaussianScene,
    cam: &Camera,
    cfg: &RasterConfig,
    upstream: &[f64],
    h: f64,
) -> Vec<[f64; PARAMS_PER_GAUSSIAN]> {
    let (_, frozen) = render_oracle(scene, cam, cfg);
    let mut out = vec![[0.0; PARAMS_PER_GAUSSIAN]; scene.len()];
    for i in 0..scene.len() {
        let base = gaussian_params(&scene.gaussians[i]);
        for k in 0..PARAMS_PER_GAUSSIAN {
            let mut plus = scene.clone();
            let mut minus = scene.clone();
            set_gaussian_param(&mut plus.gaussians[i], k, base[k] + h);
            set_gaussian_param(&mut minus.gaussians[i], k, base[k] - h);
            let lp = dot(&render_frozen(&plus, cam, cfg, &frozen).data, upstream);
            let lm = dot(&render_frozen(&minus, cam, cfg, &frozen).data, upstream);
            out[i][k] = (lp - lm) / (2.0 * h);
        }
    }
    out
}

/// Relative agreement `1e-3`, or absolute `1e-6` when both values are
/// below `1e-4` in magnitude.
pub fn grad_close(analytic: f64, numeric: f64) -> bool {
    let mag = analytic.abs().max(numeric.abs());
    let diff = (analytic - numeric).abs();
    if mag < 1e-4 {
        diff <= 1e-6
    } else {
        diff <= 1e-3 * mag
    }
}

/// Central-difference gradient of a scalar function of a vector.
pub fn numeric_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|k| {
            p[k] = x[k] + h;
            let a = f(&p);
            p[k] = x[k] - h;
            let b = f(&p);
            p[k] = x[k];
            (a - b) / (2.0 * h)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Attention, DDIM, losses, metrics

/// Softmax attention with explicit loops; rows are tokens.
pub fn dense_attention(q: &[Vec<f64>], k: &[Vec<f64>], v: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = q[0].len() as f64;
    q.iter()
        .map(|qi| {
            let scores: Vec<f64> = k.iter().map(|kj| dot(qi, kj) / d.sqrt()).collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = e.iter().sum();
            let mut out = vec![0.0; v[0].len()];
            for (w, vj) in e.iter().zip(v) {
                for (o, x) in out.iter_mut().zip(vj) {
                    *o += w / z * x;
                }
            }
            out
        })
        .collect()
}

/// `x̂₀ = (z − √(1−α) ε)/√α`, then `z' = √α' x̂₀ + √(1−α') ε`.
pub fn ddim_scalar(z: f64, eps: f64, alpha: f64, alpha_next: f64) -> f64 {
    let x0 = (z - (1.0 - alpha).sqrt() * eps) / alpha.sqrt();
    alpha_next.sqrt() * x0 + (1.0 - alpha_next).sqrt() * eps
}

/// Mean over render vectors of the minimum cosine distance to any style
/// vector; zero vectors count as distance 1.
pub fn nnfm_oracle(render: &[Vec<f64>], style: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for r in render {
        let mut best = f64::INFINITY;
        for s in style {
            let nr = dot(r, r).sqrt();
            let ns = dot(s, s).sqrt();
            let d = if nr == 0.0 || ns == 0.0 { 1.0 } else { (1.0 - dot(r, s) / (nr * ns)).clamp(0.0, 2.0) };
            if d < best {
                best = d;
            }
        }
        total += best;
    }
    total / render.len() as f64
}

/// Mean row-wise KL between the row-softmaxed Gram matrices of two
/// position × channel feature tables.
pub fn cfsd_oracle(content: &[Vec<f64>], stylized: &[Vec<f64>]) -> f64 {
    let softmax_rows = |f: &[Vec<f64>]| -> Vec<Vec<f64>> {
        f.iter()
            .map(|a| {
                let e: Vec<f64> = f.iter().map(|b| dot(a, b).exp()).collect();
                let z: f64 = e.iter().sum();
                e.iter().map(|v| v / z).collect()
            })
            .collect()
    };
    let (sc, ss) = (softmax_rows(content), softmax_rows(stylized));
    let n = content.len();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            total += sc[i][j] * (sc[i][j] / ss[i][j]).ln();
        }
    }
    total / n as f64
}

/// Whether `groups` partition `0..n`.
pub fn is_partition(groups: &[Vec<usize>], n: usize) -> bool {
    let mut seen = vec![false; n];
    for g in groups {
        for &v in g {
            if v >= n || seen[v] {
                return false;
            }
            seen[v] = true;
        }
    }
    seen.into_iter().all(|s| s)
}

// ---------------------------------------------------------------------------
// Random inputs

/// Camera at distance `dist` from the origin in a random direction, looking
/// at it, with a `size × size` image and focal length equal to `size`.
pub fn random_camera(rng: &mut impl Rng, dist: f64, size: usize) -> Camera {
    loop {
        let d: Vector3<f64> = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = d.norm();
        if !(0.2..=1.0).contains(&n) {
            continue;
        }
        let eye = d / n * dist;
        let up = if (eye.normalize().y).abs() > 0.95 { Vector3::x() } else { Vector3::y() };
        return Camera::look_at(eye, Vector3::zeros(), up, size as f64, size, size).expect("valid camera");
    }
}

/// Random gaussians in `[-1, 1]³` with moderate scales; about one in ten
/// is nearly opaque so the alpha clamp gets exercised.
pub fn random_scene(rng: &mut impl Rng, n: usize) -> GaussianScene {
    let gaussians = (0..n)
        .map(|_| {
            let position = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let q = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let scale = Vector3::new(rng.random_range(0.1..0.5), rng.random_range(0.1..0.5), rng.random_range(0.1..0.5));
            let opacity = if rng.random_bool(0.1) { 0.9995 } else { rng.random_range(0.1..0.95) };
            let color = Vector3::new(rng.random(), rng.random(), rng.random());
            let mut g = Gaussian3D::new(position, [1.0, 0.0, 0.0, 0.0], scale, opacity, color);
            // keep the raw, unnormalized quaternion so its gradient is exercised
            g.rotation = q;
            g
        })
        .collect();
    GaussianScene::new(gaussians, Vector3::new(rng.random(), rng.random(), rng.random()))
}

/// Random scene whose every field survives the 32-bit PLY encoding: values
/// are rounded through `f32`, colors through the stored SH coefficient.
pub fn ply_representable_scene(rng: &mut impl Rng, n: usize) -> GaussianScene {
    let q = |v: f64| v as f32 as f64;
    let mut scene = random_scene(rng, n);
    for g in &mut scene.gaussians {
        g.position = g.position.map(q);
        g.log_scale = g.log_scale.map(q);
        g.opacity_logit = q(g.opacity_logit);
        g.rotation = g.rotation.map(q);
        g.color = g.color.map(|c| SH_C0 * q((c - 0.5) / SH_C0) + 0.5);
    }
    scene
}

pub fn random_vectors(rng: &mut impl Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

pub fn random_image(rng: &mut impl Rng, width: usize, height: usize) -> ImageRGB {
    let data = (0..width * height * 3).map(|_| rng.random()).collect();
    ImageRGB::from_data(width, height, data).expect("sized correctly")
}
