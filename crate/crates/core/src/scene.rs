//! Scene representation: anisotropic 3D gaussians, pinhole cameras and RGB images.
//!
//! Every gaussian stores its parameters in an unconstrained form (log scale,
//! opacity logit) so gradient steps never leave the valid domain. The
//! covariance is rebuilt from rotation and scale as `R S Sᵀ Rᵀ`.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Unit quaternion stored as `(w, x, y, z)`, Hamilton convention.
pub type Quat = [f64; 4];

pub const IDENTITY_QUAT: Quat = [1.0, 0.0, 0.0, 0.0];

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn quat_norm(q: &Quat) -> f64 {
    (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt()
}

pub fn quat_normalize(q: &Quat) -> Quat {
    let n = quat_norm(q);
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

/// Hamilton product `a * b`.
pub fn quat_mul(a: &Quat, b: &Quat) -> Quat {
    let [aw, ax, ay, az] = *a;
    let [bw, bx, by, bz] = *b;
    [
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ]
}

/// Rotation matrix of `q / |q|`.
pub fn quat_to_matrix(q: &Quat) -> Matrix3<f64> {
    let [w, x, y, z] = quat_normalize(q);
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

/// Quaternion of a proper rotation matrix (Shepperd's method), `w >= 0`.
pub fn matrix_to_quat(m: &Matrix3<f64>) -> Quat {
    let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
    let q = if trace > 0.0 {
        let s = (trace + 1.0).sqrt() * 2.0;
        [
            0.25 * s,
            (m[(2, 1)] - m[(1, 2)]) / s,
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(1, 0)] - m[(0, 1)]) / s,
        ]
    } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
        let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
        [
            (m[(2, 1)] - m[(1, 2)]) / s,
            0.25 * s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
        ]
    } else if m[(1, 1)] > m[(2, 2)] {
        let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
        [
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            0.25 * s,
            (m[(1, 2)] + m[(2, 1)]) / s,
        ]
    } else {
        let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
        [
            (m[(1, 0)] - m[(0, 1)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
            (m[(1, 2)] + m[(2, 1)]) / s,
            0.25 * s,
        ]
    };
    let q = quat_normalize(&q);
    if q[0] < 0.0 {
        [-q[0], -q[1], -q[2], -q[3]]
    } else {
        q
    }
}

/// One optimizable splat.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian3D {
    pub position: Vector3<f64>,
    /// `(w, x, y, z)`; the renderer normalizes before use.
    pub rotation: Quat,
    pub log_scale: Vector3<f64>,
    pub opacity_logit: f64,
    /// Degree-0 RGB in `[0, 1]`.
    pub color: Vector3<f64>,
}

impl Gaussian3D {
    pub fn new(
        position: Vector3<f64>,
        rotation: Quat,
        scale: Vector3<f64>,
        opacity: f64,
        color: Vector3<f64>,
    ) -> Self {
        Self {
            position,
            rotation: quat_normalize(&rotation),
            log_scale: scale.map(f64::ln),
            opacity_logit: logit(opacity),
            color,
        }
    }

    pub fn scale(&self) -> Vector3<f64> {
        self.log_scale.map(f64::exp)
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        quat_to_matrix(&self.rotation)
    }

    pub fn covariance(&self) -> Matrix3<f64> {
        covariance_from_rs(self)
    }
}

/// `Σ = R S Sᵀ Rᵀ` with `S = diag(exp(log_scale))`.
pub fn covariance_from_rs(g: &Gaussian3D) -> Matrix3<f64> {
    let r = g.rotation_matrix();
    let m = r * Matrix3::from_diagonal(&g.scale());
    m * m.transpose()
}

/// Unnormalized density `exp(-½ (x-μ)ᵀ Σ⁻¹ (x-μ))`.
pub fn gaussian_density(g: &Gaussian3D, x: &Vector3<f64>) -> f64 {
    // Σ⁻¹ = R S⁻² Rᵀ, so the quadratic form is |S⁻¹ Rᵀ d|².
    let local = g.rotation_matrix().transpose() * (x - g.position);
    let q = local.component_div(&g.scale()).norm_squared();
    (-0.5 * q).exp()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianScene {
    pub gaussians: Vec<Gaussian3D>,
    pub background: Vector3<f64>,
}

impl GaussianScene {
    pub fn new(gaussians: Vec<Gaussian3D>, background: Vector3<f64>) -> Self {
        Self { gaussians, background }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }
}

/// Pinhole camera with a world-to-camera rigid transform (OpenCV axes:
/// x right, y down, z forward).
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        focal: (f64, f64),
        principal: (f64, f64),
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let cam = Self {
            rotation,
            translation,
            fx: focal.0,
            fy: focal.1,
            cx: principal.0,
            cy: principal.1,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`; `up` is the world up direction.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        focal: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Self::new(
            rotation,
            translation,
            (focal, focal),
            (width as f64 / 2.0, height as f64 / 2.0),
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let err = (self.rotation * self.rotation.transpose() - Matrix3::identity()).abs().max();
        if err > 1e-6 {
            return Err(Error::Config(format!("camera rotation not orthonormal (error {err:e})")));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Config("camera focal length must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("camera resolution must be at least 1x1".into()));
        }
        Ok(())
    }

    /// Camera center in world coordinates, `-Rᵀ t`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }
}

/// Row-major `height × width × 3` linear RGB image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageRGB {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl ImageRGB {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height * 3] }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut img = Self::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {width}x{height} image",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_shape(&self, other: &ImageRGB) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
