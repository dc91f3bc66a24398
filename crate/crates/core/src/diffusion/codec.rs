//! Patch latent codec.
//!
//! Encoding averages each `patch × patch` block and lifts the centered mean
//! color to `d` dimensions with a seeded matrix whose columns are orthogonal.
//! Decoding applies the left inverse of that lift and repeats the result over
//! the block, so `decode(encode(x))` is the per-patch mean image.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use super::attention::Tokens;
use super::seeded_rng;
use crate::error::{Error, Result};
use crate::scene::ImageRGB;

/// Per-view latent tokens at a noise level.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentGrid {
    pub rows: usize,
    pub cols: usize,
    /// `rows * cols` tokens, row-major over the patch grid.
    pub tokens: Tokens,
    /// Noise level index into the scheduler.
    pub timestep: usize,
}

impl LatentGrid {
    pub fn dim(&self) -> usize {
        self.tokens.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.tokens.iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug)]
pub struct LatentCodec {
    pub patch: usize,
    /// `3 × d`; a mean color `m` (row) maps to the token `(m - ½) lift`.
    pub lift: DMatrix<f64>,
    /// `d × 3` left inverse of `lift`.
    pub unlift: DMatrix<f64>,
}

const LIFT_GAIN: f64 = 4.0;

impl LatentCodec {
    pub fn new(dim: usize, patch: usize, seed: u64) -> Self {
        assert!(dim >= 3, "latent dimension must be at least 3");
        let mut rng = seeded_rng(seed, 0xC0DEC);
        let raw = DMatrix::from_fn(dim, 3, |_, _| StandardNormal.sample(&mut rng));
        let q = raw.qr().q();
        let lift = q.transpose() * LIFT_GAIN;
        let unlift = q / LIFT_GAIN;
        Self { patch, lift, unlift }
    }

    pub fn dim(&self) -> usize {
        self.lift.ncols()
    }

    pub fn check_resolution(&self, width: usize, height: usize) -> Result<()> {
        if width == 0 || height == 0 || !width.is_multiple_of(self.patch) || !height.is_multiple_of(self.patch) {
            return Err(Error::NonDivisibleResolution { width, height, patch: self.patch });
        }
        Ok(())
    }

    /// Per-patch mean colors, `rows*cols × 3`.
    pub fn patch_means(&self, img: &ImageRGB) -> Result<DMatrix<f64>> {
        self.check_resolution(img.width, img.height)?;
        let p = self.patch;
        let (rows, cols) = (img.height / p, img.width / p);
        let mut means = DMatrix::zeros(rows * cols, 3);
        let norm = 1.0 / (p * p) as f64;
        for r in 0..rows {
            for c in 0..cols {
                let mut sum = [0.0; 3];
                for y in r * p..(r + 1) * p {
                    for x in c * p..(c + 1) * p {
                        let px = img.pixel(x, y);
                        for ch in 0..3 {
                            sum[ch] += px[ch];
                        }
                    }
                }
                for ch in 0..3 {
                    means[(r * cols + c, ch)] = sum[ch] * norm;
                }
            }
        }
        Ok(means)
    }

    /// Flattened, centered patches, `rows*cols × (patch²·3)`.
    pub fn patches(&self, img: &ImageRGB) -> Result<DMatrix<f64>> {
        self.check_resolution(img.width, img.height)?;
        let p = self.patch;
        let (rows, cols) = (img.height / p, img.width / p);
        let mut out = DMatrix::zeros(rows * cols, p * p * 3);
        for r in 0..rows {
            for c in 0..cols {
                let mut k = 0;
                for y in r * p..(r + 1) * p {
                    for x in c * p..(c + 1) * p {
                        let px = img.pixel(x, y);
                        for v in px {
                            out[(r * cols + c, k)] = v - 0.5;
                            k += 1;
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Maps a flattened centered patch to the lift of its mean color.
    pub fn patch_mean_lift(&self) -> DMatrix<f64> {
        let p2 = self.patch * self.patch;
        let mut avg = DMatrix::zeros(p2 * 3, 3);
        for i in 0..p2 {
            for ch in 0..3 {
                avg[(i * 3 + ch, ch)] = 1.0 / p2 as f64;
            }
        }
        avg * &self.lift
    }

    pub fn encode(&self, img: &ImageRGB) -> Result<LatentGrid> {
        let means = self.patch_means(img)?;
        let tokens = means.add_scalar(-0.5) * &self.lift;
        Ok(LatentGrid { rows: img.height / self.patch, cols: img.width / self.patch, tokens, timestep: 0 })
    }

    /// Decodes and clamps to `[0, 1]`.
    pub fn decode(&self, z: &LatentGrid) -> Result<ImageRGB> {
        if z.dim() != self.dim() || z.tokens.nrows() != z.rows * z.cols {
            return Err(Error::ShapeMismatch(format!(
                "latent {}x{} with {} tokens of dim {}, codec dim {}",
                z.rows,
                z.cols,
                z.tokens.nrows(),
                z.dim(),
                self.dim()
            )));
        }
        let colors = (&z.tokens * &self.unlift).add_scalar(0.5);
        let p = self.patch;
        let mut img = ImageRGB::new(z.cols * p, z.rows * p);
        for r in 0..z.rows {
            for c in 0..z.cols {
                let k = r * z.cols + c;
                let rgb = [0, 1, 2].map(|ch| colors[(k, ch)].clamp(0.0, 1.0));
                for y in r * p..(r + 1) * p {
                    for x in c * p..(c + 1) * p {
                        img.set_pixel(x, y, rgb);
                    }
                }
            }
        }
        Ok(img)
    }
}
