//! Seeded convolutional feature extractor (3×3 kernels, stride 2, zero
//! padding 1, ReLU) with orthonormal filter initialization and an exact
//! backward pass to image pixels.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::ImageRGB;

/// Grid of `channels`-dimensional feature vectors, row-major `(y, x, c)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
    /// Source layer (1-based) or 0 for imported maps.
    pub layer: usize,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>, layer: usize) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {height}x{width}x{channels} feature map",
                data.len()
            )));
        }
        Ok(Self { height, width, channels, data, layer })
    }

    pub fn positions(&self) -> usize {
        self.height * self.width
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    /// Mean feature vector over all positions.
    pub fn mean_vector(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.channels];
        for i in 0..self.positions() {
            for (o, v) in out.iter_mut().zip(self.vector(i)) {
                *o += v;
            }
        }
        let n = self.positions().max(1) as f64;
        out.iter_mut().for_each(|o| *o /= n);
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractorConfig {
    pub seed: u64,
    pub channels: Vec<usize>,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self { seed: 0, channels: vec![16, 32, 32] }
    }
}

#[derive(Clone, Debug)]
struct ConvLayer {
    in_ch: usize,
    out_ch: usize,
    /// `[out][in][ky][kx]`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl ConvLayer {
    #[inline]
    fn w(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        self.weights[((o * self.in_ch + i) * 3 + ky) * 3 + kx]
    }
}

/// Activations kept for the backward pass.
pub struct ExtractorTape {
    /// Input of each layer as `(h, w, data)`.
    inputs: Vec<(usize, usize, Vec<f64>)>,
    /// Pre-activation of each layer.
    pre: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    layers: Vec<ConvLayer>,
    pub seed: u64,
}

fn out_size(n: usize) -> usize {
    n.div_ceil(2)
}

/// Rows of a `rows × cols` Gaussian matrix orthonormalized by Gram–Schmidt.
fn orthonormal_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<f64> {
    assert!(rows <= cols, "cannot orthonormalize {rows} rows in {cols} dims");
    let mut m: Vec<Vec<f64>> = Vec::with_capacity(rows);
    while m.len() < rows {
        let mut v: Vec<f64> = (0..cols).map(|_| StandardNormal.sample(rng)).collect();
        for u in &m {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-8 {
            v.iter_mut().for_each(|a| *a /= n);
            m.push(v);
        }
    }
    m.concat()
}

impl FeatureExtractor {
    pub fn new(cfg: &ExtractorConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(0xFEA7);
        let mut layers = Vec::new();
        let mut in_ch = 3;
        for &out_ch in &cfg.channels {
            let fan_in = in_ch * 9;
            let gain = std::f64::consts::SQRT_2;
            let mut weights = if out_ch <= fan_in {
                orthonormal_rows(&mut rng, out_ch, fan_in)
            } else {
                // more filters than inputs: orthonormal columns instead
                let t = orthonormal_rows(&mut rng, fan_in, out_ch);
                let mut w = vec![0.0; out_ch * fan_in];
                for r in 0..fan_in {
                    for c in 0..out_ch {
                        w[c * fan_in + r] = t[r * out_ch + c];
                    }
                }
                w
            };
            weights.iter_mut().for_each(|w| *w *= gain);
            layers.push(ConvLayer { in_ch, out_ch, weights, bias: vec![0.0; out_ch] });
            in_ch = out_ch;
        }
        Self { layers, seed: cfg.seed }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn output_channels(&self) -> usize {
        self.layers.last().map(|l| l.out_ch).unwrap_or(3)
    }

    /// Smallest accepted side length.
    pub fn min_size(&self) -> usize {
        1 << self.layers.len()
    }

    pub fn extract(&self, img: &ImageRGB) -> Result<FeatureMap> {
        self.forward(img).map(|(f, _)| f)
    }

    pub fn forward(&self, img: &ImageRGB) -> Result<(FeatureMap, ExtractorTape)> {
        let min = self.min_size();
        if img.width < min || img.height < min {
            return Err(Error::TooSmallImage { width: img.width, height: img.height, min });
        }
        let (mut h, mut w) = (img.height, img.width);
        let mut x = img.data.clone();
        let mut tape = ExtractorTape { inputs: Vec::new(), pre: Vec::new() };
        for layer in &self.layers {
            let (oh, ow) = (out_size(h), out_size(w));
            let mut pre = vec![0.0; oh * ow * layer.out_ch];
            for oy in 0..oh {
                for ox in 0..ow {
                    let base = (oy * ow + ox) * layer.out_ch;
                    for o in 0..layer.out_ch {
                        let mut acc = layer.bias[o];
                        for ky in 0..3 {
                            let iy = (2 * oy + ky) as isize - 1;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..3 {
                                let ix = (2 * ox + kx) as isize - 1;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let src = (iy as usize * w + ix as usize) * layer.in_ch;
                                for i in 0..layer.in_ch {
                                    acc += layer.w(o, i, ky, kx) * x[src + i];
                                }
                            }
                        }
                        pre[base + o] = acc;
                    }
                }
            }
            let act: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
            tape.inputs.push((h, w, std::mem::replace(&mut x, act)));
            tape.pre.push(pre);
            h = oh;
            w = ow;
        }
        let fmap = FeatureMap::new(h, w, self.output_channels(), x, self.layers.len())?;
        Ok((fmap, tape))
    }

    /// dL/dpixels given dL/dfeatures of the final layer.
    pub fn backward(&self, tape: &ExtractorTape, grad_out: &[f64]) -> Result<Vec<f64>> {
        let mut grad = grad_out.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let (h, w, _) = &tape.inputs[l];
            let (h, w) = (*h, *w);
            let pre = &tape.pre[l];
            if grad.len() != pre.len() {
                return Err(Error::ShapeMismatch(format!("feature gradient has {} values, expected {}", grad.len(), pre.len())));
            }
            let (oh, ow) = (out_size(h), out_size(w));
            let mut gin = vec![0.0; h * w * layer.in_ch];
            for oy in 0..oh {
                for ox in 0..ow {
                    let base = (oy * ow + ox) * layer.out_ch;
                    for o in 0..layer.out_ch {
                        if pre[base + o] <= 0.0 {
                            continue;
                        }
                        let g = grad[base + o];
                        if g == 0.0 {
                            continue;
                        }
                        for ky in 0..3 {
                            let iy = (2 * oy + ky) as isize - 1;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..3 {
                                let ix = (2 * ox + kx) as isize - 1;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let dst = (iy as usize * w + ix as usize) * layer.in_ch;
                                for i in 0..layer.in_ch {
                                    gin[dst + i] += layer.w(o, i, ky, kx) * g;
                                }
                            }
                        }
                    }
                }
            }
            grad = gin;
        }
        Ok(grad)
    }

    /// Smallest |pre-activation| seen in a forward pass; used to detect
    /// inputs sitting on a ReLU kink.
    pub fn min_abs_preactivation(tape: &ExtractorTape) -> f64 {
        tape.pre.iter().flatten().map(|v| v.abs()).fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_image_gives_zero_features() {
        let ext = FeatureExtractor::new(&ExtractorConfig::default());
        let f = ext.extract(&ImageRGB::new(16, 16)).unwrap();
        assert_eq!((f.height, f.width, f.channels), (2, 2, 32));
        assert!(f.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic() {
        let ext = FeatureExtractor::new(&ExtractorConfig::default());
        let img = ImageRGB::filled(16, 16, [0.2, 0.7, 0.4]);
        assert_eq!(ext.extract(&img).unwrap(), ext.extract(&img).unwrap());
        let other = FeatureExtractor::new(&ExtractorConfig::default());
        assert_eq!(ext.extract(&img).unwrap(), other.extract(&img).unwrap());
    }

    #[test]
    fn filters_are_orthonormal() {
        let ext = FeatureExtractor::new(&ExtractorConfig::default());
        let l = &ext.layers[0];
        let fan = l.in_ch * 9;
        for a in 0..l.out_ch {
            for b in 0..l.out_ch {
                let dot: f64 = (0..fan).map(|k| l.weights[a * fan + k] * l.weights[b * fan + k]).sum();
                let expected = if a == b { 2.0 } else { 0.0 };
                assert!((dot - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn too_small() {
        let ext = FeatureExtractor::new(&ExtractorConfig::default());
        assert!(matches!(ext.extract(&ImageRGB::new(7, 16)), Err(Error::TooSmallImage { .. })));
    }
}
