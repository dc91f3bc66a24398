//! Evaluation metrics: content fidelity (CFSD), style similarity (CSD score)
//! and multi-view direction consistency (CLIP-DC).
//!
//! The metric kernels only see feature maps and descriptor vectors, so any
//! network can supply them: the built-in extractor or imported files.

use crate::error::{Error, Result};
use crate::losses::{FeatureExtractor, FeatureMap};
use crate::scene::ImageRGB;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DescriptorSource {
    Extractor,
    Imported,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Descriptor {
    pub values: Vec<f64>,
    pub source: DescriptorSource,
}

impl Descriptor {
    pub fn new(values: Vec<f64>, source: DescriptorSource) -> Self {
        Self { values, source }
    }

    /// Mean-pooled final-layer features of `img`.
    pub fn from_image(ext: &FeatureExtractor, img: &ImageRGB) -> Result<Self> {
        Ok(Self::new(ext.extract(img)?.mean_vector(), DescriptorSource::Extractor))
    }

    pub fn from_feature_map(map: &FeatureMap) -> Self {
        Self::new(map.mean_vector(), DescriptorSource::Imported)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity with the norm product taken as `sqrt(|a|²|b|²)`, so
/// identical vectors give exactly 1. `None` if either vector is zero.
fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let (na2, nb2) = (dot(a, a), dot(b, b));
    if na2 == 0.0 || nb2 == 0.0 {
        return None;
    }
    Some((dot(a, b) / (na2 * nb2).sqrt()).clamp(-1.0, 1.0))
}

/// Row-wise softmax of `F Fᵀ` for `F` of shape `positions × channels`,
/// returned as log-probabilities.
pub fn log_correlation_map(f: &FeatureMap) -> Vec<Vec<f64>> {
    let n = f.positions();
    (0..n)
        .map(|i| {
            let row: Vec<f64> = (0..n).map(|j| dot(f.vector(i), f.vector(j))).collect();
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.into_iter().map(|v| v - lse).collect()
        })
        .collect()
}

/// Mean over positions of `KL(S^c_i ‖ S^cs_i)`.
pub fn cfsd_from_features(content: &FeatureMap, stylized: &FeatureMap) -> Result<f64> {
    if content.positions() != stylized.positions() || content.channels != stylized.channels {
        return Err(Error::ShapeMismatch(format!(
            "feature maps {}x{}x{} vs {}x{}x{}",
            content.height, content.width, content.channels, stylized.height, stylized.width, stylized.channels
        )));
    }
    if content.positions() == 0 {
        return Err(Error::EmptyFeatureMap);
    }
    let lc = log_correlation_map(content);
    let ls = log_correlation_map(stylized);
    let mut total = 0.0;
    for (pc, ps) in lc.iter().zip(&ls) {
        let kl: f64 = pc.iter().zip(ps).map(|(a, b)| a.exp() * (a - b)).sum();
        total += kl.max(0.0);
    }
    Ok(total / content.positions() as f64)
}

pub fn cfsd(content: &ImageRGB, stylized: &ImageRGB, ext: &FeatureExtractor) -> Result<f64> {
    if !content.same_shape(stylized) {
        return Err(Error::ShapeMismatch(format!(
            "content {}x{} vs stylized {}x{}",
            content.width, content.height, stylized.width, stylized.height
        )));
    }
    cfsd_from_features(&ext.extract(content)?, &ext.extract(stylized)?)
}

/// Cosine similarity of two style descriptors.
pub fn csd_score(style: &Descriptor, stylized: &Descriptor) -> Result<f64> {
    if style.values.len() != stylized.values.len() {
        return Err(Error::DimensionMismatch(format!(
            "descriptor dims {} vs {}",
            style.values.len(),
            stylized.values.len()
        )));
    }
    cosine(&style.values, &stylized.values).ok_or(Error::ZeroDescriptor)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClipDcReport {
    pub score: f64,
    pub pairs: usize,
    /// Pairs where either edit direction vanished; each scored 1.0.
    pub degenerate_pairs: usize,
}

/// Mean cosine similarity between edit directions `C(s_i) - C(o_i)` of
/// adjacent frames along one camera path.
pub fn clip_dc(original: &[Descriptor], stylized: &[Descriptor]) -> Result<ClipDcReport> {
    if original.len() != stylized.len() {
        return Err(Error::LengthMismatch(original.len(), stylized.len()));
    }
    if original.len() < 2 {
        return Err(Error::TooShort(original.len()));
    }
    let dim = original[0].values.len();
    if original.iter().chain(stylized).any(|d| d.values.len() != dim) {
        return Err(Error::DimensionMismatch("embeddings disagree on dimension".into()));
    }
    let directions: Vec<Vec<f64>> = original
        .iter()
        .zip(stylized)
        .map(|(o, s)| s.values.iter().zip(&o.values).map(|(a, b)| a - b).collect())
        .collect();
    let mut total = 0.0;
    let mut degenerate = 0;
    for pair in directions.windows(2) {
        match cosine(&pair[0], &pair[1]) {
            Some(c) => total += c,
            None => {
                degenerate += 1;
                total += 1.0;
            }
        }
    }
    let pairs = directions.len() - 1;
    Ok(ClipDcReport { score: total / pairs as f64, pairs, degenerate_pairs: degenerate })
}

/// Aggregate metrics over a set of views.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub label: String,
    pub views: usize,
    pub cfsd: f64,
    pub csd: f64,
    pub clip_dc: f64,
    pub clip_dc_pairs: usize,
    pub clip_dc_degenerate: usize,
}

impl MetricReport {
    /// `key = value` lines, stable key order.
    pub fn to_key_values(&self) -> String {
        format!(
            "label = \"{}\"\nviews = {}\ncfsd = {:.9}\ncsd = {:.9}\nclip_dc = {:.9}\nclip_dc_pairs = {}\nclip_dc_degenerate = {}\nclip_dc_path = \"single supplied path, frames in order\"\n",
            self.label, self.views, self.cfsd, self.csd, self.clip_dc, self.clip_dc_pairs, self.clip_dc_degenerate
        )
    }

    pub fn table_header() -> String {
        format!("{:<24} {:>6} {:>10} {:>10} {:>10} {:>11}", "variant", "views", "CFSD", "CSD", "CLIP-DC", "degenerate")
    }

    pub fn table_row(&self) -> String {
        let degenerate = format!("{}/{}", self.clip_dc_degenerate, self.clip_dc_pairs);
        format!(
            "{:<24} {:>6} {:>10.5} {:>10.5} {:>10.5} {:>11}",
            self.label, self.views, self.cfsd, self.csd, self.clip_dc, degenerate
        )
    }
}

/// Descriptor source for [`evaluate`]; imported descriptors replace the
/// extractor for the CSD and CLIP-DC terms.
#[derive(Clone, Debug, Default)]
pub struct ImportedDescriptors {
    pub style: Option<Descriptor>,
    pub original: Option<Vec<Descriptor>>,
    pub stylized: Option<Vec<Descriptor>>,
}

/// CFSD averaged over views, CSD of each stylized view against the style
/// image averaged over views, and CLIP-DC along the given frame order.
pub fn evaluate(
    label: &str,
    originals: &[ImageRGB],
    stylized: &[ImageRGB],
    style: &ImageRGB,
    ext: &FeatureExtractor,
    imported: &ImportedDescriptors,
) -> Result<MetricReport> {
    if originals.len() != stylized.len() {
        return Err(Error::LengthMismatch(originals.len(), stylized.len()));
    }
    if originals.is_empty() {
        return Err(Error::TooShort(0));
    }
    let n = originals.len() as f64;
    let mut cfsd_sum = 0.0;
    for (o, s) in originals.iter().zip(stylized) {
        cfsd_sum += cfsd(o, s, ext)?;
    }
    let describe = |imgs: &[ImageRGB]| -> Result<Vec<Descriptor>> { imgs.iter().map(|i| Descriptor::from_image(ext, i)).collect() };
    let orig_desc = match &imported.original {
        Some(d) => d.clone(),
        None => describe(originals)?,
    };
    let styl_desc = match &imported.stylized {
        Some(d) => d.clone(),
        None => describe(stylized)?,
    };
    let style_desc = match &imported.style {
        Some(d) => d.clone(),
        None => Descriptor::from_image(ext, style)?,
    };
    let mut csd_sum = 0.0;
    for d in &styl_desc {
        csd_sum += csd_score(&style_desc, d)?;
    }
    let (clip, pairs, degenerate) = if orig_desc.len() >= 2 {
        let r = clip_dc(&orig_desc, &styl_desc)?;
        (r.score, r.pairs, r.degenerate_pairs)
    } else {
        (1.0, 0, 0)
    };
    Ok(MetricReport {
        label: label.to_string(),
        views: originals.len(),
        cfsd: cfsd_sum / n,
        csd: csd_sum / styl_desc.len() as f64,
        clip_dc: clip,
        clip_dc_pairs: pairs,
        clip_dc_degenerate: degenerate,
    })
}
