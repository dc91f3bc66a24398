//! Binary feature maps: magic `NVFM`, then `h`, `w`, `c` as little-endian
//! `u32`, then `h·w·c` little-endian `f32` values in `(y, x, c)` order.

use std::path::Path;

use super::atomic_write;
use crate::error::{io_at, Error, Result};
use crate::losses::FeatureMap;
use crate::metrics::Descriptor;

pub const MAGIC: [u8; 4] = *b"NVFM";

pub fn encode_feature_map(map: &FeatureMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + map.data.len() * 4);
    out.extend_from_slice(&MAGIC);
    for d in [map.height, map.width, map.channels] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in &map.data {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_feature_map(bytes: &[u8]) -> Result<FeatureMap> {
    let bad = |m: String| Error::MalformedFeatureFile(m);
    if bytes.len() < 16 {
        return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if bytes[..4] != MAGIC {
        return Err(bad("bad magic".into()));
    }
    let dim = |k: usize| u32::from_le_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().expect("4 bytes")) as usize;
    let (h, w, c) = (dim(0), dim(1), dim(2));
    if c == 0 {
        return Err(bad("zero channels".into()));
    }
    let n = h.checked_mul(w).and_then(|v| v.checked_mul(c)).ok_or_else(|| bad("dimensions overflow".into()))?;
    let body = &bytes[16..];
    if body.len() != n * 4 {
        return Err(bad(format!("expected {} body bytes for {h}x{w}x{c}, found {}", n * 4, body.len())));
    }
    let data: Vec<f64> = body.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(bad("non-finite value".into()));
    }
    FeatureMap::new(h, w, c, data, 0)
}

pub fn load_feature_map(path: &Path) -> Result<FeatureMap> {
    decode_feature_map(&std::fs::read(path).map_err(io_at(path))?)
}

pub fn save_feature_map(map: &FeatureMap, path: &Path) -> Result<()> {
    let bytes = encode_feature_map(map);
    atomic_write(path, |w| w.write_all(&bytes))
}

/// A descriptor file is a feature map; its mean vector is the descriptor
/// (a `1×1×k` file stores the descriptor verbatim).
pub fn load_descriptor(path: &Path) -> Result<Descriptor> {
    Ok(Descriptor::from_feature_map(&load_feature_map(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let m = FeatureMap::new(2, 3, 2, (0..12).map(|i| i as f64 * 0.25 - 1.0).collect(), 0).unwrap();
        assert_eq!(decode_feature_map(&encode_feature_map(&m)).unwrap(), m);
    }

    #[test]
    fn rejects_bad_input() {
        let m = FeatureMap::new(1, 1, 2, vec![1.0, 2.0], 0).unwrap();
        let mut b = encode_feature_map(&m);
        b.pop();
        assert!(decode_feature_map(&b).is_err());
        let mut b = encode_feature_map(&m);
        b[0] = b'X';
        assert!(decode_feature_map(&b).is_err());
    }
}
