//! File formats: COLMAP text models, 3DGS binary PLY, PNG and binary
//! feature maps. Every writer goes through [`atomic_write`].

pub mod colmap;
pub mod features;
pub mod ply;
pub mod png;

use std::io::{self, BufWriter, Write};
use std::path::Path;

pub use colmap::{load_colmap, save_colmap, ColmapCamera, ColmapImage, ColmapModel};
pub use features::{load_descriptor, load_feature_map, save_feature_map};
pub use ply::{load_ply, read_ply, save_ply, write_ply};
pub use png::{linear_to_srgb, load_png, save_png, srgb_to_linear};

use crate::error::Result;

/// Writes `path` through a temporary file in the same directory that is
/// renamed into place only after `fill` succeeds and the data is synced.
/// On any failure the previous contents of `path` (if any) are untouched
/// and the temporary file is removed.
pub fn atomic_write<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> io::Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        fill(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
