//! COLMAP text models (`cameras.txt`, `images.txt`). Only pinhole models
//! are supported.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;

use super::atomic_write;
use crate::error::{io_at, Error, Result};
use crate::scene::{matrix_to_quat, quat_normalize, quat_to_matrix, Camera, Quat};

#[derive(Clone, Debug, PartialEq)]
pub struct ColmapCamera {
    pub id: u32,
    pub model: String,
    pub width: usize,
    pub height: usize,
    pub params: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ColmapImage {
    pub id: u32,
    /// `(w, x, y, z)`, normalized on load.
    pub qvec: Quat,
    pub tvec: Vector3<f64>,
    pub camera_id: u32,
    pub name: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ColmapModel {
    pub cameras: BTreeMap<u32, ColmapCamera>,
    /// Sorted by image id.
    pub images: Vec<ColmapImage>,
}

fn malformed(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::MalformedFile { path: path.to_path_buf(), line, msg: msg.into() }
}

fn field<T: std::str::FromStr>(tokens: &[&str], i: usize, what: &str, path: &Path, line: usize) -> Result<T> {
    let tok = tokens.get(i).ok_or_else(|| malformed(path, line, format!("missing field {what}")))?;
    tok.parse().map_err(|_| malformed(path, line, format!("field {what}: cannot parse {tok:?}")))
}

fn parse_cameras(path: &Path, text: &str) -> Result<BTreeMap<u32, ColmapCamera>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let l = raw.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let t: Vec<&str> = l.split_whitespace().collect();
        let id: u32 = field(&t, 0, "CAMERA_ID", path, line)?;
        let model = t.get(1).ok_or_else(|| malformed(path, line, "missing field MODEL"))?.to_string();
        let expected = match model.as_str() {
            "PINHOLE" => 4,
            "SIMPLE_PINHOLE" => 3,
            _ => return Err(Error::UnsupportedCameraModel(model)),
        };
        let width = field(&t, 2, "WIDTH", path, line)?;
        let height = field(&t, 3, "HEIGHT", path, line)?;
        if t.len() != 4 + expected {
            return Err(malformed(path, line, format!("{model} takes {expected} parameters, found {}", t.len().saturating_sub(4))));
        }
        let params = (0..expected).map(|k| field(&t, 4 + k, "PARAMS", path, line)).collect::<Result<Vec<f64>>>()?;
        if out.insert(id, ColmapCamera { id, model, width, height, params }).is_some() {
            return Err(malformed(path, line, format!("duplicate camera id {id}")));
        }
    }
    Ok(out)
}

fn parse_images(path: &Path, text: &str, cameras: &BTreeMap<u32, ColmapCamera>) -> Result<Vec<ColmapImage>> {
    let mut out = Vec::new();
    let mut lines = text.lines().enumerate();
    while let Some((i, raw)) = lines.next() {
        let line = i + 1;
        let l = raw.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let t: Vec<&str> = l.split_whitespace().collect();
        if t.len() < 10 {
            return Err(malformed(path, line, format!("image record needs 10 fields, found {}", t.len())));
        }
        let id: u32 = field(&t, 0, "IMAGE_ID", path, line)?;
        let mut q = [0.0; 4];
        for (k, name) in ["QW", "QX", "QY", "QZ"].iter().enumerate() {
            q[k] = field(&t, 1 + k, name, path, line)?;
        }
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(malformed(path, line, "quaternion has zero norm"));
        }
        let tvec = Vector3::new(field(&t, 5, "TX", path, line)?, field(&t, 6, "TY", path, line)?, field(&t, 7, "TZ", path, line)?);
        let camera_id: u32 = field(&t, 8, "CAMERA_ID", path, line)?;
        if !cameras.contains_key(&camera_id) {
            return Err(malformed(path, line, format!("unknown camera id {camera_id}")));
        }
        // names may contain spaces
        let name = t[9..].join(" ");
        out.push(ColmapImage { id, qvec: quat_normalize(&q), tvec, camera_id, name });
        // the following line lists 2D points and is ignored
        lines.next();
    }
    out.sort_by_key(|im| im.id);
    if out.windows(2).any(|w| w[0].id == w[1].id) {
        return Err(malformed(path, 0, "duplicate image id"));
    }
    Ok(out)
}

impl ColmapModel {
    pub fn read(dir: &Path) -> Result<Self> {
        let cam_path: PathBuf = dir.join("cameras.txt");
        let img_path: PathBuf = dir.join("images.txt");
        let cameras = parse_cameras(&cam_path, &std::fs::read_to_string(&cam_path).map_err(io_at(&cam_path))?)?;
        let images = parse_images(&img_path, &std::fs::read_to_string(&img_path).map_err(io_at(&img_path))?, &cameras)?;
        Ok(Self { cameras, images })
    }

    pub fn to_cameras(&self) -> Result<Vec<Camera>> {
        self.images
            .iter()
            .map(|im| {
                let c = &self.cameras[&im.camera_id];
                let (focal, principal) = match c.model.as_str() {
                    "PINHOLE" => ((c.params[0], c.params[1]), (c.params[2], c.params[3])),
                    _ => ((c.params[0], c.params[0]), (c.params[1], c.params[2])),
                };
                Camera::new(quat_to_matrix(&im.qvec), im.tvec, focal, principal, c.width, c.height)
            })
            .collect()
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        atomic_write(&dir.join("cameras.txt"), |w| {
            writeln!(w, "# Camera list with one line of data per camera:")?;
            writeln!(w, "#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]")?;
            writeln!(w, "# Number of cameras: {}", self.cameras.len())?;
            for c in self.cameras.values() {
                write!(w, "{} {} {} {}", c.id, c.model, c.width, c.height)?;
                for p in &c.params {
                    write!(w, " {p:?}")?;
                }
                writeln!(w)?;
            }
            Ok(())
        })?;
        atomic_write(&dir.join("images.txt"), |w| {
            writeln!(w, "# Image list with two lines of data per image:")?;
            writeln!(w, "#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME")?;
            writeln!(w, "#   POINTS2D[] as (X, Y, POINT3D_ID)")?;
            writeln!(w, "# Number of images: {}", self.images.len())?;
            for im in &self.images {
                let q = im.qvec;
                let t = im.tvec;
                writeln!(
                    w,
                    "{} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {} {}",
                    im.id, q[0], q[1], q[2], q[3], t.x, t.y, t.z, im.camera_id, im.name
                )?;
                writeln!(w)?;
            }
            Ok(())
        })
    }

    /// One PINHOLE camera record per view.
    pub fn from_cameras(cameras: &[Camera], names: &[String]) -> Result<Self> {
        if cameras.len() != names.len() {
            return Err(Error::LengthMismatch(cameras.len(), names.len()));
        }
        let mut model = Self::default();
        for (k, (c, name)) in cameras.iter().zip(names).enumerate() {
            let id = k as u32 + 1;
            model.cameras.insert(
                id,
                ColmapCamera { id, model: "PINHOLE".into(), width: c.width, height: c.height, params: vec![c.fx, c.fy, c.cx, c.cy] },
            );
            model.images.push(ColmapImage { id, qvec: matrix_to_quat(&c.rotation), tvec: c.translation, camera_id: id, name: name.clone() });
        }
        Ok(model)
    }
}

/// Cameras and image names of the model in `dir`, ordered by image id.
pub fn load_colmap(dir: &Path) -> Result<(Vec<Camera>, Vec<String>)> {
    let model = ColmapModel::read(dir)?;
    let names = model.images.iter().map(|im| im.name.clone()).collect();
    Ok((model.to_cameras()?, names))
}

pub fn save_colmap(dir: &Path, cameras: &[Camera], names: &[String]) -> Result<()> {
    ColmapModel::from_cameras(cameras, names)?.write(dir)
}
