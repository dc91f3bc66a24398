//! Binary little-endian PLY in the common 3DGS vertex layout.
//!
//! Written properties, in order: `x y z f_dc_0 f_dc_1 f_dc_2 opacity
//! scale_0 scale_1 scale_2 rot_0 rot_1 rot_2 rot_3`, all `float`. Readers
//! locate properties by name and skip any others (normals, higher SH bands).
//! The background color rides along as a `comment background r g b` header
//! line; files without it load with a black background.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use super::atomic_write;
use crate::error::{io_at, Error, Result};
use crate::scene::{Gaussian3D, GaussianScene};

/// Degree-0 real spherical harmonic, `1 / (2√π)`.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;

pub const PROPERTIES: [&str; 14] = [
    "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3",
];

fn header_err(msg: impl Into<String>) -> Error {
    Error::MalformedHeader(msg.into())
}

pub fn write_ply(scene: &GaussianScene, w: &mut dyn Write) -> std::io::Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format binary_little_endian 1.0")?;
    let bg = scene.background;
    writeln!(w, "comment background {:?} {:?} {:?}", bg.x, bg.y, bg.z)?;
    writeln!(w, "element vertex {}", scene.len())?;
    for p in PROPERTIES {
        writeln!(w, "property float {p}")?;
    }
    writeln!(w, "end_header")?;
    let mut buf = Vec::with_capacity(scene.len() * 14 * 4);
    for g in &scene.gaussians {
        let dc = g.color.map(|c| (c - 0.5) / SH_C0);
        let values = [
            g.position.x,
            g.position.y,
            g.position.z,
            dc.x,
            dc.y,
            dc.z,
            g.opacity_logit,
            g.log_scale.x,
            g.log_scale.y,
            g.log_scale.z,
            g.rotation[0],
            g.rotation[1],
            g.rotation[2],
            g.rotation[3],
        ];
        for v in values {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    w.write_all(&buf)
}

pub fn save_ply(scene: &GaussianScene, path: &Path) -> Result<()> {
    atomic_write(path, |w| write_ply(scene, w))
}

fn property_size(ty: &str) -> Option<usize> {
    Some(match ty {
        "char" | "uchar" | "int8" | "uint8" => 1,
        "short" | "ushort" | "int16" | "uint16" => 2,
        "int" | "uint" | "int32" | "uint32" | "float" | "float32" => 4,
        "double" | "float64" => 8,
        _ => return None,
    })
}

pub fn read_ply(r: &mut dyn Read) -> Result<GaussianScene> {
    let mut reader = BufReader::new(r);
    let mut line = String::new();
    let mut next_line = |reader: &mut BufReader<&mut dyn Read>| -> Result<String> {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(header_err("unexpected end of file in header"));
        }
        Ok(line.trim_end_matches(['\n', '\r']).to_string())
    };
    if next_line(&mut reader)? != "ply" {
        return Err(header_err("missing 'ply' magic"));
    }
    let mut count: Option<usize> = None;
    let mut in_vertex = false;
    let mut format_ok = false;
    // (name, byte offset, is float32)
    let mut props: Vec<(String, usize, bool)> = Vec::new();
    let mut stride = 0;
    let mut background = Vector3::zeros();
    loop {
        let l = next_line(&mut reader)?;
        let t: Vec<&str> = l.split_whitespace().collect();
        match t.as_slice() {
            ["end_header"] => break,
            ["format", "binary_little_endian", "1.0"] => format_ok = true,
            ["format", other, ..] => return Err(header_err(format!("unsupported format {other}"))),
            ["comment", "background", r, g, b] => {
                let parse = |v: &str| v.parse::<f64>().map_err(|_| header_err(format!("bad background value {v:?}")));
                background = Vector3::new(parse(r)?, parse(g)?, parse(b)?);
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", "vertex", n] => {
                if count.is_some() {
                    return Err(header_err("duplicate vertex element"));
                }
                count = Some(n.parse().map_err(|_| header_err(format!("bad vertex count {n:?}")))?);
                in_vertex = true;
            }
            ["element", name, ..] => {
                if count.is_none() {
                    return Err(header_err(format!("element {name} precedes vertex")));
                }
                in_vertex = false;
            }
            ["property", "list", ..] if in_vertex => return Err(header_err("list properties are not supported on vertices")),
            ["property", ty, name] => {
                if in_vertex {
                    let size = property_size(ty).ok_or_else(|| header_err(format!("unknown property type {ty}")))?;
                    props.push((name.to_string(), stride, matches!(*ty, "float" | "float32")));
                    stride += size;
                }
            }
            _ => return Err(header_err(format!("unrecognized header line {l:?}"))),
        }
    }
    if !format_ok {
        return Err(header_err("missing format line"));
    }
    let n = count.ok_or_else(|| header_err("missing vertex element"))?;
    let mut offsets = [0usize; 14];
    for (k, want) in PROPERTIES.iter().enumerate() {
        let (_, off, is_f32) = props
            .iter()
            .find(|(name, _, _)| name == want)
            .ok_or_else(|| header_err(format!("missing property {want}")))?;
        if !is_f32 {
            return Err(header_err(format!("property {want} must be float")));
        }
        offsets[k] = *off;
    }
    let expected = n * stride;
    let mut body = Vec::with_capacity(expected);
    reader.take(expected as u64).read_to_end(&mut body)?;
    if body.len() < expected {
        return Err(Error::TruncatedBody { expected, found: body.len() });
    }
    let gaussians = body
        .chunks_exact(stride.max(1))
        .take(n)
        .map(|rec| {
            let v: Vec<f64> = offsets
                .iter()
                .map(|&o| f32::from_le_bytes([rec[o], rec[o + 1], rec[o + 2], rec[o + 3]]) as f64)
                .collect();
            Gaussian3D {
                position: Vector3::new(v[0], v[1], v[2]),
                color: Vector3::new(SH_C0 * v[3] + 0.5, SH_C0 * v[4] + 0.5, SH_C0 * v[5] + 0.5),
                opacity_logit: v[6],
                log_scale: Vector3::new(v[7], v[8], v[9]),
                rotation: [v[10], v[11], v[12], v[13]],
            }
        })
        .collect();
    Ok(GaussianScene::new(gaussians, background))
}

pub fn load_ply(path: &Path) -> Result<GaussianScene> {
    let mut f = std::fs::File::open(path).map_err(io_at(path))?;
    read_ply(&mut f)
}
