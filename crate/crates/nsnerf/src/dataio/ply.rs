//! Binary little-endian PLY point-cloud files (float32 xyz, uint8 rgb).

use std::fs;
use std::path::Path;

use super::DataError;
use crate::pointcloud::{CloudPoint, PointCloud};
use crate::scalar::{sc, to_f64, Scalar};

const VERTEX_BYTES: usize = 15; // 3 * float32 + 3 * uint8

fn ply_err(path: &Path, offset: usize, message: impl Into<String>) -> DataError {
    DataError::Ply {
        path: path.to_path_buf(),
        offset,
        message: message.into(),
    }
}

/// Writes a cloud as binary little-endian PLY.
///
/// Positions are stored as `float32` (lossy for `f64` clouds), colors as
/// `uint8`. `source_frame` is not part of the format.
pub fn write_ply<T: Scalar>(cloud: &PointCloud<T>, path: &Path) -> Result<(), DataError> {
    let mut bytes = Vec::with_capacity(128 + cloud.len() * VERTEX_BYTES);
    bytes.extend_from_slice(
        format!(
            "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
             property float x\nproperty float y\nproperty float z\n\
             property uchar red\nproperty uchar green\nproperty uchar blue\n\
             end_header\n",
            cloud.len()
        )
        .as_bytes(),
    );
    for p in &cloud.points {
        for c in 0..3 {
            bytes.extend_from_slice(&(to_f64(p.position[c]) as f32).to_le_bytes());
        }
        for c in 0..3 {
            bytes.push((to_f64(p.color[c]).clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    fs::write(path, bytes).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a PLY written by [`write_ply`].
///
/// `source_frame` is set to 0 for every point: the format does not carry it.
pub fn read_ply<T: Scalar>(path: &Path) -> Result<PointCloud<T>, DataError> {
    let bytes = fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;

    let mut offset = 0usize;
    let mut vertex_count: Option<usize> = None;
    let mut properties: Vec<String> = Vec::new();
    let mut saw_format = false;
    let header_end = loop {
        let rest = &bytes[offset..];
        let Some(nl) = rest.iter().position(|b| *b == b'\n') else {
            return Err(ply_err(path, offset, "header line without newline"));
        };
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| ply_err(path, offset, "header is not valid ASCII"))?
            .trim_end_matches('\r');
        let line_start = offset;
        offset += nl + 1;

        if line_start == 0 {
            if line != "ply" {
                return Err(ply_err(path, 0, "missing 'ply' magic"));
            }
            continue;
        }
        let mut words = line.split_whitespace();
        match words.next() {
            Some("comment") => continue,
            Some("format") => {
                if line != "format binary_little_endian 1.0" {
                    return Err(ply_err(
                        path,
                        line_start,
                        format!("unsupported format line '{line}'"),
                    ));
                }
                saw_format = true;
            }
            Some("element") => {
                if words.next() != Some("vertex") {
                    return Err(ply_err(path, line_start, "only 'element vertex' is supported"));
                }
                let n = words
                    .next()
                    .and_then(|w| w.parse::<usize>().ok())
                    .ok_or_else(|| ply_err(path, line_start, "bad vertex count"))?;
                vertex_count = Some(n);
            }
            Some("property") => {
                properties.push(words.collect::<Vec<_>>().join(" "));
            }
            Some("end_header") => break offset,
            _ => {
                return Err(ply_err(path, line_start, format!("unexpected header line '{line}'")));
            }
        }
    };

    if !saw_format {
        return Err(ply_err(path, header_end, "missing format line"));
    }
    let n = vertex_count.ok_or_else(|| ply_err(path, header_end, "missing element vertex line"))?;
    let expected_props = [
        "float x",
        "float y",
        "float z",
        "uchar red",
        "uchar green",
        "uchar blue",
    ];
    if properties != expected_props {
        return Err(ply_err(
            path,
            header_end,
            format!("unsupported vertex layout {properties:?}"),
        ));
    }

    let payload = &bytes[header_end..];
    if payload.len() != n * VERTEX_BYTES {
        return Err(ply_err(
            path,
            header_end + payload.len().min(n * VERTEX_BYTES),
            format!(
                "payload is {} bytes, expected {} for {} vertices",
                payload.len(),
                n * VERTEX_BYTES,
                n
            ),
        ));
    }

    let mut points = Vec::with_capacity(n);
    for i in 0..n {
        let rec = &payload[i * VERTEX_BYTES..(i + 1) * VERTEX_BYTES];
        let coord = |k: usize| -> T {
            let arr: [u8; 4] = rec[k * 4..k * 4 + 4].try_into().expect("4 bytes");
            sc(f32::from_le_bytes(arr) as f64)
        };
        let channel = |k: usize| -> T { sc(rec[12 + k] as f64 / 255.0) };
        points.push(CloudPoint {
            position: nalgebra::Vector3::new(coord(0), coord(1), coord(2)),
            color: [channel(0), channel(1), channel(2)],
            source_frame: 0,
        });
    }
    Ok(PointCloud { points })
}
