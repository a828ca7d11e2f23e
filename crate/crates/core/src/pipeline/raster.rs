//! Binary raster containers.
//!
//! * band files: row-major little-endian `f32`, no header
//! * label rasters (`RBCL`): width, height, K, then one byte per pixel
//! * posterior cubes (`RBCP`): width, height, K, date count, then `f32`
//!   planes ordered date, class, pixel

use std::fs;
use std::path::Path;

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::types::LabelRaster;

const LABEL_MAGIC: &[u8; 4] = b"RBCL";
const CUBE_MAGIC: &[u8; 4] = b"RBCP";
const VERSION: u8 = 1;

fn load_err(path: &Path, reason: impl ToString) -> Error {
    Error::Load {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

fn class_byte(k: usize) -> Result<u8> {
    u8::try_from(k).map_err(|_| Error::Format(format!("{k} classes do not fit the container")))
}

pub fn read_band_file(path: &Path, expected: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| load_err(path, e))?;
    if bytes.len() != expected * 4 {
        return Err(load_err(
            path,
            format!("expected {expected} float32 values, file holds {} bytes", bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn write_band_file(path: &Path, values: &[f32]) -> Result<()> {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes)?;
    Ok(())
}

pub fn encode_labels(raster: &LabelRaster) -> Result<Vec<u8>> {
    let mut w = Writer::new(LABEL_MAGIC, VERSION);
    w.u32(raster.width())?;
    w.u32(raster.height())?;
    w.u8(class_byte(raster.num_classes())?);
    w.bytes(raster.labels());
    Ok(w.finish())
}

pub fn decode_labels(bytes: &[u8]) -> Result<LabelRaster> {
    let (mut r, version) = Reader::open(bytes, LABEL_MAGIC)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported label raster version {version}")));
    }
    let width = r.u32()?;
    let height = r.u32()?;
    let k = r.u8()? as usize;
    let labels = r.bytes(width * height)?.to_vec();
    r.finish()?;
    LabelRaster::new(width, height, k, labels).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_labels(path: &Path, raster: &LabelRaster) -> Result<()> {
    fs::write(path, encode_labels(raster)?)?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<LabelRaster> {
    let bytes = fs::read(path).map_err(|e| load_err(path, e))?;
    decode_labels(&bytes).map_err(|e| load_err(path, e))
}

/// Per-date class probability planes, pixel-major within a plane.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorCube {
    pub width: usize,
    pub height: usize,
    pub num_classes: usize,
    /// `planes[date][class][pixel]`
    pub planes: Vec<Vec<Vec<f32>>>,
}

impl PosteriorCube {
    /// Builds a cube from pixel-major `N × K` blocks, one per date.
    pub fn from_pixel_major(width: usize, height: usize, num_classes: usize, blocks: &[Vec<f64>]) -> Result<Self> {
        let n = width * height;
        let mut planes = Vec::with_capacity(blocks.len());
        for block in blocks {
            if block.len() != n * num_classes {
                return Err(Error::Shape(format!(
                    "posterior block has {} values, expected {}",
                    block.len(),
                    n * num_classes
                )));
            }
            let date: Vec<Vec<f32>> = (0..num_classes)
                .map(|c| (0..n).map(|p| block[p * num_classes + c] as f32).collect())
                .collect();
            planes.push(date);
        }
        Ok(Self {
            width,
            height,
            num_classes,
            planes,
        })
    }
}

pub fn encode_posteriors(cube: &PosteriorCube) -> Result<Vec<u8>> {
    let n = cube.width * cube.height;
    let mut w = Writer::new(CUBE_MAGIC, VERSION);
    w.u32(cube.width)?;
    w.u32(cube.height)?;
    w.u8(class_byte(cube.num_classes)?);
    w.u32(cube.planes.len())?;
    for date in &cube.planes {
        if date.len() != cube.num_classes || date.iter().any(|p| p.len() != n) {
            return Err(Error::Shape("posterior cube planes do not match its header".into()));
        }
        for plane in date {
            w.f32s(plane.iter().copied());
        }
    }
    Ok(w.finish())
}

pub fn decode_posteriors(bytes: &[u8]) -> Result<PosteriorCube> {
    let (mut r, version) = Reader::open(bytes, CUBE_MAGIC)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported posterior cube version {version}")));
    }
    let width = r.u32()?;
    let height = r.u32()?;
    let k = r.u8()? as usize;
    let dates = r.u32()?;
    let n = width * height;
    let mut planes = Vec::with_capacity(dates);
    for _ in 0..dates {
        planes.push((0..k).map(|_| r.f32s(n)).collect::<Result<Vec<_>>>()?);
    }
    r.finish()?;
    Ok(PosteriorCube {
        width,
        height,
        num_classes: k,
        planes,
    })
}

pub fn write_posteriors(path: &Path, cube: &PosteriorCube) -> Result<()> {
    fs::write(path, encode_posteriors(cube)?)?;
    Ok(())
}

pub fn read_posteriors(path: &Path) -> Result<PosteriorCube> {
    let bytes = fs::read(path).map_err(|e| load_err(path, e))?;
    decode_posteriors(&bytes).map_err(|e| load_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_round_trip() {
        let r = LabelRaster::new(3, 2, 3, vec![0, 1, 2, 2, 1, 0]).unwrap();
        assert_eq!(decode_labels(&encode_labels(&r).unwrap()).unwrap(), r);
    }

    #[test]
    fn cube_round_trip() {
        let cube = PosteriorCube::from_pixel_major(2, 1, 2, &[vec![0.25, 0.75, 1.0, 0.0], vec![0.5; 4]]).unwrap();
        assert_eq!(cube.planes[0][1], vec![0.75, 0.0]);
        assert_eq!(decode_posteriors(&encode_posteriors(&cube).unwrap()).unwrap(), cube);
    }

    #[test]
    fn rejects_truncated_and_foreign_bytes() {
        let r = LabelRaster::new(2, 2, 2, vec![0, 1, 1, 0]).unwrap();
        let bytes = encode_labels(&r).unwrap();
        assert!(matches!(decode_labels(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        assert!(matches!(decode_posteriors(&bytes), Err(Error::Format(_))));
    }
}
