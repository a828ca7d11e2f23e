//! TOML stack manifests.
//!
//! ```toml
//! width = 64
//! height = 64
//! scale = 0.0001
//!
//! [[bands]]
//! name = "B3"
//! resolution = 10
//!
//! [[frames]]
//! date = "2021-03-04"
//! cloud_fraction = 0.02
//! truth = "truth/2021-03-04.rbcl"
//! files = { B3 = "frames/2021-03-04_B3.f32" }
//! ```
//!
//! Paths are relative to the manifest's directory. Bands coarser than the
//! finest declared resolution are stored at their native grid and upsampled
//! with nearest-neighbour replication on load.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::preprocess::resample_nearest;
use super::raster::{read_band_file, read_labels, read_posteriors};
use crate::error::{Error, Result};
use crate::types::{Band, Frame, Grid, ImageStack, MultibandImage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandSpec {
    pub name: Band,
    /// Native ground resolution in metres.
    pub resolution: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameSpec {
    pub date: NaiveDate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cloud_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
    /// Single-date `RBCP` cube with externally computed posteriors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub posterior: Option<PathBuf>,
    pub files: BTreeMap<String, PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackManifest {
    pub width: usize,
    pub height: usize,
    #[serde(default = "unit_scale")]
    pub scale: f64,
    pub bands: Vec<BandSpec>,
    pub frames: Vec<FrameSpec>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn unit_scale() -> f64 {
    1.0
}

impl StackManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Load {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let mut m: StackManifest = toml::from_str(&text).map_err(|e| Error::Load {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    fn finest_resolution(&self) -> u32 {
        self.bands.iter().map(|b| b.resolution).min().unwrap_or(1)
    }

    /// Checks the manifest's internal consistency without touching files.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Load {
            path: self.base_dir.clone(),
            reason: msg,
        });
        if self.width == 0 || self.height == 0 {
            return bad("manifest dimensions must be nonzero".into());
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return bad(format!("scale {} must be positive", self.scale));
        }
        if self.bands.is_empty() {
            return bad("manifest declares no bands".into());
        }
        let finest = self.finest_resolution();
        let mut seen = BTreeSet::new();
        for b in &self.bands {
            if !seen.insert(b.name) {
                return bad(format!("band {} declared twice", b.name));
            }
            if b.resolution == 0 || b.resolution % finest != 0 {
                return bad(format!(
                    "band {} resolution {} is not a multiple of {finest}",
                    b.name, b.resolution
                ));
            }
        }
        let mut dates = BTreeSet::new();
        for f in &self.frames {
            if !dates.insert(f.date) {
                return bad(format!("date {} appears twice", f.date));
            }
            for b in &self.bands {
                if !f.files.contains_key(b.name.id()) {
                    return bad(format!("frame {} has no file for band {}", f.date, b.name.id()));
                }
            }
            if let Some(extra) = f.files.keys().find(|k| !self.bands.iter().any(|b| b.name.id() == k.as_str())) {
                return bad(format!("frame {} lists undeclared band `{extra}`", f.date));
            }
            if let Some(cf) = f.cloud_fraction {
                if !(0.0..=1.0).contains(&cf) {
                    return bad(format!("cloud fraction {cf} of {} outside [0, 1]", f.date));
                }
            }
        }
        Ok(())
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

/// Reads every frame named by the manifest. Reflectance is the raw file value
/// times `scale`; frames come back in date order.
pub fn load_stack(manifest: &StackManifest) -> Result<ImageStack> {
    manifest.validate()?;
    let (w, h) = (manifest.width, manifest.height);
    let finest = manifest.finest_resolution();
    let mut frames = Vec::with_capacity(manifest.frames.len());
    for spec in &manifest.frames {
        let mut bands = Vec::with_capacity(manifest.bands.len());
        for b in &manifest.bands {
            let factor = (b.resolution / finest) as usize;
            let (cw, ch) = (w.div_ceil(factor), h.div_ceil(factor));
            let path = manifest.resolve(&spec.files[b.name.id()]);
            let raw = read_band_file(&path, cw * ch)?;
            let values: Vec<f64> = raw.iter().map(|&v| v as f64 * manifest.scale).collect();
            let coarse = Grid::new(cw, ch, values)?;
            let fine = resample_nearest(&coarse, factor)?;
            let cropped: Vec<f64> = if fine.width() == w && fine.height() == h {
                fine.into_data()
            } else {
                (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| fine.get(x, y)).collect()
            };
            bands.push((b.name, cropped));
        }
        let image = MultibandImage::new(w, h, bands).map_err(|e| Error::Load {
            path: manifest.base_dir.clone(),
            reason: format!("frame {}: {e}", spec.date),
        })?;
        let mut frame = Frame::new(spec.date, image);
        frame.cloud_fraction = spec.cloud_fraction;
        if let Some(p) = &spec.truth {
            let path = manifest.resolve(p);
            let truth = read_labels(&path)?;
            if truth.width() != w || truth.height() != h {
                return Err(Error::Load {
                    path,
                    reason: format!("truth is {}x{}, stack is {w}x{h}", truth.width(), truth.height()),
                });
            }
            frame.truth = Some(truth);
        }
        if let Some(p) = &spec.posterior {
            let path = manifest.resolve(p);
            let cube = read_posteriors(&path)?;
            if cube.width != w || cube.height != h || cube.planes.len() != 1 {
                return Err(Error::Load {
                    path,
                    reason: "external posterior must be a single-date cube on the stack grid".into(),
                });
            }
            frame.external_posterior = cube.planes.into_iter().next();
        }
        frames.push(frame);
    }
    ImageStack::new(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::raster::write_band_file;

    fn write_frame(dir: &Path, date: &str, value: f32, n: usize) -> FrameSpec {
        let name = format!("{date}_B3.f32");
        write_band_file(&dir.join(&name), &vec![value; n]).unwrap();
        FrameSpec {
            date: date.parse().unwrap(),
            cloud_fraction: None,
            truth: None,
            posterior: None,
            files: BTreeMap::from([("B3".to_string(), PathBuf::from(name))]),
        }
    }

    fn manifest(dir: &Path, frames: Vec<FrameSpec>, scale: f64) -> StackManifest {
        StackManifest {
            width: 2,
            height: 2,
            scale,
            bands: vec![BandSpec {
                name: Band::Green,
                resolution: 10,
            }],
            frames,
            base_dir: dir.to_path_buf(),
        }
    }

    #[test]
    fn frames_sorted_and_scaled() {
        let dir = tempfile::tempdir().unwrap();
        let a = write_frame(dir.path(), "2021-05-01", 2000.0, 4);
        let b = write_frame(dir.path(), "2021-04-01", 1000.0, 4);
        let stack = load_stack(&manifest(dir.path(), vec![a, b], 1e-4)).unwrap();
        let dates: Vec<String> = stack.dates().iter().map(|d| d.to_string()).collect();
        assert_eq!(dates, ["2021-04-01", "2021-05-01"]);
        assert!((stack.frames()[1].image.band(Band::Green).unwrap()[0] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn missing_file_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = write_frame(dir.path(), "2021-05-01", 1.0, 4);
        a.files.insert("B3".into(), PathBuf::from("nope.f32"));
        let err = load_stack(&manifest(dir.path(), vec![a], 1.0)).unwrap_err();
        assert!(err.to_string().contains("nope.f32"), "{err}");
    }

    #[test]
    fn duplicate_dates_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let a = write_frame(dir.path(), "2021-05-01", 1.0, 4);
        let err = load_stack(&manifest(dir.path(), vec![a.clone(), a], 1.0)).unwrap_err();
        assert!(matches!(err, Error::Load { .. }));
    }

    #[test]
    fn wrong_size_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let a = write_frame(dir.path(), "2021-05-01", 1.0, 3);
        assert!(matches!(load_stack(&manifest(dir.path(), vec![a], 1.0)), Err(Error::Load { .. })));
    }

    #[test]
    fn coarse_band_is_upsampled() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = write_frame(dir.path(), "2021-05-01", 1.0, 4);
        write_band_file(&dir.path().join("swir.f32"), &[7.0]).unwrap();
        a.files.insert("B11".into(), PathBuf::from("swir.f32"));
        let mut m = manifest(dir.path(), vec![a], 1.0);
        m.bands.push(BandSpec {
            name: Band::Swir1,
            resolution: 20,
        });
        let stack = load_stack(&m).unwrap();
        assert_eq!(stack.frames()[0].image.band(Band::Swir1).unwrap(), &[7.0; 4]);
    }

    #[test]
    fn toml_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let a = write_frame(dir.path(), "2021-05-01", 1.0, 4);
        let m = manifest(dir.path(), vec![a], 1e-4);
        let path = dir.path().join("stack.toml");
        m.save(&path).unwrap();
        assert_eq!(StackManifest::load(&path).unwrap(), m);
    }
}
