//! Synthetic image stacks with scripted label changes and corrupted frames.
//!
//! Every pixel is drawn from independent per-band Gaussians of its true
//! class. A change event relabels a rectangle from a given frame onwards. A
//! corruption event redraws a fraction of a frame's pixels from a wrong
//! class while leaving the ground truth alone, which mimics clouds, blooms
//! and other transient contamination.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Days, NaiveDate};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::raster::{write_band_file, write_labels};
use crate::pipeline::{BandSpec, FrameSpec, ReferenceRegion, StackManifest};
use crate::types::{Band, Frame, ImageStack, LabelRaster, MultibandImage};

const MIN_REFLECTANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthClass {
    pub name: String,
    /// Band id → `[mean, standard deviation]` of the reflectance.
    pub bands: BTreeMap<String, [f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthRegion {
    pub class: usize,
    #[serde(flatten)]
    pub rect: ReferenceRegion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChangeEvent {
    /// First frame showing the new label.
    pub frame: usize,
    pub class: usize,
    #[serde(flatten)]
    pub rect: ReferenceRegion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionEvent {
    pub frame: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub start_date: NaiveDate,
    #[serde(default = "default_interval")]
    pub interval_days: u64,
    pub classes: Vec<SynthClass>,
    /// Initial map: class 0 everywhere, then these rectangles in order.
    #[serde(default)]
    pub regions: Vec<SynthRegion>,
    #[serde(default)]
    pub changes: Vec<ChangeEvent>,
    #[serde(default)]
    pub corruptions: Vec<CorruptionEvent>,
}

fn default_interval() -> u64 {
    5
}

impl SynthSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn bands(&self) -> Result<Vec<Band>> {
        self.classes[0].bands.keys().map(|k| k.parse::<Band>()).collect()
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        (0..self.frames as u64)
            .map(|i| self.start_date + Days::new(i * self.interval_days))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.classes.len();
        if k < 2 {
            return Err(Error::InvalidClassCount(k));
        }
        if self.width == 0 || self.height == 0 || self.frames == 0 {
            return Err(Error::Config("synthetic stack needs nonzero width, height and frames".into()));
        }
        if self.interval_days == 0 {
            return Err(Error::Config("interval_days must be at least 1".into()));
        }
        let keys: Vec<&String> = self.classes[0].bands.keys().collect();
        if keys.is_empty() {
            return Err(Error::Config("classes declare no bands".into()));
        }
        for c in &self.classes {
            if c.bands.keys().collect::<Vec<_>>() != keys {
                return Err(Error::Config(format!("class `{}` declares a different band set", c.name)));
            }
            for (band, [_, sd]) in &c.bands {
                band.parse::<Band>().map_err(|_| Error::Config(format!("unknown band `{band}`")))?;
                if !(*sd >= 0.0) {
                    return Err(Error::Config(format!("negative deviation for {band} of `{}`", c.name)));
                }
            }
        }
        let check_rect = |class: usize, rect: &ReferenceRegion| -> Result<()> {
            if class >= k {
                return Err(Error::Config(format!("class {class} out of range")));
            }
            rect.check(self.width, self.height).map_err(|e| Error::Config(e.to_string()))
        };
        for r in &self.regions {
            check_rect(r.class, &r.rect)?;
        }
        for c in &self.changes {
            check_rect(c.class, &c.rect)?;
            if c.frame >= self.frames {
                return Err(Error::Config(format!("change at frame {} beyond the stack", c.frame)));
            }
        }
        for c in &self.corruptions {
            if c.frame >= self.frames || !(0.0..=1.0).contains(&c.fraction) {
                return Err(Error::Config(format!("invalid corruption event {c:?}")));
            }
        }
        Ok(())
    }

    /// Ground truth of every frame.
    pub fn truths(&self) -> Result<Vec<LabelRaster>> {
        let k = self.classes.len();
        let mut map = vec![0u8; self.width * self.height];
        let paint = |map: &mut [u8], class: usize, r: &ReferenceRegion| {
            for y in r.y..r.y + r.h {
                map[y * self.width + r.x..y * self.width + r.x + r.w].fill(class as u8);
            }
        };
        for r in &self.regions {
            paint(&mut map, r.class, &r.rect);
        }
        let mut out = Vec::with_capacity(self.frames);
        for t in 0..self.frames {
            for c in self.changes.iter().filter(|c| c.frame == t) {
                paint(&mut map, c.class, &c.rect);
            }
            out.push(LabelRaster::new(self.width, self.height, k, map.clone())?);
        }
        Ok(out)
    }
}

/// Generated stack plus the per-frame masks of corrupted pixels.
#[derive(Debug, Clone)]
pub struct SyntheticStack {
    pub stack: ImageStack,
    pub corrupted: Vec<Vec<bool>>,
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<SyntheticStack> {
    spec.validate()?;
    let bands = spec.bands()?;
    let k = spec.classes.len();
    let n = spec.width * spec.height;
    let dists: Vec<Vec<Normal<f64>>> = spec
        .classes
        .iter()
        .map(|c| {
            c.bands
                .values()
                .map(|[m, s]| Normal::new(*m, *s).map_err(|e| Error::Config(e.to_string())))
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let truths = spec.truths()?;
    let mut frames = Vec::with_capacity(spec.frames);
    let mut masks = Vec::with_capacity(spec.frames);
    for ((t, date), truth) in spec.dates().into_iter().enumerate().zip(truths) {
        let mut source: Vec<usize> = truth.labels().iter().map(|&l| l as usize).collect();
        let mut mask = vec![false; n];
        for event in spec.corruptions.iter().filter(|c| c.frame == t) {
            let count = (event.fraction * n as f64).round() as usize;
            for i in sample(&mut rng, n, count) {
                let wrong = (source[i] + rng.random_range(1..k)) % k;
                source[i] = wrong;
                mask[i] = true;
            }
        }
        let mut values = vec![vec![0.0; n]; bands.len()];
        for (i, &class) in source.iter().enumerate() {
            for (b, dist) in dists[class].iter().enumerate() {
                let v = dist.sample(&mut rng).clamp(MIN_REFLECTANCE, 1.0);
                // Stored as float32 on disk; keep memory and disk identical.
                values[b][i] = v as f32 as f64;
            }
        }
        let image = MultibandImage::new(spec.width, spec.height, bands.iter().copied().zip(values).collect())?;
        let mut frame = Frame::new(date, image);
        frame.truth = Some(truth);
        frames.push(frame);
        masks.push(mask);
    }
    Ok(SyntheticStack {
        stack: ImageStack::new(frames)?,
        corrupted: masks,
    })
}

/// Generates the stack and writes band files, truth rasters and a manifest
/// (`stack.toml`) under `out`. Returns the manifest path.
pub fn write_synthetic(spec: &SynthSpec, out: &Path) -> Result<PathBuf> {
    let synth = generate_synthetic(spec)?;
    let frames_dir = out.join("frames");
    let truth_dir = out.join("truth");
    fs::create_dir_all(&frames_dir)?;
    fs::create_dir_all(&truth_dir)?;
    let bands = spec.bands()?;
    let mut frame_specs = Vec::with_capacity(spec.frames);
    for frame in synth.stack.frames() {
        let mut files = BTreeMap::new();
        for (b, band) in bands.iter().enumerate() {
            let rel = PathBuf::from("frames").join(format!("{}_{}.f32", frame.date, band.id()));
            let values: Vec<f32> = frame.image.band_at(b).iter().map(|&v| v as f32).collect();
            write_band_file(&out.join(&rel), &values)?;
            files.insert(band.id().to_string(), rel);
        }
        let truth_rel = PathBuf::from("truth").join(format!("{}.rbcl", frame.date));
        write_labels(&out.join(&truth_rel), frame.truth.as_ref().expect("synthetic truth"))?;
        frame_specs.push(FrameSpec {
            date: frame.date,
            cloud_fraction: None,
            truth: Some(truth_rel),
            posterior: None,
            files,
        });
    }
    let manifest = StackManifest {
        width: spec.width,
        height: spec.height,
        scale: 1.0,
        bands: bands
            .iter()
            .map(|&b| BandSpec {
                name: b,
                resolution: b.native_resolution().min(10),
            })
            .collect(),
        frames: frame_specs,
        base_dir: out.to_path_buf(),
    };
    let path = out.join("stack.toml");
    manifest.save(&path)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SynthSpec {
        toml::from_str(
            r#"
seed = 3
width = 8
height = 6
frames = 12
start_date = "2021-01-01"

[[classes]]
name = "land"
bands = { B3 = [0.10, 0.01], B11 = [0.25, 0.01] }

[[classes]]
name = "water"
bands = { B3 = [0.08, 0.01], B11 = [0.03, 0.01] }

[[regions]]
class = 1
x = 0
y = 0
w = 4
h = 6
"#,
        )
        .unwrap()
    }

    #[test]
    fn no_events_keeps_truth() {
        let s = generate_synthetic(&spec()).unwrap();
        let t0 = s.stack.frames()[0].truth.clone().unwrap();
        assert!(s.stack.frames().iter().all(|f| f.truth.as_ref() == Some(&t0)));
        assert_eq!(t0.labels().iter().filter(|&&l| l == 1).count(), 24);
    }

    #[test]
    fn change_event_flips_rectangle() {
        let mut sp = spec();
        let rect = ReferenceRegion::new(5, 1, 2, 3);
        sp.changes.push(ChangeEvent { frame: 10, class: 1, rect });
        let truths = sp.truths().unwrap();
        for t in 0..12 {
            let diff: Vec<usize> = (0..48).filter(|&i| truths[t].labels()[i] != truths[0].labels()[i]).collect();
            if t < 10 {
                assert!(diff.is_empty());
            } else {
                let expected: Vec<usize> = (1..4).flat_map(|y| (5..7).map(move |x| y * 8 + x)).collect();
                assert_eq!(diff, expected);
            }
        }
    }

    #[test]
    fn corruption_marks_fraction() {
        let mut sp = spec();
        sp.corruptions.push(CorruptionEvent { frame: 5, fraction: 0.25 });
        let s = generate_synthetic(&sp).unwrap();
        assert_eq!(s.corrupted[5].iter().filter(|&&m| m).count(), 12);
        assert!(s.corrupted[4].iter().all(|&m| !m));
    }

    #[test]
    fn deterministic() {
        let a = generate_synthetic(&spec()).unwrap();
        let b = generate_synthetic(&spec()).unwrap();
        assert_eq!(a.stack, b.stack);
    }
}
