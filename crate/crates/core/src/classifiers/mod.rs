//! Instantaneous (single-date) classifiers.

pub mod gmm;
pub mod index;
pub mod logreg;
pub mod persist;
pub mod sic;

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel::fill_pixels;
use crate::types::{Band, Frame, ImageStack, MultibandImage};

pub use gmm::{gmm_fit, gmm_likelihood, GenerativeModel};
pub use index::{spectral_index, IndexValue, SpectralIndexKind};
pub use logreg::{lr_fit, lr_posterior, DiscriminativeModel};
pub use sic::{pseudo_labels, sic_from_thresholds, sic_posterior, SicModel, Thresholds};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    Sic,
    Gmm,
    Lr,
    /// Posteriors supplied with the data, e.g. from a pretrained network.
    External,
}

impl ClassifierKind {
    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::Sic => "sic",
            ClassifierKind::Gmm => "gmm",
            ClassifierKind::Lr => "lr",
            ClassifierKind::External => "external",
        }
    }

    /// What the classifier natively produces.
    pub fn output_kind(self) -> OutputKind {
        match self {
            ClassifierKind::Gmm => OutputKind::Likelihood,
            _ => OutputKind::Posterior,
        }
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sic" => Ok(ClassifierKind::Sic),
            "gmm" => Ok(ClassifierKind::Gmm),
            "lr" => Ok(ClassifierKind::Lr),
            "external" => Ok(ClassifierKind::External),
            _ => Err(Error::Config(format!("unknown classifier `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputKind {
    /// `p(z | C)`, normalized across classes per pixel.
    Likelihood,
    /// `p(C | z)`.
    Posterior,
}

/// Row-major feature matrix.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Samples {
    dim: usize,
    data: Vec<f64>,
}

impl Samples {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Shape("samples need at least one feature".into()));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::Shape(format!("{} values do not split into rows of {dim}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("sample features must be finite".into()));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Shape("rows differ in length".into()));
        }
        Self::new(dim, rows.concat())
    }

    pub fn empty(dim: usize) -> Self {
        Self { dim, data: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn push(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.dim);
        self.data.extend_from_slice(row);
    }
}

/// Labelled pixels pooled over training dates.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub bands: Vec<Band>,
    pub features: Samples,
    pub labels: Vec<u8>,
    pub num_classes: usize,
}

impl TrainingSet {
    /// Gathers every pixel of `frames` with its label from `label_of`. When
    /// `max_samples` is set, a seeded uniform subsample is kept.
    pub fn collect<F>(
        frames: &[&Frame],
        num_classes: usize,
        max_samples: Option<usize>,
        seed: u64,
        mut label_of: F,
    ) -> Result<Self>
    where
        F: FnMut(&Frame) -> Result<Vec<u8>>,
    {
        let Some(first) = frames.first() else {
            return Err(Error::InsufficientData("no training frames".into()));
        };
        let bands = first.image.bands().to_vec();
        let dim = bands.len();
        let mut features = Samples::empty(dim);
        let mut labels = Vec::new();
        let mut px = vec![0.0; dim];
        for frame in frames {
            let l = label_of(frame)?;
            if l.len() != frame.image.pixel_count() {
                return Err(Error::Shape(format!("label count mismatch on {}", frame.date)));
            }
            for (n, &label) in l.iter().enumerate() {
                if label as usize >= num_classes {
                    return Err(Error::InvalidArgument(format!("label {label} for {num_classes} classes")));
                }
                frame.image.pixel_into(n, &mut px);
                features.push(&px);
                labels.push(label);
            }
        }
        let mut set = Self {
            bands,
            features,
            labels,
            num_classes,
        };
        if let Some(max) = max_samples {
            set = set.subsample(max, seed);
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn subsample(self, max: usize, seed: u64) -> Self {
        if self.len() <= max {
            return self;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut keep = sample(&mut rng, self.len(), max).into_vec();
        keep.sort_unstable();
        let mut features = Samples::empty(self.features.dim());
        let mut labels = Vec::with_capacity(max);
        for i in keep {
            features.push(self.features.row(i));
            labels.push(self.labels[i]);
        }
        Self {
            features,
            labels,
            ..self
        }
    }

    /// Features split by class, for per-class density fitting.
    pub fn by_class(&self) -> Vec<Samples> {
        let mut out = vec![Samples::empty(self.features.dim()); self.num_classes];
        for (row, &l) in self.features.rows().zip(&self.labels) {
            out[l as usize].push(row);
        }
        out
    }

    /// Empirical class frequencies, or `None` if a class is absent.
    pub fn class_frequencies(&self) -> Option<Vec<f64>> {
        let mut counts = vec![0usize; self.num_classes];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        if counts.contains(&0) {
            return None;
        }
        let n = self.len() as f64;
        Some(counts.iter().map(|&c| c as f64 / n).collect())
    }
}

/// Per-date instantaneous outputs for a whole stack.
#[derive(Debug, Clone, PartialEq)]
pub struct InstantaneousSeries {
    pub kind: OutputKind,
    pub num_classes: usize,
    pub width: usize,
    pub height: usize,
    pub dates: Vec<NaiveDate>,
    /// One pixel-major `N × K` block per date; each pixel sums to one.
    pub frames: Vec<Vec<f64>>,
}

impl InstantaneousSeries {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClassifierModel {
    Sic(SicModel),
    Gmm(GenerativeModel),
    Lr(DiscriminativeModel),
    External { num_classes: usize },
}

impl ClassifierModel {
    pub fn kind(&self) -> ClassifierKind {
        match self {
            ClassifierModel::Sic(_) => ClassifierKind::Sic,
            ClassifierModel::Gmm(_) => ClassifierKind::Gmm,
            ClassifierModel::Lr(_) => ClassifierKind::Lr,
            ClassifierModel::External { .. } => ClassifierKind::External,
        }
    }

    pub fn output_kind(&self) -> OutputKind {
        self.kind().output_kind()
    }

    pub fn num_classes(&self) -> usize {
        match self {
            ClassifierModel::Sic(m) => m.num_classes(),
            ClassifierModel::Gmm(m) => m.num_classes(),
            ClassifierModel::Lr(m) => m.num_classes(),
            ClassifierModel::External { num_classes } => *num_classes,
        }
    }

    /// Instantaneous output of one frame, pixel-major `N × K`.
    pub fn instantaneous_frame(&self, frame: &Frame, workers: usize) -> Result<Vec<f64>> {
        let image = &frame.image;
        let k = self.num_classes();
        let mut out = vec![0.0; image.pixel_count() * k];
        match self {
            ClassifierModel::Sic(model) => {
                let (values, flags) = index::index_image(image, model.index())?;
                let flagged = flags.iter().filter(|&&f| f).count();
                if flagged > 0 {
                    log::warn!("{}: {flagged} pixels have a zero band sum; index set to 0", frame.date);
                }
                fill_pixels(&mut out, k, workers, |start, chunk| {
                    for (i, px) in chunk.chunks_exact_mut(k).enumerate() {
                        model.posterior_into(values[start + i], px);
                    }
                    Ok(())
                })?;
            }
            ClassifierModel::Gmm(model) => {
                let cols = feature_columns(image, model.bands(), model.dim())?;
                fill_pixels(&mut out, k, workers, |start, chunk| {
                    let mut px = vec![0.0; cols.len()];
                    let mut scratch = vec![0.0; cols.len()];
                    for (i, o) in chunk.chunks_exact_mut(k).enumerate() {
                        gather(image, &cols, start + i, &mut px);
                        model.log_likelihoods_into(&px, o, &mut scratch)?;
                        normalize_log(o).map_err(|e| match e {
                            Error::DegenerateLikelihood => Error::Numerical(format!(
                                "all class likelihoods vanish at pixel {} of {}",
                                start + i,
                                frame.date
                            )),
                            other => other,
                        })?;
                    }
                    Ok(())
                })?;
            }
            ClassifierModel::Lr(model) => {
                let cols = feature_columns(image, model.bands(), model.dim())?;
                fill_pixels(&mut out, k, workers, |start, chunk| {
                    let mut px = vec![0.0; cols.len()];
                    let mut z = vec![0.0; cols.len()];
                    for (i, o) in chunk.chunks_exact_mut(k).enumerate() {
                        gather(image, &cols, start + i, &mut px);
                        model.posterior_into(&px, &mut z, o);
                    }
                    Ok(())
                })?;
            }
            ClassifierModel::External { .. } => {
                let planes = frame.external_posterior.as_ref().ok_or_else(|| {
                    Error::Load {
                        path: Default::default(),
                        reason: format!("frame {} has no external posterior", frame.date),
                    }
                })?;
                if planes.len() != k || planes.iter().any(|p| p.len() != image.pixel_count()) {
                    return Err(Error::Shape(format!(
                        "external posterior of {} does not match {k} classes on the image grid",
                        frame.date
                    )));
                }
                for (n, px) in out.chunks_exact_mut(k).enumerate() {
                    for (c, v) in px.iter_mut().enumerate() {
                        let p = planes[c][n] as f64;
                        if !(p >= 0.0) || !p.is_finite() {
                            return Err(Error::InvalidProbability(format!(
                                "external posterior value {p} at pixel {n} of {}",
                                frame.date
                            )));
                        }
                        *v = p;
                    }
                    let s: f64 = px.iter().sum();
                    if !(s > 0.0) {
                        return Err(Error::InvalidProbability(format!(
                            "external posterior sums to zero at pixel {n} of {}",
                            frame.date
                        )));
                    }
                    px.iter_mut().for_each(|v| *v /= s);
                }
            }
        }
        Ok(out)
    }

    pub fn instantaneous_series(&self, stack: &ImageStack, workers: usize) -> Result<InstantaneousSeries> {
        let (width, height) = stack
            .dims()
            .ok_or_else(|| Error::InsufficientData("image stack is empty".into()))?;
        let frames = stack
            .frames()
            .iter()
            .map(|f| self.instantaneous_frame(f, workers))
            .collect::<Result<Vec<_>>>()?;
        Ok(InstantaneousSeries {
            kind: self.output_kind(),
            num_classes: self.num_classes(),
            width,
            height,
            dates: stack.dates(),
            frames,
        })
    }
}

/// Image band indices that feed the model's features, in feature order.
fn feature_columns(image: &MultibandImage, bands: &[Band], dim: usize) -> Result<Vec<usize>> {
    if bands.is_empty() {
        if image.bands().len() != dim {
            return Err(Error::Shape(format!(
                "model expects {dim} features, image has {} bands",
                image.bands().len()
            )));
        }
        return Ok((0..dim).collect());
    }
    bands
        .iter()
        .map(|&b| {
            image
                .band_index(b)
                .ok_or_else(|| Error::Shape(format!("model needs band {b}, image has {:?}", image.bands())))
        })
        .collect()
}

#[inline]
fn gather(image: &MultibandImage, cols: &[usize], n: usize, out: &mut [f64]) {
    for (o, &c) in out.iter_mut().zip(cols) {
        *o = image.band_at(c)[n];
    }
}

/// Turns log values into a PMF with a max shift.
fn normalize_log(v: &mut [f64]) -> Result<()> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::DegenerateLikelihood);
    }
    if !max.is_finite() {
        return Err(Error::Numerical("non-finite log-likelihood".into()));
    }
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    v.iter_mut().for_each(|x| *x /= sum);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_normalization_survives_underflow() {
        let mut v = vec![-2000.0, -2001.0];
        normalize_log(&mut v).unwrap();
        let e = (-1.0f64).exp();
        assert!((v[0] - 1.0 / (1.0 + e)).abs() < 1e-15);
        let mut dead = vec![f64::NEG_INFINITY; 2];
        assert!(matches!(normalize_log(&mut dead), Err(Error::DegenerateLikelihood)));
    }

    #[test]
    fn samples_rows() {
        let s = Samples::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.row(1), &[3.0, 4.0]);
        assert!(Samples::new(2, vec![1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn kind_round_trip() {
        for k in [ClassifierKind::Sic, ClassifierKind::Gmm, ClassifierKind::Lr, ClassifierKind::External] {
            assert_eq!(k.name().parse::<ClassifierKind>().unwrap(), k);
        }
    }
}
