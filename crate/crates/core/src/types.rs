//! Domain types shared across the crate: class sets, discrete distributions,
//! the class-transition model and raster containers.
//!
//! Everything here is immutable after construction. Constructors validate
//! their invariants so downstream code can rely on them.

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when checking that a probability vector sums to one.
pub const PMF_TOLERANCE: f64 = 1e-9;

/// Smallest value a PMF entry may take before it is used as a divisor.
pub const PROBABILITY_FLOOR: f64 = 1e-300;

/// Ordered set of class labels. The index order is the canonical class order,
/// and matches the order of the threshold intervals used by the spectral
/// index classifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct ClassSet {
    labels: Vec<String>,
}

impl ClassSet {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.len() < 2 {
            return Err(Error::InvalidClassCount(labels.len()));
        }
        for (i, label) in labels.iter().enumerate() {
            if labels[..i].contains(label) {
                return Err(Error::Config(format!("duplicate class label `{label}`")));
            }
        }
        Ok(Self { labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

impl TryFrom<Vec<String>> for ClassSet {
    type Error = Error;

    fn try_from(labels: Vec<String>) -> Result<Self> {
        ClassSet::new(labels)
    }
}

impl From<ClassSet> for Vec<String> {
    fn from(set: ClassSet) -> Self {
        set.labels
    }
}

/// A discrete distribution over the K classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    /// Validates that `values` already forms a PMF.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidProbability("empty vector".into()));
        }
        let mut sum = 0.0;
        for &v in &values {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidProbability(format!("entry {v} outside [0, 1]")));
            }
            sum += v;
        }
        if (sum - 1.0).abs() > PMF_TOLERANCE {
            return Err(Error::InvalidProbability(format!("entries sum to {sum}")));
        }
        Ok(Self(values))
    }

    /// Normalizes nonnegative weights into a PMF.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let mut values = weights.to_vec();
        normalize_in_place(&mut values)?;
        Ok(Self(values))
    }

    /// Wraps values the caller guarantees already form a PMF.
    pub(crate) fn from_normalized(values: Vec<f64>) -> Self {
        debug_assert!((values.iter().sum::<f64>() - 1.0).abs() <= PMF_TOLERANCE);
        Self(values)
    }

    pub fn uniform(k: usize) -> Result<Self> {
        uniform_pmf(k)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        self.0
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln())
            .sum()
    }
}

impl std::ops::Index<usize> for ProbabilityVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Per-class observation densities `p(z | C)`. Not normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodVector(Vec<f64>);

impl LikelihoodVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Shape("empty likelihood vector".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Numerical(format!("likelihood entry {v} is not a finite nonnegative value")));
        }
        Ok(Self(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// `p(C_0)`: every class equally likely.
pub fn uniform_pmf(k: usize) -> Result<ProbabilityVector> {
    if k < 2 {
        return Err(Error::InvalidClassCount(k));
    }
    Ok(ProbabilityVector(vec![1.0 / k as f64; k]))
}

/// Scales `values` to sum to one, raising entries below
/// [`PROBABILITY_FLOOR`] first.
pub(crate) fn normalize_in_place(values: &mut [f64]) -> Result<()> {
    let mut sum = 0.0;
    for v in values.iter() {
        if !v.is_finite() || *v < 0.0 {
            return Err(Error::Numerical(format!("cannot normalize entry {v}")));
        }
        sum += *v;
    }
    if sum <= 0.0 || !sum.is_finite() {
        return Err(Error::Numerical(format!("cannot normalize weights summing to {sum}")));
    }
    for v in values.iter_mut() {
        *v /= sum;
    }
    floor_in_place(values);
    Ok(())
}

/// Raises entries below the floor and renormalizes. Leaves the vector
/// untouched when no entry needs raising.
pub(crate) fn floor_in_place(values: &mut [f64]) {
    if values.iter().all(|&v| v >= PROBABILITY_FLOOR) {
        return;
    }
    for v in values.iter_mut() {
        if *v < PROBABILITY_FLOOR {
            *v = PROBABILITY_FLOOR;
        }
    }
    let sum: f64 = values.iter().sum();
    for v in values.iter_mut() {
        *v /= sum;
    }
}

/// Time-invariant class-transition matrix `p(C_t = j | C_{t-1} = i)` governed
/// by a single change probability `epsilon`.
///
/// The probability of leaving a class is `epsilon`, split evenly over the
/// other `K - 1` classes. For two classes this is the symmetric matrix
/// `[[1 - e, e], [e, 1 - e]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionModel {
    epsilon: f64,
    k: usize,
    /// Row-major, `matrix[i * k + j] = p(C_t = j | C_{t-1} = i)`.
    matrix: Vec<f64>,
}

impl TransitionModel {
    pub fn new(k: usize, epsilon: f64) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidClassCount(k));
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::InvalidHyperparameter(format!(
                "epsilon must lie in (0, 1), got {epsilon}"
            )));
        }
        let off = epsilon / (k - 1) as f64;
        let diag = 1.0 - (k - 1) as f64 * off;
        let mut matrix = vec![off; k * k];
        for i in 0..k {
            matrix[i * k + i] = diag;
        }
        Ok(Self { epsilon, k, matrix })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    /// `p(C_t = to | C_{t-1} = from)`.
    #[inline]
    pub fn prob(&self, from: usize, to: usize) -> f64 {
        self.matrix[from * self.k + to]
    }

    pub fn row(&self, from: usize) -> &[f64] {
        &self.matrix[from * self.k..(from + 1) * self.k]
    }
}

pub fn build_transition_model(k: usize, epsilon: f64) -> Result<TransitionModel> {
    TransitionModel::new(k, epsilon)
}

/// Sentinel-2 bands used by the classifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Band {
    Blue,
    Green,
    Red,
    Nir,
    NarrowNir,
    Swir1,
}

impl Band {
    pub const ALL: [Band; 6] = [
        Band::Blue,
        Band::Green,
        Band::Red,
        Band::Nir,
        Band::NarrowNir,
        Band::Swir1,
    ];

    /// Sentinel-2 band identifier, e.g. `B8A`.
    pub fn id(self) -> &'static str {
        match self {
            Band::Blue => "B2",
            Band::Green => "B3",
            Band::Red => "B4",
            Band::Nir => "B8",
            Band::NarrowNir => "B8A",
            Band::Swir1 => "B11",
        }
    }

    /// Native ground resolution in metres.
    pub fn native_resolution(self) -> u32 {
        match self {
            Band::NarrowNir | Band::Swir1 => 20,
            _ => 10,
        }
    }

    pub fn central_wavelength_nm(self) -> u32 {
        match self {
            Band::Blue => 490,
            Band::Green => 560,
            Band::Red => 665,
            Band::Nir => 842,
            Band::NarrowNir => 865,
            Band::Swir1 => 1610,
        }
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Band {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let band = match s.to_ascii_lowercase().as_str() {
            "b2" | "blue" => Band::Blue,
            "b3" | "green" => Band::Green,
            "b4" | "red" => Band::Red,
            "b8" | "nir" => Band::Nir,
            "b8a" | "narrow_nir" | "nir_narrow" => Band::NarrowNir,
            "b11" | "swir" | "swir1" => Band::Swir1,
            _ => return Err(Error::Config(format!("unknown band `{s}`"))),
        };
        Ok(band)
    }
}

impl TryFrom<String> for Band {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Band> for String {
    fn from(b: Band) -> Self {
        b.id().to_string()
    }
}

/// Single-band row-major grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Copy> Grid<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "grid of {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }
}

/// One acquisition: a set of coregistered bands sharing a pixel grid.
/// Values are surface reflectance, nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultibandImage {
    width: usize,
    height: usize,
    bands: Vec<Band>,
    data: Vec<Vec<f64>>,
}

impl MultibandImage {
    pub fn new(width: usize, height: usize, bands: Vec<(Band, Vec<f64>)>) -> Result<Self> {
        if bands.is_empty() {
            return Err(Error::Shape("image needs at least one band".into()));
        }
        let mut ids = Vec::with_capacity(bands.len());
        let mut data = Vec::with_capacity(bands.len());
        for (band, values) in bands {
            if ids.contains(&band) {
                return Err(Error::Shape(format!("band {band} listed twice")));
            }
            if values.len() != width * height {
                return Err(Error::Shape(format!(
                    "band {band} has {} values, expected {}",
                    values.len(),
                    width * height
                )));
            }
            if let Some(v) = values.iter().find(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("band {band} holds non-finite reflectance {v}")));
            }
            ids.push(band);
            data.push(values);
        }
        Ok(Self {
            width,
            height,
            bands: ids,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn bands(&self) -> &[Band] {
        &self.bands
    }

    pub fn band_index(&self, band: Band) -> Option<usize> {
        self.bands.iter().position(|&b| b == band)
    }

    pub fn band(&self, band: Band) -> Option<&[f64]> {
        self.band_index(band).map(|i| self.data[i].as_slice())
    }

    pub fn band_at(&self, index: usize) -> &[f64] {
        &self.data[index]
    }

    pub(crate) fn band_at_mut(&mut self, index: usize) -> &mut [f64] {
        &mut self.data[index]
    }

    /// Gathers the band values of pixel `n` into `out` (one entry per band).
    #[inline]
    pub fn pixel_into(&self, n: usize, out: &mut [f64]) {
        for (slot, band) in out.iter_mut().zip(&self.data) {
            *slot = band[n];
        }
    }

    pub fn pixel(&self, n: usize) -> Vec<f64> {
        self.data.iter().map(|b| b[n]).collect()
    }
}

/// Per-pixel class indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelRaster {
    width: usize,
    height: usize,
    num_classes: usize,
    labels: Vec<u8>,
}

impl LabelRaster {
    pub fn new(width: usize, height: usize, num_classes: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::Shape(format!(
                "label raster of {width}x{height} needs {} labels, got {}",
                width * height,
                labels.len()
            )));
        }
        if num_classes == 0 || num_classes > 256 {
            return Err(Error::InvalidClassCount(num_classes));
        }
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::Shape(format!("label {l} out of range for {num_classes} classes")));
        }
        Ok(Self {
            width,
            height,
            num_classes,
            labels,
        })
    }

    pub fn filled(width: usize, height: usize, num_classes: usize, label: u8) -> Result<Self> {
        Self::new(width, height, num_classes, vec![label; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn same_shape(&self, other: &LabelRaster) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// One dated acquisition together with its per-date metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub date: NaiveDate,
    pub image: MultibandImage,
    pub cloud_fraction: Option<f64>,
    pub truth: Option<LabelRaster>,
    /// Externally produced instantaneous posterior, one plane per class.
    pub external_posterior: Option<Vec<Vec<f32>>>,
}

impl Frame {
    pub fn new(date: NaiveDate, image: MultibandImage) -> Self {
        Self {
            date,
            image,
            cloud_fraction: None,
            truth: None,
            external_posterior: None,
        }
    }
}

/// Date-ordered sequence of coregistered frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageStack {
    frames: Vec<Frame>,
}

impl ImageStack {
    /// Sorts `frames` by date and checks they share one grid and band set.
    pub fn new(mut frames: Vec<Frame>) -> Result<Self> {
        frames.sort_by_key(|f| f.date);
        Self::from_sorted(frames)
    }

    pub(crate) fn from_sorted(frames: Vec<Frame>) -> Result<Self> {
        for pair in frames.windows(2) {
            if pair[0].date >= pair[1].date {
                return Err(Error::Shape(format!(
                    "frame dates must be strictly increasing ({} then {})",
                    pair[0].date, pair[1].date
                )));
            }
        }
        if let Some(first) = frames.first() {
            for f in &frames[1..] {
                let (a, b) = (&first.image, &f.image);
                if a.width != b.width || a.height != b.height || a.bands != b.bands {
                    return Err(Error::Shape(format!(
                        "frame {} does not match the grid or band set of frame {}",
                        f.date, first.date
                    )));
                }
            }
            for f in &frames {
                if let Some(truth) = &f.truth {
                    if truth.width != first.image.width || truth.height != first.image.height {
                        return Err(Error::Shape(format!("ground truth of {} has the wrong size", f.date)));
                    }
                }
                if let Some(cf) = f.cloud_fraction {
                    if !(0.0..=1.0).contains(&cf) {
                        return Err(Error::InvalidArgument(format!(
                            "cloud fraction {cf} of {} outside [0, 1]",
                            f.date
                        )));
                    }
                }
            }
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        self.frames.iter().map(|f| f.date).collect()
    }

    /// `(width, height)` of the shared grid, if any frame exists.
    pub fn dims(&self) -> Option<(usize, usize)> {
        self.frames.first().map(|f| (f.image.width, f.image.height))
    }

    pub fn bands(&self) -> &[Band] {
        self.frames.first().map(|f| f.image.bands()).unwrap_or(&[])
    }
}
