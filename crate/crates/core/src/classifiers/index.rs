//! Normalized-difference spectral indices.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Band, MultibandImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectralIndexKind {
    /// (green − SWIR1) / (green + SWIR1)
    Mndwi,
    /// (green − NIR) / (green + NIR)
    Ndwi,
    /// (NIR − red) / (NIR + red)
    Ndvi,
}

impl SpectralIndexKind {
    /// `(a, b)` such that the index is `(a - b) / (a + b)`.
    pub fn band_pair(self) -> (Band, Band) {
        match self {
            SpectralIndexKind::Mndwi => (Band::Green, Band::Swir1),
            SpectralIndexKind::Ndwi => (Band::Green, Band::Nir),
            SpectralIndexKind::Ndvi => (Band::Nir, Band::Red),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SpectralIndexKind::Mndwi => "mndwi",
            SpectralIndexKind::Ndwi => "ndwi",
            SpectralIndexKind::Ndvi => "ndvi",
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            SpectralIndexKind::Mndwi => 0,
            SpectralIndexKind::Ndwi => 1,
            SpectralIndexKind::Ndvi => 2,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(SpectralIndexKind::Mndwi),
            1 => Ok(SpectralIndexKind::Ndwi),
            2 => Ok(SpectralIndexKind::Ndvi),
            _ => Err(Error::Format(format!("unknown spectral index tag {tag}"))),
        }
    }
}

impl fmt::Display for SpectralIndexKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SpectralIndexKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mndwi" => Ok(SpectralIndexKind::Mndwi),
            "ndwi" => Ok(SpectralIndexKind::Ndwi),
            "ndvi" => Ok(SpectralIndexKind::Ndvi),
            _ => Err(Error::Config(format!("unknown spectral index `{s}`"))),
        }
    }
}

/// Index value plus a flag set when the band sum was zero (nodata).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexValue {
    pub value: f64,
    pub flagged: bool,
}

#[inline]
pub fn normalized_difference(a: f64, b: f64) -> IndexValue {
    let denom = a + b;
    if denom == 0.0 {
        IndexValue { value: 0.0, flagged: true }
    } else {
        IndexValue {
            value: (a - b) / denom,
            flagged: false,
        }
    }
}

/// Index of a single pixel given its band values in `bands` order.
pub fn spectral_index(pixel: &[f64], bands: &[Band], kind: SpectralIndexKind) -> Result<IndexValue> {
    if pixel.len() != bands.len() {
        return Err(Error::Shape(format!(
            "pixel has {} values for {} bands",
            pixel.len(),
            bands.len()
        )));
    }
    let (a, b) = kind.band_pair();
    let find = |band: Band| {
        bands
            .iter()
            .position(|&x| x == band)
            .map(|i| pixel[i])
            .ok_or_else(|| Error::Shape(format!("{kind} needs band {band}")))
    };
    Ok(normalized_difference(find(a)?, find(b)?))
}

/// Index raster for a whole image, with the number of flagged pixels.
pub fn index_image(image: &MultibandImage, kind: SpectralIndexKind) -> Result<(Vec<f64>, Vec<bool>)> {
    let (a, b) = kind.band_pair();
    let missing = |band: Band| Error::Shape(format!("{kind} needs band {band}, image has {:?}", image.bands()));
    let a = image.band(a).ok_or_else(|| missing(a))?;
    let b = image.band(b).ok_or_else(|| missing(b))?;
    let (values, flags) = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let v = normalized_difference(x, y);
            (v.value, v.flagged)
        })
        .unzip();
    Ok((values, flags))
}
