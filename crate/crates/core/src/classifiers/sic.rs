//! Spectral index classifier.
//!
//! Class `j` owns the index interval `(tau[j-1], tau[j]]`. Each class gets a
//! Gaussian centred on its interval with a standard deviation of half the
//! interval length; the class probability of an index value is that class's
//! density divided by the sum over classes.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::index::{index_image, SpectralIndexKind};
use crate::error::{Error, Result};
use crate::types::{LabelRaster, MultibandImage, ProbabilityVector};

/// `K + 1` strictly increasing thresholds running from −1 to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Thresholds(Vec<f64>);

impl Thresholds {
    pub fn new(tau: Vec<f64>) -> Result<Self> {
        if tau.len() < 3 {
            return Err(Error::InvalidThreshold(format!(
                "need at least 3 thresholds for 2 classes, got {}",
                tau.len()
            )));
        }
        if tau.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidThreshold("thresholds must be finite".into()));
        }
        if tau[0] != -1.0 || tau[tau.len() - 1] != 1.0 {
            return Err(Error::InvalidThreshold(format!(
                "thresholds must start at -1 and end at 1, got {tau:?}"
            )));
        }
        if tau.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidThreshold(format!("thresholds must be strictly increasing: {tau:?}")));
        }
        Ok(Self(tau))
    }

    pub fn num_classes(&self) -> usize {
        self.0.len() - 1
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Class whose interval `(tau[i-1], tau[i]]` contains `y`. Values at or
    /// below −1 go to class 0, values above 1 to the last class.
    pub fn classify(&self, y: f64) -> usize {
        let k = self.num_classes();
        // First upper bound >= y.
        let upper = self.0[1..].partition_point(|&t| t < y);
        upper.min(k - 1)
    }
}

impl TryFrom<Vec<f64>> for Thresholds {
    type Error = Error;

    fn try_from(tau: Vec<f64>) -> Result<Self> {
        Thresholds::new(tau)
    }
}

impl From<Thresholds> for Vec<f64> {
    fn from(t: Thresholds) -> Self {
        t.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SicModel {
    index: SpectralIndexKind,
    tau: Thresholds,
    mu: Vec<f64>,
    sigma: Vec<f64>,
}

/// Derives the per-class Gaussians from the thresholds:
/// `mu_j = L_j / 2 + tau_{j-1}`, `sigma_j = L_j / 2` with `L_j = tau_j − tau_{j-1}`.
pub fn sic_from_thresholds(tau: &[f64], index: SpectralIndexKind) -> Result<SicModel> {
    let tau = Thresholds::new(tau.to_vec())?;
    let (mu, sigma) = tau
        .as_slice()
        .windows(2)
        .map(|w| {
            let half = (w[1] - w[0]) / 2.0;
            (half + w[0], half)
        })
        .unzip();
    Ok(SicModel { index, tau, mu, sigma })
}

impl SicModel {
    pub fn index(&self) -> SpectralIndexKind {
        self.index
    }

    pub fn thresholds(&self) -> &Thresholds {
        &self.tau
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn num_classes(&self) -> usize {
        self.mu.len()
    }

    /// Per-class Gaussian density at index value `y`.
    pub fn density(&self, class: usize, y: f64) -> f64 {
        let (mu, sigma) = (self.mu[class], self.sigma[class]);
        let z = (y - mu) / sigma;
        (-0.5 * z * z).exp() / (sigma * (2.0 * PI).sqrt())
    }

    /// Writes the class PMF for index value `y` into `out`. Computed from
    /// log densities so far-tail values do not underflow to 0/0.
    #[inline]
    pub(crate) fn posterior_into(&self, y: f64, out: &mut [f64]) {
        let half_log_2pi = 0.5 * (2.0 * PI).ln();
        let mut max = f64::NEG_INFINITY;
        for ((o, &mu), &sigma) in out.iter_mut().zip(&self.mu).zip(&self.sigma) {
            let z = (y - mu) / sigma;
            *o = -0.5 * z * z - sigma.ln() - half_log_2pi;
            max = max.max(*o);
        }
        let mut sum = 0.0;
        for o in out.iter_mut() {
            *o = (*o - max).exp();
            sum += *o;
        }
        for o in out.iter_mut() {
            *o /= sum;
        }
    }
}

pub fn sic_posterior(y: f64, model: &SicModel) -> ProbabilityVector {
    let mut out = vec![0.0; model.num_classes()];
    model.posterior_into(y, &mut out);
    ProbabilityVector::from_normalized(out)
}

/// Hard labels from index thresholds, used as surrogate training labels.
pub fn pseudo_labels(image: &MultibandImage, kind: SpectralIndexKind, tau: &Thresholds) -> Result<LabelRaster> {
    let (values, _) = index_image(image, kind)?;
    let labels = values.iter().map(|&y| tau.classify(y) as u8).collect();
    LabelRaster::new(image.width(), image.height(), tau.num_classes(), labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn water_thresholds() {
        let m = sic_from_thresholds(&[-1.0, 0.13, 1.0], SpectralIndexKind::Mndwi).unwrap();
        assert_close(m.mu(), &[-0.435, 0.565], 1e-12);
        assert_close(m.sigma(), &[0.565, 0.435], 1e-12);
    }

    #[test]
    fn deforestation_thresholds() {
        let m = sic_from_thresholds(&[-1.0, 0.65, 1.0], SpectralIndexKind::Ndwi).unwrap();
        assert_close(m.mu(), &[-0.175, 0.825], 1e-12);
        assert_close(m.sigma(), &[0.825, 0.175], 1e-12);
    }

    #[test]
    fn three_class_thresholds() {
        let m = sic_from_thresholds(&[-1.0, -0.05, 0.35, 1.0], SpectralIndexKind::Ndvi).unwrap();
        assert_close(m.mu(), &[-0.525, 0.15, 0.675], 1e-12);
        assert_close(m.sigma(), &[0.475, 0.2, 0.325], 1e-12);
        // printed values are rounded
        assert_close(m.mu(), &[-0.525, 0.149, 0.675], 2e-2);
        assert_close(m.sigma(), &[0.475, 0.19, 0.325], 2e-2);
    }

    #[test]
    fn rejects_bad_thresholds() {
        for tau in [
            vec![-1.0, 0.5, 0.5, 1.0],
            vec![-1.0, 0.7, 0.2, 1.0],
            vec![-0.9, 0.1, 1.0],
            vec![-1.0, 1.0],
        ] {
            assert!(matches!(
                sic_from_thresholds(&tau, SpectralIndexKind::Mndwi),
                Err(Error::InvalidThreshold(_))
            ));
        }
    }

    #[test]
    fn posterior_examples() {
        let m = sic_from_thresholds(&[-1.0, 0.13, 1.0], SpectralIndexKind::Mndwi).unwrap();
        let p = sic_posterior(0.565, &m);
        assert!((p[1] - 0.861_496_221_934_973_1).abs() < 1e-12);
        let p = sic_posterior(0.13, &m);
        assert!((p[1] - 0.565).abs() < 1e-12);

        let sym = sic_from_thresholds(&[-1.0, 0.0, 1.0], SpectralIndexKind::Mndwi).unwrap();
        assert_close(sic_posterior(0.0, &sym).as_slice(), &[0.5, 0.5], 1e-15);
    }

    #[test]
    fn posterior_matches_direct_density_ratio() {
        let m = sic_from_thresholds(&[-1.0, -0.05, 0.35, 1.0], SpectralIndexKind::Ndvi).unwrap();
        for i in 0..=40 {
            let y = -1.0 + i as f64 * 0.05;
            let d: Vec<f64> = (0..3).map(|c| m.density(c, y)).collect();
            let s: f64 = d.iter().sum();
            let direct: Vec<f64> = d.iter().map(|v| v / s).collect();
            assert_close(sic_posterior(y, &m).as_slice(), &direct, 1e-13);
        }
    }

    #[test]
    fn interval_membership() {
        let tau = Thresholds::new(vec![-1.0, 0.13, 1.0]).unwrap();
        assert_eq!(tau.classify(0.2), 1);
        assert_eq!(tau.classify(0.13), 0);
        assert_eq!(tau.classify(-1.0), 0);
        assert_eq!(tau.classify(1.0), 1);
        assert_eq!(tau.classify(1.2), 1);
        assert_eq!(tau.classify(-3.0), 0);
    }
}
