//! Per-class Gaussian mixture models fitted with EM.
//!
//! One mixture is fitted for every class, so the model provides the
//! class-conditional density `p(z | C)` consumed by the generative route.
//! Covariances are full with a small diagonal jitter. Initialization uses
//! k-means++ seeding followed by a few Lloyd iterations, all driven by a
//! seeded ChaCha RNG so fits are reproducible.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Samples;
use crate::error::{Error, Result};
use crate::types::{Band, LikelihoodVector};

pub const DEFAULT_COMPONENTS: usize = 3;
pub const COVARIANCE_JITTER: f64 = 1e-6;
const LLOYD_ITERATIONS: usize = 10;

/// How many mixture components each class gets.
#[derive(Debug, Clone, PartialEq)]
pub enum ComponentChoice {
    /// One entry per class.
    Fixed(Vec<usize>),
    /// Pick the count in `1..=max` with the lowest BIC, per class.
    Auto { max: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmSettings {
    pub components: ComponentChoice,
    pub seed: u64,
    pub max_iter: usize,
    /// Stop once the mean log-likelihood per sample improves by less than this.
    pub tol: f64,
    pub jitter: f64,
}

impl GmmSettings {
    pub fn new(components: ComponentChoice, seed: u64) -> Self {
        Self {
            components,
            seed,
            max_iter: 200,
            tol: 1e-6,
            jitter: COVARIANCE_JITTER,
        }
    }
}

/// A single weighted Gaussian with a cached Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    weight: f64,
    mean: Vec<f64>,
    /// Row-major `d × d`.
    cov: Vec<f64>,
    /// Lower Cholesky factor of `cov`, row-major.
    chol: Vec<f64>,
    /// `ln w − d/2 · ln 2π − ln |L|`
    log_scale: f64,
}

impl GaussianComponent {
    pub fn new(weight: f64, mean: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.len() != d * d {
            return Err(Error::Shape(format!("covariance has {} entries for dimension {d}", cov.len())));
        }
        if !(weight > 0.0 && weight <= 1.0 + 1e-12) {
            return Err(Error::Numerical(format!("component weight {weight} outside (0, 1]")));
        }
        let chol = cholesky(&cov, d)?;
        let log_det_half: f64 = (0..d).map(|i| chol[i * d + i].ln()).sum();
        let log_scale = weight.ln() - 0.5 * d as f64 * (2.0 * PI).ln() - log_det_half;
        Ok(Self {
            weight,
            mean,
            cov,
            chol,
            log_scale,
        })
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &[f64] {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `ln(w · N(x; mean, cov))`. `scratch` needs `dim` slots.
    #[inline]
    fn weighted_log_density(&self, x: &[f64], scratch: &mut [f64]) -> f64 {
        let d = self.mean.len();
        // Forward substitution: L u = x − mean.
        let mut maha = 0.0;
        for i in 0..d {
            let mut acc = x[i] - self.mean[i];
            let row = &self.chol[i * d..i * d + i];
            for (l, u) in row.iter().zip(scratch.iter()) {
                acc -= l * u;
            }
            let u = acc / self.chol[i * d + i];
            scratch[i] = u;
            maha += u * u;
        }
        self.log_scale - 0.5 * maha
    }
}

fn cholesky(a: &[f64], d: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut sum = a[i * d + j];
            for k in 0..j {
                sum -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if !(sum > 0.0) || !sum.is_finite() {
                    return Err(Error::Numerical("covariance matrix is not positive definite".into()));
                }
                l[i * d + i] = sum.sqrt();
            } else {
                l[i * d + j] = sum / l[j * d + j];
            }
        }
    }
    Ok(l)
}

/// Mixture density for one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMixture {
    components: Vec<GaussianComponent>,
}

impl ClassMixture {
    pub fn new(components: Vec<GaussianComponent>) -> Result<Self> {
        let Some(first) = components.first() else {
            return Err(Error::Shape("mixture needs at least one component".into()));
        };
        let d = first.dim();
        if components.iter().any(|c| c.dim() != d) {
            return Err(Error::Shape("mixture components differ in dimension".into()));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Numerical(format!("mixture weights sum to {total}")));
        }
        Ok(Self { components })
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn log_density(&self, x: &[f64], scratch: &mut [f64]) -> f64 {
        let mut terms = [0.0f64; 16];
        let m = self.components.len();
        if m <= terms.len() {
            for (t, c) in terms.iter_mut().zip(&self.components) {
                *t = c.weighted_log_density(x, scratch);
            }
            log_sum_exp(&terms[..m])
        } else {
            let terms: Vec<f64> = self
                .components
                .iter()
                .map(|c| c.weighted_log_density(x, scratch))
                .collect();
            log_sum_exp(&terms)
        }
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// One mixture per class.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerativeModel {
    /// Bands the model was trained on, in feature order. Empty means the
    /// features are taken in the image's own band order.
    bands: Vec<Band>,
    classes: Vec<ClassMixture>,
}

impl GenerativeModel {
    pub fn new(bands: Vec<Band>, classes: Vec<ClassMixture>) -> Result<Self> {
        if classes.len() < 2 {
            return Err(Error::InvalidClassCount(classes.len()));
        }
        let d = classes[0].dim();
        if classes.iter().any(|c| c.dim() != d) {
            return Err(Error::Shape("class mixtures differ in dimension".into()));
        }
        if !bands.is_empty() && bands.len() != d {
            return Err(Error::Shape(format!("{} bands for a {d}-dimensional model", bands.len())));
        }
        Ok(Self { bands, classes })
    }

    pub fn with_bands(mut self, bands: Vec<Band>) -> Result<Self> {
        if bands.len() != self.dim() {
            return Err(Error::Shape(format!("{} bands for a {}-dimensional model", bands.len(), self.dim())));
        }
        self.bands = bands;
        Ok(self)
    }

    pub fn bands(&self) -> &[Band] {
        &self.bands
    }

    pub fn classes(&self) -> &[ClassMixture] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn dim(&self) -> usize {
        self.classes[0].dim()
    }

    /// Per-class log densities of `pixel` into `out`.
    pub fn log_likelihoods_into(&self, pixel: &[f64], out: &mut [f64], scratch: &mut [f64]) -> Result<()> {
        if pixel.len() != self.dim() {
            return Err(Error::Shape(format!(
                "pixel has {} features, model expects {}",
                pixel.len(),
                self.dim()
            )));
        }
        for (o, class) in out.iter_mut().zip(&self.classes) {
            *o = class.log_density(pixel, scratch);
        }
        Ok(())
    }
}

/// Class-conditional densities `p(pixel | C)`.
pub fn gmm_likelihood(model: &GenerativeModel, pixel: &[f64]) -> Result<LikelihoodVector> {
    let mut out = vec![0.0; model.num_classes()];
    let mut scratch = vec![0.0; model.dim()];
    model.log_likelihoods_into(pixel, &mut out, &mut scratch)?;
    out.iter_mut().for_each(|v| *v = v.exp());
    LikelihoodVector::new(out)
}

/// Fits one mixture per class with fixed component counts.
pub fn gmm_fit(samples: &[Samples], components: &[usize], seed: u64) -> Result<GenerativeModel> {
    let settings = GmmSettings::new(ComponentChoice::Fixed(components.to_vec()), seed);
    Ok(fit_with(samples, &settings)?.model)
}

/// Fitted model plus per-class training traces.
#[derive(Debug, Clone)]
pub struct GmmFit {
    pub model: GenerativeModel,
    /// Mean log-likelihood per sample after every E-step, per class.
    pub log_likelihood: Vec<Vec<f64>>,
    pub components: Vec<usize>,
}

pub fn fit_with(samples: &[Samples], settings: &GmmSettings) -> Result<GmmFit> {
    if samples.len() < 2 {
        return Err(Error::InvalidClassCount(samples.len()));
    }
    let dim = samples[0].dim();
    if samples.iter().any(|s| s.dim() != dim) {
        return Err(Error::Shape("class sample sets differ in dimension".into()));
    }
    let counts: Vec<Option<usize>> = match &settings.components {
        ComponentChoice::Fixed(c) => {
            if c.len() != samples.len() {
                return Err(Error::InvalidArgument(format!(
                    "{} component counts for {} classes",
                    c.len(),
                    samples.len()
                )));
            }
            c.iter().copied().map(Some).collect()
        }
        ComponentChoice::Auto { .. } => vec![None; samples.len()],
    };

    let mut mixtures = Vec::with_capacity(samples.len());
    let mut traces = Vec::with_capacity(samples.len());
    let mut chosen = Vec::with_capacity(samples.len());
    for (class, (x, count)) in samples.iter().zip(counts).enumerate() {
        let class_seed = settings.seed.wrapping_add(class as u64);
        let (mixture, trace, m) = match (count, &settings.components) {
            (Some(m), _) => {
                let (mix, trace) = fit_mixture(x, m, class_seed, settings)
                    .map_err(|e| annotate(e, class))?;
                (mix, trace, m)
            }
            (None, ComponentChoice::Auto { max }) => {
                select_by_bic(x, *max, class_seed, settings).map_err(|e| annotate(e, class))?
            }
            (None, ComponentChoice::Fixed(_)) => unreachable!(),
        };
        mixtures.push(mixture);
        traces.push(trace);
        chosen.push(m);
    }
    Ok(GmmFit {
        model: GenerativeModel::new(Vec::new(), mixtures)?,
        log_likelihood: traces,
        components: chosen,
    })
}

fn annotate(e: Error, class: usize) -> Error {
    match e {
        Error::InsufficientData(msg) => Error::InsufficientData(format!("class {class}: {msg}")),
        other => other,
    }
}

fn select_by_bic(
    x: &Samples,
    max: usize,
    seed: u64,
    settings: &GmmSettings,
) -> Result<(ClassMixture, Vec<f64>, usize)> {
    let d = x.dim() as f64;
    let n = x.len() as f64;
    let mut best: Option<(f64, ClassMixture, Vec<f64>, usize)> = None;
    for m in 1..=max.max(1) {
        if x.len() < min_samples(m, x.dim()) {
            break;
        }
        let (mix, trace) = fit_mixture(x, m, seed, settings)?;
        let ll = trace.last().copied().unwrap_or(f64::NEG_INFINITY) * n;
        let mf = m as f64;
        let params = (mf - 1.0) + mf * d + mf * d * (d + 1.0) / 2.0;
        let bic = -2.0 * ll + params * n.ln();
        if best.as_ref().is_none_or(|b| bic < b.0) {
            best = Some((bic, mix, trace, m));
        }
    }
    best.map(|(_, mix, trace, m)| (mix, trace, m)).ok_or_else(|| {
        Error::InsufficientData(format!("{} samples cannot support even one component", x.len()))
    })
}

fn min_samples(components: usize, dim: usize) -> usize {
    10 * components * dim
}

/// EM for a single class. Returns the mixture and the mean log-likelihood
/// recorded after each E-step.
fn fit_mixture(x: &Samples, m: usize, seed: u64, settings: &GmmSettings) -> Result<(ClassMixture, Vec<f64>)> {
    let n = x.len();
    let d = x.dim();
    if m == 0 {
        return Err(Error::InvalidArgument("component count must be at least 1".into()));
    }
    if n == 0 {
        return Err(Error::InsufficientData("no samples".into()));
    }
    if n < min_samples(m, d) {
        return Err(Error::InsufficientData(format!(
            "{n} samples for {m} components in {d} dimensions (need {})",
            min_samples(m, d)
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = kmeans_init(x, m, &mut rng);
    let mut resp = vec![0.0; n * m];
    for (i, &l) in labels.iter().enumerate() {
        resp[i * m + l] = 1.0;
    }
    let mut components = m_step(x, &resp, m, settings.jitter)?;

    let mut trace = Vec::new();
    let mut scratch = vec![0.0; d];
    let mut terms = vec![0.0; m];
    for iter in 0..settings.max_iter {
        // E-step
        let mut total = 0.0;
        for (i, row) in x.rows().enumerate() {
            for (t, c) in terms.iter_mut().zip(&components) {
                *t = c.weighted_log_density(row, &mut scratch);
            }
            let lse = log_sum_exp(&terms);
            total += lse;
            for (r, t) in resp[i * m..(i + 1) * m].iter_mut().zip(&terms) {
                *r = (t - lse).exp();
            }
        }
        let ll = total / n as f64;
        if !ll.is_finite() {
            return Err(Error::Numerical("EM log-likelihood is not finite".into()));
        }
        let converged = trace.last().is_some_and(|&prev: &f64| (ll - prev).abs() < settings.tol);
        trace.push(ll);
        if converged || iter + 1 == settings.max_iter {
            break;
        }
        components = m_step(x, &resp, m, settings.jitter)?;
    }
    Ok((ClassMixture::new(components)?, trace))
}

fn m_step(x: &Samples, resp: &[f64], m: usize, jitter: f64) -> Result<Vec<GaussianComponent>> {
    let n = x.len();
    let d = x.dim();
    let mut out = Vec::with_capacity(m);
    let mut nks = vec![0.0; m];
    for i in 0..n {
        for (nk, r) in nks.iter_mut().zip(&resp[i * m..(i + 1) * m]) {
            *nk += r;
        }
    }
    // Guard against empty components.
    for nk in nks.iter_mut() {
        *nk += 10.0 * f64::EPSILON;
    }
    let total: f64 = nks.iter().sum();
    for (c, &nk) in nks.iter().enumerate() {
        let mut mean = vec![0.0; d];
        for (i, row) in x.rows().enumerate() {
            let r = resp[i * m + c];
            if r != 0.0 {
                for (mu, v) in mean.iter_mut().zip(row) {
                    *mu += r * v;
                }
            }
        }
        mean.iter_mut().for_each(|v| *v /= nk);
        let mut cov = vec![0.0; d * d];
        let mut diff = vec![0.0; d];
        for (i, row) in x.rows().enumerate() {
            let r = resp[i * m + c];
            if r == 0.0 {
                continue;
            }
            for ((df, v), mu) in diff.iter_mut().zip(row).zip(&mean) {
                *df = v - mu;
            }
            for a in 0..d {
                let ra = r * diff[a];
                for b in 0..=a {
                    cov[a * d + b] += ra * diff[b];
                }
            }
        }
        for a in 0..d {
            for b in 0..=a {
                let v = cov[a * d + b] / nk;
                cov[a * d + b] = v;
                cov[b * d + a] = v;
            }
            cov[a * d + a] += jitter;
        }
        out.push(GaussianComponent::new(nk / total, mean, cov)?);
    }
    Ok(out)
}

/// k-means++ seeding plus a few Lloyd iterations; returns a hard
/// assignment of every sample.
fn kmeans_init(x: &Samples, m: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = x.len();
    let d = x.dim();
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>();

    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(m);
    centers.push(x.row(rng.random_range(0..n)).to_vec());
    let mut dist: Vec<f64> = x.rows().map(|r| sq(r, &centers[0])).collect();
    while centers.len() < m {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            dist.iter()
                .position(|&w| {
                    acc += w;
                    acc > target
                })
                .unwrap_or(n - 1)
        } else {
            rng.random_range(0..n)
        };
        let c = x.row(pick).to_vec();
        for (dv, r) in dist.iter_mut().zip(x.rows()) {
            *dv = dv.min(sq(r, &c));
        }
        centers.push(c);
    }

    let mut labels = vec![0usize; n];
    for _ in 0..LLOYD_ITERATIONS {
        let mut changed = false;
        for (l, r) in labels.iter_mut().zip(x.rows()) {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let dd = sq(r, center);
                if dd < best_d {
                    best_d = dd;
                    best = c;
                }
            }
            if *l != best {
                *l = best;
                changed = true;
            }
        }
        let mut sums = vec![0.0; m * d];
        let mut counts = vec![0usize; m];
        for (&l, r) in labels.iter().zip(x.rows()) {
            counts[l] += 1;
            for (s, v) in sums[l * d..(l + 1) * d].iter_mut().zip(r) {
                *s += v;
            }
        }
        for (c, center) in centers.iter_mut().enumerate() {
            if counts[c] > 0 {
                for (cv, s) in center.iter_mut().zip(&sums[c * d..(c + 1) * d]) {
                    *cv = s / counts[c] as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn normal_samples(mean: f64, sd: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Normal::new(mean, sd).unwrap();
        (0..n).map(|_| dist.sample(&mut rng)).collect()
    }

    #[test]
    fn recovers_separated_class_means() {
        let a = Samples::new(1, normal_samples(0.0, 0.1, 500, 1)).unwrap();
        let b = Samples::new(1, normal_samples(1.0, 0.1, 500, 2)).unwrap();
        let model = gmm_fit(&[a, b], &[1, 1], 7).unwrap();
        assert!((model.classes()[0].components()[0].mean()[0] - 0.0).abs() < 0.05);
        assert!((model.classes()[1].components()[0].mean()[0] - 1.0).abs() < 0.05);
    }

    #[test]
    fn recovers_two_components_within_one_class() {
        let mut data = normal_samples(-1.0, 0.1, 400, 3);
        data.extend(normal_samples(1.0, 0.1, 400, 4));
        let mix = Samples::new(1, data).unwrap();
        let other = Samples::new(1, normal_samples(5.0, 0.1, 400, 5)).unwrap();
        let model = gmm_fit(&[mix, other], &[2, 1], 11).unwrap();
        let mut means: Vec<f64> = model.classes()[0].components().iter().map(|c| c.mean()[0]).collect();
        means.sort_by(f64::total_cmp);
        assert!((means[0] + 1.0).abs() < 0.1 && (means[1] - 1.0).abs() < 0.1, "{means:?}");
    }

    #[test]
    fn single_component_is_closed_form() {
        let rows: Vec<f64> = normal_samples(0.3, 0.05, 300, 9)
            .chunks(3)
            .flat_map(|c| [c[0], c[1] * 2.0 + c[0], c[2]])
            .collect();
        let x = Samples::new(3, rows).unwrap();
        let other = Samples::new(3, normal_samples(3.0, 0.05, 300, 10)).unwrap();
        let model = gmm_fit(&[x.clone(), other], &[1, 1], 0).unwrap();
        let comp = &model.classes()[0].components()[0];
        let n = x.len() as f64;
        let mean: Vec<f64> = (0..3).map(|j| x.rows().map(|r| r[j]).sum::<f64>() / n).collect();
        for j in 0..3 {
            assert!((comp.mean()[j] - mean[j]).abs() < 1e-9);
        }
        for a in 0..3 {
            for b in 0..3 {
                let c = x.rows().map(|r| (r[a] - mean[a]) * (r[b] - mean[b])).sum::<f64>() / n;
                let expected = c + if a == b { COVARIANCE_JITTER } else { 0.0 };
                assert!((comp.covariance()[a * 3 + b] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_class_is_rejected() {
        let a = Samples::new(1, vec![]).unwrap();
        let b = Samples::new(1, normal_samples(0.0, 1.0, 100, 1)).unwrap();
        assert!(matches!(gmm_fit(&[a, b], &[1, 1], 0), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn unit_gaussian_normalizer() {
        let d = 3;
        let mut cov = vec![0.0; d * d];
        for i in 0..d {
            cov[i * d + i] = 1.0;
        }
        let comp = GaussianComponent::new(1.0, vec![0.5; d], cov).unwrap();
        let mixture = ClassMixture::new(vec![comp.clone()]).unwrap();
        let far = GaussianComponent::new(1.0, vec![9.0; d], comp.covariance().to_vec()).unwrap();
        let model = GenerativeModel::new(vec![], vec![mixture, ClassMixture::new(vec![far]).unwrap()]).unwrap();
        let lik = gmm_likelihood(&model, &[0.5; 3]).unwrap();
        assert!((lik.as_slice()[0] - (2.0 * PI).powf(-1.5)).abs() < 1e-15);
        assert!(lik.as_slice()[0] > lik.as_slice()[1]);
    }

    #[test]
    fn dimension_mismatch() {
        let a = Samples::new(1, normal_samples(0.0, 0.1, 100, 1)).unwrap();
        let b = Samples::new(1, normal_samples(1.0, 0.1, 100, 2)).unwrap();
        let model = gmm_fit(&[a, b], &[1, 1], 0).unwrap();
        assert!(matches!(gmm_likelihood(&model, &[0.0, 1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn bic_prefers_two_components_for_bimodal_data() {
        let mut data = normal_samples(-1.0, 0.1, 400, 3);
        data.extend(normal_samples(1.0, 0.1, 400, 4));
        let mix = Samples::new(1, data).unwrap();
        let other = Samples::new(1, normal_samples(5.0, 0.1, 400, 5)).unwrap();
        let fit = fit_with(&[mix, other], &GmmSettings::new(ComponentChoice::Auto { max: 4 }, 3)).unwrap();
        assert_eq!(fit.components[0], 2);
        assert_eq!(fit.components[1], 1);
    }
}
