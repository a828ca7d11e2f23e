//! Multinomial logistic regression trained with L-BFGS.
//!
//! Features are standardized with the training mean and standard deviation.
//! The objective is the mean cross-entropy plus `l2 / 2 · ‖W‖²` over the
//! non-bias weights. Training samples are put into a canonical order first,
//! so the fitted weights do not depend on how the samples were shuffled.

use std::cmp::Ordering;
use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Samples;
use crate::error::{Error, Result};
use crate::types::{Band, ProbabilityVector};

#[derive(Debug, Clone, PartialEq)]
pub struct LrSettings {
    pub l2: f64,
    /// Stop once the gradient norm falls below this.
    pub tol: f64,
    pub max_iter: usize,
    pub history: usize,
    pub seed: u64,
}

impl LrSettings {
    pub fn new(seed: u64) -> Self {
        Self {
            l2: 1e-4,
            tol: 1e-6,
            max_iter: 1000,
            history: 10,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminativeModel {
    /// Feature bands; empty means the image's own band order.
    bands: Vec<Band>,
    num_classes: usize,
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// `K × (d + 1)` row-major; column 0 is the bias.
    weights: Vec<f64>,
}

impl DiscriminativeModel {
    pub fn new(
        bands: Vec<Band>,
        num_classes: usize,
        mean: Vec<f64>,
        scale: Vec<f64>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let d = mean.len();
        if num_classes < 2 {
            return Err(Error::InvalidClassCount(num_classes));
        }
        if d == 0 || scale.len() != d || weights.len() != num_classes * (d + 1) {
            return Err(Error::Shape("logistic model parameter sizes are inconsistent".into()));
        }
        if !bands.is_empty() && bands.len() != d {
            return Err(Error::Shape(format!("{} bands for a {d}-feature model", bands.len())));
        }
        if scale.iter().any(|s| !(*s > 0.0)) || weights.iter().chain(&mean).any(|w| !w.is_finite()) {
            return Err(Error::Numerical("logistic model parameters must be finite".into()));
        }
        Ok(Self {
            bands,
            num_classes,
            mean,
            scale,
            weights,
        })
    }

    pub fn with_bands(mut self, bands: Vec<Band>) -> Result<Self> {
        if bands.len() != self.dim() {
            return Err(Error::Shape(format!("{} bands for a {}-feature model", bands.len(), self.dim())));
        }
        self.bands = bands;
        Ok(self)
    }

    pub fn bands(&self) -> &[Band] {
        &self.bands
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `z` is scratch of length `dim`; `out` receives the PMF.
    #[inline]
    pub(crate) fn posterior_into(&self, pixel: &[f64], z: &mut [f64], out: &mut [f64]) {
        for ((zi, x), (m, s)) in z.iter_mut().zip(pixel).zip(self.mean.iter().zip(&self.scale)) {
            *zi = (x - m) / s;
        }
        softmax_scores(&self.weights, z, out);
    }
}

/// `out[c] = softmax(W[c,0] + W[c,1..] · z)`.
#[inline]
fn softmax_scores(weights: &[f64], z: &[f64], out: &mut [f64]) {
    let stride = z.len() + 1;
    let mut max = f64::NEG_INFINITY;
    for (c, o) in out.iter_mut().enumerate() {
        let w = &weights[c * stride..(c + 1) * stride];
        *o = w[0] + w[1..].iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
        max = max.max(*o);
    }
    let mut sum = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

pub fn lr_posterior(model: &DiscriminativeModel, pixel: &[f64]) -> Result<ProbabilityVector> {
    if pixel.len() != model.dim() {
        return Err(Error::Shape(format!(
            "pixel has {} features, model expects {}",
            pixel.len(),
            model.dim()
        )));
    }
    let mut z = vec![0.0; model.dim()];
    let mut out = vec![0.0; model.num_classes];
    model.posterior_into(pixel, &mut z, &mut out);
    ProbabilityVector::new(out)
}

/// Standardized training problem.
#[derive(Debug, Clone)]
pub struct LogisticObjective {
    z: Vec<f64>,
    labels: Vec<u8>,
    dim: usize,
    num_classes: usize,
    l2: f64,
}

impl LogisticObjective {
    pub fn new(z: Samples, labels: Vec<u8>, num_classes: usize, l2: f64) -> Result<Self> {
        if z.len() != labels.len() {
            return Err(Error::Shape(format!("{} samples but {} labels", z.len(), labels.len())));
        }
        Ok(Self {
            dim: z.dim(),
            z: z.as_slice().to_vec(),
            labels,
            num_classes,
            l2,
        })
    }

    pub fn num_params(&self) -> usize {
        self.num_classes * (self.dim + 1)
    }

    /// Objective value; writes the gradient into `grad`.
    pub fn value_and_gradient(&self, w: &[f64], grad: &mut [f64]) -> f64 {
        let k = self.num_classes;
        let stride = self.dim + 1;
        let n = self.labels.len() as f64;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut p = vec![0.0; k];
        let mut loss = 0.0;
        for (x, &y) in self.z.chunks_exact(self.dim).zip(&self.labels) {
            softmax_scores(w, x, &mut p);
            loss -= p[y as usize].max(f64::MIN_POSITIVE).ln();
            for (c, &pc) in p.iter().enumerate() {
                let r = pc - if c == y as usize { 1.0 } else { 0.0 };
                let g = &mut grad[c * stride..(c + 1) * stride];
                g[0] += r;
                for (gj, xj) in g[1..].iter_mut().zip(x) {
                    *gj += r * xj;
                }
            }
        }
        loss /= n;
        grad.iter_mut().for_each(|g| *g /= n);
        let mut penalty = 0.0;
        for c in 0..k {
            for j in 1..stride {
                let wv = w[c * stride + j];
                penalty += wv * wv;
                grad[c * stride + j] += self.l2 * wv;
            }
        }
        loss + 0.5 * self.l2 * penalty
    }
}

/// Fitted model plus optimizer diagnostics.
#[derive(Debug, Clone)]
pub struct LrFit {
    pub model: DiscriminativeModel,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub objective: f64,
    pub converged: bool,
}

pub fn lr_fit(samples: &Samples, labels: &[u8], num_classes: usize, seed: u64) -> Result<DiscriminativeModel> {
    Ok(fit_with(samples, labels, num_classes, &LrSettings::new(seed))?.model)
}

pub fn fit_with(samples: &Samples, labels: &[u8], num_classes: usize, settings: &LrSettings) -> Result<LrFit> {
    if num_classes < 2 {
        return Err(Error::InvalidClassCount(num_classes));
    }
    if samples.len() != labels.len() {
        return Err(Error::Shape(format!("{} samples but {} labels", samples.len(), labels.len())));
    }
    if let Some(&l) = labels.iter().find(|&&l| l as usize >= num_classes) {
        return Err(Error::InvalidArgument(format!("label {l} for {num_classes} classes")));
    }
    let distinct = {
        let mut seen = vec![false; num_classes];
        labels.iter().for_each(|&l| seen[l as usize] = true);
        seen.iter().filter(|&&s| s).count()
    };
    if distinct < 2 {
        return Err(Error::InsufficientData(format!(
            "logistic regression needs at least two classes in the labels, found {distinct}"
        )));
    }

    let d = samples.dim();
    let n = samples.len() as f64;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| {
        labels[a].cmp(&labels[b]).then_with(|| {
            samples
                .row(a)
                .iter()
                .zip(samples.row(b))
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
        })
    });

    let mut mean = vec![0.0; d];
    for &i in &order {
        for (m, v) in mean.iter_mut().zip(samples.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut scale = vec![0.0; d];
    for &i in &order {
        for ((s, v), m) in scale.iter_mut().zip(samples.row(i)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    for s in scale.iter_mut() {
        *s = (*s / n).sqrt();
        if !(*s > 1e-12) {
            *s = 1.0;
        }
    }

    let mut z = Vec::with_capacity(samples.as_slice().len());
    let mut y = Vec::with_capacity(labels.len());
    for &i in &order {
        z.extend(samples.row(i).iter().zip(&mean).zip(&scale).map(|((v, m), s)| (v - m) / s));
        y.push(labels[i]);
    }
    let objective = LogisticObjective::new(Samples::new(d, z)?, y, num_classes, settings.l2)?;

    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let init = Normal::new(0.0, 0.01).expect("valid normal");
    let w0: Vec<f64> = (0..objective.num_params()).map(|_| init.sample(&mut rng)).collect();
    let result = lbfgs(&objective, w0, settings)?;

    if !result.converged {
        log::warn!(
            "logistic regression stopped after {} iterations with gradient norm {:.3e}",
            result.iterations,
            result.gradient_norm
        );
    }
    Ok(LrFit {
        model: DiscriminativeModel::new(Vec::new(), num_classes, mean, scale, result.w)?,
        iterations: result.iterations,
        gradient_norm: result.gradient_norm,
        objective: result.value,
        converged: result.converged,
    })
}

struct Minimum {
    w: Vec<f64>,
    value: f64,
    gradient_norm: f64,
    iterations: usize,
    converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn lbfgs(obj: &LogisticObjective, mut w: Vec<f64>, settings: &LrSettings) -> Result<Minimum> {
    let p = w.len();
    let mut g = vec![0.0; p];
    let mut f = obj.value_and_gradient(&w, &mut g);
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(settings.history);
    let mut dir = vec![0.0; p];
    let mut w_new = vec![0.0; p];
    let mut g_new = vec![0.0; p];
    let mut alpha = vec![0.0; settings.history];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < settings.max_iter {
        let gnorm = dot(&g, &g).sqrt();
        if !gnorm.is_finite() || !f.is_finite() {
            return Err(Error::Numerical("logistic regression objective diverged".into()));
        }
        if gnorm < settings.tol {
            converged = true;
            break;
        }
        iterations += 1;

        // Two-loop recursion.
        dir.iter_mut().zip(&g).for_each(|(d, gi)| *d = -gi);
        for (i, (s, y, rho)) in hist.iter().enumerate().rev() {
            alpha[i] = rho * dot(s, &dir);
            dir.iter_mut().zip(y).for_each(|(d, yi)| *d -= alpha[i] * yi);
        }
        let gamma = hist.back().map_or(1.0 / gnorm.max(1.0), |(s, y, _)| dot(s, y) / dot(y, y));
        dir.iter_mut().for_each(|d| *d *= gamma);
        for (i, (s, y, rho)) in hist.iter().enumerate() {
            let beta = rho * dot(y, &dir);
            dir.iter_mut().zip(s).for_each(|(d, si)| *d += (alpha[i] - beta) * si);
        }
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            hist.clear();
            dir.iter_mut().zip(&g).for_each(|(d, gi)| *d = -gi / gnorm.max(1.0));
            slope = dot(&g, &dir);
        }

        // Armijo backtracking.
        let mut step = 1.0;
        let mut accepted = false;
        let mut f_new = f;
        for _ in 0..60 {
            w_new.iter_mut().zip(&w).zip(&dir).for_each(|((wn, wi), di)| *wn = wi + step * di);
            f_new = obj.value_and_gradient(&w_new, &mut g_new);
            if f_new.is_finite() && f_new <= f + 1e-4 * step * slope {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }

        let s: Vec<f64> = w_new.iter().zip(&w).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 {
            if hist.len() == settings.history {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        std::mem::swap(&mut w, &mut w_new);
        std::mem::swap(&mut g, &mut g_new);
        f = f_new;
    }
    let gradient_norm = dot(&g, &g).sqrt();
    Ok(Minimum {
        w,
        value: f,
        gradient_norm,
        iterations,
        converged: converged || gradient_norm < settings.tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn blobs(seed: u64, n: usize) -> (Samples, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let c = (i % 3) as u8;
            let centre = [[0.0, 0.0], [2.0, 0.0], [0.0, 2.0]][c as usize];
            rows.push(vec![centre[0] + noise.sample(&mut rng), centre[1] + noise.sample(&mut rng)]);
            labels.push(c);
        }
        (Samples::from_rows(&rows).unwrap(), labels)
    }

    #[test]
    fn separates_blobs() {
        let (x, y) = blobs(1, 300);
        let fit = fit_with(&x, &y, 3, &LrSettings::new(0)).unwrap();
        assert!(fit.converged, "grad norm {}", fit.gradient_norm);
        let correct = x
            .rows()
            .zip(&y)
            .filter(|(r, &l)| {
                let p = lr_posterior(&fit.model, r).unwrap();
                crate::recursion::map_decision(&p) == l as usize
            })
            .count();
        assert!(correct as f64 / 300.0 > 0.97);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (x, y) = blobs(2, 60);
        let obj = LogisticObjective::new(x, y, 3, 1e-4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w: Vec<f64> = (0..obj.num_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut g = vec![0.0; w.len()];
        obj.value_and_gradient(&w, &mut g);
        let h = 1e-6;
        let mut scratch = vec![0.0; w.len()];
        for i in 0..w.len() {
            let mut wp = w.clone();
            wp[i] += h;
            let fp = obj.value_and_gradient(&wp, &mut scratch);
            wp[i] -= 2.0 * h;
            let fm = obj.value_and_gradient(&wp, &mut scratch);
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6 * g[i].abs().max(1.0), "param {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn invariant_to_sample_order() {
        let (x, y) = blobs(3, 90);
        let a = lr_fit(&x, &y, 3, 4).unwrap();
        let mut idx: Vec<usize> = (0..90).collect();
        idx.reverse();
        idx.swap(3, 40);
        let rows: Vec<Vec<f64>> = idx.iter().map(|&i| x.row(i).to_vec()).collect();
        let labels: Vec<u8> = idx.iter().map(|&i| y[i]).collect();
        let b = lr_fit(&Samples::from_rows(&rows).unwrap(), &labels, 3, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_class_is_rejected() {
        let x = Samples::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        assert!(matches!(lr_fit(&x, &[1, 1], 2, 0), Err(Error::InsufficientData(_))));
    }
}
