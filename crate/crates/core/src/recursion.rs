//! Recursive Bayesian classification.
//!
//! Each pixel carries a posterior PMF over the K classes. At every date the
//! previous posterior is pushed through the transition model to form a prior,
//! which is then combined with the instantaneous classifier output:
//!
//! * generative route: `p(C_t | z_1:t) ∝ p(z_t | C_t) · Σ_j p(C_t | C_{t-1}=j) p(C_{t-1}=j | z_1:t-1)`
//! * discriminative route: the likelihood is replaced by `p(C_t | z_t) / p(C_t)`.
//!
//! Pixels are independent, so a stack can be split across workers without
//! changing a single bit of the output.

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::classifiers::{ClassifierModel, InstantaneousSeries, OutputKind};
use crate::error::{Error, Result};
use crate::parallel::zip_pixels;
use crate::types::{
    floor_in_place, uniform_pmf, ImageStack, LabelRaster, LikelihoodVector, ProbabilityVector,
    TransitionModel, PROBABILITY_FLOOR,
};

/// Which form of Bayes' rule the recursion applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Consumes likelihoods `p(z | C)`.
    Rbgm,
    /// Consumes posteriors `p(C | z)` and class marginals `p(C)`.
    Rbdm,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Rbgm => "rbgm",
            Mode::Rbdm => "rbdm",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rbgm" => Ok(Mode::Rbgm),
            "rbdm" => Ok(Mode::Rbdm),
            _ => Err(Error::Config(format!("unknown recursion mode `{s}`"))),
        }
    }
}

/// `out[i] = Σ_j T[j][i] · prev[j]`.
#[inline]
pub(crate) fn predict_prior_into(prev: &[f64], transition: &TransitionModel, out: &mut [f64]) {
    let k = prev.len();
    for (i, slot) in out.iter_mut().enumerate().take(k) {
        let mut acc = 0.0;
        for (j, &p) in prev.iter().enumerate() {
            acc += transition.prob(j, i) * p;
        }
        *slot = acc;
    }
}

/// Combines per-class evidence weights with the predicted prior and
/// normalizes. `weights` is a likelihood (generative route) or a
/// posterior/marginal ratio (discriminative route).
#[inline]
pub(crate) fn bayes_update_into(
    weights: &[f64],
    prev: &[f64],
    transition: &TransitionModel,
    out: &mut [f64],
) -> Result<()> {
    predict_prior_into(prev, transition, out);
    floor_in_place(out);
    let mut evidence = 0.0;
    for (o, &w) in out.iter_mut().zip(weights) {
        *o *= w;
        evidence += *o;
    }
    if !(evidence > 0.0) || !evidence.is_finite() {
        return Err(if weights.iter().all(|&w| w == 0.0) {
            Error::DegenerateLikelihood
        } else {
            Error::Numerical(format!("posterior normalizer is {evidence}"))
        });
    }
    for o in out.iter_mut() {
        *o /= evidence;
    }
    floor_in_place(out);
    Ok(())
}

#[inline]
pub(crate) fn regularize_into(pmf: &mut [f64], lambda: f64) {
    if lambda == 0.0 {
        return;
    }
    let total: f64 = pmf.iter().map(|p| p + lambda).sum();
    for p in pmf.iter_mut() {
        *p = (*p + lambda) / total;
    }
}

#[inline]
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn check_dims(len: usize, transition: &TransitionModel, what: &str) -> Result<()> {
    if len != transition.num_classes() {
        return Err(Error::Shape(format!(
            "{what} has {len} classes but the transition model has {}",
            transition.num_classes()
        )));
    }
    Ok(())
}

pub(crate) fn validate_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidHyperparameter(format!(
            "regularization constant must be a finite nonnegative value, got {lambda}"
        )));
    }
    Ok(())
}

/// Propagates the previous posterior through the transition model.
pub fn predict_prior(prev: &ProbabilityVector, transition: &TransitionModel) -> Result<ProbabilityVector> {
    check_dims(prev.len(), transition, "previous posterior")?;
    let mut out = vec![0.0; prev.len()];
    predict_prior_into(prev.as_slice(), transition, &mut out);
    Ok(ProbabilityVector::from_normalized(out))
}

/// One generative-route update.
pub fn rbgm_step(
    likelihood: &LikelihoodVector,
    prev: &ProbabilityVector,
    transition: &TransitionModel,
) -> Result<ProbabilityVector> {
    check_dims(likelihood.len(), transition, "likelihood")?;
    check_dims(prev.len(), transition, "previous posterior")?;
    let mut out = vec![0.0; prev.len()];
    bayes_update_into(likelihood.as_slice(), prev.as_slice(), transition, &mut out)?;
    Ok(ProbabilityVector::from_normalized(out))
}

/// One discriminative-route update.
pub fn rbdm_step(
    inst_posterior: &ProbabilityVector,
    marginal: &ProbabilityVector,
    prev: &ProbabilityVector,
    transition: &TransitionModel,
) -> Result<ProbabilityVector> {
    check_dims(inst_posterior.len(), transition, "instantaneous posterior")?;
    check_dims(marginal.len(), transition, "marginal")?;
    check_dims(prev.len(), transition, "previous posterior")?;
    let ratios = posterior_ratios(inst_posterior.as_slice(), marginal.as_slice())?;
    let mut out = vec![0.0; prev.len()];
    bayes_update_into(&ratios, prev.as_slice(), transition, &mut out)?;
    Ok(ProbabilityVector::from_normalized(out))
}

fn posterior_ratios(inst: &[f64], marginal: &[f64]) -> Result<Vec<f64>> {
    inst.iter()
        .zip(marginal)
        .enumerate()
        .map(|(i, (&p, &m))| {
            if m > 0.0 {
                Ok(p / m.max(PROBABILITY_FLOOR))
            } else {
                Err(Error::InvalidMarginal(i))
            }
        })
        .collect()
}

/// Pulls an overconfident PMF towards uniform: `(p_i + λ) / Σ_j (p_j + λ)`.
/// `λ = 0` returns the input unchanged.
pub fn regularize(pmf: &ProbabilityVector, lambda: f64) -> Result<ProbabilityVector> {
    validate_lambda(lambda)?;
    let mut out = pmf.as_slice().to_vec();
    regularize_into(&mut out, lambda);
    Ok(ProbabilityVector::from_normalized(out))
}

/// Maximum a posteriori class. Ties go to the lowest class index.
pub fn map_decision(posterior: &ProbabilityVector) -> usize {
    argmax(posterior.as_slice())
}

/// Closed-form recursion overhead per pixel and time step, in
/// sum-and-product (or sum-and-division) operations.
pub fn recursion_op_count(k: usize, mode: Mode) -> Result<u64> {
    if k < 2 {
        return Err(Error::InvalidClassCount(k));
    }
    let k = k as u64;
    Ok(match mode {
        Mode::Rbgm => k * k * k + k * k + 2 * k,
        Mode::Rbdm => k * k * k + 2 * k * k + 2 * k,
    })
}

/// Tallies arithmetic operations. One operation is a sum together with a
/// product, or a sum together with a division.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct OpCounter {
    count: u64,
}

impl OpCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    #[inline]
    fn mul_add(&mut self, acc: f64, a: f64, b: f64) -> f64 {
        self.count += 1;
        acc + a * b
    }

    #[inline]
    fn div(&mut self, a: f64, b: f64) -> f64 {
        self.count += 1;
        a / b
    }

    #[inline]
    fn mul(&mut self, a: f64, b: f64) -> f64 {
        self.count += 1;
        a * b
    }
}

/// Evaluates the generative update term by term, without reusing the
/// predicted prior across classes, and counts every operation.
///
/// The weighting of each inner prior sum by the instantaneous term in the
/// denominator is folded into that inner summation and not charged
/// separately.
pub fn rbgm_step_counted(
    likelihood: &LikelihoodVector,
    prev: &ProbabilityVector,
    transition: &TransitionModel,
    ops: &mut OpCounter,
) -> Result<ProbabilityVector> {
    check_dims(likelihood.len(), transition, "likelihood")?;
    check_dims(prev.len(), transition, "previous posterior")?;
    let (lik, prev) = (likelihood.as_slice(), prev.as_slice());
    let k = prev.len();
    let mut out = vec![0.0; k];
    for (i, slot) in out.iter_mut().enumerate() {
        let mut numerator = 0.0;
        for j in 0..k {
            numerator = ops.mul_add(numerator, transition.prob(j, i), prev[j]);
        }
        let mut denominator = 0.0;
        for c in 0..k {
            let mut inner = 0.0;
            for j in 0..k {
                inner = ops.mul_add(inner, transition.prob(j, c), prev[j]);
            }
            denominator += lik[c] * inner;
        }
        if !(denominator > 0.0) {
            return Err(Error::DegenerateLikelihood);
        }
        let ratio = ops.div(numerator, denominator);
        *slot = ops.mul(lik[i], ratio);
    }
    ProbabilityVector::from_weights(&out)
}

/// Discriminative counterpart of [`rbgm_step_counted`]. Each posterior to
/// marginal ratio costs one division inside the denominator sum and is reused
/// for the numerator.
pub fn rbdm_step_counted(
    inst_posterior: &ProbabilityVector,
    marginal: &ProbabilityVector,
    prev: &ProbabilityVector,
    transition: &TransitionModel,
    ops: &mut OpCounter,
) -> Result<ProbabilityVector> {
    check_dims(inst_posterior.len(), transition, "instantaneous posterior")?;
    check_dims(marginal.len(), transition, "marginal")?;
    check_dims(prev.len(), transition, "previous posterior")?;
    let (inst, marg, prev) = (inst_posterior.as_slice(), marginal.as_slice(), prev.as_slice());
    if let Some(i) = marg.iter().position(|&m| !(m > 0.0)) {
        return Err(Error::InvalidMarginal(i));
    }
    let k = prev.len();
    let mut out = vec![0.0; k];
    let mut ratios = vec![0.0; k];
    for (i, slot) in out.iter_mut().enumerate() {
        let mut numerator = 0.0;
        for j in 0..k {
            numerator = ops.mul_add(numerator, transition.prob(j, i), prev[j]);
        }
        let mut denominator = 0.0;
        for c in 0..k {
            ratios[c] = ops.div(inst[c], marg[c]);
            let mut inner = 0.0;
            for j in 0..k {
                inner = ops.mul_add(inner, transition.prob(j, c), prev[j]);
            }
            denominator += ratios[c] * inner;
        }
        if !(denominator > 0.0) {
            return Err(Error::Numerical(format!("posterior normalizer is {denominator}")));
        }
        let scaled = ops.div(numerator, denominator);
        *slot = ops.mul(ratios[i], scaled);
    }
    ProbabilityVector::from_weights(&out)
}

/// Per-pixel posteriors carried from one date to the next.
#[derive(Debug, Clone, PartialEq)]
pub struct RecursionState {
    num_classes: usize,
    /// Pixel-major: `posterior[n * K + c]`.
    posterior: Vec<f64>,
    t: usize,
}

impl RecursionState {
    /// Uniform `p(C_0)` for every pixel.
    pub fn new(pixels: usize, num_classes: usize) -> Result<Self> {
        let uniform = uniform_pmf(num_classes)?;
        Ok(Self {
            num_classes,
            posterior: uniform.as_slice().repeat(pixels),
            t: 0,
        })
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn pixels(&self) -> usize {
        self.posterior.len() / self.num_classes
    }

    pub fn posterior(&self) -> &[f64] {
        &self.posterior
    }

    pub fn pixel_posterior(&self, n: usize) -> &[f64] {
        &self.posterior[n * self.num_classes..(n + 1) * self.num_classes]
    }

    /// Advances every pixel by one date.
    ///
    /// `inst` holds one already-regularized PMF per pixel: a normalized
    /// likelihood for [`Mode::Rbgm`], a posterior for [`Mode::Rbdm`].
    pub fn step(
        &mut self,
        inst: &[f64],
        mode: Mode,
        marginal: &[f64],
        transition: &TransitionModel,
        workers: usize,
    ) -> Result<()> {
        let k = self.num_classes;
        if inst.len() != self.posterior.len() {
            return Err(Error::Shape(format!(
                "instantaneous output has {} values, state has {}",
                inst.len(),
                self.posterior.len()
            )));
        }
        check_dims(k, transition, "recursion state")?;
        if marginal.len() != k {
            return Err(Error::Shape("marginal length differs from the class count".into()));
        }
        if let Some(i) = marginal.iter().position(|&m| !(m > 0.0)) {
            return Err(Error::InvalidMarginal(i));
        }
        let inv_marginal: Vec<f64> = marginal.iter().map(|m| 1.0 / m).collect();

        let update_chunk = |posterior: &mut [f64], inst: &[f64]| -> Result<()> {
            let mut prev = vec![0.0; k];
            let mut weights = vec![0.0; k];
            for (post, obs) in posterior.chunks_exact_mut(k).zip(inst.chunks_exact(k)) {
                prev.copy_from_slice(post);
                match mode {
                    Mode::Rbgm => weights.copy_from_slice(obs),
                    Mode::Rbdm => {
                        for ((w, &o), &im) in weights.iter_mut().zip(obs).zip(&inv_marginal) {
                            *w = o * im;
                        }
                    }
                }
                bayes_update_into(&weights, &prev, transition, post)?;
            }
            Ok(())
        };

        zip_pixels(&mut self.posterior, inst, k, workers, update_chunk)?;
        self.t += 1;
        Ok(())
    }
}

/// Parameters of one recursive classification run.
#[derive(Debug, Clone)]
pub struct RecursionSettings {
    pub transition: TransitionModel,
    pub lambda: f64,
    pub mode: Mode,
    /// Class marginals `p(C)` for the discriminative route; uniform when `None`.
    pub marginal: Option<ProbabilityVector>,
    pub workers: usize,
}

impl RecursionSettings {
    pub fn new(transition: TransitionModel, lambda: f64, mode: Mode) -> Self {
        Self {
            transition,
            lambda,
            mode,
            marginal: None,
            workers: 1,
        }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub(crate) fn marginal_vec(&self) -> Result<Vec<f64>> {
        match &self.marginal {
            Some(m) => {
                check_dims(m.len(), &self.transition, "marginal")?;
                Ok(m.as_slice().to_vec())
            }
            None => Ok(uniform_pmf(self.transition.num_classes())?.into_vec()),
        }
    }
}

/// Output of [`classify_stack`]: one entry per date, in date order.
#[derive(Debug, Clone, PartialEq)]
pub struct StackClassification {
    pub dates: Vec<NaiveDate>,
    pub width: usize,
    pub height: usize,
    pub num_classes: usize,
    pub recursive: Vec<LabelRaster>,
    pub instantaneous: Vec<LabelRaster>,
    /// Recursive posteriors, pixel-major (`n * K + c`).
    pub posteriors: Vec<Vec<f64>>,
    /// Instantaneous posteriors (before regularization), pixel-major.
    pub instantaneous_posteriors: Vec<Vec<f64>>,
}

/// Runs the full recursion over a stack: per date and pixel, obtain the
/// instantaneous output, regularize it, update the posterior and take the
/// MAP decision. Instantaneous decisions are emitted alongside.
pub fn classify_stack(
    stack: &ImageStack,
    model: &ClassifierModel,
    settings: &RecursionSettings,
) -> Result<StackClassification> {
    let series = model.instantaneous_series(stack, settings.workers)?;
    classify_series(&series, settings)
}

/// Recursion over precomputed instantaneous outputs. Lets callers such as
/// the sensitivity sweep evaluate the classifier once and recurse many times.
pub fn classify_series(series: &InstantaneousSeries, settings: &RecursionSettings) -> Result<StackClassification> {
    validate_lambda(settings.lambda)?;
    let k = series.num_classes;
    check_dims(k, &settings.transition, "classifier output")?;
    let marginal = settings.marginal_vec()?;
    let pixels = series.width * series.height;
    let mut state = RecursionState::new(pixels, k)?;

    let mut out = StackClassification {
        dates: series.dates.clone(),
        width: series.width,
        height: series.height,
        num_classes: k,
        recursive: Vec::with_capacity(series.len()),
        instantaneous: Vec::with_capacity(series.len()),
        posteriors: Vec::with_capacity(series.len()),
        instantaneous_posteriors: Vec::with_capacity(series.len()),
    };

    let mut inst = vec![0.0; pixels * k];
    for frame in &series.frames {
        let inst_posterior = to_posterior(frame, series.kind, &marginal);
        recursion_input(frame, series.kind, settings.mode, &marginal, settings.lambda, &mut inst);
        state.step(&inst, settings.mode, &marginal, &settings.transition, settings.workers)?;

        out.recursive.push(decide(state.posterior(), series.width, series.height, k)?);
        out.instantaneous.push(decide(&inst_posterior, series.width, series.height, k)?);
        out.posteriors.push(state.posterior().to_vec());
        out.instantaneous_posteriors.push(inst_posterior);
    }
    Ok(out)
}

/// Brings one frame of classifier output into the form `mode` consumes and
/// regularizes it.
pub(crate) fn recursion_input(
    frame: &[f64],
    kind: OutputKind,
    mode: Mode,
    marginal: &[f64],
    lambda: f64,
    inst: &mut [f64],
) {
    let k = marginal.len();
    inst.copy_from_slice(frame);
    match (kind, mode) {
        (OutputKind::Likelihood, Mode::Rbgm) | (OutputKind::Posterior, Mode::Rbdm) => {}
        (OutputKind::Likelihood, Mode::Rbdm) => {
            // p(C|z) ∝ p(z|C) p(C)
            for px in inst.chunks_exact_mut(k) {
                for (v, m) in px.iter_mut().zip(marginal) {
                    *v *= m;
                }
                let s: f64 = px.iter().sum();
                px.iter_mut().for_each(|v| *v /= s);
            }
        }
        (OutputKind::Posterior, Mode::Rbgm) => {
            // p(z|C) ∝ p(C|z) / p(C)
            for px in inst.chunks_exact_mut(k) {
                for (v, m) in px.iter_mut().zip(marginal) {
                    *v /= m;
                }
                let s: f64 = px.iter().sum();
                px.iter_mut().for_each(|v| *v /= s);
            }
        }
    }
    for px in inst.chunks_exact_mut(k) {
        regularize_into(px, lambda);
    }
}

fn to_posterior(frame: &[f64], kind: OutputKind, marginal: &[f64]) -> Vec<f64> {
    let k = marginal.len();
    match kind {
        OutputKind::Posterior => frame.to_vec(),
        OutputKind::Likelihood => {
            if marginal.windows(2).all(|w| w[0] == w[1]) {
                return frame.to_vec();
            }
            let mut post = frame.to_vec();
            for px in post.chunks_exact_mut(k) {
                for (v, m) in px.iter_mut().zip(marginal) {
                    *v *= m;
                }
                let s: f64 = px.iter().sum();
                px.iter_mut().for_each(|v| *v /= s);
            }
            post
        }
    }
}

fn decide(posteriors: &[f64], width: usize, height: usize, k: usize) -> Result<LabelRaster> {
    let labels = posteriors.chunks_exact(k).map(|p| argmax(p) as u8).collect();
    LabelRaster::new(width, height, k, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pmf(v: &[f64]) -> ProbabilityVector {
        ProbabilityVector::new(v.to_vec()).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn predict_prior_examples() {
        for eps in [0.01, 0.2, 0.7] {
            let t = TransitionModel::new(2, eps).unwrap();
            assert_eq!(predict_prior(&pmf(&[0.5, 0.5]), &t).unwrap().as_slice(), &[0.5, 0.5]);
        }
        let t = TransitionModel::new(2, 0.1).unwrap();
        assert!(close(predict_prior(&pmf(&[1.0, 0.0]), &t).unwrap().as_slice(), &[0.9, 0.1], 1e-15));
        let t = TransitionModel::new(2, 0.2).unwrap();
        assert!(close(predict_prior(&pmf(&[0.9, 0.1]), &t).unwrap().as_slice(), &[0.74, 0.26], 1e-15));
    }

    #[test]
    fn predict_prior_shape_error() {
        let t = TransitionModel::new(3, 0.1).unwrap();
        assert!(matches!(predict_prior(&pmf(&[0.5, 0.5]), &t), Err(Error::Shape(_))));
    }

    #[test]
    fn rbgm_step_example() {
        let t = TransitionModel::new(2, 0.2).unwrap();
        let lik = LikelihoodVector::new(vec![0.3, 0.7]).unwrap();
        let post = rbgm_step(&lik, &pmf(&[0.9, 0.1]), &t).unwrap();
        // 0.222 / 0.404
        assert!(close(post.as_slice(), &[0.549_504_950_495_049_5, 0.450_495_049_504_950_45], 1e-12));
        assert!(close(post.as_slice(), &[0.5495, 0.4505], 1e-3));
    }

    #[test]
    fn rbgm_uninformative_likelihood_returns_prior() {
        let t = TransitionModel::new(2, 0.2).unwrap();
        let prev = pmf(&[0.9, 0.1]);
        let prior = predict_prior(&prev, &t).unwrap();
        for c in [1e-3, 1.0, 42.0] {
            let lik = LikelihoodVector::new(vec![c, c]).unwrap();
            assert!(close(rbgm_step(&lik, &prev, &t).unwrap().as_slice(), prior.as_slice(), 1e-15));
        }
    }

    #[test]
    fn rbgm_rejects_zero_likelihood() {
        let t = TransitionModel::new(2, 0.2).unwrap();
        let lik = LikelihoodVector::new(vec![0.0, 0.0]).unwrap();
        assert!(matches!(rbgm_step(&lik, &pmf(&[0.5, 0.5]), &t), Err(Error::DegenerateLikelihood)));
    }

    #[test]
    fn rbdm_step_examples() {
        let uniform = pmf(&[0.5, 0.5]);
        for eps in [0.05, 0.3] {
            let t = TransitionModel::new(2, eps).unwrap();
            let post = rbdm_step(&pmf(&[0.6, 0.4]), &uniform, &uniform, &t).unwrap();
            assert!(close(post.as_slice(), &[0.6, 0.4], 1e-15));
        }
        let t = TransitionModel::new(2, 0.2).unwrap();
        let post = rbdm_step(&pmf(&[0.6, 0.4]), &uniform, &pmf(&[0.9, 0.1]), &t).unwrap();
        // 0.888 / 1.096
        assert!(close(post.as_slice(), &[0.810_218_978_102_189_8, 0.189_781_021_897_810_2], 1e-12));
        assert!(close(post.as_slice(), &[0.8097, 0.1903], 1e-3));
    }

    #[test]
    fn rbdm_half_epsilon_returns_instantaneous() {
        let t = TransitionModel::new(2, 0.5).unwrap();
        let uniform = pmf(&[0.5, 0.5]);
        for (inst, prev) in [([0.3, 0.7], [0.99, 0.01]), ([0.9, 0.1], [0.2, 0.8])] {
            let post = rbdm_step(&pmf(&inst), &uniform, &pmf(&prev), &t).unwrap();
            assert!(close(post.as_slice(), &inst, 1e-12));
        }
    }

    #[test]
    fn rbdm_rejects_zero_marginal() {
        let t = TransitionModel::new(2, 0.2).unwrap();
        let res = rbdm_step(&pmf(&[0.6, 0.4]), &pmf(&[1.0, 0.0]), &pmf(&[0.5, 0.5]), &t);
        assert!(matches!(res, Err(Error::InvalidMarginal(1))));
    }

    #[test]
    fn regularize_examples() {
        let out = regularize(&pmf(&[1.0, 0.0]), 0.8).unwrap();
        assert!(close(out.as_slice(), &[0.6923, 0.3077], 1e-4));
        let p = pmf(&[0.123, 0.877]);
        assert_eq!(regularize(&p, 0.0).unwrap(), p);
        assert_eq!(regularize(&pmf(&[0.5, 0.5]), 3.0).unwrap().as_slice(), &[0.5, 0.5]);
        assert!(matches!(regularize(&p, -0.1), Err(Error::InvalidHyperparameter(_))));
    }

    #[test]
    fn map_decision_examples() {
        assert_eq!(map_decision(&pmf(&[0.3, 0.7])), 1);
        assert_eq!(map_decision(&pmf(&[0.5, 0.5])), 0);
        assert_eq!(map_decision(&pmf(&[0.2, 0.5, 0.3])), 1);
    }

    #[test]
    fn op_count_examples() {
        assert_eq!(recursion_op_count(2, Mode::Rbgm).unwrap(), 16);
        assert_eq!(recursion_op_count(2, Mode::Rbdm).unwrap(), 20);
        assert_eq!(recursion_op_count(3, Mode::Rbgm).unwrap(), 42);
        assert!(recursion_op_count(1, Mode::Rbgm).is_err());
    }

    #[test]
    fn counted_steps_agree_with_fast_path() {
        let t = TransitionModel::new(3, 0.1).unwrap();
        let prev = pmf(&[0.2, 0.5, 0.3]);
        let lik = LikelihoodVector::new(vec![0.4, 1.3, 0.05]).unwrap();
        let mut ops = OpCounter::new();
        let counted = rbgm_step_counted(&lik, &prev, &t, &mut ops).unwrap();
        let fast = rbgm_step(&lik, &prev, &t).unwrap();
        assert!(close(counted.as_slice(), fast.as_slice(), 1e-14));
        assert_eq!(ops.count(), 42);

        let inst = pmf(&[0.1, 0.6, 0.3]);
        let marg = pmf(&[0.2, 0.3, 0.5]);
        let mut ops = OpCounter::new();
        let counted = rbdm_step_counted(&inst, &marg, &prev, &t, &mut ops).unwrap();
        let fast = rbdm_step(&inst, &marg, &prev, &t).unwrap();
        assert!(close(counted.as_slice(), fast.as_slice(), 1e-14));
        assert_eq!(ops.count(), recursion_op_count(3, Mode::Rbdm).unwrap());
    }

    #[test]
    fn state_starts_uniform() {
        let s = RecursionState::new(4, 3).unwrap();
        assert_eq!(s.t(), 0);
        assert_eq!(s.pixels(), 4);
        for n in 0..4 {
            assert_eq!(s.pixel_posterior(n), uniform_pmf(3).unwrap().as_slice());
        }
    }

    #[test]
    fn parallel_step_is_bit_identical() {
        let t = TransitionModel::new(2, 0.05).unwrap();
        let pixels = 1001;
        let inst: Vec<f64> = (0..pixels)
            .flat_map(|n| {
                let p = ((n * 37) % 100) as f64 / 100.0 * 0.98 + 0.01;
                [p, 1.0 - p]
            })
            .collect();
        let mut a = RecursionState::new(pixels, 2).unwrap();
        let mut b = a.clone();
        for _ in 0..3 {
            a.step(&inst, Mode::Rbdm, &[0.5, 0.5], &t, 1).unwrap();
            b.step(&inst, Mode::Rbdm, &[0.5, 0.5], &t, 4).unwrap();
        }
        assert_eq!(a, b);
    }
}
