//! Sensitivity of the recursion to the transition hyperparameter.

use crate::classifiers::{ClassifierKind, InstantaneousSeries};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result, StageExt};
use crate::experiment::{accuracy_csv, prepare_data, recursion_settings, train_models, AccuracyRow};
use crate::recursion::{classify_series, RecursionSettings};
use crate::types::{ImageStack, TransitionModel};

pub type SweepRow = AccuracyRow;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub grid: Vec<f64>,
    pub classifiers: Vec<ClassifierKind>,
    /// `mean_accuracy[c][e]`: mean recursive balanced accuracy of classifier
    /// `c` at `grid[e]` over the ground-truth dates.
    pub mean_accuracy: Vec<Vec<f64>>,
    /// Mean instantaneous balanced accuracy per classifier.
    pub instantaneous: Vec<f64>,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    fn position(&self, kind: ClassifierKind) -> Option<usize> {
        self.classifiers.iter().position(|&k| k == kind)
    }

    /// Best grid value for `kind`; ties go to the smallest value.
    pub fn best_epsilon(&self, kind: ClassifierKind) -> Option<f64> {
        let acc = &self.mean_accuracy[self.position(kind)?];
        let mut best = 0;
        for (i, &a) in acc.iter().enumerate() {
            if a > acc[best] {
                best = i;
            }
        }
        Some(self.grid[best])
    }

    pub fn accuracy(&self, kind: ClassifierKind, epsilon: f64) -> Option<f64> {
        let e = self.grid.iter().position(|&g| g == epsilon)?;
        Some(self.mean_accuracy[self.position(kind)?][e])
    }

    /// One row per classifier and grid value.
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("classifier,epsilon,mean_recursive,mean_instantaneous,best\n");
        for (c, kind) in self.classifiers.iter().enumerate() {
            let best = self.best_epsilon(*kind);
            for (e, eps) in self.grid.iter().enumerate() {
                s.push_str(&format!(
                    "{kind},{eps},{:.6},{:.6},{}\n",
                    self.mean_accuracy[c][e],
                    self.instantaneous[c],
                    u8::from(best == Some(*eps))
                ));
            }
        }
        s
    }

    pub fn rows_csv(&self) -> String {
        accuracy_csv(&self.rows)
    }
}

pub fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidHyperparameter("epsilon grid is empty".into()));
    }
    if let Some(e) = grid.iter().find(|&&e| !(e > 0.0 && e < 1.0)) {
        return Err(Error::InvalidHyperparameter(format!("grid value {e} outside (0, 1)")));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidHyperparameter("epsilon grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Recursion over precomputed instantaneous outputs for every grid value.
/// Returns mean recursive accuracy per grid value, the mean instantaneous
/// accuracy and the per-date rows.
pub fn sweep_series(
    kind: ClassifierKind,
    series: &InstantaneousSeries,
    test: &ImageStack,
    base: &RecursionSettings,
    grid: &[f64],
) -> Result<(Vec<f64>, f64, Vec<SweepRow>)> {
    check_grid(grid)?;
    let truth_dates = test.frames().iter().filter(|f| f.truth.is_some()).count();
    if truth_dates == 0 {
        return Err(Error::Evaluation("no test frame has ground truth".into()));
    }
    let mut means = Vec::with_capacity(grid.len());
    let mut rows = Vec::new();
    let mut inst_mean = 0.0;
    for &eps in grid {
        let mut settings = base.clone();
        settings.transition = TransitionModel::new(series.num_classes, eps)?;
        let result = classify_series(series, &settings)?;
        let scored = crate::experiment::score(kind, eps, &result, test)?;
        means.push(scored.iter().map(|r| r.recursive).sum::<f64>() / scored.len() as f64);
        inst_mean = scored.iter().map(|r| r.instantaneous).sum::<f64>() / scored.len() as f64;
        rows.extend(scored);
    }
    Ok((means, inst_mean, rows))
}

/// Runs the configured classifiers over `grid`. Instantaneous outputs are
/// computed once per classifier and reused for every grid value.
pub fn epsilon_sweep(config: &ExperimentConfig, grid: &[f64], workers: usize) -> Result<SweepResult> {
    check_grid(grid)?;
    let data = prepare_data(config)?;
    let models = train_models(config, &data.train)?;
    let mut result = SweepResult {
        grid: grid.to_vec(),
        classifiers: Vec::new(),
        mean_accuracy: Vec::new(),
        instantaneous: Vec::new(),
        rows: Vec::new(),
    };
    for (kind, model) in &models {
        let series = model.instantaneous_series(&data.test, workers.max(1)).stage("classify")?;
        let base = recursion_settings(config, *kind, grid[0], workers.max(1))?;
        let (means, inst, rows) = sweep_series(*kind, &series, &data.test, &base, grid).stage("sweep")?;
        result.classifiers.push(*kind);
        result.mean_accuracy.push(means);
        result.instantaneous.push(inst);
        result.rows.extend(rows);
    }
    Ok(result)
}
