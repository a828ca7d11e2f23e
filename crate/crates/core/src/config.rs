//! Experiment configuration files (TOML).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::classifiers::{ClassifierKind, SpectralIndexKind, Thresholds};
use crate::error::{Error, Result};
use crate::pipeline::ReferenceRegion;
use crate::recursion::Mode;
use crate::types::{ClassSet, ProbabilityVector};

/// Where training labels for GMM and LR come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    /// Thresholded spectral index.
    #[default]
    Pseudo,
    /// Ground-truth rasters of the training dates.
    Truth,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop: Option<ReferenceRegion>,
    /// Region used for bias correction, in coordinates after cropping.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias_region: Option<ReferenceRegion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_cloud_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exclude_dates: Vec<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub classes: ClassSet,
    pub classifiers: Vec<ClassifierKind>,
    /// Transition hyperparameter per classifier.
    pub epsilon: BTreeMap<ClassifierKind, f64>,
    /// Forces one route for all classifiers; by default GMM runs the
    /// generative route and the others the discriminative one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    pub index: SpectralIndexKind,
    pub thresholds: Thresholds,
    pub lambda: f64,
    /// Class marginals for the discriminative route; uniform if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub marginal: Option<Vec<f64>>,
    pub manifest: PathBuf,
    #[serde(default)]
    pub train_dates: Vec<NaiveDate>,
    /// Empty means every date not used for training.
    #[serde(default)]
    pub test_dates: Vec<NaiveDate>,
    #[serde(default)]
    pub train_labels: LabelSource,
    #[serde(default = "default_components")]
    pub gmm_components: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_train_samples: Option<usize>,
    /// Load trained models from here instead of fitting them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_components() -> usize {
    crate::classifiers::gmm::DEFAULT_COMPONENTS
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.classes.len();
        if self.classifiers.is_empty() {
            return Err(Error::Config("no classifiers listed".into()));
        }
        for c in &self.classifiers {
            let eps = self
                .epsilon
                .get(c)
                .ok_or_else(|| Error::Config(format!("no epsilon given for {c}")))?;
            if !(*eps > 0.0 && *eps < 1.0) {
                return Err(Error::InvalidHyperparameter(format!(
                    "epsilon for {c} must lie strictly between 0 and 1, got {eps}"
                )));
            }
        }
        if self.thresholds.num_classes() != k {
            return Err(Error::InvalidThreshold(format!(
                "{} thresholds define {} classes, config lists {k}",
                self.thresholds.as_slice().len(),
                self.thresholds.num_classes()
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidHyperparameter(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if let Some(m) = &self.marginal {
            if m.len() != k {
                return Err(Error::Config(format!("marginal has {} entries for {k} classes", m.len())));
            }
            ProbabilityVector::new(m.clone()).map_err(|e| Error::Config(format!("marginal: {e}")))?;
        }
        if self.gmm_components == 0 {
            return Err(Error::Config("gmm_components must be at least 1".into()));
        }
        if let Some(cf) = self.preprocess.max_cloud_fraction {
            if !(0.0..=1.0).contains(&cf) {
                return Err(Error::Config(format!("max_cloud_fraction {cf} outside [0, 1]")));
            }
        }
        if let Some(d) = self.train_dates.iter().find(|d| self.test_dates.contains(d)) {
            return Err(Error::Config(format!("{d} is both a training and a test date")));
        }
        Ok(())
    }

    /// Route used for `kind`.
    pub fn mode_for(&self, kind: ClassifierKind) -> Mode {
        self.mode.unwrap_or(match kind {
            ClassifierKind::Gmm => Mode::Rbgm,
            _ => Mode::Rbdm,
        })
    }

    pub fn marginal_pmf(&self) -> Result<Option<ProbabilityVector>> {
        self.marginal.clone().map(ProbabilityVector::new).transpose()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}
