//! End-to-end experiment orchestration: load, preprocess, train, classify,
//! evaluate and write artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::classifiers::gmm::{fit_with as fit_gmm, ComponentChoice, GmmSettings};
use crate::classifiers::index::index_image;
use crate::classifiers::logreg::{fit_with as fit_lr, LrSettings};
use crate::classifiers::persist::{load_model, save_model};
use crate::classifiers::{sic_from_thresholds, ClassifierKind, ClassifierModel, TrainingSet};
use crate::config::{ExperimentConfig, LabelSource};
use crate::error::{Error, Result, StageExt};
use crate::evaluation::metrics::{balanced_accuracy, error_map};
use crate::pipeline::raster::{write_labels, write_posteriors, PosteriorCube};
use crate::pipeline::{bias_correct, crop_stack, filter_frames, load_stack, split_dates, StackManifest};
use crate::recursion::{classify_stack, RecursionSettings, StackClassification};
use crate::types::{ImageStack, TransitionModel};

/// Loaded, preprocessed and split data for one config.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: ImageStack,
    pub test: ImageStack,
}

pub fn prepare_data(config: &ExperimentConfig) -> Result<PreparedData> {
    config.validate()?;
    let manifest = StackManifest::load(&config.resolve(&config.manifest)).stage("load")?;
    let mut stack = load_stack(&manifest).stage("load")?;

    let pre = &config.preprocess;
    if pre.max_cloud_fraction.is_some() || !pre.exclude_dates.is_empty() {
        stack = filter_frames(&stack, pre.max_cloud_fraction.unwrap_or(1.0), &pre.exclude_dates)
            .stage("preprocess")?;
    }
    if let Some(rect) = &pre.crop {
        stack = crop_stack(&stack, rect).stage("preprocess")?;
    }
    if let Some(region) = &pre.bias_region {
        stack = bias_correct(&stack, region).stage("preprocess")?;
    }

    let test_dates = if config.test_dates.is_empty() {
        stack
            .dates()
            .into_iter()
            .filter(|d| !config.train_dates.contains(d))
            .collect()
    } else {
        config.test_dates.clone()
    };
    let (train, test) = split_dates(&stack, &config.train_dates, &test_dates).stage("split")?;
    if test.is_empty() {
        return Err(Error::InsufficientData("no test frames left after preprocessing".into()).in_stage("split"));
    }
    Ok(PreparedData { train, test })
}

/// Builds one model per configured classifier: SIC from the thresholds, GMM
/// and LR fitted on the training dates, external posteriors passed through.
pub fn train_models(config: &ExperimentConfig, train: &ImageStack) -> Result<Vec<(ClassifierKind, ClassifierModel)>> {
    let k = config.classes.len();
    let mut out = Vec::with_capacity(config.classifiers.len());
    let needs_training = config
        .classifiers
        .iter()
        .any(|c| matches!(c, ClassifierKind::Gmm | ClassifierKind::Lr));
    let training = if needs_training && config.model_dir.is_none() {
        let frames: Vec<_> = train.frames().iter().collect();
        let set = TrainingSet::collect(&frames, k, config.max_train_samples, config.seed, |f| match config.train_labels {
            LabelSource::Pseudo => {
                let (values, _) = index_image(&f.image, config.index)?;
                Ok(values.iter().map(|&y| config.thresholds.classify(y) as u8).collect())
            }
            LabelSource::Truth => f
                .truth
                .as_ref()
                .map(|t| t.labels().to_vec())
                .ok_or_else(|| Error::InsufficientData(format!("training date {} has no ground truth", f.date))),
        })
        .stage("train")?;
        Some(set)
    } else {
        None
    };

    for &kind in &config.classifiers {
        let model = if let Some(dir) = &config.model_dir {
            let model = load_model(&config.resolve(dir).join(format!("{kind}.rbcm"))).stage("train")?;
            if model.kind() != kind || model.num_classes() != k {
                return Err(Error::Config(format!("stored {kind} model does not match the config")));
            }
            model
        } else {
            match kind {
                ClassifierKind::Sic => {
                    ClassifierModel::Sic(sic_from_thresholds(config.thresholds.as_slice(), config.index)?)
                }
                ClassifierKind::External => ClassifierModel::External { num_classes: k },
                ClassifierKind::Gmm => {
                    let set = training.as_ref().expect("training set");
                    let settings = GmmSettings::new(
                        ComponentChoice::Fixed(vec![config.gmm_components; k]),
                        config.seed,
                    );
                    let fit = fit_gmm(&set.by_class(), &settings).stage("train")?;
                    ClassifierModel::Gmm(fit.model.with_bands(set.bands.clone())?)
                }
                ClassifierKind::Lr => {
                    let set = training.as_ref().expect("training set");
                    let fit = fit_lr(&set.features, &set.labels, k, &LrSettings::new(config.seed)).stage("train")?;
                    ClassifierModel::Lr(fit.model.with_bands(set.bands.clone())?)
                }
            }
        };
        out.push((kind, model));
    }
    Ok(out)
}

/// Writes trained models as `<dir>/<kind>.rbcm`.
pub fn save_models(models: &[(ClassifierKind, ClassifierModel)], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    models
        .iter()
        .map(|(kind, model)| {
            let path = dir.join(format!("{kind}.rbcm"));
            save_model(model, &path)?;
            Ok(path)
        })
        .collect()
}

pub fn recursion_settings(
    config: &ExperimentConfig,
    kind: ClassifierKind,
    epsilon: f64,
    workers: usize,
) -> Result<RecursionSettings> {
    let transition = TransitionModel::new(config.classes.len(), epsilon)?;
    let mut s = RecursionSettings::new(transition, config.lambda, config.mode_for(kind)).with_workers(workers);
    s.marginal = config.marginal_pmf()?;
    Ok(s)
}

/// Per-date accuracies of one classifier run.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyRow {
    pub classifier: ClassifierKind,
    pub date: chrono::NaiveDate,
    pub epsilon: f64,
    pub recursive: f64,
    pub instantaneous: f64,
}

/// Balanced accuracies on every date that has ground truth.
pub fn score(
    kind: ClassifierKind,
    epsilon: f64,
    result: &StackClassification,
    test: &ImageStack,
) -> Result<Vec<AccuracyRow>> {
    let mut rows = Vec::new();
    for (i, frame) in test.frames().iter().enumerate() {
        if let Some(truth) = &frame.truth {
            rows.push(AccuracyRow {
                classifier: kind,
                date: frame.date,
                epsilon,
                recursive: balanced_accuracy(&result.recursive[i], truth)?,
                instantaneous: balanced_accuracy(&result.instantaneous[i], truth)?,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides every classifier's configured transition hyperparameter.
    pub epsilon: Option<f64>,
    pub workers: usize,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub rows: Vec<AccuracyRow>,
    pub files: Vec<PathBuf>,
}

pub fn run_experiment(config: &ExperimentConfig, out: &Path, options: &RunOptions) -> Result<RunSummary> {
    config.validate()?;
    if let Some(eps) = options.epsilon {
        TransitionModel::new(config.classes.len(), eps)?;
    }
    let data = prepare_data(config)?;
    let models = train_models(config, &data.train)?;
    let workers = options.workers.max(1);
    fs::create_dir_all(out)?;

    let mut rows = Vec::new();
    let mut files = Vec::new();
    for (kind, model) in &models {
        let eps = options.epsilon.unwrap_or(config.epsilon[kind]);
        let settings = recursion_settings(config, *kind, eps, workers)?;
        let result = classify_stack(&data.test, model, &settings).stage("classify")?;
        files.extend(write_classification(out, *kind, &result, &data.test).stage("write")?);
        rows.extend(score(*kind, eps, &result, &data.test).stage("evaluate")?);
    }

    let table = out.join("accuracy.csv");
    fs::write(&table, accuracy_csv(&rows))?;
    files.push(table);
    let meta = out.join("metadata.toml");
    fs::write(&meta, metadata(config, options)?)?;
    files.push(meta);
    Ok(RunSummary { rows, files })
}

fn write_classification(
    out: &Path,
    kind: ClassifierKind,
    result: &StackClassification,
    test: &ImageStack,
) -> Result<Vec<PathBuf>> {
    let dir = out.join(kind.name());
    let rec_dir = dir.join("recursive");
    let inst_dir = dir.join("instantaneous");
    let err_dir = dir.join("errors");
    for d in [&rec_dir, &inst_dir, &err_dir] {
        fs::create_dir_all(d)?;
    }
    let mut files = Vec::new();
    for (i, frame) in test.frames().iter().enumerate() {
        let rec = rec_dir.join(format!("{}.rbcl", frame.date));
        write_labels(&rec, &result.recursive[i])?;
        let inst = inst_dir.join(format!("{}.rbcl", frame.date));
        write_labels(&inst, &result.instantaneous[i])?;
        files.extend([rec, inst]);
        if let Some(truth) = &frame.truth {
            for (tag, pred) in [("recursive", &result.recursive[i]), ("instantaneous", &result.instantaneous[i])] {
                let p = err_dir.join(format!("{}_{tag}.rbcl", frame.date));
                write_labels(&p, &error_map(pred, truth)?)?;
                files.push(p);
            }
        }
    }
    for (name, blocks) in [
        ("posteriors.rbcp", &result.posteriors),
        ("instantaneous_posteriors.rbcp", &result.instantaneous_posteriors),
    ] {
        let cube = PosteriorCube::from_pixel_major(result.width, result.height, result.num_classes, blocks)?;
        let p = dir.join(name);
        write_posteriors(&p, &cube)?;
        files.push(p);
    }
    Ok(files)
}

pub fn accuracy_csv(rows: &[AccuracyRow]) -> String {
    let mut s = String::from("classifier,date,epsilon,recursive,instantaneous\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{:.6},{:.6}",
            r.classifier, r.date, r.epsilon, r.recursive, r.instantaneous
        );
    }
    s
}

pub fn config_digest(config: &ExperimentConfig) -> Result<String> {
    let text = config.to_toml()?;
    let digest = Sha256::digest(text.as_bytes());
    Ok(digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    }))
}

fn metadata(config: &ExperimentConfig, options: &RunOptions) -> Result<String> {
    let mut s = String::new();
    let _ = writeln!(s, "name = {:?}", config.name);
    let _ = writeln!(s, "config_sha256 = {:?}", config_digest(config)?);
    let _ = writeln!(s, "seed = {}", config.seed);
    let _ = writeln!(s, "version = {:?}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "lambda = {}", config.lambda);
    let _ = writeln!(s, "workers = {}", options.workers.max(1));
    let _ = writeln!(s, "transition = \"diagonal 1-eps, off-diagonal eps/(K-1)\"");
    let _ = writeln!(s, "\n[epsilon]");
    for kind in &config.classifiers {
        let eps = options.epsilon.unwrap_or(config.epsilon[kind]);
        let _ = writeln!(s, "{kind} = {eps}");
    }
    let _ = writeln!(s, "\n[mode]");
    for kind in &config.classifiers {
        let _ = writeln!(s, "{kind} = \"{}\"", config.mode_for(*kind));
    }
    Ok(s)
}
