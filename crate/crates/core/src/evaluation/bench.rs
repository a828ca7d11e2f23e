//! Wall-clock cost of the recursion relative to the instantaneous classifier.
//!
//! Everything is measured single-threaded. Reported times are medians over
//! the repetitions for one full-image pass.

use std::fmt::Write as _;
use std::time::Instant;

use crate::classifiers::{ClassifierKind, ClassifierModel};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result, StageExt};
use crate::experiment::{prepare_data, recursion_settings, train_models};
use crate::recursion::{recursion_input, RecursionSettings, RecursionState};
use crate::types::Frame;

pub const MIN_REPETITIONS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct TimingRecord {
    pub config: String,
    pub classifier: ClassifierKind,
    pub pixels: usize,
    /// One recursion update over the image (input preparation included).
    pub recursion_seconds: f64,
    /// One instantaneous classification of the image.
    pub baseline_seconds: f64,
    /// Recursion update on the first date of a fresh state.
    pub step_t1_seconds: f64,
    /// Recursion update on the 50th date.
    pub step_t50_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub repetitions: usize,
    pub workers: usize,
    pub host: String,
    pub records: Vec<TimingRecord>,
}

impl BenchReport {
    /// Recursion row and baseline row, one column per classifier.
    pub fn table(&self) -> String {
        let mut s = String::from("row");
        for r in &self.records {
            let _ = write!(s, ",{}", r.classifier);
        }
        s.push('\n');
        for (name, pick) in [
            ("recursion", (|r: &TimingRecord| r.recursion_seconds) as fn(&TimingRecord) -> f64),
            ("baseline", |r: &TimingRecord| r.baseline_seconds),
        ] {
            s.push_str(name);
            for r in &self.records {
                let _ = write!(s, ",{:.6e}", pick(r));
            }
            s.push('\n');
        }
        s
    }

    pub fn detail_csv(&self) -> String {
        let mut s = String::from(
            "config,classifier,pixels,recursion_s,baseline_s,step_t1_s,step_t50_s,workers,repetitions,host\n",
        );
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{:.6e},{:.6e},{:.6e},{:.6e},{},{},{}",
                r.config,
                r.classifier,
                r.pixels,
                r.recursion_seconds,
                r.baseline_seconds,
                r.step_t1_seconds,
                r.step_t50_seconds,
                self.workers,
                self.repetitions,
                self.host
            );
        }
        s
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn host() -> String {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!("{}-{} ({threads} threads)", std::env::consts::OS, std::env::consts::ARCH)
}

/// Times one classifier on `frame`.
pub fn bench_model(
    config_name: &str,
    kind: ClassifierKind,
    model: &ClassifierModel,
    frame: &Frame,
    settings: &RecursionSettings,
    repetitions: usize,
) -> Result<TimingRecord> {
    if repetitions < MIN_REPETITIONS {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_REPETITIONS} repetitions, got {repetitions}"
        )));
    }
    let k = model.num_classes();
    let pixels = frame.image.pixel_count();
    let marginal = settings.marginal_vec()?;
    let out_kind = model.output_kind();

    let mut baseline = Vec::with_capacity(repetitions);
    let mut inst_out = Vec::new();
    for _ in 0..repetitions {
        let start = Instant::now();
        inst_out = model.instantaneous_frame(frame, 1)?;
        baseline.push(start.elapsed().as_secs_f64());
    }

    let mut inst = vec![0.0; pixels * k];
    let mut pass = |state: &mut RecursionState| -> Result<f64> {
        let start = Instant::now();
        recursion_input(&inst_out, out_kind, settings.mode, &marginal, settings.lambda, &mut inst);
        state.step(&inst, settings.mode, &marginal, &settings.transition, 1)?;
        Ok(start.elapsed().as_secs_f64())
    };

    let mut first = Vec::with_capacity(repetitions);
    let mut fiftieth = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let mut state = RecursionState::new(pixels, k)?;
        first.push(pass(&mut state)?);
        for _ in 1..49 {
            pass(&mut state)?;
        }
        fiftieth.push(pass(&mut state)?);
    }
    let step_t1 = median(first.clone());
    let step_t50 = median(fiftieth.clone());
    first.extend(fiftieth);
    Ok(TimingRecord {
        config: config_name.to_string(),
        classifier: kind,
        pixels,
        recursion_seconds: median(first),
        baseline_seconds: median(baseline),
        step_t1_seconds: step_t1,
        step_t50_seconds: step_t50,
    })
}

pub fn timing_bench(config: &ExperimentConfig, repetitions: usize) -> Result<BenchReport> {
    if repetitions < MIN_REPETITIONS {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_REPETITIONS} repetitions, got {repetitions}"
        )));
    }
    let data = prepare_data(config)?;
    let models = train_models(config, &data.train)?;
    let frame = &data.test.frames()[0];
    let mut records = Vec::with_capacity(models.len());
    for (kind, model) in &models {
        let settings = recursion_settings(config, *kind, config.epsilon[kind], 1)?;
        records.push(bench_model(&config.name, *kind, model, frame, &settings, repetitions).stage("bench")?);
    }
    Ok(BenchReport {
        repetitions,
        workers: 1,
        host: host(),
        records,
    })
}
