use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rbc_core::config::ExperimentConfig;
use rbc_core::evaluation::{balanced_accuracy, epsilon_sweep, timing_bench};
use rbc_core::experiment::{prepare_data, run_experiment, save_models, train_models, RunOptions};
use rbc_core::pipeline::{load_stack, read_labels, StackManifest};
use rbc_core::synth::{write_synthetic, SynthSpec};
use rbc_core::{Error, Result};

/// Recursive Bayesian classification of satellite image time series.
#[derive(Debug, Parser)]
#[command(name = "rbc", version)]
struct Cli {
    /// Directory that receives every output.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load and validate a stack manifest and summarize its frames.
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Fit the configured classifiers and store them as model files.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Classify the test dates and write maps, posteriors and accuracies.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Use this transition hyperparameter for every classifier.
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Mean balanced accuracy over a grid of transition hyperparameters.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated, strictly increasing values in (0, 1).
        #[arg(long, value_delimiter = ',', required = true)]
        eps: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Time the recursion against the instantaneous classifiers.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 5)]
        reps: usize,
    },
    /// Balanced accuracy of label rasters against truth rasters with the same file names.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Generate a synthetic stack with ground truth.
    Synth {
        #[arg(long)]
        spec: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cli: &Cli) -> Result<()> {
    let out = &cli.out;
    fs::create_dir_all(out)?;
    match &cli.command {
        Command::Ingest { manifest } => ingest(manifest, out),
        Command::Train { config } => {
            let config = ExperimentConfig::load(config)?;
            let data = prepare_data(&config)?;
            let models = train_models(&config, &data.train)?;
            for path in save_models(&models, &out.join("models"))? {
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::Run { config, epsilon, workers } => {
            let config = ExperimentConfig::load(config)?;
            let options = RunOptions {
                epsilon: *epsilon,
                workers: *workers,
            };
            let summary = run_experiment(&config, out, &options)?;
            for r in &summary.rows {
                println!(
                    "{:<4} {} recursive {:.4} instantaneous {:.4}",
                    r.classifier, r.date, r.recursive, r.instantaneous
                );
            }
            println!("wrote {} files under {}", summary.files.len(), out.display());
            Ok(())
        }
        Command::Sweep { config, eps, workers } => {
            let config = ExperimentConfig::load(config)?;
            let result = epsilon_sweep(&config, eps, *workers)?;
            fs::write(out.join("sweep.csv"), result.summary_csv())?;
            fs::write(out.join("sweep_dates.csv"), result.rows_csv())?;
            print!("{}", result.summary_csv());
            for kind in &result.classifiers {
                if let Some(best) = result.best_epsilon(*kind) {
                    println!("best epsilon for {kind}: {best}");
                }
            }
            Ok(())
        }
        Command::Bench { config, reps } => {
            let config = ExperimentConfig::load(config)?;
            let report = timing_bench(&config, *reps)?;
            fs::write(out.join("bench.csv"), report.table())?;
            fs::write(out.join("bench_detail.csv"), report.detail_csv())?;
            print!("{}", report.table());
            for r in &report.records {
                println!(
                    "{}: step t=1 {:.3e} s, t=50 {:.3e} s",
                    r.classifier, r.step_t1_seconds, r.step_t50_seconds
                );
            }
            Ok(())
        }
        Command::Eval { pred, truth } => eval(pred, truth, out),
        Command::Synth { spec } => {
            let spec = SynthSpec::load(spec)?;
            let manifest = write_synthetic(&spec, out)?;
            println!("{}", manifest.display());
            Ok(())
        }
    }
}

fn ingest(manifest: &Path, out: &Path) -> Result<()> {
    let m = StackManifest::load(manifest)?;
    let stack = load_stack(&m)?;
    let mut csv = String::from("date,cloud_fraction,truth,external_posterior");
    for band in stack.bands() {
        csv.push_str(&format!(",mean_{}", band.id()));
    }
    csv.push('\n');
    for f in stack.frames() {
        csv.push_str(&format!(
            "{},{},{},{}",
            f.date,
            f.cloud_fraction.map(|c| c.to_string()).unwrap_or_default(),
            u8::from(f.truth.is_some()),
            u8::from(f.external_posterior.is_some())
        ));
        for b in 0..stack.bands().len() {
            let values = f.image.band_at(b);
            csv.push_str(&format!(",{:.6}", values.iter().sum::<f64>() / values.len() as f64));
        }
        csv.push('\n');
    }
    fs::write(out.join("ingest.csv"), &csv)?;
    let (w, h) = stack.dims().unwrap_or((0, 0));
    println!("{} frames of {w}x{h} pixels, bands {:?}", stack.len(), stack.bands());
    Ok(())
}

fn eval(pred: &Path, truth: &Path, out: &Path) -> Result<()> {
    let mut names: Vec<_> = fs::read_dir(pred)
        .map_err(|e| Error::Load {
            path: pred.to_path_buf(),
            reason: e.to_string(),
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "rbcl"))
        .filter_map(|p| p.file_name().map(|n| n.to_owned()))
        .collect();
    names.sort();
    let mut csv = String::from("file,balanced_accuracy\n");
    let mut scores = Vec::new();
    for name in names {
        let t = truth.join(&name);
        if !t.exists() {
            continue;
        }
        let ba = balanced_accuracy(&read_labels(&pred.join(&name))?, &read_labels(&t)?)?;
        csv.push_str(&format!("{},{ba:.6}\n", name.to_string_lossy()));
        scores.push(ba);
    }
    if scores.is_empty() {
        return Err(Error::Evaluation(format!(
            "no label raster in {} has a counterpart in {}",
            pred.display(),
            truth.display()
        )));
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    csv.push_str(&format!("mean,{mean:.6}\n"));
    fs::write(out.join("eval.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}
