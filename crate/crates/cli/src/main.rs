use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;
use ssmll::data::{load_labels, load_matrix, read_split, save_matrix, write_dataset};
use ssmll::harness::{
    build_dataset, run_experiment_file, run_sweep, score_metrics, ExperimentConfig, SavedModel,
    SweepConfig, OUT_DIR_ENV,
};
use ssmll::metrics::{binarize, MetricKind};
use ssmll::oracle::{brute_force_thresholds, naive_metrics};
use ssmll::thresholding::{mat_search, GridSpec};
use ssmll::Error;

/// Semi-supervised multi-label training, threshold calibration and metrics.
#[derive(Parser)]
#[command(name = "ssmll", version)]
struct Cli {
    /// Output directory.
    #[arg(long, global = true, env = OUT_DIR_ENV, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Fbeta,
    FbetaLinear,
    Precision,
    Recall,
}

#[derive(Subcommand)]
enum Command {
    /// Generate and split the dataset an experiment config describes.
    GenerateData { config: PathBuf },
    /// Run one experiment and write its report, traces and model.
    Train { config: PathBuf },
    /// Score a labeled split directory with a saved model.
    Evaluate { model: PathBuf, split: PathBuf },
    /// Per-class metric-adaptive thresholds from scores and labels.
    Calibrate {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, value_enum, default_value = "fbeta")]
        metric: MetricArg,
        #[arg(long, default_value_t = 0.5)]
        beta: f64,
        #[arg(long, default_value_t = 0.01)]
        step: f64,
        /// Output file (default: <out-dir>/thresholds.json).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Cross-check against the exhaustive search.
        #[arg(long)]
        verify: bool,
    },
    /// mAP, CF1 and OF1 of a score matrix.
    Metrics {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Output file (default: <out-dir>/report.json).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Cross-check against the naive implementations.
        #[arg(long)]
        verify: bool,
    },
    /// Run a sweep of experiments and write comparison tables.
    Compare { sweep: PathBuf },
}

enum Failure {
    Lib(Error),
    Verify(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type CliResult = Result<(), Failure>;

fn read_text(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|e| Error::Config {
        field: path.display().to_string(),
        message: e.to_string(),
    })
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), Error> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    fs::write(path, text + "\n").map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn metric_kind(m: MetricArg, beta: f64) -> MetricKind {
    match m {
        MetricArg::Fbeta => MetricKind::FBeta { beta },
        MetricArg::FbetaLinear => MetricKind::FBetaLinear { beta },
        MetricArg::Precision => MetricKind::Precision,
        MetricArg::Recall => MetricKind::Recall,
    }
}

fn config_error(field: &str, e: Error) -> Error {
    Error::Config {
        field: field.into(),
        message: e.to_string(),
    }
}

fn run(cli: Cli) -> CliResult {
    let out_dir = cli.out_dir;
    match cli.command {
        Command::GenerateData { config } => {
            let cfg = ExperimentConfig::from_json(&read_text(&config)?)?;
            let data = build_dataset(&cfg)?;
            let dir = out_dir.join(&cfg.name).join("data");
            let manifest = write_dataset(&dir, &data, &cfg.synth_config(), cfg.labeled_fraction, cfg.seeds().split)?;
            println!("{}", manifest.display());
        }
        Command::Train { config } => {
            let (run, dir) = run_experiment_file(&config, &out_dir)?;
            let t = &run.report.test;
            println!(
                "{}",
                json!({"dir": dir, "map": t.map, "cf1": t.cf1, "of1": t.of1, "best_epoch": run.report.best_epoch})
            );
        }
        Command::Evaluate { model, split } => {
            let model = SavedModel::load(&model)?;
            let loaded = read_split(&split)?;
            let labels = loaded
                .labels
                .ok_or_else(|| Error::Validation(format!("{} has no labels", split.display())))?;
            let scores = model.predict(&loaded.batch)?;
            let metrics = score_metrics(&scores, &labels, model.test_threshold)?;
            save_matrix(out_dir.join("scores.csv"), &scores)?;
            let value = serde_json::to_value(&metrics).map_err(Error::from)?;
            write_json(&out_dir.join("evaluation.json"), &value)?;
            println!("{value}");
        }
        Command::Calibrate {
            scores,
            labels,
            metric,
            beta,
            step,
            out,
            verify,
        } => {
            let kind = metric_kind(metric, beta);
            kind.validate().map_err(|e| config_error("metric", e))?;
            let grid = GridSpec::new(step).map_err(|e| config_error("step", e))?;
            let s = load_matrix(&scores)?;
            let y = load_labels(&labels)?;
            let mat = mat_search(&s, &y, kind, grid)?;
            if verify {
                let (tau, achieved) = brute_force_thresholds(&s, &y, kind, grid)?;
                if tau != mat.thresholds || achieved != mat.achieved {
                    return Err(Failure::Verify("thresholds differ from exhaustive search".into()));
                }
            }
            let value = json!({
                "metric": kind,
                "step": step,
                "tau": mat.thresholds.tau,
                "degenerate": mat.thresholds.degenerate_classes(),
                "achieved": mat.achieved,
                "verified": verify,
            });
            write_json(&out.unwrap_or_else(|| out_dir.join("thresholds.json")), &value)?;
        }
        Command::Metrics {
            scores,
            labels,
            threshold,
            out,
            verify,
        } => {
            if !(0.0..=1.0).contains(&threshold) {
                return Err(Error::Config {
                    field: "threshold".into(),
                    message: "must lie in [0, 1]".into(),
                }
                .into());
            }
            let s = load_matrix(&scores)?;
            let y = load_labels(&labels)?;
            let m = score_metrics(&s, &y, threshold)?;
            if verify {
                let naive = naive_metrics(&s, &binarize(&s, threshold), &y)?;
                let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
                let ok = naive.map.is_some_and(|v| close(v, m.map))
                    && close(naive.cf1, m.cf1)
                    && close(naive.of1, m.of1)
                    && close(naive.cp, m.cp)
                    && close(naive.cr, m.cr)
                    && close(naive.op, m.op)
                    && close(naive.or, m.or_);
                if !ok {
                    return Err(Failure::Verify("metrics differ from naive implementation".into()));
                }
            }
            let mut value = serde_json::to_value(&m).map_err(Error::from)?;
            value["verified"] = json!(verify);
            write_json(&out.unwrap_or_else(|| out_dir.join("report.json")), &value)?;
        }
        Command::Compare { sweep } => {
            let cfg = SweepConfig::from_json(&read_text(&sweep)?)?;
            let dir = out_dir.join(&cfg.name);
            let result = run_sweep(&cfg, Some(&dir))?;
            print!("{}", result.summary_csv());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
        Err(Failure::Verify(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(1)
        }
    }
}
