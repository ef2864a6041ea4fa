use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, TrainConfig};
use super::report::{EpochRow, ExperimentReport, PseudoLabelQuality, TestMetrics};
use super::train::{train_epoch, warmup, StepPlan, TrainState, TrainingView};
use crate::d2l::{DualModel, HeadPolicy, PatchedBatch, Temperature};
use crate::data::{generate_synthetic, save_labels, save_matrix, split_labeled, SsmllDataset};
use crate::error::{Error, Result};
use crate::metrics::{binarize, MetricKind, cf1_of1, mean_average_precision, per_class_average_precision};
use crate::ml::{LabelMatrix, ScoreMatrix};
use crate::thresholding::mat_search;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "SSMLL_OUT_DIR";

/// `$SSMLL_OUT_DIR`, or `out` when unset.
pub fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV).map_or_else(|| PathBuf::from("out"), PathBuf::from)
}

/// Test-set metrics of `scores`; CF1 / OF1 binarize at `threshold`.
pub fn score_metrics(scores: &ScoreMatrix, labels: &LabelMatrix, threshold: f64) -> Result<TestMetrics> {
    if scores.rows() == 0 {
        return Err(Error::Validation("evaluation split is empty".into()));
    }
    let map = mean_average_precision(scores, labels)?;
    let f1 = cf1_of1(&binarize(scores, threshold), labels)?;
    Ok(TestMetrics {
        map,
        cf1: f1.cf1,
        of1: f1.of1,
        cp: f1.cp,
        cr: f1.cr,
        op: f1.op,
        or_: f1.or_,
        per_class_ap: per_class_average_precision(scores, labels)?,
        threshold,
    })
}

/// Scores a split with `model` and computes mAP, CF1 and OF1.
pub fn evaluate(
    model: &DualModel,
    split: &PatchedBatch,
    labels: &LabelMatrix,
    alpha: Temperature,
    policy: HeadPolicy,
    threshold: f64,
) -> Result<(TestMetrics, ScoreMatrix)> {
    if split.is_empty() {
        return Err(Error::Validation("evaluation split is empty".into()));
    }
    let scores = model.predict(split, alpha, policy)?;
    Ok((score_metrics(&scores, labels, threshold)?, scores))
}

/// A trained model with the settings needed to score new data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub model: DualModel,
    pub alpha: f64,
    pub policy: HeadPolicy,
    pub test_threshold: f64,
}

impl SavedModel {
    pub fn predict(&self, batch: &PatchedBatch) -> Result<ScoreMatrix> {
        self.model.predict(batch, Temperature::new(self.alpha)?, self.policy)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Everything one run produced.
#[derive(Clone, Debug)]
pub struct ExperimentRun {
    pub report: ExperimentReport,
    pub test_scores: ScoreMatrix,
    pub test_labels: LabelMatrix,
    pub model: SavedModel,
}

/// Mean best-threshold F-beta of the generator heads on clean labeled data.
/// Always an F-beta (the configured one, else β = 0.5): precision or recall
/// alone saturate at 1 and would freeze early stopping.
fn monitor(model: &DualModel, data: &SsmllDataset, cfg: &TrainConfig) -> Result<f64> {
    let kind = match cfg.metric {
        m @ (MetricKind::FBeta { .. } | MetricKind::FBetaLinear { .. }) => m,
        _ => MetricKind::default(),
    };
    let scores = model.predict(&data.labeled, cfg.temperature()?, HeadPolicy::Generator)?;
    let mat = mat_search(&scores, &data.labels, kind, cfg.grid()?)?;
    Ok(mat.achieved.iter().sum::<f64>() / mat.achieved.len().max(1) as f64)
}

/// Trains on an already split dataset and evaluates the best snapshot.
pub fn train_and_evaluate(cfg: &ExperimentConfig, data: &SsmllDataset) -> Result<ExperimentRun> {
    let start = Instant::now();
    let tc = &cfg.train;
    let alpha = tc.temperature()?;
    let policy = tc.eval_policy();
    let view = TrainingView::of(data);
    let plan = StepPlan::new(tc, data.labeled.len(), data.unlabeled.len());
    let mut state = TrainState::new(tc, data.dim(), data.classes(), &plan, cfg.seeds().train);
    let warmup_losses = warmup(&mut state, view, tc, &plan)?;

    let mut best_score = monitor(state.eval_model(), data, tc)?;
    let mut best_epoch = 0;
    let mut best_model = state.eval_model().clone();
    let mut since_best = 0;
    let mut stopped_early = false;
    let mut rows = Vec::with_capacity(tc.epochs);
    for epoch in 1..=tc.epochs {
        let out = train_epoch(&mut state, view, tc, &plan)?;
        let pseudo = out
            .pseudo_labels
            .as_ref()
            .map(|pl| PseudoLabelQuality::audit(pl, data.audit.for_audit()))
            .transpose()?;
        let eval_model = state.eval_model();
        let score = monitor(eval_model, data, tc)?;
        let test_scores = eval_model.predict(&data.test, alpha, policy)?;
        rows.push(EpochRow {
            epoch,
            lr: out.lr,
            loss_labeled: out.loss_labeled,
            loss_unlabeled: out.loss_unlabeled,
            degenerate: out.thresholds.as_ref().map(|t| t.degenerate_classes()).unwrap_or_default(),
            tau: out.thresholds.map(|t| t.tau),
            labeled_metric: out
                .labeled_metric
                .map(|v| v.iter().sum::<f64>() / v.len().max(1) as f64),
            pseudo,
            monitor: score,
            test_map: mean_average_precision(&test_scores, &data.test_labels)?,
        });
        // Strict: a saturated monitor keeps the earliest snapshot.
        if score > best_score {
            best_score = score;
            best_epoch = epoch;
            best_model = eval_model.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if tc.patience.is_some_and(|p| since_best >= p) {
                stopped_early = true;
                break;
            }
        }
    }

    let (test, test_scores) = evaluate(&best_model, &data.test, &data.test_labels, alpha, policy, tc.test_threshold)?;
    let report = ExperimentReport {
        name: cfg.name.clone(),
        strategy: tc.strategy.label(),
        config: cfg.clone(),
        warmup_losses,
        epochs: rows,
        best_epoch,
        stopped_early,
        test,
        degenerate_classes: data.degenerate_classes.clone(),
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    Ok(ExperimentRun {
        report,
        test_scores,
        test_labels: data.test_labels.clone(),
        model: SavedModel {
            model: best_model,
            alpha: tc.alpha,
            policy,
            test_threshold: tc.test_threshold,
        },
    })
}

/// Builds the dataset the config describes.
pub fn build_dataset(cfg: &ExperimentConfig) -> Result<SsmllDataset> {
    cfg.validate()?;
    let corpus = generate_synthetic(&cfg.synth_config())?;
    split_labeled(&corpus, cfg.labeled_fraction, cfg.seeds().split)
}

/// Generates data, trains and evaluates. Deterministic given the config.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    let data = build_dataset(cfg)?;
    train_and_evaluate(cfg, &data)
}

/// Writes `report.json`, `trace.csv`, `tau_trace.csv`, `test_scores.csv`,
/// `test_labels.csv` and `model.json` under `dir`.
pub fn write_run(dir: impl AsRef<Path>, run: &ExperimentRun) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let put = |name: &str, text: String| {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    put("report.json", serde_json::to_string_pretty(&run.report)?)?;
    put("trace.csv", run.report.trace_csv())?;
    put("tau_trace.csv", run.report.tau_trace_csv())?;
    save_matrix(dir.join("test_scores.csv"), &run.test_scores)?;
    save_labels(dir.join("test_labels.csv"), &run.test_labels)?;
    run.model.save(dir.join("model.json"))
}

/// Reads a JSON config, runs it, and writes the outputs under `out_dir/<name>`.
pub fn run_experiment_file(cfg_path: impl AsRef<Path>, out_dir: impl AsRef<Path>) -> Result<(ExperimentRun, PathBuf)> {
    let path = cfg_path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg = ExperimentConfig::from_json(&text)?;
    let run = run_experiment(&cfg)?;
    let dir = out_dir.as_ref().join(&cfg.name);
    write_run(&dir, &run)?;
    Ok((run, dir))
}
