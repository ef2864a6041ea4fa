use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::data::format_real;
use crate::error::Result;
use crate::metrics::{cf1_of1, F1Summary};
use crate::ml::LabelMatrix;

/// Quality of one epoch's pseudo-labels against the audit labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelQuality {
    pub cf1: f64,
    pub cp: f64,
    pub cr: f64,
    pub of1: f64,
    pub op: f64,
    pub or_: f64,
    pub positives: usize,
}

impl PseudoLabelQuality {
    pub fn audit(pseudo: &LabelMatrix, audit: &LabelMatrix) -> Result<Self> {
        let s: F1Summary = cf1_of1(pseudo, audit)?;
        Ok(Self {
            cf1: s.cf1,
            cp: s.cp,
            cr: s.cr,
            of1: s.of1,
            op: s.op,
            or_: s.or_,
            positives: pseudo.count_positives(),
        })
    }
}

/// One row of the per-epoch trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub lr: f64,
    pub loss_labeled: f64,
    pub loss_unlabeled: f64,
    /// Per-class thresholds in force this epoch (absent for top-k and
    /// supervised runs).
    pub tau: Option<Vec<f64>>,
    pub degenerate: Vec<usize>,
    /// Mean labeled-set metric achieved by the thresholds.
    pub labeled_metric: Option<f64>,
    pub pseudo: Option<PseudoLabelQuality>,
    /// Early-stopping monitor: mean best-threshold metric of the evaluation
    /// generator heads on clean labeled data.
    pub monitor: f64,
    pub test_map: f64,
}

/// Test-set metrics of a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestMetrics {
    pub map: f64,
    pub cf1: f64,
    pub of1: f64,
    pub cp: f64,
    pub cr: f64,
    pub op: f64,
    pub or_: f64,
    /// `None` marks a class without test positives (excluded from mAP).
    pub per_class_ap: Vec<Option<f64>>,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub strategy: String,
    pub config: ExperimentConfig,
    pub warmup_losses: Vec<f64>,
    pub epochs: Vec<EpochRow>,
    /// Epoch whose parameters were evaluated (0 = straight after warm-up).
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub test: TestMetrics,
    /// Classes without labeled positives.
    pub degenerate_classes: Vec<usize>,
    pub wall_time_secs: f64,
}

impl ExperimentReport {
    /// Pseudo-label quality of the last epoch that produced pseudo-labels.
    pub fn final_pseudo_quality(&self) -> Option<&PseudoLabelQuality> {
        self.epochs.iter().rev().find_map(|r| r.pseudo.as_ref())
    }

    /// JSON with the wall-time field zeroed, for reproducibility checks.
    pub fn canonical_json(&self) -> Result<String> {
        let mut r = self.clone();
        r.wall_time_secs = 0.0;
        Ok(serde_json::to_string_pretty(&r)?)
    }

    pub fn trace_csv(&self) -> String {
        let mut s = String::from(
            "epoch,lr,loss_labeled,loss_unlabeled,labeled_metric,monitor,test_map,\
             pseudo_cf1,pseudo_cp,pseudo_cr,pseudo_of1,pseudo_positives\n",
        );
        let opt = |v: Option<f64>| v.map(format_real).unwrap_or_default();
        for r in &self.epochs {
            let p = r.pseudo.as_ref();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.epoch,
                format_real(r.lr),
                format_real(r.loss_labeled),
                format_real(r.loss_unlabeled),
                opt(r.labeled_metric),
                format_real(r.monitor),
                format_real(r.test_map),
                opt(p.map(|q| q.cf1)),
                opt(p.map(|q| q.cp)),
                opt(p.map(|q| q.cr)),
                opt(p.map(|q| q.of1)),
                p.map(|q| q.positives.to_string()).unwrap_or_default(),
            );
        }
        s
    }

    /// Thresholds per epoch; degenerate classes are written as `degenerate`.
    pub fn tau_trace_csv(&self) -> String {
        let k = self.config.data.classes;
        let mut s = String::from("epoch");
        for j in 0..k {
            let _ = write!(s, ",class_{j}");
        }
        s.push('\n');
        for r in &self.epochs {
            let Some(tau) = &r.tau else { continue };
            let _ = write!(s, "{}", r.epoch);
            for (j, t) in tau.iter().enumerate() {
                if r.degenerate.contains(&j) {
                    s.push_str(",degenerate");
                } else {
                    let _ = write!(s, ",{}", format_real(*t));
                }
            }
            s.push('\n');
        }
        s
    }
}
