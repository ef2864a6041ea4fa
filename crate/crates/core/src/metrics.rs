//! Multi-label evaluation: confusion counts, precision / recall / F-beta,
//! average precision and the per-class vs overall F1 pair (CF1 / OF1).
//!
//! Every ratio with a zero denominator is defined as 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ml::{LabelMatrix, ScoreMatrix};

/// Per-class confusion counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }
}

#[inline]
fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Metric used to score a binarization of one class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MetricKind {
    /// `(1+β²)·P·R / (β²·P + R)`.
    FBeta { beta: f64 },
    /// `(1+β²)·P·R / (β·P + R)`: the β-weighted denominator variant, kept
    /// for ablation against the standard form.
    FBetaLinear { beta: f64 },
    Precision,
    Recall,
}

impl Default for MetricKind {
    fn default() -> Self {
        MetricKind::FBeta { beta: 0.5 }
    }
}

impl MetricKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            MetricKind::FBeta { beta } | MetricKind::FBetaLinear { beta } => {
                if beta.is_finite() && beta > 0.0 {
                    Ok(())
                } else {
                    Err(Error::Validation(format!("F-beta requires beta > 0, got {beta}")))
                }
            }
            MetricKind::Precision | MetricKind::Recall => Ok(()),
        }
    }

    pub fn label(&self) -> String {
        match self {
            MetricKind::FBeta { beta } => format!("fbeta_{beta}"),
            MetricKind::FBetaLinear { beta } => format!("fbeta_linear_{beta}"),
            MetricKind::Precision => "precision".into(),
            MetricKind::Recall => "recall".into(),
        }
    }
}

/// F-beta from precision and recall, `0` when both are `0`.
pub fn f_beta(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let den = b2 * precision + recall;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + b2) * precision * recall / den
    }
}

/// Value of `kind` for one class's counts, in `[0, 1]`.
pub fn class_metric(counts: &ConfusionCounts, kind: MetricKind) -> f64 {
    let p = counts.precision();
    let r = counts.recall();
    match kind {
        MetricKind::Precision => p,
        MetricKind::Recall => r,
        MetricKind::FBeta { beta } => f_beta(p, r, beta),
        MetricKind::FBetaLinear { beta } => {
            let den = beta * p + r;
            if den == 0.0 {
                0.0
            } else {
                // Not bounded by 1 for β < 1; clamp so it stays a valid score.
                ((1.0 + beta * beta) * p * r / den).min(1.0)
            }
        }
    }
}

fn check_same_shape(pred: &LabelMatrix, truth: &LabelMatrix) -> Result<()> {
    if pred.shape() != truth.shape() {
        return Err(Error::dim(
            "confusion_counts",
            format!("{:?}", truth.shape()),
            format!("{:?}", pred.shape()),
        ));
    }
    Ok(())
}

/// Counts for a single class given aligned prediction / truth columns.
pub fn confusion_for_column(pred: &[u8], truth: &[u8]) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.iter().zip(truth) {
        match (p == 1, t == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}

/// Confusion counts for every class.
pub fn confusion_counts(pred: &LabelMatrix, truth: &LabelMatrix) -> Result<Vec<ConfusionCounts>> {
    check_same_shape(pred, truth)?;
    let mut counts = vec![ConfusionCounts::default(); pred.cols()];
    for r in 0..pred.rows() {
        for (k, c) in counts.iter_mut().enumerate() {
            match (pred.is_positive(r, k), truth.is_positive(r, k)) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
    }
    Ok(counts)
}

/// Indices of `scores` ranked by descending score, ties by ascending index.
pub fn rank_descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // sort_by is stable, so equal scores keep ascending index order.
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Non-interpolated average precision of one ranking.
///
/// Returns `None` when there are no positive labels.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> Result<Option<f64>> {
    if scores.len() != labels.len() {
        return Err(Error::dim("average_precision", scores.len(), labels.len()));
    }
    let positives = labels.iter().filter(|&&y| y == 1).count();
    if positives == 0 {
        return Ok(None);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in rank_descending(scores).iter().enumerate() {
        if labels[i] == 1 {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(Some(sum / positives as f64))
}

/// Per-class AP; `None` marks a class with no positive labels.
pub fn per_class_average_precision(
    scores: &ScoreMatrix,
    labels: &LabelMatrix,
) -> Result<Vec<Option<f64>>> {
    if scores.shape() != labels.shape() {
        return Err(Error::dim(
            "mean_average_precision",
            format!("{:?}", labels.shape()),
            format!("{:?}", scores.shape()),
        ));
    }
    (0..scores.cols())
        .map(|k| average_precision(&scores.column(k), &labels.column(k)))
        .collect()
}

/// Mean AP over the classes that have at least one positive.
pub fn mean_average_precision(scores: &ScoreMatrix, labels: &LabelMatrix) -> Result<f64> {
    let per_class = per_class_average_precision(scores, labels)?;
    let defined: Vec<f64> = per_class.into_iter().flatten().collect();
    if defined.is_empty() {
        return Err(Error::Validation(
            "mAP undefined: no class has a positive label".into(),
        ));
    }
    Ok(defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Per-class-averaged and overall precision, recall and F1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct F1Summary {
    pub cf1: f64,
    pub of1: f64,
    pub cp: f64,
    pub cr: f64,
    pub op: f64,
    #[serde(rename = "or")]
    pub or_: f64,
}

pub fn cf1_of1_from_counts(counts: &[ConfusionCounts]) -> F1Summary {
    if counts.is_empty() {
        return F1Summary::default();
    }
    let k = counts.len() as f64;
    let cp = counts.iter().map(ConfusionCounts::precision).sum::<f64>() / k;
    let cr = counts.iter().map(ConfusionCounts::recall).sum::<f64>() / k;
    let tp: usize = counts.iter().map(|c| c.tp).sum();
    let fp: usize = counts.iter().map(|c| c.fp).sum();
    let fn_: usize = counts.iter().map(|c| c.fn_).sum();
    let op = ratio(tp, tp + fp);
    let or_ = ratio(tp, tp + fn_);
    F1Summary {
        cf1: f_beta(cp, cr, 1.0),
        of1: f_beta(op, or_, 1.0),
        cp,
        cr,
        op,
        or_,
    }
}

/// CF1 / OF1 and their precision / recall components.
pub fn cf1_of1(pred: &LabelMatrix, truth: &LabelMatrix) -> Result<F1Summary> {
    Ok(cf1_of1_from_counts(&confusion_counts(pred, truth)?))
}

/// Binarizes scores at a single threshold (`score ≥ threshold`).
pub fn binarize(scores: &ScoreMatrix, threshold: f64) -> LabelMatrix {
    let data = scores.as_slice().iter().map(|&s| u8::from(s >= threshold)).collect();
    LabelMatrix::from_vec(scores.rows(), scores.cols(), data).expect("binary by construction")
}
