//! Slow, literal reference implementations.
//!
//! Nothing here calls into `metrics`, `thresholding` or `losses`; only the
//! plain data types are shared. Tests and the CLI `--verify` flags compare the
//! production code against these.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricKind;
use crate::ml::{LabelMatrix, ScoreMatrix};
use crate::thresholding::{GridSpec, ThresholdVector};

fn div0(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Metric value of a binary prediction column against truth, recomputed from
/// scratch.
fn column_metric(pred: &[bool], truth: &[bool], kind: MetricKind) -> f64 {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for i in 0..pred.len() {
        if pred[i] && truth[i] {
            tp += 1;
        }
        if pred[i] && !truth[i] {
            fp += 1;
        }
        if !pred[i] && truth[i] {
            fn_ += 1;
        }
    }
    let p = div0(tp as f64, (tp + fp) as f64);
    let r = div0(tp as f64, (tp + fn_) as f64);
    match kind {
        MetricKind::Precision => p,
        MetricKind::Recall => r,
        MetricKind::FBeta { beta } => {
            let b2 = beta * beta;
            div0((1.0 + b2) * p * r, b2 * p + r)
        }
        MetricKind::FBetaLinear { beta } => div0((1.0 + beta * beta) * p * r, beta * p + r).min(1.0),
    }
}

/// Exhaustive threshold search: thresholds plus the metric achieved per class.
pub fn brute_force_thresholds(
    scores: &ScoreMatrix,
    labels: &LabelMatrix,
    kind: MetricKind,
    grid: GridSpec,
) -> Result<(ThresholdVector, Vec<f64>)> {
    if scores.shape() != labels.shape() {
        return Err(Error::dim("brute_force_thresholds", format!("{:?}", labels.shape()), format!("{:?}", scores.shape())));
    }
    if scores.rows() == 0 {
        return Err(Error::Validation("empty labeled set".into()));
    }
    let n = scores.rows();
    let mut tau = Vec::new();
    let mut degenerate = Vec::new();
    let mut achieved = Vec::new();
    for k in 0..scores.cols() {
        let truth: Vec<bool> = (0..n).map(|i| labels.get(i, k) == 1).collect();
        if !truth.iter().any(|&t| t) {
            tau.push(1.0);
            degenerate.push(true);
            achieved.push(0.0);
            continue;
        }
        let mut best_tau = f64::NAN;
        let mut best_value = f64::NEG_INFINITY;
        for j in 0..grid.len() {
            let t = grid.point(j);
            let pred: Vec<bool> = (0..n).map(|i| scores.get(i, k) >= t).collect();
            let v = column_metric(&pred, &truth, kind);
            if v > best_value {
                best_value = v;
                best_tau = t;
            }
        }
        tau.push(best_tau);
        degenerate.push(false);
        achieved.push(best_value);
    }
    Ok((ThresholdVector { tau, degenerate }, achieved))
}

/// Central-difference gradient of `f` at `point`.
pub fn finite_diff_grad(f: impl Fn(&[f64]) -> f64, point: &[f64], eps: f64) -> Result<Vec<f64>> {
    if !(eps > 0.0) {
        return Err(Error::Validation(format!("finite-difference step must be > 0, got {eps}")));
    }
    let mut probe = point.to_vec();
    let mut grad = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        probe[i] = point[i] + eps;
        let up = f(&probe);
        probe[i] = point[i] - eps;
        let down = f(&probe);
        probe[i] = point[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite { index: i });
        }
        grad.push((up - down) / (2.0 * eps));
    }
    Ok(grad)
}

/// Every metric the toolkit reports, computed the long way.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NaiveMetrics {
    pub map: Option<f64>,
    pub per_class_ap: Vec<Option<f64>>,
    pub cf1: f64,
    pub of1: f64,
    pub cp: f64,
    pub cr: f64,
    pub op: f64,
    pub or: f64,
    pub per_class_precision: Vec<f64>,
    pub per_class_recall: Vec<f64>,
}

/// AP where an item's rank is one plus the number of items ahead of it
/// (higher score, or equal score with a lower index).
fn naive_ap(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let positives: Vec<usize> = (0..scores.len()).filter(|&i| labels[i] == 1).collect();
    if positives.is_empty() {
        return None;
    }
    let mut total = 0.0;
    for &i in &positives {
        let mut rank = 0usize;
        let mut hits_at_or_above = 0usize;
        for j in 0..scores.len() {
            let ahead = scores[j] > scores[i] || (scores[j] == scores[i] && j <= i);
            if ahead {
                rank += 1;
                if labels[j] == 1 {
                    hits_at_or_above += 1;
                }
            }
        }
        total += hits_at_or_above as f64 / rank as f64;
    }
    Some(total / positives.len() as f64)
}

/// mAP from `scores`, and CF1 / OF1 family from `pred` (both against `truth`).
pub fn naive_metrics(scores: &ScoreMatrix, pred: &LabelMatrix, truth: &LabelMatrix) -> Result<NaiveMetrics> {
    if scores.shape() != truth.shape() || pred.shape() != truth.shape() {
        return Err(Error::dim("naive_metrics", format!("{:?}", truth.shape()), format!("{:?} / {:?}", scores.shape(), pred.shape())));
    }
    let (n, kk) = truth.shape();
    let mut per_class_ap = Vec::new();
    let mut precision = Vec::new();
    let mut recall = Vec::new();
    let (mut stp, mut sfp, mut sfn) = (0.0, 0.0, 0.0);
    for k in 0..kk {
        let col_s: Vec<f64> = (0..n).map(|i| scores.get(i, k)).collect();
        let col_y: Vec<u8> = (0..n).map(|i| truth.get(i, k)).collect();
        per_class_ap.push(naive_ap(&col_s, &col_y));

        let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let p = pred.get(i, k) == 1;
            let t = truth.get(i, k) == 1;
            if p && t {
                tp += 1.0;
            } else if p {
                fp += 1.0;
            } else if t {
                fn_ += 1.0;
            }
        }
        precision.push(div0(tp, tp + fp));
        recall.push(div0(tp, tp + fn_));
        stp += tp;
        sfp += fp;
        sfn += fn_;
    }
    let defined: Vec<f64> = per_class_ap.iter().flatten().copied().collect();
    let map = if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    };
    let cp = if kk == 0 { 0.0 } else { precision.iter().sum::<f64>() / kk as f64 };
    let cr = if kk == 0 { 0.0 } else { recall.iter().sum::<f64>() / kk as f64 };
    let op = div0(stp, stp + sfp);
    let or = div0(stp, stp + sfn);
    Ok(NaiveMetrics {
        map,
        per_class_ap,
        cf1: div0(2.0 * cp * cr, cp + cr),
        of1: div0(2.0 * op * or, op + or),
        cp,
        cr,
        op,
        or,
        per_class_precision: precision,
        per_class_recall: recall,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ml::DenseMatrix;

    #[test]
    fn quadratic_derivative() {
        let g = finite_diff_grad(|x| 0.5 * x[0] * x[0], &[3.0], 1e-4).unwrap();
        assert!((g[0] - 3.0).abs() < 1e-8);
        assert!(finite_diff_grad(|x| x[0], &[1.0], 0.0).is_err());
        assert!(matches!(
            finite_diff_grad(|x| x[0].ln(), &[0.0], 1e-3),
            Err(Error::NonFinite { index: 0 })
        ));
    }

    #[test]
    fn worked_threshold_example() {
        let s = DenseMatrix::from_vec(4, 1, vec![0.9, 0.6, 0.4, 0.1]).unwrap();
        let y = LabelMatrix::from_vec(4, 1, vec![1, 1, 0, 0]).unwrap();
        let (t, v) = brute_force_thresholds(&s, &y, MetricKind::FBeta { beta: 0.5 }, GridSpec::new(0.05).unwrap()).unwrap();
        assert!((t.tau[0] - 0.45).abs() < 1e-12);
        assert_eq!(v[0], 1.0);
    }

    #[test]
    fn single_instance_single_class() {
        let s = DenseMatrix::from_vec(1, 1, vec![0.33]).unwrap();
        let y = LabelMatrix::from_vec(1, 1, vec![1]).unwrap();
        let (t, v) = brute_force_thresholds(&s, &y, MetricKind::FBeta { beta: 1.0 }, GridSpec::new(0.1).unwrap()).unwrap();
        // Any τ ≤ 0.33 labels it positive; smallest is 0.
        assert_eq!(t.tau[0], 0.0);
        assert_eq!(v[0], 1.0);
    }

    #[test]
    fn naive_fixtures() {
        let pred = LabelMatrix::from_rows(&[[1u8, 1], [1, 0]]).unwrap();
        let truth = LabelMatrix::from_rows(&[[1u8, 1], [0, 1]]).unwrap();
        let scores = pred.to_dense();
        let m = naive_metrics(&scores, &pred, &truth).unwrap();
        assert!((m.cf1 - 0.75).abs() < 1e-15);
        assert!((m.of1 - 2.0 / 3.0).abs() < 1e-15);

        let s = DenseMatrix::from_vec(3, 1, vec![0.9, 0.8, 0.7]).unwrap();
        let y = LabelMatrix::from_vec(3, 1, vec![1, 0, 1]).unwrap();
        let m = naive_metrics(&s, &y, &y).unwrap();
        assert!((m.map.unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!((m.cf1, m.of1), (1.0, 1.0));
    }
}
