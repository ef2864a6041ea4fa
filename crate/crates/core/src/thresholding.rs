//! Class-wise pseudo-label thresholds.
//!
//! [`mat_search`] picks, for every class, the grid threshold that maximizes a
//! chosen metric of the binarized labeled-data scores. The remaining
//! strategies are the baselines it is compared against: class-proportion
//! matching ([`cap_thresholds`]), a constant threshold, and per-instance top-k.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{class_metric, ConfusionCounts, MetricKind};
use crate::ml::{LabelMatrix, ScoreMatrix};

/// Per-class thresholds with a flag for classes that had no labeled
/// positive. Degenerate classes never receive a positive pseudo-label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdVector {
    pub tau: Vec<f64>,
    pub degenerate: Vec<bool>,
}

impl ThresholdVector {
    pub fn new(tau: Vec<f64>) -> Result<Self> {
        if let Some(t) = tau.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::Validation(format!("threshold {t} outside [0, 1]")));
        }
        let degenerate = vec![false; tau.len()];
        Ok(Self { tau, degenerate })
    }

    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }

    pub fn degenerate_classes(&self) -> Vec<usize> {
        self.degenerate
            .iter()
            .enumerate()
            .filter_map(|(k, &d)| d.then_some(k))
            .collect()
    }
}

/// Evenly spaced thresholds `0, t, 2t, …, 1` (last point clamped to 1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub step: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { step: 0.01 }
    }
}

impl GridSpec {
    pub fn new(step: f64) -> Result<Self> {
        let g = Self { step };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.step.is_finite() && self.step > 0.0 && self.step <= 1.0 {
            Ok(())
        } else {
            Err(Error::Validation(format!("grid step {} outside (0, 1]", self.step)))
        }
    }

    pub fn len(&self) -> usize {
        // Tolerate representation error so 1/0.01 yields 101 points, not 102.
        (1.0 / self.step - 1e-9).ceil() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn point(&self, j: usize) -> f64 {
        (j as f64 * self.step).min(1.0)
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.len()).map(|j| self.point(j)).collect()
    }
}

/// MAT output: thresholds plus the metric value each class achieved on the
/// labeled data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatResult {
    pub thresholds: ThresholdVector,
    pub achieved: Vec<f64>,
}

/// Best grid threshold for one class; `None` if the class has no positive.
///
/// Sorting once and sweeping the grid upward keeps this `O(N log N + G)`.
fn search_class(scores: &[f64], labels: &[u8], kind: MetricKind, grid: GridSpec) -> Option<(f64, f64)> {
    let positives = labels.iter().filter(|&&y| y == 1).count();
    if positives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let n = scores.len();
    // Everything at or past `cursor` in ascending order scores ≥ τ.
    let mut cursor = 0usize;
    let mut neg_below = 0usize;
    let mut pos_below = 0usize;
    let mut best: Option<(f64, f64)> = None;
    for j in 0..grid.len() {
        let tau = grid.point(j);
        while cursor < n && scores[order[cursor]] < tau {
            if labels[order[cursor]] == 1 {
                pos_below += 1;
            } else {
                neg_below += 1;
            }
            cursor += 1;
        }
        let counts = ConfusionCounts {
            tp: positives - pos_below,
            fp: (n - positives) - neg_below,
            tn: neg_below,
            fn_: pos_below,
        };
        let value = class_metric(&counts, kind);
        match best {
            Some((_, v)) if value <= v => {}
            _ => best = Some((tau, value)),
        }
    }
    best
}

/// Metric-adaptive thresholding: per class, the smallest grid point whose
/// binarization `score ≥ τ` maximizes `kind` against the labels.
///
/// Classes with no labeled positive get `τ = 1` and are flagged degenerate.
/// Classes are searched in parallel; the result does not depend on thread
/// count.
pub fn mat_search(
    scores: &ScoreMatrix,
    labels: &LabelMatrix,
    kind: MetricKind,
    grid: GridSpec,
) -> Result<MatResult> {
    kind.validate()?;
    grid.validate()?;
    if scores.shape() != labels.shape() {
        return Err(Error::dim(
            "mat_search",
            format!("{:?}", labels.shape()),
            format!("{:?}", scores.shape()),
        ));
    }
    if scores.rows() == 0 {
        return Err(Error::Validation("mat_search needs at least one labeled instance".into()));
    }
    let per_class: Vec<Option<(f64, f64)>> = (0..scores.cols())
        .into_par_iter()
        .map(|k| search_class(&scores.column(k), &labels.column(k), kind, grid))
        .collect();

    let mut tau = Vec::with_capacity(per_class.len());
    let mut degenerate = Vec::with_capacity(per_class.len());
    let mut achieved = Vec::with_capacity(per_class.len());
    for r in per_class {
        match r {
            Some((t, v)) => {
                tau.push(t);
                degenerate.push(false);
                achieved.push(v);
            }
            None => {
                tau.push(1.0);
                degenerate.push(true);
                achieved.push(0.0);
            }
        }
    }
    Ok(MatResult {
        thresholds: ThresholdVector { tau, degenerate },
        achieved,
    })
}

/// Pseudo-labels `ŷ_jk = 1` iff `score_jk ≥ τ_k` and class `k` is not
/// degenerate.
pub fn generate_pseudo_labels(scores: &ScoreMatrix, tau: &ThresholdVector) -> Result<LabelMatrix> {
    if scores.cols() != tau.len() {
        return Err(Error::dim("generate_pseudo_labels", tau.len(), scores.cols()));
    }
    let mut out = LabelMatrix::zeros(scores.rows(), scores.cols());
    for r in 0..scores.rows() {
        for (k, &s) in scores.row(r).iter().enumerate() {
            if !tau.degenerate[k] && s >= tau.tau[k] {
                out.set(r, k, true);
            }
        }
    }
    Ok(out)
}

/// Class-proportion thresholds: class `k` gets the `⌈ρ_k·M⌉`-th largest
/// unlabeled score as its threshold, where `ρ_k` is the labeled positive rate.
pub fn cap_thresholds(scores_unlabeled: &ScoreMatrix, labels: &LabelMatrix) -> Result<ThresholdVector> {
    if scores_unlabeled.rows() == 0 || labels.rows() == 0 {
        return Err(Error::Validation("cap_thresholds needs non-empty inputs".into()));
    }
    if scores_unlabeled.cols() != labels.cols() {
        return Err(Error::dim("cap_thresholds", labels.cols(), scores_unlabeled.cols()));
    }
    let m = scores_unlabeled.rows();
    let n = labels.rows();
    let mut tau = Vec::with_capacity(labels.cols());
    let mut degenerate = Vec::with_capacity(labels.cols());
    for k in 0..labels.cols() {
        // ⌈(pos/n)·m⌉ in integers, so exact multiples never round up.
        let s = (labels.column_positives(k) * m).div_ceil(n).min(m);
        if s == 0 {
            tau.push(1.0);
            degenerate.push(true);
            continue;
        }
        let mut col = scores_unlabeled.column(k);
        col.sort_by(|a, b| b.total_cmp(a));
        tau.push(col[s - 1]);
        degenerate.push(false);
    }
    Ok(ThresholdVector { tau, degenerate })
}

/// Constant threshold for every class.
pub fn fixed_thresholds(tau0: f64, classes: usize) -> Result<ThresholdVector> {
    ThresholdVector::new(vec![tau0; classes])
}

/// Per row, the `k` highest-scoring classes (ties to the lower class index).
pub fn topk_pseudo_labels(scores: &ScoreMatrix, k: usize) -> Result<LabelMatrix> {
    if k == 0 || k > scores.cols() {
        return Err(Error::Validation(format!(
            "top-k needs 1 ≤ k ≤ {}, got {k}",
            scores.cols()
        )));
    }
    let mut out = LabelMatrix::zeros(scores.rows(), scores.cols());
    let mut order: Vec<usize> = Vec::with_capacity(scores.cols());
    for r in 0..scores.rows() {
        let row = scores.row(r);
        order.clear();
        order.extend(0..row.len());
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
        for &c in &order[..k] {
            out.set(r, c, true);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ml::DenseMatrix;

    fn column(scores: &[f64], labels: &[u8]) -> (ScoreMatrix, LabelMatrix) {
        (
            DenseMatrix::from_vec(scores.len(), 1, scores.to_vec()).unwrap(),
            LabelMatrix::from_vec(labels.len(), 1, labels.to_vec()).unwrap(),
        )
    }

    #[test]
    fn grid_has_both_endpoints() {
        assert_eq!(GridSpec::new(0.05).unwrap().len(), 21);
        assert_eq!(GridSpec::new(0.01).unwrap().len(), 101);
        let g = GridSpec::new(0.3).unwrap();
        assert_eq!(g.points(), vec![0.0, 0.3, 0.6, 0.8999999999999999, 1.0]);
        assert!(GridSpec::new(0.0).is_err());
        assert!(GridSpec::new(1.5).is_err());
    }

    #[test]
    fn worked_example_smallest_maximizer() {
        let (s, y) = column(&[0.9, 0.6, 0.4, 0.1], &[1, 1, 0, 0]);
        let r = mat_search(&s, &y, MetricKind::FBeta { beta: 0.5 }, GridSpec::new(0.05).unwrap()).unwrap();
        assert!((r.thresholds.tau[0] - 0.45).abs() < 1e-12);
        assert_eq!(r.achieved[0], 1.0);
    }

    #[test]
    fn zero_positive_class_is_degenerate() {
        let (s, y) = column(&[0.9, 0.2], &[0, 0]);
        let r = mat_search(&s, &y, MetricKind::default(), GridSpec::default()).unwrap();
        assert_eq!(r.thresholds.tau, vec![1.0]);
        assert_eq!(r.thresholds.degenerate, vec![true]);
        let one = DenseMatrix::from_vec(1, 1, vec![1.0]).unwrap();
        let pl = generate_pseudo_labels(&one, &r.thresholds).unwrap();
        assert_eq!(pl.count_positives(), 0);
    }

    #[test]
    fn empty_labeled_set_errors() {
        let s = DenseMatrix::empty(2);
        let y = LabelMatrix::zeros(0, 2);
        assert!(mat_search(&s, &y, MetricKind::default(), GridSpec::default()).is_err());
    }

    #[test]
    fn pseudo_labels_indicator() {
        let s = DenseMatrix::from_rows(&[[0.7, 0.2], [0.4, 0.9]]).unwrap();
        let t = fixed_thresholds(0.5, 2).unwrap();
        let pl = generate_pseudo_labels(&s, &t).unwrap();
        assert_eq!(pl, LabelMatrix::from_rows(&[[1u8, 0], [0, 1]]).unwrap());

        // ≥ convention at equality, and the 0 / 1 boundaries.
        let s = DenseMatrix::from_rows(&[[0.5, 0.3], [1.0, 0.0]]).unwrap();
        let t = ThresholdVector::new(vec![0.5, 0.0]).unwrap();
        assert_eq!(
            generate_pseudo_labels(&s, &t).unwrap(),
            LabelMatrix::from_rows(&[[1u8, 1], [1, 1]]).unwrap()
        );
        let t = fixed_thresholds(1.0, 2).unwrap();
        assert_eq!(
            generate_pseudo_labels(&s, &t).unwrap(),
            LabelMatrix::from_rows(&[[0u8, 0], [1, 0]]).unwrap()
        );
        assert!(generate_pseudo_labels(&s, &fixed_thresholds(0.5, 3).unwrap()).is_err());
    }

    #[test]
    fn cap_hand_example() {
        let labels = LabelMatrix::from_vec(4, 1, vec![1, 1, 0, 0]).unwrap();
        let scores = DenseMatrix::from_vec(6, 1, vec![0.9, 0.8, 0.7, 0.3, 0.2, 0.1]).unwrap();
        let t = cap_thresholds(&scores, &labels).unwrap();
        assert_eq!(t.tau, vec![0.7]);
        assert_eq!(generate_pseudo_labels(&scores, &t).unwrap().count_positives(), 3);
    }

    #[test]
    fn cap_extremes() {
        let scores = DenseMatrix::from_vec(3, 2, vec![0.9, 0.1, 0.4, 0.5, 0.2, 0.3]).unwrap();
        let labels = LabelMatrix::from_rows(&[[0u8, 1], [0, 1]]).unwrap();
        let t = cap_thresholds(&scores, &labels).unwrap();
        let pl = generate_pseudo_labels(&scores, &t).unwrap();
        assert_eq!(pl.column_positives(0), 0);
        assert_eq!(pl.column_positives(1), 3);
        assert!(cap_thresholds(&DenseMatrix::empty(2), &labels).is_err());
    }

    #[test]
    fn topk_rules() {
        let s = DenseMatrix::from_rows(&[[0.1, 0.9, 0.5]]).unwrap();
        assert_eq!(topk_pseudo_labels(&s, 1).unwrap().row(0), &[0, 1, 0]);
        assert_eq!(topk_pseudo_labels(&s, 3).unwrap().row(0), &[1, 1, 1]);
        let tie = DenseMatrix::from_rows(&[[0.5, 0.5, 0.2]]).unwrap();
        assert_eq!(topk_pseudo_labels(&tie, 1).unwrap().row(0), &[1, 0, 0]);
        assert!(topk_pseudo_labels(&s, 0).is_err());
        assert!(topk_pseudo_labels(&s, 4).is_err());
    }

    #[test]
    fn fixed_range_checked() {
        assert_eq!(fixed_thresholds(0.5, 3).unwrap().tau, vec![0.5; 3]);
        assert!(fixed_thresholds(1.2, 3).is_err());
        assert!(fixed_thresholds(-0.1, 3).is_err());
    }
}
