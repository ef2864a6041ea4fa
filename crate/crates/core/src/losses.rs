//! Binary multi-label losses with analytic gradients.
//!
//! Both losses act elementwise on probabilities and are summed over instances
//! and classes. Gradients are available with respect to the probabilities
//! (for callers that fuse several sigmoid outputs before the loss) and with
//! respect to the logits of a plain sigmoid head.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ml::{DenseMatrix, LabelMatrix, ScoreMatrix};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-7;

/// Asymmetric loss constants.
///
/// Positive term `-(1-p)^γ₊ · ln p`; negative term `-p_m^γ₋ · ln(1-p_m)` with
/// the shifted probability `p_m = max(p - m, 0)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AslConfig {
    pub gamma_pos: f64,
    pub gamma_neg: f64,
    pub margin: f64,
}

impl Default for AslConfig {
    fn default() -> Self {
        Self {
            gamma_pos: 0.0,
            gamma_neg: 4.0,
            margin: 0.05,
        }
    }
}

impl AslConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.gamma_pos.is_finite()
            && self.gamma_neg.is_finite()
            && self.gamma_pos >= 0.0
            && self.gamma_neg >= 0.0
            && (0.0..1.0).contains(&self.margin);
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!("invalid ASL config {self:?}")))
        }
    }

    /// `(loss, dloss/dp)` for one element. The derivative is zero wherever
    /// the clamp or the margin is active, including exactly at `p = m`.
    pub fn element(&self, p: f64, positive: bool) -> (f64, f64) {
        if positive {
            let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            let q = 1.0 - pc;
            let log_p = pc.ln();
            let focus = q.powf(self.gamma_pos);
            let loss = -focus * log_p;
            if pc != p {
                return (loss, 0.0);
            }
            let mut d = -focus / pc;
            if self.gamma_pos > 0.0 {
                d += self.gamma_pos * q.powf(self.gamma_pos - 1.0) * log_p;
            }
            (loss, d)
        } else {
            let shifted = (p - self.margin).max(0.0);
            if shifted == 0.0 {
                return (0.0, 0.0);
            }
            let pm = shifted.min(1.0 - PROB_CLAMP);
            let log_q = (1.0 - pm).ln();
            let focus = pm.powf(self.gamma_neg);
            let loss = -focus * log_q;
            if pm != shifted {
                return (loss, 0.0);
            }
            let mut d = focus / (1.0 - pm);
            if self.gamma_neg > 0.0 {
                d -= self.gamma_neg * pm.powf(self.gamma_neg - 1.0) * log_q;
            }
            (loss, d)
        }
    }
}

/// Loss function selector used by training configs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LossKind {
    Asl(AslConfig),
    Bce,
}

impl Default for LossKind {
    fn default() -> Self {
        LossKind::Asl(AslConfig::default())
    }
}

impl LossKind {
    pub fn element(&self, p: f64, positive: bool) -> (f64, f64) {
        match self {
            LossKind::Asl(cfg) => cfg.element(p, positive),
            LossKind::Bce => bce_element(p, positive),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LossKind::Asl(cfg) => cfg.validate(),
            LossKind::Bce => Ok(()),
        }
    }
}

/// How per-element losses are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Sum over instances and classes.
    #[default]
    Sum,
    /// Sum over classes, mean over instances.
    Mean,
}

/// Scalar loss plus a gradient matrix shaped like the input.
#[derive(Clone, Debug, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub grad: DenseMatrix,
}

fn bce_element(p: f64, positive: bool) -> (f64, f64) {
    let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let clamped = pc != p;
    if positive {
        (-pc.ln(), if clamped { 0.0 } else { -1.0 / pc })
    } else {
        (-(1.0 - pc).ln(), if clamped { 0.0 } else { 1.0 / (1.0 - pc) })
    }
}

fn check_shapes(probs: &ScoreMatrix, targets: &LabelMatrix) -> Result<()> {
    if probs.shape() != targets.shape() {
        return Err(Error::dim(
            "loss",
            format!("{:?}", probs.shape()),
            format!("{:?}", targets.shape()),
        ));
    }
    Ok(())
}

/// Sums in a fixed binary tree so the result does not depend on how callers
/// chunk the work.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
        }
    }
}

/// Loss and its gradient with respect to the probabilities themselves.
pub fn loss_wrt_probs(
    kind: &LossKind,
    probs: &ScoreMatrix,
    targets: &LabelMatrix,
    reduction: Reduction,
) -> Result<LossOutput> {
    check_shapes(probs, targets)?;
    let n = probs.rows();
    let scale = match reduction {
        Reduction::Sum => 1.0,
        Reduction::Mean if n > 0 => 1.0 / n as f64,
        Reduction::Mean => 1.0,
    };
    let mut per_element = Vec::with_capacity(probs.as_slice().len());
    let mut grad = DenseMatrix::zeros(probs.rows(), probs.cols());
    for (i, (&p, &y)) in probs.as_slice().iter().zip(targets.as_slice()).enumerate() {
        let (l, d) = kind.element(p, y == 1);
        per_element.push(l);
        grad.as_mut_slice()[i] = scale * d;
    }
    Ok(LossOutput {
        loss: scale * pairwise_sum(&per_element),
        grad,
    })
}

fn through_sigmoid(probs: &ScoreMatrix, mut out: LossOutput) -> LossOutput {
    for (g, &p) in out.grad.as_mut_slice().iter_mut().zip(probs.as_slice()) {
        *g *= p * (1.0 - p);
    }
    out
}

/// Asymmetric loss over a probability matrix; the gradient is with respect
/// to the logits that produced `probs` through a sigmoid.
pub fn asl_loss(probs: &ScoreMatrix, targets: &LabelMatrix, cfg: &AslConfig) -> Result<LossOutput> {
    asl_loss_reduced(probs, targets, cfg, Reduction::Sum)
}

pub fn asl_loss_reduced(
    probs: &ScoreMatrix,
    targets: &LabelMatrix,
    cfg: &AslConfig,
    reduction: Reduction,
) -> Result<LossOutput> {
    cfg.validate()?;
    let out = loss_wrt_probs(&LossKind::Asl(*cfg), probs, targets, reduction)?;
    Ok(through_sigmoid(probs, out))
}

/// Binary cross-entropy; the gradient with respect to each logit is `p - y`
/// (zero where the probability clamp is active).
pub fn bce_loss(probs: &ScoreMatrix, targets: &LabelMatrix) -> Result<LossOutput> {
    check_shapes(probs, targets)?;
    let mut per_element = Vec::with_capacity(probs.as_slice().len());
    let mut grad = DenseMatrix::zeros(probs.rows(), probs.cols());
    for (i, (&p, &y)) in probs.as_slice().iter().zip(targets.as_slice()).enumerate() {
        let (l, _) = bce_element(p, y == 1);
        per_element.push(l);
        let clamped = !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p);
        grad.as_mut_slice()[i] = if clamped { 0.0 } else { p - f64::from(y) };
    }
    Ok(LossOutput {
        loss: pairwise_sum(&per_element),
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ml::sigmoid_scalar;
    use approx::assert_abs_diff_eq;

    fn one(p: f64, y: u8) -> (ScoreMatrix, LabelMatrix) {
        (
            DenseMatrix::from_vec(1, 1, vec![p]).unwrap(),
            LabelMatrix::from_vec(1, 1, vec![y]).unwrap(),
        )
    }

    #[test]
    fn positive_half_is_ln2() {
        let (p, y) = one(0.5, 1);
        let out = asl_loss(&p, &y, &AslConfig::default()).unwrap();
        assert_abs_diff_eq!(out.loss, std::f64::consts::LN_2, epsilon = 1e-15);
        assert_abs_diff_eq!(bce_loss(&p, &y).unwrap().loss, std::f64::consts::LN_2, epsilon = 1e-15);
    }

    #[test]
    fn easy_negative_is_hard_thresholded() {
        let (p, y) = one(0.04, 0);
        let out = asl_loss(&p, &y, &AslConfig::default()).unwrap();
        assert_eq!(out.loss, 0.0);
        assert_eq!(out.grad.get(0, 0), 0.0);
    }

    #[test]
    fn focused_negative_hand_value() {
        let (p, y) = one(0.5, 0);
        let out = asl_loss(&p, &y, &AslConfig::default()).unwrap();
        let expected = -(0.45f64.powi(4)) * 0.55f64.ln();
        assert_abs_diff_eq!(out.loss, expected, epsilon = 1e-15);
        assert_abs_diff_eq!(out.loss, 0.024515, epsilon = 1e-6);
    }

    #[test]
    fn bce_gradient_identity() {
        let (p, y) = one(0.75, 1);
        let out = bce_loss(&p, &y).unwrap();
        assert_eq!(out.grad.get(0, 0), -0.25);
    }

    #[test]
    fn bce_perfect_prediction_is_near_zero() {
        for (p, y) in [(0.0, 0u8), (1.0, 1u8)] {
            let (p, y) = one(p, y);
            assert!(bce_loss(&p, &y).unwrap().loss < 1e-6);
        }
    }

    #[test]
    fn asl_reduces_to_bce() {
        let cfg = AslConfig {
            gamma_pos: 0.0,
            gamma_neg: 0.0,
            margin: 0.0,
        };
        for &z in &[-6.0, -1.0, -0.2, 0.0, 0.4, 2.5, 9.0] {
            let p = sigmoid_scalar(z);
            for y in [0u8, 1] {
                let (pm, ym) = one(p, y);
                let a = asl_loss(&pm, &ym, &cfg).unwrap();
                let b = bce_loss(&pm, &ym).unwrap();
                assert_abs_diff_eq!(a.loss, b.loss, epsilon = 1e-12);
                assert_abs_diff_eq!(a.grad.get(0, 0), b.grad.get(0, 0), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn mean_reduction_divides_by_rows() {
        let probs = DenseMatrix::from_rows(&[[0.3, 0.8], [0.6, 0.1]]).unwrap();
        let labels = LabelMatrix::from_rows(&[[0u8, 1], [1, 0]]).unwrap();
        let cfg = AslConfig::default();
        let s = asl_loss_reduced(&probs, &labels, &cfg, Reduction::Sum).unwrap();
        let m = asl_loss_reduced(&probs, &labels, &cfg, Reduction::Mean).unwrap();
        assert_abs_diff_eq!(s.loss / 2.0, m.loss, epsilon = 1e-15);
    }

    #[test]
    fn shape_mismatch() {
        let probs = DenseMatrix::zeros(2, 2);
        let labels = LabelMatrix::zeros(2, 3);
        assert!(bce_loss(&probs, &labels).is_err());
        assert!(asl_loss(&probs, &labels, &AslConfig::default()).is_err());
    }

    #[test]
    fn monotone_in_probability() {
        let cfg = AslConfig::default();
        let grid: Vec<f64> = (1..100).map(|i| i as f64 / 100.0).collect();
        for w in grid.windows(2) {
            assert!(cfg.element(w[1], true).0 <= cfg.element(w[0], true).0);
            assert!(cfg.element(w[1], false).0 >= cfg.element(w[0], false).0);
        }
    }

    #[test]
    fn pairwise_sum_matches_naive_on_integers() {
        let v: Vec<f64> = (0..1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&v), 499_500.0);
    }
}
