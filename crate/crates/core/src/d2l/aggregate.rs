use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ml::{DenseMatrix, ScoreMatrix};

/// Softmax temperature of the patch aggregation. Smaller values focus on the
/// most confident patch; larger values approach a plain mean.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha.is_finite() && alpha > 0.0 {
            Ok(Self(alpha))
        } else {
            Err(Error::Validation(format!("temperature must be > 0, got {alpha}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Self(1.0)
    }
}

/// Weights and weighted mean for one class. Sums run in ascending order of
/// probability, so permuting the patches permutes the weights and leaves the
/// output bit-for-bit unchanged.
fn softmax_mean(probs: &[f64], alpha: Temperature) -> (Vec<f64>, f64) {
    let a = alpha.value();
    let max = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&i, &j| probs[i].total_cmp(&probs[j]));
    let mut w: Vec<f64> = probs.iter().map(|&p| ((p - max) / a).exp()).collect();
    let z: f64 = order.iter().map(|&o| w[o]).sum();
    for v in &mut w {
        *v /= z;
    }
    let mean = order.iter().map(|&o| w[o] * probs[o]).sum();
    (w, mean)
}

/// Softmax weights over patches of one class's probabilities.
pub fn patch_weights(probs: &[f64], alpha: Temperature) -> Vec<f64> {
    softmax_mean(probs, alpha).0
}

/// Spatially-weighted aggregation of `n x K` patch probabilities into a
/// `K`-vector: for every class independently,
/// `Σ_o softmax_o(p_ok / α) · p_ok`.
pub fn aggregate_patches(patch_probs: &ScoreMatrix, alpha: Temperature) -> Result<Vec<f64>> {
    if patch_probs.rows() == 0 {
        return Err(Error::Validation("aggregate_patches needs at least one patch".into()));
    }
    let mut out = Vec::with_capacity(patch_probs.cols());
    for k in 0..patch_probs.cols() {
        out.push(softmax_mean(&patch_probs.column(k), alpha).1);
    }
    Ok(out)
}

/// Batched aggregation: `patches[o]` holds the `B x K` probabilities of patch
/// `o`. Returns the aggregated `B x K` matrix and the per-patch weights.
pub(crate) fn aggregate_batch(
    patches: &[DenseMatrix],
    alpha: Temperature,
) -> (DenseMatrix, Vec<DenseMatrix>) {
    let (b, k) = patches[0].shape();
    let n = patches.len();
    let mut out = DenseMatrix::zeros(b, k);
    let mut weights = vec![DenseMatrix::zeros(b, k); n];
    let mut buf = vec![0.0; n];
    for r in 0..b {
        for c in 0..k {
            for (o, p) in patches.iter().enumerate() {
                buf[o] = p.get(r, c);
            }
            let (w, mean) = softmax_mean(&buf, alpha);
            for (o, w) in w.into_iter().enumerate() {
                weights[o].set(r, c, w);
            }
            out.set(r, c, mean);
        }
    }
    (out, weights)
}
