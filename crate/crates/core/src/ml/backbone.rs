use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linear::{linear_forward, LinearParams};
use super::matrix::DenseMatrix;
use super::params::Parameters;
use crate::error::{Error, Result};

/// Shape of the shared feature extractor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BackboneSpec {
    Identity,
    /// One affine layer followed by `max(0, ·)`.
    Hidden { width: usize },
}

/// Shared feature extractor `f(·)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Backbone {
    Identity { dim: usize },
    Hidden { layer: LinearParams },
}

/// Values kept from the forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct BackboneCache {
    input: DenseMatrix,
    pre_activation: Option<DenseMatrix>,
}

impl Backbone {
    pub fn build<R: Rng + ?Sized>(spec: BackboneSpec, d_in: usize, rng: &mut R) -> Self {
        match spec {
            BackboneSpec::Identity => Backbone::Identity { dim: d_in },
            BackboneSpec::Hidden { width } => Backbone::Hidden {
                layer: LinearParams::init(d_in, width, rng),
            },
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Backbone::Identity { dim } => *dim,
            Backbone::Hidden { layer } => layer.d_in(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Backbone::Identity { dim } => *dim,
            Backbone::Hidden { layer } => layer.d_out(),
        }
    }

    pub fn forward(&self, x: &DenseMatrix) -> Result<(DenseMatrix, BackboneCache)> {
        if x.cols() != self.input_dim() {
            return Err(Error::dim("backbone", self.input_dim(), x.cols()));
        }
        match self {
            Backbone::Identity { .. } => Ok((
                x.clone(),
                BackboneCache {
                    input: x.clone(),
                    pre_activation: None,
                },
            )),
            Backbone::Hidden { layer } => {
                let pre = linear_forward(layer, x)?;
                let out = pre.map(|v| v.max(0.0));
                Ok((
                    out,
                    BackboneCache {
                        input: x.clone(),
                        pre_activation: Some(pre),
                    },
                ))
            }
        }
    }

    pub fn predict(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        Ok(self.forward(x)?.0)
    }

    /// Accumulates the parameter gradient for upstream gradient `grad_out`
    /// into `grads` (which must share this backbone's shape).
    pub fn backward_into(
        &self,
        cache: &BackboneCache,
        grad_out: &DenseMatrix,
        grads: &mut Backbone,
    ) -> Result<()> {
        match (self, grads) {
            (Backbone::Identity { .. }, Backbone::Identity { .. }) => Ok(()),
            (Backbone::Hidden { layer }, Backbone::Hidden { layer: g }) => {
                let pre = cache
                    .pre_activation
                    .as_ref()
                    .expect("hidden backbone cache carries pre-activations");
                let mut masked = grad_out.clone();
                for (m, &z) in masked.as_mut_slice().iter_mut().zip(pre.as_slice()) {
                    // Subgradient 0 at the kink.
                    if z <= 0.0 {
                        *m = 0.0;
                    }
                }
                let lg = layer.backward(&cache.input, &masked)?;
                g.axpy(1.0, &lg);
                Ok(())
            }
            _ => Err(Error::Validation("backbone gradient buffer has a different kind".into())),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        g.fill_zero();
        g
    }
}

impl Parameters for Backbone {
    fn tensors(&self) -> Vec<&[f64]> {
        match self {
            Backbone::Identity { .. } => Vec::new(),
            Backbone::Hidden { layer } => layer.tensors(),
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Backbone::Identity { .. } => Vec::new(),
            Backbone::Hidden { layer } => layer.tensors_mut(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_is_passthrough() {
        let b = Backbone::Identity { dim: 2 };
        let x = DenseMatrix::from_rows(&[[1.0, -2.0]]).unwrap();
        assert_eq!(b.predict(&x).unwrap(), x);
        assert_eq!(b.num_params(), 0);
    }

    #[test]
    fn hidden_gradient_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = Backbone::build(BackboneSpec::Hidden { width: 4 }, 3, &mut rng);
        let x = DenseMatrix::from_rows(&[[0.3, -0.7, 1.1], [0.5, 0.2, -0.4]]).unwrap();
        // loss = sum of outputs
        let loss = |bb: &Backbone| bb.predict(&x).unwrap().as_slice().iter().sum::<f64>();
        let (out, cache) = b.forward(&x).unwrap();
        let upstream = DenseMatrix::filled(out.rows(), out.cols(), 1.0);
        let mut g = b.zeros_like();
        b.backward_into(&cache, &upstream, &mut g).unwrap();

        let eps = 1e-6;
        let analytic: Vec<f64> = g.tensors().concat();
        let mut idx = 0;
        let n = b.num_params();
        while idx < n {
            let mut plus = b.clone();
            let mut minus = b.clone();
            bump(&mut plus, idx, eps);
            bump(&mut minus, idx, -eps);
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * eps);
            assert!((fd - analytic[idx]).abs() < 1e-6, "param {idx}: {fd} vs {}", analytic[idx]);
            idx += 1;
        }
    }

    fn bump(b: &mut Backbone, mut idx: usize, delta: f64) {
        for t in b.tensors_mut() {
            if idx < t.len() {
                t[idx] += delta;
                return;
            }
            idx -= t.len();
        }
    }
}
