use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::matrix::DenseMatrix;
use super::params::Parameters;
use crate::error::{Error, Result};

/// Affine map `x ↦ x·W + b`, with `W` shaped `d_in x d_out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearParams {
    pub weights: DenseMatrix,
    pub bias: Vec<f64>,
}

impl LinearParams {
    pub fn new(weights: DenseMatrix, bias: Vec<f64>) -> Result<Self> {
        if weights.cols() != bias.len() {
            return Err(Error::dim("LinearParams::new", weights.cols(), bias.len()));
        }
        if !weights.is_finite() || bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::Validation("linear parameters must be finite".into()));
        }
        Ok(Self { weights, bias })
    }

    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Self {
            weights: DenseMatrix::zeros(d_in, d_out),
            bias: vec![0.0; d_out],
        }
    }

    /// Gaussian init with standard deviation `1/sqrt(d_in)` and zero bias.
    pub fn init<R: Rng + ?Sized>(d_in: usize, d_out: usize, rng: &mut R) -> Self {
        let std = 1.0 / (d_in.max(1) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let data = (0..d_in * d_out).map(|_| normal.sample(rng)).collect();
        Self {
            weights: DenseMatrix::from_vec(d_in, d_out, data).expect("finite init"),
            bias: vec![0.0; d_out],
        }
    }

    #[inline]
    pub fn d_in(&self) -> usize {
        self.weights.rows()
    }

    #[inline]
    pub fn d_out(&self) -> usize {
        self.weights.cols()
    }

    /// Gradients of a loss with respect to `W` and `b`, given the layer input
    /// and the upstream gradient with respect to the layer output.
    pub fn backward(&self, input: &DenseMatrix, grad_out: &DenseMatrix) -> Result<LinearParams> {
        let weights = input.t_matmul(grad_out)?;
        let mut bias = vec![0.0; self.d_out()];
        for row in grad_out.iter_rows() {
            for (b, g) in bias.iter_mut().zip(row) {
                *b += g;
            }
        }
        Ok(LinearParams { weights, bias })
    }

    /// Gradient with respect to the layer input.
    pub fn backward_input(&self, grad_out: &DenseMatrix) -> Result<DenseMatrix> {
        grad_out.matmul_t(&self.weights)
    }
}

impl Parameters for LinearParams {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![self.weights.as_slice(), &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.weights.as_mut_slice(), &mut self.bias]
    }
}

/// Row-wise affine map. Rows with zero entries yield a zero-row output.
pub fn linear_forward(params: &LinearParams, features: &DenseMatrix) -> Result<DenseMatrix> {
    if features.cols() != params.d_in() {
        return Err(Error::dim("linear_forward", params.d_in(), features.cols()));
    }
    let mut out = features.matmul(&params.weights)?;
    for r in 0..out.rows() {
        for (v, b) in out.row_mut(r).iter_mut().zip(&params.bias) {
            *v += b;
        }
    }
    Ok(out)
}

/// Logistic function, evaluated without overflow for any finite input.
#[inline]
pub fn sigmoid_scalar(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(logits: &DenseMatrix) -> DenseMatrix {
    logits.map(sigmoid_scalar)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn identity_weights_pass_through() {
        let p = LinearParams::new(DenseMatrix::identity(2), vec![0.0, 0.0]).unwrap();
        let x = DenseMatrix::from_rows(&[[1.0, 2.0]]).unwrap();
        assert_eq!(linear_forward(&p, &x).unwrap(), x);
    }

    #[test]
    fn column_sum_with_bias() {
        let w = DenseMatrix::from_rows(&[[1.0], [1.0]]).unwrap();
        let p = LinearParams::new(w, vec![0.5]).unwrap();
        let x = DenseMatrix::from_rows(&[[1.0, 2.0]]).unwrap();
        assert_eq!(linear_forward(&p, &x).unwrap().as_slice(), &[3.5]);
    }

    #[test]
    fn empty_batch_is_fine() {
        let p = LinearParams::zeros(3, 2);
        let out = linear_forward(&p, &DenseMatrix::empty(3)).unwrap();
        assert_eq!(out.shape(), (0, 2));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let p = LinearParams::zeros(3, 2);
        let err = linear_forward(&p, &DenseMatrix::zeros(1, 2)).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn sigmoid_reference_points() {
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        assert_abs_diff_eq!(sigmoid_scalar(3f64.ln()), 0.75, epsilon = 1e-15);
        let big = sigmoid_scalar(500.0);
        assert!(big >= 1.0 - 1e-15 && big.is_finite());
        let small = sigmoid_scalar(-500.0);
        assert!(small >= 0.0 && small.is_finite());
    }
}
