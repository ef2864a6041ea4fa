use serde::{Deserialize, Serialize};

use super::params::Parameters;
use crate::error::{Error, Result};

/// Exponential moving average of a parameter set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmaState<P> {
    pub shadow: P,
    decay: f64,
}

impl<P: Parameters + Clone> EmaState<P> {
    /// Starts the average at a copy of `params`.
    pub fn new(params: &P, decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&decay) {
            return Err(Error::Validation(format!("EMA decay {decay} outside [0, 1)")));
        }
        Ok(Self {
            shadow: params.clone(),
            decay,
        })
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    /// `shadow ← decay·shadow + (1−decay)·params`.
    pub fn update(&mut self, params: &P) -> Result<()> {
        let src = params.tensors();
        let decay = self.decay;
        let dst = self.shadow.tensors_mut();
        if src.len() != dst.len() {
            return Err(Error::dim("ema_update", dst.len(), src.len()));
        }
        for (d, s) in dst.iter().zip(&src) {
            if d.len() != s.len() {
                return Err(Error::dim("ema_update", d.len(), s.len()));
            }
        }
        for (d, s) in dst.into_iter().zip(src) {
            for (x, &y) in d.iter_mut().zip(s) {
                *x = decay * *x + (1.0 - decay) * y;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ml::{DenseMatrix, LinearParams};

    fn single(v: f64) -> LinearParams {
        LinearParams::new(DenseMatrix::from_vec(1, 1, vec![v]).unwrap(), vec![v]).unwrap()
    }

    #[test]
    fn one_step() {
        let mut ema = EmaState::new(&single(1.0), 0.9).unwrap();
        ema.update(&single(0.0)).unwrap();
        assert!((ema.shadow.weights.get(0, 0) - 0.9).abs() < 1e-15);
    }

    #[test]
    fn fixed_point_at_default_decay() {
        let mut ema = EmaState::new(&single(0.37), 0.9997).unwrap();
        for _ in 0..100 {
            ema.update(&single(0.37)).unwrap();
        }
        assert!((ema.shadow.bias[0] - 0.37).abs() < 1e-15);
    }

    #[test]
    fn geometric_closed_form() {
        let (s0, p, decay, t) = (2.0, -1.0, 0.97, 250);
        let mut ema = EmaState::new(&single(s0), decay).unwrap();
        for _ in 0..t {
            ema.update(&single(p)).unwrap();
        }
        let expected = p + (s0 - p) * decay.powi(t);
        assert!((ema.shadow.weights.get(0, 0) - expected).abs() < 1e-10);
    }

    #[test]
    fn rejects_bad_decay() {
        assert!(EmaState::new(&single(0.0), 1.0).is_err());
        assert!(EmaState::new(&single(0.0), -0.1).is_err());
    }
}
