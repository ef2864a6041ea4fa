use serde::{Deserialize, Serialize};

use super::params::Parameters;
use crate::error::{Error, Result};

/// Hyperparameters of AdamW.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers and step counter for one parameter group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    pub step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new<P: Parameters>(params: &P, config: AdamWConfig) -> Self {
        let shapes = params.shapes();
        Self {
            config,
            step: 0,
            first_moment: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// One AdamW step at the configured learning rate.
    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let lr = self.config.lr;
        self.step_with_lr(params, grads, lr)
    }

    /// One AdamW step with decoupled weight decay, using `lr` for this step
    /// (schedules override the configured rate through here).
    pub fn step_with_lr<P: Parameters>(&mut self, params: &mut P, grads: &P, lr: f64) -> Result<()> {
        let grads = grads.tensors();
        let mut params = params.tensors_mut();
        if grads.len() != self.first_moment.len() || params.len() != self.first_moment.len() {
            return Err(Error::dim(
                "adamw_step",
                self.first_moment.len(),
                format!("{} params / {} grads", params.len(), grads.len()),
            ));
        }
        for ((p, g), m) in params.iter().zip(&grads).zip(&self.first_moment) {
            if p.len() != m.len() || g.len() != m.len() {
                return Err(Error::dim("adamw_step", m.len(), format!("{} / {}", p.len(), g.len())));
            }
        }

        let AdamWConfig {
            weight_decay,
            beta1,
            beta2,
            eps,
            ..
        } = self.config;
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);

        for (((p, g), m), v) in params
            .iter_mut()
            .zip(&grads)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * (m_hat / (v_hat.sqrt() + eps) + weight_decay * p[i]);
            }
        }
        Ok(())
    }
}

/// One-cycle learning-rate schedule: linear ramp from `peak/div` to `peak`
/// over the first `warmup_frac` of steps, then cosine decay to `peak/final_div`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneCycle {
    pub peak: f64,
    pub total_steps: u64,
    pub warmup_frac: f64,
    pub div: f64,
    pub final_div: f64,
}

impl OneCycle {
    pub fn new(peak: f64, total_steps: u64) -> Self {
        Self {
            peak,
            total_steps,
            warmup_frac: 0.2,
            div: 25.0,
            final_div: 1e4,
        }
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        if self.total_steps <= 1 {
            return self.peak;
        }
        let last = (self.total_steps - 1) as f64;
        let up = (self.warmup_frac * last).max(1.0);
        let s = (step as f64).min(last);
        let start = self.peak / self.div;
        let end = self.peak / self.final_div;
        if s <= up {
            start + (self.peak - start) * s / up
        } else {
            let frac = (s - up) / (last - up).max(1.0);
            end + (self.peak - end) * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ml::LinearParams;
    use crate::ml::DenseMatrix;

    fn single(v: f64) -> LinearParams {
        LinearParams::new(DenseMatrix::from_vec(1, 1, vec![v]).unwrap(), vec![0.0]).unwrap()
    }

    #[test]
    fn zero_gradient_without_decay_is_fixed_point() {
        let mut p = single(0.7);
        let g = single(0.0);
        let mut opt = OptimizerState::new(
            &p,
            AdamWConfig {
                weight_decay: 0.0,
                ..Default::default()
            },
        );
        for _ in 0..5 {
            opt.step(&mut p, &g).unwrap();
        }
        assert_eq!(p, single(0.7));
        assert_eq!(opt.step, 5);
    }

    #[test]
    fn decoupled_decay_only() {
        let mut p = single(1.0);
        let g = single(0.0);
        let mut opt = OptimizerState::new(&p, AdamWConfig::default());
        opt.step(&mut p, &g).unwrap();
        assert!((p.weights.get(0, 0) - (1.0 - 1e-8)).abs() < 1e-16);
    }

    #[test]
    fn first_step_closed_form() {
        // After one step m̂ = g and v̂ = g², so the Adam part is lr·g/(|g|+ε).
        let (lr, wd, g0, p0) = (1e-2, 1e-2, -0.3, 2.0);
        let mut p = single(p0);
        let g = single(g0);
        let cfg = AdamWConfig {
            lr,
            weight_decay: wd,
            ..Default::default()
        };
        let mut opt = OptimizerState::new(&p, cfg);
        opt.step(&mut p, &g).unwrap();
        let expected = p0 - lr * (g0 / (g0.abs() + cfg.eps) + wd * p0);
        assert!((p.weights.get(0, 0) - expected).abs() < 1e-15);
    }

    #[test]
    fn mismatched_shapes_error() {
        let mut p = single(1.0);
        let g = LinearParams::zeros(2, 1);
        let mut opt = OptimizerState::new(&p, AdamWConfig::default());
        assert!(opt.step(&mut p, &g).is_err());
    }

    #[test]
    fn one_cycle_peaks_then_decays() {
        let s = OneCycle::new(1e-3, 101);
        assert!((s.lr_at(20) - 1e-3).abs() < 1e-15);
        assert!(s.lr_at(0) < s.lr_at(10));
        assert!(s.lr_at(100) < s.lr_at(60));
        assert!(s.lr_at(100) > 0.0);
    }
}
