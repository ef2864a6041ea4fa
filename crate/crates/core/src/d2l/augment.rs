use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ml::DenseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentMode {
    Weak,
    Strong,
}

/// Feature-space stand-in for image augmentation: weak views add small
/// Gaussian noise; strong views add larger noise and zero out coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSpec {
    pub weak_sigma: f64,
    pub strong_sigma: f64,
    pub strong_dropout: f64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            weak_sigma: 0.05,
            strong_sigma: 0.2,
            strong_dropout: 0.2,
        }
    }
}

impl AugmentSpec {
    pub fn none() -> Self {
        Self {
            weak_sigma: 0.0,
            strong_sigma: 0.0,
            strong_dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.weak_sigma >= 0.0
            && self.strong_sigma >= 0.0
            && self.weak_sigma.is_finite()
            && self.strong_sigma.is_finite()
            && (0.0..1.0).contains(&self.strong_dropout);
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!("invalid augmentation spec {self:?}")))
        }
    }
}

/// Returns an augmented copy of `features`. Draws from `rng` in row-major
/// order, so the output is a pure function of the generator state.
pub fn augment<R: Rng + ?Sized>(
    features: &DenseMatrix,
    spec: &AugmentSpec,
    mode: AugmentMode,
    rng: &mut R,
) -> DenseMatrix {
    let (sigma, drop) = match mode {
        AugmentMode::Weak => (spec.weak_sigma, 0.0),
        AugmentMode::Strong => (spec.strong_sigma, spec.strong_dropout),
    };
    let mut out = features.clone();
    if sigma == 0.0 && drop == 0.0 {
        return out;
    }
    for v in out.as_mut_slice() {
        if sigma > 0.0 {
            let z: f64 = StandardNormal.sample(rng);
            *v += sigma * z;
        }
        if drop > 0.0 && rng.random::<f64>() < drop {
            *v = 0.0;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(n: usize) -> DenseMatrix {
        DenseMatrix::from_vec(1, n, (0..n).map(|i| 1.0 + i as f64).collect()).unwrap()
    }

    #[test]
    fn zero_spec_is_identity() {
        let x = ramp(10);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(augment(&x, &AugmentSpec::none(), AugmentMode::Strong, &mut rng), x);
        assert_eq!(augment(&x, &AugmentSpec::none(), AugmentMode::Weak, &mut rng), x);
    }

    #[test]
    fn same_seed_same_output() {
        let x = ramp(64);
        let spec = AugmentSpec::default();
        let a = augment(&x, &spec, AugmentMode::Strong, &mut ChaCha8Rng::seed_from_u64(9));
        let b = augment(&x, &spec, AugmentMode::Strong, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        assert_ne!(a, x);
    }

    #[test]
    fn strong_dropout_fraction_concentrates() {
        // Binomial(1000, 0.2) has sd ≈ 12.6, so [150, 250] is ~4 sd each side.
        let x = ramp(1000);
        let spec = AugmentSpec {
            weak_sigma: 0.0,
            strong_sigma: 0.0,
            strong_dropout: 0.2,
        };
        let out = augment(&x, &spec, AugmentMode::Strong, &mut ChaCha8Rng::seed_from_u64(1));
        let zeros = out.as_slice().iter().filter(|&&v| v == 0.0).count();
        assert!((150..=250).contains(&zeros), "zeroed {zeros}");
    }

    #[test]
    fn weak_never_drops() {
        let x = ramp(1000);
        let out = augment(&x, &AugmentSpec::default(), AugmentMode::Weak, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(out.as_slice().iter().all(|&v| v != 0.0));
    }
}
