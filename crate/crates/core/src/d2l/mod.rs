//! Dual-decoupled prediction and training losses.
//!
//! Each instance is scored twice by a head pair: once as a whole through the
//! correlative head, and once patch by patch through the discriminative head,
//! whose per-patch probabilities are merged by a temperature softmax
//! ([`aggregate_patches`]). The pair's final probability is the mean of the
//! two.
//!
//! Two such pairs share one backbone. The *generator* pair is trained only on
//! labeled data and produces pseudo-labels; the *utilizer* pair is trained
//! only on those pseudo-labels. Errors in pseudo-labels therefore never flow
//! back into the heads that produced them.

mod aggregate;
mod augment;
mod instance;
mod model;

pub use aggregate::{aggregate_patches, patch_weights, Temperature};
pub use augment::{augment, AugmentMode, AugmentSpec};
pub use instance::{PatchedBatch, PatchedInstance};
pub use model::{
    backward_pair, d2l_losses, dual_predict, forward_pair, D2lLosses, DualHeadPair, DualModel,
    HeadPolicy, PairForward,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{LossKind, Reduction};
    use crate::ml::{BackboneSpec, DenseMatrix, LabelMatrix, Parameters};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_batch(rng: &mut ChaCha8Rng, rows: usize, d: usize, n: usize) -> PatchedBatch {
        let mut m = || {
            DenseMatrix::from_vec(rows, d, (0..rows * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
        };
        let global = m();
        let patches = (0..n).map(|_| m()).collect();
        PatchedBatch::new(global, patches).unwrap()
    }

    fn random_labels(rng: &mut ChaCha8Rng, rows: usize, k: usize) -> LabelMatrix {
        LabelMatrix::from_vec(rows, k, (0..rows * k).map(|_| u8::from(rng.random_bool(0.4))).collect()).unwrap()
    }

    fn perturb(model: &DualModel, idx: usize, delta: f64) -> DualModel {
        let mut m = model.clone();
        let mut i = idx;
        for t in m.tensors_mut() {
            if i < t.len() {
                t[i] += delta;
                break;
            }
            i -= t.len();
        }
        m
    }

    #[test]
    fn full_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let model = DualModel::init(BackboneSpec::Hidden { width: 5 }, 4, 3, &mut rng);
        let lb = random_batch(&mut rng, 3, 4, 4);
        let ly = random_labels(&mut rng, 3, 3);
        let ub = random_batch(&mut rng, 5, 4, 4);
        let uy = random_labels(&mut rng, 5, 3);
        let alpha = Temperature::new(0.7).unwrap();
        // BCE keeps the loss smooth everywhere (no margin kink).
        let loss = LossKind::Bce;
        let eval = |m: &DualModel| {
            d2l_losses(m, &lb, &ly, Some((&ub, &uy)), alpha, &loss, Reduction::Sum)
                .unwrap()
                .total()
        };
        let out = d2l_losses(&model, &lb, &ly, Some((&ub, &uy)), alpha, &loss, Reduction::Sum).unwrap();
        let analytic: Vec<f64> = out.grads.tensors().concat();
        let eps = 1e-6;
        for idx in 0..model.num_params() {
            let fd = (eval(&perturb(&model, idx, eps)) - eval(&perturb(&model, idx, -eps))) / (2.0 * eps);
            let tol = 1e-6 * (1.0 + fd.abs());
            assert!((fd - analytic[idx]).abs() < tol, "param {idx}: fd {fd} vs {}", analytic[idx]);
        }
    }

    #[test]
    fn head_gradients_are_isolated() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = DualModel::init(BackboneSpec::Hidden { width: 6 }, 4, 3, &mut rng);
        let lb = random_batch(&mut rng, 4, 4, 4);
        let ly = random_labels(&mut rng, 4, 3);
        let ub = random_batch(&mut rng, 6, 4, 4);
        let uy = random_labels(&mut rng, 6, 3);
        let alpha = Temperature::default();
        let loss = LossKind::default();

        let only_l = d2l_losses(&model, &lb, &ly, None, alpha, &loss, Reduction::Sum).unwrap();
        assert!(only_l.grads.utilizer.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
        let empty = PatchedBatch::empty(4, 4);
        let empty_y = LabelMatrix::zeros(0, 3);
        let only_u = d2l_losses(&model, &empty, &empty_y, Some((&ub, &uy)), alpha, &loss, Reduction::Sum).unwrap();
        assert!(only_u.grads.generator.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
        assert_eq!(only_u.loss_labeled, 0.0);

        let both = d2l_losses(&model, &lb, &ly, Some((&ub, &uy)), alpha, &loss, Reduction::Sum).unwrap();
        assert_eq!(both.loss_labeled, only_l.loss_labeled);
        assert_eq!(both.grads.generator, only_l.grads.generator);
        assert_eq!(both.grads.utilizer, only_u.grads.utilizer);
    }

    #[test]
    fn missing_pseudo_labels_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = DualModel::init(BackboneSpec::Identity, 3, 2, &mut rng);
        let lb = random_batch(&mut rng, 2, 3, 1);
        let ly = random_labels(&mut rng, 2, 2);
        let ub = random_batch(&mut rng, 4, 3, 1);
        let short = random_labels(&mut rng, 3, 2);
        let r = d2l_losses(&model, &lb, &ly, Some((&ub, &short)), Temperature::default(), &LossKind::default(), Reduction::Sum);
        assert!(r.is_err());
    }

    #[test]
    fn single_patch_reduces_to_plain_head() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let model = DualModel::init(BackboneSpec::Identity, 3, 2, &mut rng);
        let b = random_batch(&mut rng, 1, 3, 1);
        let inst = b.crop(0, 1).unwrap();
        for alpha in [0.1, 1.0, 5.0] {
            let (_, local, _) = dual_predict(&inst, &model.backbone, &model.generator, Temperature::new(alpha).unwrap()).unwrap();
            let z = crate::ml::linear_forward(&model.generator.local_head, &b.patches[0]).unwrap();
            let direct = crate::ml::sigmoid(&z);
            assert_eq!(local, direct.into_vec());
        }
    }

    #[test]
    fn final_is_mean_of_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = DualModel::init(BackboneSpec::Hidden { width: 4 }, 3, 4, &mut rng);
        let b = random_batch(&mut rng, 1, 3, 4);
        let (g, l, f) = dual_predict(&b.crop(0, 4).unwrap(), &model.backbone, &model.generator, Temperature::default()).unwrap();
        for k in 0..4 {
            assert_eq!(f[k], 0.5 * (g[k] + l[k]));
            assert!((0.0..=1.0).contains(&f[k]));
        }
        assert!(b.crop(0, 2).is_err());
    }
}
