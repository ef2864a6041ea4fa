use rand::Rng;
use serde::{Deserialize, Serialize};

use super::aggregate::{aggregate_batch, Temperature};
use super::instance::{PatchedBatch, PatchedInstance};
use crate::error::{Error, Result};
use crate::losses::{loss_wrt_probs, LossKind, Reduction};
use crate::ml::{
    linear_forward, sigmoid, Backbone, BackboneCache, BackboneSpec, DenseMatrix, LabelMatrix,
    LinearParams, Parameters, ScoreMatrix,
};

/// A correlative (whole-instance) head and a discriminative (per-patch) head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualHeadPair {
    pub global_head: LinearParams,
    pub local_head: LinearParams,
}

impl DualHeadPair {
    pub fn init<R: Rng + ?Sized>(d: usize, classes: usize, rng: &mut R) -> Self {
        Self {
            global_head: LinearParams::init(d, classes, rng),
            local_head: LinearParams::init(d, classes, rng),
        }
    }

    pub fn classes(&self) -> usize {
        self.global_head.d_out()
    }
}

impl Parameters for DualHeadPair {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.global_head.tensors();
        t.extend(self.local_head.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.global_head.tensors_mut();
        t.extend(self.local_head.tensors_mut());
        t
    }
}

/// Which head pair(s) produce evaluation scores.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadPolicy {
    /// Pseudo-label generator heads, trained on labeled data only.
    Generator,
    /// Utilizer heads, trained on pseudo-labels.
    Utilizer,
    /// Elementwise mean of both pairs' final probabilities.
    #[default]
    Mean,
}

/// Shared backbone plus generator and utilizer head pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualModel {
    pub backbone: Backbone,
    pub generator: DualHeadPair,
    pub utilizer: DualHeadPair,
}

impl DualModel {
    pub fn init<R: Rng + ?Sized>(spec: BackboneSpec, d_in: usize, classes: usize, rng: &mut R) -> Self {
        let backbone = Backbone::build(spec, d_in, rng);
        let h = backbone.output_dim();
        let generator = DualHeadPair::init(h, classes, rng);
        let utilizer = DualHeadPair::init(h, classes, rng);
        Self {
            backbone,
            generator,
            utilizer,
        }
    }

    pub fn classes(&self) -> usize {
        self.generator.classes()
    }

    pub fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        g.fill_zero();
        g
    }

    /// Final probabilities for a batch under the given head policy.
    pub fn predict(&self, batch: &PatchedBatch, alpha: Temperature, policy: HeadPolicy) -> Result<ScoreMatrix> {
        match policy {
            HeadPolicy::Generator => Ok(forward_pair(&self.backbone, &self.generator, batch, alpha)?.p_final),
            HeadPolicy::Utilizer => Ok(forward_pair(&self.backbone, &self.utilizer, batch, alpha)?.p_final),
            HeadPolicy::Mean => {
                let g = forward_pair(&self.backbone, &self.generator, batch, alpha)?.p_final;
                let u = forward_pair(&self.backbone, &self.utilizer, batch, alpha)?.p_final;
                let mut out = g;
                for (o, v) in out.as_mut_slice().iter_mut().zip(u.as_slice()) {
                    *o = 0.5 * (*o + v);
                }
                Ok(out)
            }
        }
    }
}

impl Parameters for DualModel {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.backbone.tensors();
        t.extend(self.generator.tensors());
        t.extend(self.utilizer.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.backbone.tensors_mut();
        t.extend(self.generator.tensors_mut());
        t.extend(self.utilizer.tensors_mut());
        t
    }
}

/// Forward pass of one head pair, with everything the backward pass needs.
#[derive(Clone, Debug)]
pub struct PairForward {
    pub p_global: ScoreMatrix,
    pub p_local: ScoreMatrix,
    pub p_final: ScoreMatrix,
    patch_probs: Vec<DenseMatrix>,
    patch_weights: Vec<DenseMatrix>,
    global_features: DenseMatrix,
    global_cache: BackboneCache,
    patch_features: Vec<DenseMatrix>,
    patch_caches: Vec<BackboneCache>,
    alpha: Temperature,
}

pub fn forward_pair(
    backbone: &Backbone,
    heads: &DualHeadPair,
    batch: &PatchedBatch,
    alpha: Temperature,
) -> Result<PairForward> {
    let (global_features, global_cache) = backbone.forward(&batch.global)?;
    let p_global = sigmoid(&linear_forward(&heads.global_head, &global_features)?);

    let mut patch_features = Vec::with_capacity(batch.n_patches());
    let mut patch_caches = Vec::with_capacity(batch.n_patches());
    let mut patch_probs = Vec::with_capacity(batch.n_patches());
    for z in &batch.patches {
        let (l, c) = backbone.forward(z)?;
        patch_probs.push(sigmoid(&linear_forward(&heads.local_head, &l)?));
        patch_features.push(l);
        patch_caches.push(c);
    }
    let (p_local, patch_weights) = aggregate_batch(&patch_probs, alpha);

    let mut p_final = p_global.clone();
    for (f, l) in p_final.as_mut_slice().iter_mut().zip(p_local.as_slice()) {
        *f = 0.5 * (*f + l);
    }
    Ok(PairForward {
        p_global,
        p_local,
        p_final,
        patch_probs,
        patch_weights,
        global_features,
        global_cache,
        patch_features,
        patch_caches,
        alpha,
    })
}

/// Backpropagates `grad_final = ∂L/∂p_final` through the pair, accumulating
/// into `head_grads` and `backbone_grads`.
pub fn backward_pair(
    backbone: &Backbone,
    heads: &DualHeadPair,
    fwd: &PairForward,
    grad_final: &DenseMatrix,
    head_grads: &mut DualHeadPair,
    backbone_grads: &mut Backbone,
) -> Result<()> {
    if grad_final.shape() != fwd.p_final.shape() {
        return Err(Error::dim(
            "backward_pair",
            format!("{:?}", fwd.p_final.shape()),
            format!("{:?}", grad_final.shape()),
        ));
    }
    let a = fwd.alpha.value();

    // Global path: p_final = (p_g + p_l)/2, p_g = σ(z_g).
    let mut dz_global = grad_final.clone();
    for (d, &p) in dz_global.as_mut_slice().iter_mut().zip(fwd.p_global.as_slice()) {
        *d *= 0.5 * p * (1.0 - p);
    }
    head_grads
        .global_head
        .axpy(1.0, &heads.global_head.backward(&fwd.global_features, &dz_global)?);
    let dg = heads.global_head.backward_input(&dz_global)?;
    backbone.backward_into(&fwd.global_cache, &dg, backbone_grads)?;

    // Local path: ∂p_l/∂p_o = w_o·(1 + (p_o − p_l)/α).
    for (o, probs) in fwd.patch_probs.iter().enumerate() {
        let w = &fwd.patch_weights[o];
        let mut dz = DenseMatrix::zeros(probs.rows(), probs.cols());
        for i in 0..probs.as_slice().len() {
            let p_o = probs.as_slice()[i];
            let p_l = fwd.p_local.as_slice()[i];
            let w_o = w.as_slice()[i];
            let d_po = 0.5 * grad_final.as_slice()[i] * w_o * (1.0 + (p_o - p_l) / a);
            dz.as_mut_slice()[i] = d_po * p_o * (1.0 - p_o);
        }
        head_grads
            .local_head
            .axpy(1.0, &heads.local_head.backward(&fwd.patch_features[o], &dz)?);
        let dl = heads.local_head.backward_input(&dz)?;
        backbone.backward_into(&fwd.patch_caches[o], &dl, backbone_grads)?;
    }
    Ok(())
}

/// Global, local and fused probabilities of a single instance.
pub fn dual_predict(
    instance: &PatchedInstance,
    backbone: &Backbone,
    heads: &DualHeadPair,
    alpha: Temperature,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let batch = PatchedBatch::from_instances(std::slice::from_ref(instance))?;
    let f = forward_pair(backbone, heads, &batch, alpha)?;
    Ok((f.p_global.into_vec(), f.p_local.into_vec(), f.p_final.into_vec()))
}

/// Losses and parameter gradients of one joint update.
#[derive(Clone, Debug)]
pub struct D2lLosses {
    pub loss_labeled: f64,
    pub loss_unlabeled: f64,
    pub grads: DualModel,
}

impl D2lLosses {
    pub fn total(&self) -> f64 {
        self.loss_labeled + self.loss_unlabeled
    }
}

/// Labeled loss through the generator heads plus pseudo-label loss through
/// the utilizer heads.
///
/// Both inputs are expected to be strong-augmented views already. The
/// generator heads receive gradient only from the labeled term, the utilizer
/// heads only from the unlabeled term, and the backbone from both.
pub fn d2l_losses(
    model: &DualModel,
    labeled: &PatchedBatch,
    labels: &LabelMatrix,
    unlabeled: Option<(&PatchedBatch, &LabelMatrix)>,
    alpha: Temperature,
    loss: &LossKind,
    reduction: Reduction,
) -> Result<D2lLosses> {
    if labeled.len() != labels.rows() {
        return Err(Error::dim("d2l_losses labeled", labeled.len(), labels.rows()));
    }
    let mut grads = model.zeros_like();

    let mut loss_labeled = 0.0;
    if !labeled.is_empty() {
        let fwd = forward_pair(&model.backbone, &model.generator, labeled, alpha)?;
        let out = loss_wrt_probs(loss, &fwd.p_final, labels, reduction)?;
        loss_labeled = out.loss;
        backward_pair(
            &model.backbone,
            &model.generator,
            &fwd,
            &out.grad,
            &mut grads.generator,
            &mut grads.backbone,
        )?;
    }

    let mut loss_unlabeled = 0.0;
    if let Some((batch, pseudo)) = unlabeled {
        if batch.len() != pseudo.rows() {
            return Err(Error::dim("d2l_losses pseudo-labels", batch.len(), pseudo.rows()));
        }
        if !batch.is_empty() {
            let fwd = forward_pair(&model.backbone, &model.utilizer, batch, alpha)?;
            let out = loss_wrt_probs(loss, &fwd.p_final, pseudo, reduction)?;
            loss_unlabeled = out.loss;
            backward_pair(
                &model.backbone,
                &model.utilizer,
                &fwd,
                &out.grad,
                &mut grads.utilizer,
                &mut grads.backbone,
            )?;
        }
    }

    Ok(D2lLosses {
        loss_labeled,
        loss_unlabeled,
        grads,
    })
}
