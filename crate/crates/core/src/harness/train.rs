//! The training loop: supervised warm-up of the generator heads, then per
//! epoch (1) score the labeled data with the generator heads and pick
//! thresholds, (2) pseudo-label the unlabeled pool, (3) take joint optimizer
//! steps on labeled and pseudo-labeled mini-batches.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Strategy, TrainConfig};
use crate::d2l::{d2l_losses, AugmentMode, DualModel, HeadPolicy, PatchedBatch};
use crate::error::{Error, Result};
use crate::ml::{EmaState, LabelMatrix, OneCycle, OptimizerState, ScoreMatrix};
use crate::thresholding::{
    cap_thresholds, fixed_thresholds, generate_pseudo_labels, mat_search, topk_pseudo_labels,
    ThresholdVector,
};

/// Everything a training step may see: labeled data with labels, and the
/// unlabeled pool without labels.
#[derive(Clone, Copy, Debug)]
pub struct TrainingView<'a> {
    pub labeled: &'a PatchedBatch,
    pub labels: &'a LabelMatrix,
    pub unlabeled: &'a PatchedBatch,
}

impl<'a> TrainingView<'a> {
    pub fn of(data: &'a crate::data::SsmllDataset) -> Self {
        Self {
            labeled: &data.labeled,
            labels: &data.labels,
            unlabeled: &data.unlabeled,
        }
    }
}

/// One AdamW state per parameter group, so groups that receive no gradient
/// in a phase are left exactly as they are.
#[derive(Clone, Debug)]
struct Optimizers {
    backbone: OptimizerState,
    generator: OptimizerState,
    utilizer: OptimizerState,
}

/// Mutable state of one training run.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: DualModel,
    pub ema: Option<EmaState<DualModel>>,
    pub epoch: usize,
    pub step: u64,
    optimizers: Optimizers,
    schedule: Option<OneCycle>,
    rng: ChaCha8Rng,
}

/// Batch sizes and step counts derived from the data sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepPlan {
    pub batch_labeled: usize,
    pub batch_unlabeled: usize,
    pub warmup_steps_per_epoch: usize,
    pub steps_per_epoch: usize,
}

impl StepPlan {
    pub fn new(cfg: &TrainConfig, n_labeled: usize, n_unlabeled: usize) -> Self {
        let bl = cfg.batch_labeled.min(n_labeled.max(1));
        let ratio = n_unlabeled.div_ceil(n_labeled.max(1)).clamp(1, cfg.max_unlabeled_ratio);
        let bu = bl * ratio;
        let warm = n_labeled.div_ceil(bl).max(1);
        // Supervised runs take the same number of steps as the others.
        let joint = warm.max(n_unlabeled.div_ceil(bu));
        Self {
            batch_labeled: bl,
            batch_unlabeled: bu,
            warmup_steps_per_epoch: warm,
            steps_per_epoch: joint,
        }
    }

    pub fn total_steps(&self, cfg: &TrainConfig) -> u64 {
        (self.warmup_steps_per_epoch * cfg.warmup_epochs + self.steps_per_epoch * cfg.epochs) as u64
    }
}

/// Endless shuffled index stream, reshuffled at every pass.
#[derive(Clone, Debug)]
struct Cycler {
    order: Vec<usize>,
    pos: usize,
}

impl Cycler {
    fn new(n: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Self { order, pos: 0 }
    }

    fn take(&mut self, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        while out.len() < k && !self.order.is_empty() {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

impl TrainState {
    pub fn new(cfg: &TrainConfig, dim: usize, classes: usize, plan: &StepPlan, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = DualModel::init(cfg.backbone, dim, classes, &mut rng);
        let optimizers = Optimizers {
            backbone: OptimizerState::new(&model.backbone, cfg.optimizer),
            generator: OptimizerState::new(&model.generator, cfg.optimizer),
            utilizer: OptimizerState::new(&model.utilizer, cfg.optimizer),
        };
        let schedule = cfg
            .one_cycle
            .then(|| OneCycle::new(cfg.optimizer.lr, plan.total_steps(cfg)));
        Self {
            model,
            ema: None,
            epoch: 0,
            step: 0,
            optimizers,
            schedule,
            rng,
        }
    }

    pub fn current_lr(&self, cfg: &TrainConfig) -> f64 {
        self.schedule.map_or(cfg.optimizer.lr, |s| s.lr_at(self.step))
    }

    /// Parameters used to score data: the EMA shadow once it exists (and the
    /// config asks for it), otherwise the live model.
    pub fn scoring_model(&self, cfg: &TrainConfig) -> &DualModel {
        match (&self.ema, cfg.ema_for_pseudo_labels) {
            (Some(e), true) => &e.shadow,
            _ => &self.model,
        }
    }

    /// Parameters used for evaluation: EMA shadow when available.
    pub fn eval_model(&self) -> &DualModel {
        self.ema.as_ref().map_or(&self.model, |e| &e.shadow)
    }
}

/// Supervised warm-up of the backbone and generator heads on labeled data.
/// The utilizer heads are not touched. Initializes the EMA afterwards.
pub fn warmup(state: &mut TrainState, view: TrainingView<'_>, cfg: &TrainConfig, plan: &StepPlan) -> Result<Vec<f64>> {
    if view.labeled.is_empty() {
        return Err(Error::Validation("warm-up needs labeled data".into()));
    }
    let alpha = cfg.temperature()?;
    let mut cycler = Cycler::new(view.labeled.len(), &mut state.rng);
    let mut losses = Vec::with_capacity(cfg.warmup_epochs);
    for _ in 0..cfg.warmup_epochs {
        let mut epoch_loss = 0.0;
        for _ in 0..plan.warmup_steps_per_epoch {
            let idx = cycler.take(plan.batch_labeled, &mut state.rng);
            let batch = view.labeled.select(&idx).augmented(&cfg.augment, AugmentMode::Strong, &mut state.rng);
            let labels = view.labels.select_rows(&idx);
            let out = d2l_losses(&state.model, &batch, &labels, None, alpha, &cfg.loss, cfg.reduction)?;
            epoch_loss += out.loss_labeled;
            let lr = state.current_lr(cfg);
            let o = &mut state.optimizers;
            o.backbone.step_with_lr(&mut state.model.backbone, &out.grads.backbone, lr)?;
            o.generator.step_with_lr(&mut state.model.generator, &out.grads.generator, lr)?;
            state.step += 1;
        }
        losses.push(epoch_loss / plan.warmup_steps_per_epoch as f64);
    }
    state.ema = Some(EmaState::new(&state.model, cfg.ema_decay)?);
    Ok(losses)
}

/// What one joint epoch produced.
#[derive(Clone, Debug)]
pub struct EpochOutput {
    pub thresholds: Option<ThresholdVector>,
    /// Metric achieved per class on labeled data by the chosen thresholds.
    pub labeled_metric: Option<Vec<f64>>,
    pub pseudo_labels: Option<LabelMatrix>,
    pub loss_labeled: f64,
    pub loss_unlabeled: f64,
    pub lr: f64,
}

fn generator_scores(
    state: &mut TrainState,
    cfg: &TrainConfig,
    data: &PatchedBatch,
) -> Result<ScoreMatrix> {
    let alpha = cfg.temperature()?;
    let weak = data.augmented(&cfg.augment, AugmentMode::Weak, &mut state.rng);
    state.scoring_model(cfg).predict(&weak, alpha, HeadPolicy::Generator)
}

/// Thresholds and pseudo-labels for the unlabeled pool under `cfg.strategy`.
/// Thresholds are computed exactly once, before any step of the epoch.
fn pseudo_label_pool(
    state: &mut TrainState,
    view: TrainingView<'_>,
    cfg: &TrainConfig,
) -> Result<(Option<ThresholdVector>, Option<Vec<f64>>, Option<LabelMatrix>)> {
    if !cfg.strategy.uses_unlabeled() || view.unlabeled.is_empty() {
        return Ok((None, None, None));
    }
    let classes = view.labels.cols();
    let labeled_scores = generator_scores(state, cfg, view.labeled)?;
    let unlabeled_scores = generator_scores(state, cfg, view.unlabeled)?;
    let mat = mat_search(&labeled_scores, view.labels, cfg.metric, cfg.grid()?)?;

    let (tau, pseudo) = match cfg.strategy {
        Strategy::Mat => {
            let pl = generate_pseudo_labels(&unlabeled_scores, &mat.thresholds)?;
            (Some(mat.thresholds.clone()), pl)
        }
        Strategy::Cap => {
            let t = cap_thresholds(&unlabeled_scores, view.labels)?;
            let pl = generate_pseudo_labels(&unlabeled_scores, &t)?;
            (Some(t), pl)
        }
        Strategy::Fixed { tau } => {
            let t = fixed_thresholds(tau, classes)?;
            let pl = generate_pseudo_labels(&unlabeled_scores, &t)?;
            (Some(t), pl)
        }
        Strategy::TopK { k } => (None, topk_pseudo_labels(&unlabeled_scores, k.min(classes))?),
        Strategy::Supervised => unreachable!("handled above"),
    };
    // The labeled-set metric of whatever thresholds are in force.
    let achieved = match &tau {
        Some(t) if cfg.strategy != Strategy::Mat => {
            let pl = generate_pseudo_labels(&labeled_scores, t)?;
            let counts = crate::metrics::confusion_counts(&pl, view.labels)?;
            counts.iter().map(|c| crate::metrics::class_metric(c, cfg.metric)).collect()
        }
        _ => mat.achieved,
    };
    Ok((tau, Some(achieved), Some(pseudo)))
}

/// One joint epoch. Generator heads only ever see labeled batches; utilizer
/// heads only pseudo-labeled ones.
pub fn train_epoch(state: &mut TrainState, view: TrainingView<'_>, cfg: &TrainConfig, plan: &StepPlan) -> Result<EpochOutput> {
    let alpha = cfg.temperature()?;
    if state.ema.is_none() {
        state.ema = Some(EmaState::new(&state.model, cfg.ema_decay)?);
    }
    let (thresholds, labeled_metric, pseudo_labels) = pseudo_label_pool(state, view, cfg)?;

    let mut lab_cycler = Cycler::new(view.labeled.len(), &mut state.rng);
    let mut unl_cycler = Cycler::new(view.unlabeled.len(), &mut state.rng);
    let (mut sum_l, mut sum_u) = (0.0, 0.0);
    let mut lr = state.current_lr(cfg);
    for _ in 0..plan.steps_per_epoch {
        let li = lab_cycler.take(plan.batch_labeled, &mut state.rng);
        let lb = view.labeled.select(&li).augmented(&cfg.augment, AugmentMode::Strong, &mut state.rng);
        let ly = view.labels.select_rows(&li);

        let unlabeled_part = match &pseudo_labels {
            Some(pl) => {
                let ui = unl_cycler.take(plan.batch_unlabeled, &mut state.rng);
                let ub = view.unlabeled.select(&ui).augmented(&cfg.augment, AugmentMode::Strong, &mut state.rng);
                Some((ub, pl.select_rows(&ui)))
            }
            None => None,
        };
        let out = d2l_losses(
            &state.model,
            &lb,
            &ly,
            unlabeled_part.as_ref().map(|(b, y)| (b, y)),
            alpha,
            &cfg.loss,
            cfg.reduction,
        )?;
        sum_l += out.loss_labeled;
        sum_u += out.loss_unlabeled;

        lr = state.current_lr(cfg);
        let o = &mut state.optimizers;
        o.backbone.step_with_lr(&mut state.model.backbone, &out.grads.backbone, lr)?;
        o.generator.step_with_lr(&mut state.model.generator, &out.grads.generator, lr)?;
        if unlabeled_part.is_some() {
            o.utilizer.step_with_lr(&mut state.model.utilizer, &out.grads.utilizer, lr)?;
        }
        state.step += 1;
        if let Some(ema) = state.ema.as_mut() {
            ema.update(&state.model)?;
        }
    }
    state.epoch += 1;
    let steps = plan.steps_per_epoch.max(1) as f64;
    Ok(EpochOutput {
        thresholds,
        labeled_metric,
        pseudo_labels,
        loss_labeled: sum_l / steps,
        loss_unlabeled: sum_u / steps,
        lr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, split_labeled, SynthConfig};
    use crate::ml::{BackboneSpec, Parameters};

    fn small() -> (crate::data::SsmllDataset, TrainConfig) {
        let corpus = generate_synthetic(&SynthConfig::uniform(4, 8, 2, 400, 100, 0.3, 3)).unwrap();
        let data = split_labeled(&corpus, 0.1, 4).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            warmup_epochs: 2,
            optimizer: crate::ml::AdamWConfig {
                lr: 1e-2,
                ..Default::default()
            },
            ema_decay: 0.9,
            backbone: BackboneSpec::Hidden { width: 8 },
            ..Default::default()
        };
        (data, cfg)
    }

    #[test]
    fn step_plan_pairs_batches() {
        let cfg = TrainConfig::default();
        let p = StepPlan::new(&cfg, 105, 1995);
        assert_eq!(p.batch_labeled, 16);
        assert_eq!(p.batch_unlabeled, 64);
        assert_eq!(p.warmup_steps_per_epoch, 7);
        assert_eq!(p.steps_per_epoch, 32);
        let p = StepPlan::new(&cfg, 100, 150);
        assert_eq!(p.batch_unlabeled, 32);
    }

    #[test]
    fn zero_warmup_leaves_model_unchanged() {
        let (data, mut cfg) = small();
        cfg.warmup_epochs = 0;
        let plan = StepPlan::new(&cfg, data.labeled.len(), data.unlabeled.len());
        let mut st = TrainState::new(&cfg, data.dim(), data.classes(), &plan, 1);
        let before = st.model.clone();
        warmup(&mut st, TrainingView::of(&data), &cfg, &plan).unwrap();
        assert_eq!(st.model, before);
        assert_eq!(st.ema.as_ref().unwrap().shadow, before);
    }

    #[test]
    fn warmup_leaves_utilizer_untouched() {
        let (data, cfg) = small();
        let plan = StepPlan::new(&cfg, data.labeled.len(), data.unlabeled.len());
        let mut st = TrainState::new(&cfg, data.dim(), data.classes(), &plan, 1);
        let before = st.model.clone();
        warmup(&mut st, TrainingView::of(&data), &cfg, &plan).unwrap();
        assert_eq!(st.model.utilizer, before.utilizer);
        assert_ne!(st.model.generator, before.generator);
        assert_ne!(st.model.backbone, before.backbone);
    }

    #[test]
    fn supervised_epoch_never_touches_utilizer() {
        let (data, mut cfg) = small();
        cfg.strategy = Strategy::Supervised;
        let plan = StepPlan::new(&cfg, data.labeled.len(), data.unlabeled.len());
        let mut st = TrainState::new(&cfg, data.dim(), data.classes(), &plan, 1);
        let before = st.model.utilizer.clone();
        let out = train_epoch(&mut st, TrainingView::of(&data), &cfg, &plan).unwrap();
        assert!(out.pseudo_labels.is_none());
        assert_eq!(out.loss_unlabeled, 0.0);
        assert_eq!(st.model.utilizer, before);
    }

    #[test]
    fn thresholds_have_class_length() {
        let (data, cfg) = small();
        let plan = StepPlan::new(&cfg, data.labeled.len(), data.unlabeled.len());
        let mut st = TrainState::new(&cfg, data.dim(), data.classes(), &plan, 1);
        warmup(&mut st, TrainingView::of(&data), &cfg, &plan).unwrap();
        let out = train_epoch(&mut st, TrainingView::of(&data), &cfg, &plan).unwrap();
        let t = out.thresholds.unwrap();
        assert_eq!(t.len(), data.classes());
        assert!(t.tau.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(out.pseudo_labels.unwrap().rows(), data.unlabeled.len());
        assert!(st.model.is_finite());
    }
}
