use serde::{Deserialize, Serialize};

use crate::d2l::{AugmentSpec, HeadPolicy, Temperature};
use crate::data::SynthConfig;
use crate::error::{Error, Result};
use crate::losses::{LossKind, Reduction};
use crate::metrics::MetricKind;
use crate::ml::{AdamWConfig, BackboneSpec};
use crate::thresholding::GridSpec;

/// How unlabeled instances receive pseudo-labels each epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Strategy {
    /// Metric-adaptive per-class thresholds searched on labeled data.
    #[default]
    Mat,
    /// Thresholds matching labeled class proportions.
    Cap,
    /// One constant threshold for all classes.
    Fixed { tau: f64 },
    /// The `k` highest-scoring classes of every instance.
    TopK { k: usize },
    /// No pseudo-labels; labeled data only.
    Supervised,
}

impl Strategy {
    pub fn label(&self) -> String {
        match self {
            Strategy::Mat => "mat".into(),
            Strategy::Cap => "cap".into(),
            Strategy::Fixed { tau } => format!("fixed_{tau}"),
            Strategy::TopK { k } => format!("topk_{k}"),
            Strategy::Supervised => "supervised".into(),
        }
    }

    pub fn uses_unlabeled(&self) -> bool {
        !matches!(self, Strategy::Supervised)
    }
}

/// Training hyperparameters. Defaults follow the reference setup; desk-scale
/// experiments typically raise the learning rate and lower the EMA decay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Joint-training epochs after warm-up.
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub batch_labeled: usize,
    /// Upper bound on unlabeled-to-labeled batch size ratio.
    pub max_unlabeled_ratio: usize,
    pub optimizer: AdamWConfig,
    /// Apply the one-cycle learning-rate schedule (peak = `optimizer.lr`).
    pub one_cycle: bool,
    pub ema_decay: f64,
    /// Generate thresholds and pseudo-labels from EMA parameters.
    pub ema_for_pseudo_labels: bool,
    pub metric: MetricKind,
    pub alpha: f64,
    pub grid_step: f64,
    pub strategy: Strategy,
    pub loss: LossKind,
    pub reduction: Reduction,
    pub backbone: BackboneSpec,
    pub augment: AugmentSpec,
    /// Head pair(s) used for evaluation. `None` picks the mean of both pairs,
    /// or the generator pair alone when no pseudo-labels are used.
    pub eval_policy: Option<HeadPolicy>,
    /// Binarization threshold for CF1 / OF1 on the test split.
    pub test_threshold: f64,
    /// Epochs without improvement of the labeled-set monitor before stopping.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            warmup_epochs: 12,
            batch_labeled: 16,
            max_unlabeled_ratio: 4,
            optimizer: AdamWConfig::default(),
            one_cycle: true,
            ema_decay: 0.9997,
            ema_for_pseudo_labels: true,
            metric: MetricKind::FBeta { beta: 0.5 },
            alpha: 1.0,
            grid_step: 0.01,
            strategy: Strategy::Mat,
            loss: LossKind::default(),
            reduction: Reduction::Sum,
            backbone: BackboneSpec::Hidden { width: 64 },
            augment: AugmentSpec::default(),
            eval_policy: None,
            test_threshold: 0.5,
            patience: Some(10),
        }
    }
}

impl TrainConfig {
    pub fn temperature(&self) -> Result<Temperature> {
        Temperature::new(self.alpha).map_err(|e| Error::config("train.alpha", e.to_string()))
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.grid_step).map_err(|e| Error::config("train.grid_step", e.to_string()))
    }

    pub fn eval_policy(&self) -> HeadPolicy {
        self.eval_policy.unwrap_or(if self.strategy.uses_unlabeled() {
            HeadPolicy::Mean
        } else {
            HeadPolicy::Generator
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_labeled == 0 {
            return Err(Error::config("train.batch_labeled", "must be positive"));
        }
        if self.max_unlabeled_ratio == 0 {
            return Err(Error::config("train.max_unlabeled_ratio", "must be positive"));
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && o.lr.is_finite()) {
            return Err(Error::config("train.optimizer.lr", "must be positive"));
        }
        if !(o.weight_decay >= 0.0) {
            return Err(Error::config("train.optimizer.weight_decay", "must be non-negative"));
        }
        if !((0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.eps > 0.0) {
            return Err(Error::config("train.optimizer", "moment decays must lie in [0, 1) and eps > 0"));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::config("train.ema_decay", "must lie in [0, 1)"));
        }
        self.metric
            .validate()
            .map_err(|e| Error::config("train.metric", e.to_string()))?;
        self.temperature()?;
        self.grid()?;
        self.loss
            .validate()
            .map_err(|e| Error::config("train.loss", e.to_string()))?;
        self.augment
            .validate()
            .map_err(|e| Error::config("train.augment", e.to_string()))?;
        if let BackboneSpec::Hidden { width: 0 } = self.backbone {
            return Err(Error::config("train.backbone.width", "must be positive"));
        }
        match self.strategy {
            Strategy::Fixed { tau } if !(0.0..=1.0).contains(&tau) => {
                return Err(Error::config("train.strategy.tau", "must lie in [0, 1]"));
            }
            Strategy::TopK { k: 0 } => return Err(Error::config("train.strategy.k", "must be positive")),
            _ => {}
        }
        if !(0.0..=1.0).contains(&self.test_threshold) {
            return Err(Error::config("train.test_threshold", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// One end-to-end run: data generation, split, training, evaluation.
///
/// `seed` drives everything; the generator seed inside `data` is replaced by a
/// value derived from it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub seed: u64,
    pub labeled_fraction: f64,
    pub data: SynthConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_name() -> String {
    "experiment".into()
}

/// Independent sub-seeds for the stages of one experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedPlan {
    pub data: u64,
    pub split: u64,
    pub train: u64,
}

impl ExperimentConfig {
    pub fn seeds(&self) -> SeedPlan {
        // SplitMix64 finalizer: decorrelates consecutive user seeds.
        let mix = |x: u64| {
            let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^ (z >> 31)
        };
        let base = mix(self.seed);
        SeedPlan {
            data: mix(base ^ 1),
            split: mix(base ^ 2),
            train: mix(base ^ 3),
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        let mut d = self.data.clone();
        d.seed = self.seeds().data;
        d
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.labeled_fraction > 0.0 && self.labeled_fraction < 1.0) {
            return Err(Error::config("labeled_fraction", "must lie in (0, 1)"));
        }
        self.data.validate().map_err(|e| match e {
            Error::Config { field, message } => Error::config(format!("data.{field}"), message),
            other => other,
        })?;
        self.train.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::config(format!("line {} column {}", e.line(), e.column()), e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
