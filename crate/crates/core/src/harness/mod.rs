//! End-to-end training runs: warm-up, per-epoch thresholding and
//! pseudo-labeling, joint training, evaluation, and multi-run sweeps.

mod config;
mod experiment;
mod report;
mod sweep;
mod train;

pub use config::{ExperimentConfig, SeedPlan, Strategy, TrainConfig};
pub use experiment::{
    build_dataset, default_out_dir, evaluate, run_experiment, run_experiment_file, score_metrics,
    train_and_evaluate, write_run, ExperimentRun, SavedModel, OUT_DIR_ENV,
};
pub use report::{EpochRow, ExperimentReport, PseudoLabelQuality, TestMetrics};
pub use sweep::{run_sweep, SweepConfig, SweepResult, SweepRow, Variant, VariantSummary};
pub use train::{train_epoch, warmup, EpochOutput, StepPlan, TrainState, TrainingView};
