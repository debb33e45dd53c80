//! Reverse-mode training of convolutional state space networks and a causal
//! attention baseline, with the sweep harness comparing them on the
//! synthetic tasks.

mod attention;
mod dense;
mod gradcheck;
mod harness;
mod loss;
mod optim;
mod ssm_grad;
mod tape;

pub use attention::{AttentionBaseline, AttentionLayer};
pub use gradcheck::{grad_check, GradCheckReport};
pub use harness::{
    build_model, evaluate, read_sweep_csv, run_sweep, run_sweep_with_models, sample_to_example, train_cell, train_run, write_sweep_csv,
    EpochMetrics, Model, ModelKind, SweepGrid, SweepResult, SweepRow, TaskSpec, TrainConfig, TrainHistory,
    SWEEP_HEADER,
};
pub use loss::{loss_value, LossKind, LossTarget};
pub use optim::{OptimizerKind, OptimizerState};
pub use ssm_grad::{init_ssm, SsmInit};
pub use tape::{backward, batch_loss, Example, GradientTape, Trainable};
