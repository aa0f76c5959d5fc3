//! Data, model, local training and the federated loop.

pub mod data;
pub mod federated;
pub mod local;
pub mod mlp;
pub mod mnist;
pub mod optim;

pub use data::{partition, synth_dataset, Dataset, LocalDataset, SynthSpec};
pub use federated::{
    collect_payloads, federated_run, model_for, AllocationMode, RoundMetrics, RunOutcome, RunSpec,
    TrajectorySource,
    BUDGET_MARGIN,
};
pub use local::{batch_schedule, local_gradient, local_update, BatchSelection};
pub use mlp::{Batch, Evaluation, Mlp, ModelParams};
pub use mnist::{load_mnist_dir, load_mnist_idx};
pub use optim::{global_step, Optimizer};
