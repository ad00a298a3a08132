//! Joint optimization of the dictionary, the per-sample placement logits and
//! the flow network, with configuration and checkpoints.

mod adam;
mod checkpoint;
mod config;
mod gradsuite;
mod loss;
mod model;
mod train;

pub use adam::{Adam, SparseAdam};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, MAGIC, VERSION};
pub use config::{LogitOptimizer, TrainConfig};
pub use gradsuite::{gradient_suite, tiny_instance, GradInstance, TermReport, TERMS};
pub use loss::{
    concat_flat, mean_breakdown, sample_loss_op, split_flat, LossBreakdown, ParamVars, SampleLossVars,
    VelocitySource,
};
pub use model::{derived_rng, make_samples, net_config, Model, OptState, SampleDraw, TrainSample};
pub use train::{
    fit, infer_logits, reconstruct, reconstruction_rmse, schedule_at, steps_per_epoch, Schedule, train, train_step,
    utilization, write_metrics_csv, EpochMetrics, DIVERGENCE_LIMIT,
};
