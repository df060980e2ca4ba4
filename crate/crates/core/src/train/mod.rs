//! Loss, learning-rate schedule, optimizer, checkpoints and the training loop.

pub mod checkpoint;
mod config;
mod loss;
mod optim;
mod sample;
mod schedule;
mod trainer;

pub use checkpoint::{Checkpoint, CheckpointMeta, OptimizerSection, TrainState};
pub use config::TrainConfig;
pub use loss::{label_smoothing_loss, smoothing_distribution, LossOutput};
pub use optim::{Adam, AdamConfig, Moments};
pub use sample::dynamic_sample;
pub use schedule::noam_lr;
pub use trainer::{
    evaluate, run_dir, train_loop, unit_inputs, unit_seed, EvalResult, StepStats, TrainOutcome, Trainer, UnitStats,
};
