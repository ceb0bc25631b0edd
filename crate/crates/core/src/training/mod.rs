//! Contrastive objectives, the curriculum schedule, and the training loop.

mod loss;
mod trainer;

pub use loss::{
    combined_loss, lambda_schedule, ntxent, ntxent_instrument, ntxent_mixture, pair_map,
    LossWeights,
};
pub use trainer::{
    train, train_step, MetricsRecord, Seeds, StepStats, TrainConfig, TrainOutput,
};
