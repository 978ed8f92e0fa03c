//! Frozen toy generator, low-rank adapter, slider losses and training.

mod generator;
mod lora;
mod loss;
mod train;

pub use generator::{generator_forward, StageWeights, ToyGenerator, DEFAULT_EMBED_STD, EMBED_DIM};
pub use lora::{adapter_apply, LowRankAdapter, StageFactors};
pub use loss::{
    preserving_loss, slider_interpolation, sliding_loss, sliding_loss_with, SlidingMode,
};
pub use train::{attribute_drift, slider_response, train_adapter, LossRecord, TrainConfig};
