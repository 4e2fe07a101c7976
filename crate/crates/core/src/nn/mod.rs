//! The convolutional backbone and its building blocks.

pub mod accounting;
pub mod block;
pub mod checkpoint;
pub mod config;
pub mod dadm;
pub mod model;
pub mod ops;
pub mod params;
pub mod stgu;

pub use accounting::{count_parameters, estimate_flops, stage_lengths, FlopReport};
pub use block::AdeBlock;
pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, OptimizerState, ScheduleState, TrainingMeta,
};
pub use config::{GatingAxis, ModelConfig, NormKind, StemKind, Variant};
pub use dadm::Dadm;
pub use model::{IoNext, Tape};
pub use ops::Mode;
pub use params::{Gradients, ParamId, ParamRole, ParameterSet};
pub use stgu::Stgu;
