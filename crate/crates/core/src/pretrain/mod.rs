//! Losses and the two-stage pretraining schedule.

pub mod losses;
mod trainer;

pub use losses::{loss_cls, loss_rec, loss_total};
pub use trainer::{
    accuracy, classify, pretrain, read_log, stack, EpochRecord, PretrainOptions, PretrainResult, Stage, TrainState,
    LOG_HEADER,
};
