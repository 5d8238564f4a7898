//! Synthetic leave-one-domain-out benchmark and a small stacked-S6
//! classifier trained with AdamW under a cosine schedule.

mod data;
mod model;
mod optim;
mod train;

pub use data::{synth_dataset, DomainData, DomainStyle, SynthDGConfig, SynthWorld};
pub use model::{argmax, softmax_cross_entropy, BlockTrace, ForwardTrace, Model, ModelConfig, ModelGrads};
pub use optim::{adamw_step, cosine_lr, AdamWConfig, AdamWState};
pub use train::{
    accuracy, gap_bank, lodo_job, run_lodo, train_model, DomainSummary, EpochRecord, JobOutcome, LodoConfig,
    LodoReport, MeanStd, TrainConfig, GAP_SPLIT, TRAIN_SPLIT,
};
