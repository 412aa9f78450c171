//! End-to-end aperture design: regularizer, annealing schedules, optimizer,
//! training loop and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod regularizer;
pub mod schedule;
pub mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{config_hash, Checkpoint, Manifest};
pub use regularizer::{binary_regularizer, binary_regularizer_grad, BinaryRegConfig};
pub use schedule::{schedule_value, ScheduleConfig};
pub use train::{
    objective, stage_psnr, train_e2e, EpochLog, Model, SchedulesConfig, StepLoss, TrainConfig, TrainLog, TrainOutcome, TrainSettings,
    Trainable, VALIDATION_STREAM,
};
