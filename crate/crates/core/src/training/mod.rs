//! Adam optimisation, the cross-entropy training loop, evaluation and
//! checkpoint persistence.

mod adam;
mod checkpoint;
mod eval;
mod trainer;

pub use adam::{AdamConfig, OptimizerState};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, LoadedCheckpoint, MAGIC,
    VERSION,
};
pub use eval::{evaluate, predict, train_step};
pub use trainer::{moving_average, train, EpochRecord, TrainLog, TrainPlan};
