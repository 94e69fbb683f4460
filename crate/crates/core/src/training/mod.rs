//! Focal loss, Adam, the training loop and checkpoint files.

pub mod checkpoint;
pub mod loss;
pub mod optim;
pub mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, MAGIC};
pub use loss::{focal_loss, LossConfig, PROB_FLOOR};
pub use optim::{adam_step, adam_update, AdamState, OptimizerConfig};
pub use trainer::{train, train_with_stats, EpochLog, TrainConfig, TrainOutcome, TrainSetup};
