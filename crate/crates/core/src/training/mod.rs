pub mod adamw;
pub mod checkpoint;
pub mod init;
pub mod train;

pub use adamw::{adamw_step, clip_global_norm, cosine_lr, AdamWConfig, OptimState};
pub use checkpoint::Checkpoint;
pub use init::init_params;
pub use train::{
    batch_gradients, batch_inputs, batch_loss, class_probabilities, epoch_order,
    evaluate_classification, train, train_epoch, EpochLog, StepLoss, TrainConfig, TrainOutcome,
};
