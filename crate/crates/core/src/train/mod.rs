//! Loss, optimizer, schedule, checkpoints, quality metrics and the training loop.

mod checkpoint;
mod loss;
mod metrics;
mod optim;
mod restore;
mod trainer;

pub use checkpoint::{Checkpoint, StoredTensor, TrainingState, MAGIC, VERSION};
pub use loss::{multiscale_loss, DEFAULT_FREQ_WEIGHT};
pub use metrics::{format_db, gaussian_taps, luma, psnr, ssim, SSIM_SIGMA, SSIM_WINDOW};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use restore::{deblur, evaluate, mean_input_psnr, mean_psnr, pad_reflect, reflect_index, PairScore};
pub use trainer::{
    fresh_state, lr_at, train, train_loop, train_step, EpochRecord, TrainConfig, TrainSummary, CHECKPOINT_FILE,
    METRICS_FILE, METRICS_HEADER,
};
