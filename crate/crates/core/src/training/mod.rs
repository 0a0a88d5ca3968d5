//! Patch-based training: batch sampling, the Adam loop with step decay,
//! checkpoints and the CSV log.

mod config;
mod data;
mod log;
mod trainer;

pub use config::{lr_schedule, LossKind, TrainConfig};
pub use data::{list_images, sample_batch, Dataset, Sampling};
pub use log::{LogRecord, TrainLog, CSV_HEADER};
pub use trainer::{mean_psnr, train, Trainer};
