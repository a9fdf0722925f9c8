//! Training on synthetic data, checkpoints and raw tensor I/O.

mod data;
mod io;
mod optim;
mod train;

pub use data::{
    generate_synthetic, gp_amplitude, Dataset, DatasetKind, DatasetSpec, Normalization,
};
pub use io::{
    load_raw, log_magnitude, pgm_bytes, raw_from_bytes, raw_to_bytes, save_pgm, save_raw,
    Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, RAW_MAGIC, RAW_VERSION,
};
pub use optim::{clip_global_norm, Adam};
pub use train::{train, EpochStats, TrainConfig, TrainOutcome};

use thiserror::Error;

use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training diverged (non-finite loss) at step {step}; parameters restored")]
    Diverged { step: u64 },
    #[error("checksum error: {0}")]
    Checksum(String),
    #[error("unsupported format version {found} (this build reads up to {supported})")]
    Version { found: u8, supported: u8 },
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
}
