//! Data files, run configuration and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod idx;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
pub use config::{ConfigError, RunConfig};
pub use dataset::{Dataset, DatasetError, Split, Teacher};
pub use idx::{read_idx, write_idx, IdxArray, IdxData, IdxError};
