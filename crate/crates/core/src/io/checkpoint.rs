//! Versioned JSON checkpoints.
//!
//! A checkpoint is a JSON object with `format` and `version` fields, the full model
//! (configuration, prior and variational parameters) and optionally the optimizer
//! state and the training counters that seed later noise streams. Floats are written
//! in shortest round-trip form, so loading reproduces every parameter bit for bit.

use crate::network::BayesianMlp;
use crate::train::{OptimizerState, TrainConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const FORMAT: &str = "ssbnn-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt checkpoint at line {line}, column {column}: {message}")]
    Corrupt { line: usize, column: usize, message: String },
    #[error("not a checkpoint (format field is {0:?})")]
    WrongFormat(Option<String>),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { expected: u32, found: u64 },
    #[error("parameter {0} is not finite and cannot be stored")]
    NonFinite(String),
}

/// Position of the training run when the checkpoint was taken.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    /// Optimizer steps taken; the next step's noise stream starts here.
    pub step: u64,
    pub epochs_run: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: BayesianMlp,
    pub train: Option<TrainConfig>,
    pub optimizer: Option<OptimizerState>,
    pub rng: Option<RngState>,
}

impl Checkpoint {
    pub fn new(model: BayesianMlp) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            model,
            train: None,
            optimizer: None,
            rng: None,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CheckpointError> {
        for (name, t) in self.model.params() {
            if !t.all_finite() {
                return Err(CheckpointError::NonFinite(name));
            }
        }
        let mut out = serde_json::to_vec_pretty(self).expect("checkpoint types serialize");
        out.push(b'\n');
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let corrupt = |e: serde_json::Error| CheckpointError::Corrupt {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        };
        let value: serde_json::Value = serde_json::from_slice(bytes).map_err(corrupt)?;
        let format = value.get("format").and_then(|f| f.as_str());
        if format != Some(FORMAT) {
            return Err(CheckpointError::WrongFormat(format.map(str::to_string)));
        }
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == VERSION as u64 => {}
            Some(found) => return Err(CheckpointError::Version { expected: VERSION, found }),
            None => return Err(CheckpointError::Version { expected: VERSION, found: 0 }),
        }
        let ckpt: Checkpoint = serde_json::from_value(value).map_err(corrupt)?;
        ckpt.model
            .config
            .validate()
            .map_err(|e| CheckpointError::Corrupt { line: 0, column: 0, message: e.to_string() })?;
        let widths = &ckpt.model.config.widths;
        let shapes_ok = ckpt.model.layers.len() + 1 == widths.len()
            && ckpt
                .model
                .layers
                .iter()
                .enumerate()
                .all(|(l, s)| s.fan_in == widths[l] && s.fan_out == widths[l + 1] && s.weight_mu.shape() == [s.fan_out, s.fan_in + 1]);
        if !shapes_ok {
            return Err(CheckpointError::Corrupt {
                line: 0,
                column: 0,
                message: "layer shapes do not match the configured widths".into(),
            });
        }
        Ok(ckpt)
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    std::fs::write(path, ckpt.to_bytes()?).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })?;
    Checkpoint::from_bytes(&bytes)
}
