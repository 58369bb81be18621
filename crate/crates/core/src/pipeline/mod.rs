//! Training stages, enhancement and checkpoints.
//!
//! A full run is `train_vae(Cvae)`, `train_vae(Nvae)`, `train_nsvae`, then
//! `train_adversarial`, all on one [`ModelBundle`]. Each stage updates only
//! its own networks; [`param_hash`] makes that checkable.

mod checkpoint;
mod config;
mod dataset;
mod enhance;
pub mod gradcheck;
mod train;

use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::DataError;
use crate::models::{ModelBundle, ModelError, Role};
use crate::objectives::ObjectiveError;
use crate::signal::SignalError;
use crate::tensor::{Real, TensorError};

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint,
    FORMAT_VERSION,
};
pub use config::{Preset, TrainConfig};
pub use dataset::{lps_of, Segment, SegmentSet};
pub use enhance::{enhance, enhance_with, estimate_lps, EnhanceMode, EnhanceOptions, Enhanced};
pub use train::{
    train_adversarial, train_nsvae, train_vae, EpochRecord, Progress, Stage, StageReport, VaeKind,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("corpus has no {0} signal for every segment")]
    Unpaired(&'static str),
    #[error("non-finite loss in {stage} epoch {epoch} step {step}: {detail}")]
    NonFiniteLoss {
        stage: &'static str,
        epoch: usize,
        step: u64,
        detail: String,
    },
    #[error("input has {samples} samples, need at least {need}")]
    InputTooShort { samples: usize, need: usize },
    #[error("sample rate {found} Hz, expected {expected} Hz")]
    SampleRate { expected: u32, found: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint format version {found}, this build reads {supported}")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("block '{block}' has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        block: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

/// SHA-256 over the parameters of `roles`, in role order. Values are hashed
/// at their stored precision.
pub fn param_hash<T: Real>(bundle: &ModelBundle<T>, roles: &[Role]) -> Result<String> {
    let mut h = Sha256::new();
    let mut roles = roles.to_vec();
    roles.sort();
    roles.dedup();
    for r in roles {
        h.update(r.name().as_bytes());
        for (name, p) in bundle.network(r)?.named_params() {
            h.update(name.as_bytes());
            for v in p.iter() {
                h.update(Real::to_f64(*v).to_le_bytes());
            }
        }
    }
    Ok(config::hex(&h.finalize()))
}

/// Writes `bytes` to a sibling temporary file and renames it into place, so
/// readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| PipelineError::InvalidConfig(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
