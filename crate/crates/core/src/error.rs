use std::path::PathBuf;

use octforce_autodiff::AutodiffError;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("non-finite {what}: {value}")]
    NonFinite { what: &'static str, value: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid needle preset: {0}")]
    InvalidPreset(String),
    #[error("unknown needle preset {0:?}")]
    UnknownPreset(String),
    #[error("invalid optical parameters: {0}")]
    InvalidOptics(String),
    #[error("invalid insertion profile: {0}")]
    InvalidProfile(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StreamError {
    #[error("{0} stream is empty")]
    Empty(&'static str),
    #[error("{stream} timestamps not strictly increasing at index {index}")]
    Unsorted { stream: &'static str, index: usize },
    #[error("crop size {d_c} exceeds scan length {len}")]
    CropTooLarge { d_c: usize, len: usize },
    #[error("scan {index} has length {found}, expected {expected}")]
    RaggedScans { index: usize, expected: usize, found: usize },
    #[error("{0} must be >= 1")]
    ZeroParameter(&'static str),
    #[error("normalizer expects {expected} pixels per row, got {found}")]
    WidthMismatch { expected: usize, found: usize },
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad magic: not a dataset file")]
    BadMagic,
    #[error("unsupported dataset version {found} (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("header checksum mismatch: header was modified or corrupted")]
    HeaderChecksum,
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("payload has {extra} trailing bytes beyond the declared {n_samples} samples")]
    TrailingBytes { extra: u64, n_samples: u64 },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("sample {index} window has {found} values, expected {expected}")]
    WindowSize { index: usize, expected: usize, found: usize },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("empty {0} split")]
    EmptySplit(&'static str),
    #[error("statistics need at least one sample")]
    NoSamples,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("invalid layer spec: {0}")]
    InvalidSpec(String),
    #[error("unknown architecture {0:?} (expected one of convgru-cnn, cnn-gru, 2d-cnn, 1d-cnn, gru)")]
    UnknownArch(String),
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("input shape {found:?} does not match model input [batch, {t_s}, {d_c}]")]
    InputShape { found: Vec<usize>, t_s: usize, d_c: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint I/O on {path}: {message}")]
    CheckpointIo { path: PathBuf, message: String },
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),
    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("dataset window {found_t_s}x{found_d_c} does not match model input {model_t_s}x{model_d_c}")]
    ShapeMismatch { found_t_s: usize, found_d_c: usize, model_t_s: usize, model_d_c: usize },
}

impl TrainError {
    /// Failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Self::NonFiniteGradient(_) | Self::Diverged { .. })
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}
