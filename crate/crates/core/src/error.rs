use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("unknown style `{0}`")]
    UnknownStyle(String),
    #[error("unknown speaker id {0}")]
    UnknownSpeakerId(u32),
    #[error("unknown style id {0}")]
    UnknownStyleId(u32),
    #[error("unknown characters: {0}")]
    UnknownCharacters(String),
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("{what} has length {len}, maximum is {max}")]
    TooLong { what: &'static str, len: usize, max: usize },
    #[error("spectrogram has {frames} frames, at least {min} required")]
    TooFewFrames { frames: usize, min: usize },
    #[error("spectrogram has {got} bins, expected {expected}")]
    BinMismatch { expected: usize, got: usize },
    #[error("dimension mismatch in {sublayer}: expected {expected}, got {got}")]
    Dimension { sublayer: String, expected: usize, got: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("cannot align {tokens} tokens to {frames} frames")]
    Alignment { tokens: usize, frames: usize },
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("probe has not been trained")]
    UntrainedProbe,
    #[error("unknown embedding site `{0}`")]
    UnknownSite(String),
    #[error("training diverged at step {step}: non-finite loss or gradient")]
    Diverged { step: usize },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Tensor(#[from] stylefusion_autodiff::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Short machine-readable category, used by the command-line error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Config(_) => "config",
            Error::UnknownStyle(_) | Error::UnknownStyleId(_) => "unknown_style",
            Error::UnknownSpeakerId(_) => "unknown_speaker",
            Error::UnknownCharacters(_) => "unknown_characters",
            Error::Empty(_) => "empty_input",
            Error::TooLong { .. } => "too_long",
            Error::TooFewFrames { .. } => "too_few_frames",
            Error::BinMismatch { .. } => "bin_mismatch",
            Error::Dimension { .. } => "dimension",
            Error::LabelOutOfRange { .. } => "label",
            Error::Alignment { .. } => "alignment",
            Error::MissingInput(_) => "missing_input",
            Error::Checkpoint(_) => "checkpoint",
            Error::UntrainedProbe => "untrained_probe",
            Error::UnknownSite(_) => "unknown_site",
            Error::Diverged { .. } => "diverged",
            Error::Json(_) => "json",
            Error::Tensor(_) => "tensor",
        }
    }
}
