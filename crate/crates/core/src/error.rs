use std::path::PathBuf;

use thiserror::Error;

/// Coarse failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("expected mono audio, found {0} channels")]
    Multichannel(u16),
    #[error("malformed {format} file: {reason}")]
    Format { format: &'static str, reason: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("signal too short: need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("sample-rate mismatch: {0} Hz vs {1} Hz")]
    SampleRateMismatch(u32, u32),
    #[error("room constraints infeasible: {0}")]
    InfeasibleRoom(String),
    #[error("rt60 {rt60} s unreachable for this room (required absorption {absorption})")]
    UnreachableRt60 { rt60: f64, absorption: f64 },
    #[error("insufficient decay range: {0}")]
    InsufficientDecay(String),
    #[error("underdetermined fit: {taps} taps but only {frames} frames")]
    Underdetermined { taps: usize, frames: usize },
    #[error("singular normal equations; supply ridge")]
    Singular,
    #[error("bin {bin}: {source}")]
    Bin {
        bin: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("training diverged at epoch {epoch} (loss is not finite)")]
    Diverged { epoch: usize, trace: Vec<EpochRecord> },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("not enough RIRs: {rirs} available for {utterances} utterances")]
    NotEnoughRirs { rirs: usize, utterances: usize },
    #[error("missing stream: {0}")]
    MissingStream(&'static str),
    #[error("unknown enhancer: {0}")]
    UnknownEnhancer(String),
}

/// One row of a training loss trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub valid_mse: f64,
    pub lr: f64,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidArgument(_) | Error::UnknownEnhancer(_) | Error::InfeasibleRoom(_) => {
                ErrorKind::Config
            }
            Error::Singular
            | Error::Diverged { .. }
            | Error::UnreachableRt60 { .. }
            | Error::Underdetermined { .. } => ErrorKind::Numerical,
            Error::Bin { source, .. } => source.kind(),
            _ => ErrorKind::Data,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
