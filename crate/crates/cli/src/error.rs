use std::path::PathBuf;

use ncderev::ErrorKind;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing artifact {}; run `ncderev {producer}` first", path.display())]
    MissingArtifact { path: PathBuf, producer: &'static str },
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Lib(#[from] ncderev::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingArtifact { .. } | CliError::Data(_) => 3,
            CliError::Lib(e) => match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numerical => 4,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
