use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Schema(String),

    #[error("not found: {0}")]
    Missing(String),

    #[error("fit failed: {0}")]
    Fit(mfpca_core::Error),

    #[error("i/o failure: {0}")]
    Io(String),

    #[error("{} exists and is not empty; pass --force to overwrite", .0.display())]
    Overwrite(PathBuf),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Schema(_) => 2,
            CliError::Missing(_) => 3,
            CliError::Fit(_) => 4,
            CliError::Io(_) => 5,
            CliError::Overwrite(_) => 6,
        }
    }
}

impl From<mfpca_core::Error> for CliError {
    fn from(e: mfpca_core::Error) -> Self {
        use mfpca_core::Error as E;
        match e {
            E::Io(io) if io.kind() == std::io::ErrorKind::NotFound => CliError::Missing(io.to_string()),
            E::Io(io) => CliError::Io(io.to_string()),
            E::Csv(c) => match c.kind() {
                csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::NotFound => CliError::Missing(c.to_string()),
                csv::ErrorKind::Io(_) => CliError::Io(c.to_string()),
                _ => CliError::Schema(c.to_string()),
            },
            E::Json(j) => CliError::Schema(j.to_string()),
            E::Format(f) => CliError::Schema(f),
            other => CliError::Fit(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::Missing(e.to_string())
        } else {
            CliError::Io(e.to_string())
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
