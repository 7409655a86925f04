use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: missing column `{0}`")]
    MissingColumn(String),

    #[error("value error in row `{row}`, column `{column}`: {value:?} is not one of 0/1")]
    InvalidValue { row: String, column: String, value: String },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("referenced file does not exist: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("infeasible contingency table: cell {cell} = {value:.6} lies outside [0, 1]")]
    Infeasible { cell: &'static str, value: f64 },

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(&'static str),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("empty mask")]
    EmptyMask,

    #[error("non-finite loss {loss} at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize, loss: f32 },

    #[error("model container: {0}")]
    Container(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    /// Errors caused by bad inputs or configuration, as opposed to failures
    /// while doing the work.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::MissingColumn(_)
                | Error::InvalidValue { .. }
                | Error::Integrity(_)
                | Error::MissingFile(_)
                | Error::Infeasible { .. }
                | Error::UndefinedCorrelation(_)
                | Error::UndefinedMetric(_)
                | Error::Config(_)
                | Error::Dimension(_)
                | Error::EmptyMask
                | Error::Csv(_)
                | Error::Json(_)
        )
    }
}
