use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed table {path}: {message}")]
    Table { path: PathBuf, message: String },

    #[error("empty file: {0}")]
    EmptyFile(PathBuf),

    #[error("unknown site id {0:?}")]
    UnknownSite(String),

    #[error("non-binary detection value {value:?} for site {site:?}")]
    NonBinaryDetection { site: String, value: String },

    #[error("duplicate survey index {survey} for site {site:?}")]
    DuplicateSurvey { site: String, survey: i64 },

    #[error("missing value in column {column:?} for site {site:?}")]
    MissingCovariate { site: String, column: String },

    #[error("unknown covariate {0:?}")]
    UnknownCovariate(String),

    #[error("duplicate covariate name {0:?}")]
    DuplicateCovariate(String),

    #[error("covariate {0:?} has zero sample variance and cannot be standardized")]
    ZeroVariance(String),

    #[error("design is not identifiable; offending columns: {0}")]
    Identifiability(String),

    #[error("rank-deficient base design")]
    RankDeficientBase,

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("model space has {count} models, above the enumeration cap of {cap}")]
    CapExceeded { count: u128, cap: u128 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("all model scores are -inf")]
    DegenerateScores,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("all {0} optimizer restarts diverged")]
    AllRestartsDiverged(usize),

    #[error("target mean could not be matched: residual {residual:.3e} exceeds {tolerance:.0e}")]
    TargetResidual { residual: f64, tolerance: f64 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input or configuration rather than
    /// by the numerics.
    pub fn is_config_error(&self) -> bool {
        !matches!(
            self,
            Error::Identifiability(_)
                | Error::RankDeficientBase
                | Error::NonFinite(_)
                | Error::DegenerateScores
                | Error::Numerical(_)
                | Error::AllRestartsDiverged(_)
                | Error::TargetResidual { .. }
        )
    }
}
