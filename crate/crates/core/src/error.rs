use thiserror::Error;

/// Errors produced by the beamforming pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid array geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("correlation undefined: column {column} has zero variance")]
    UndefinedCorrelation { column: usize },

    #[error("found {found} spectral peaks, {requested} requested")]
    InsufficientPeaks { requested: usize, found: usize },

    #[error("insufficient data: need at least {needed} samples, got {found}")]
    InsufficientData { needed: usize, found: usize },

    #[error("invalid sectors: {0}")]
    InvalidSectors(String),

    #[error("degenerate shrinkage: preprocessing matrix indistinguishable from a scaled identity")]
    DegenerateShrinkage,

    #[error("matrix is singular or not positive definite")]
    SingularMatrix,

    #[error("power iteration start vector lies in the null space")]
    NullStart,

    #[error("steering matrix is rank deficient (repeated directions?)")]
    RankDeficient,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable identifier, used in CSV failure codes and CLI error lines.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidGeometry(_) => "invalid_geometry",
            Error::InvalidScenario(_) => "invalid_scenario",
            Error::Dimension { .. } => "dimension",
            Error::UndefinedCorrelation { .. } => "undefined_correlation",
            Error::InsufficientPeaks { .. } => "insufficient_peaks",
            Error::InsufficientData { .. } => "insufficient_data",
            Error::InvalidSectors(_) => "invalid_sectors",
            Error::DegenerateShrinkage => "degenerate_shrinkage",
            Error::SingularMatrix => "singular_matrix",
            Error::NullStart => "null_start",
            Error::RankDeficient => "rank_deficient",
            Error::InvalidConfig(_) => "invalid_config",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
