use thiserror::Error;

/// Errors raised by ingestion, fitting and estimation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: column `{column}` must be 0 or 1")]
    NonBinaryValue { row: usize, column: String },
    #[error("row {row}: column `{column}` is not a finite number")]
    NonFiniteValue { row: usize, column: String },
    #[error("cell (t={t}, z={z}) has no observations")]
    EmptyCell { t: u8, z: u8 },
    #[error("summary file has no record for cell (t={t}, z={z})")]
    MissingCell { t: u8, z: u8 },
    #[error("negative standard error in summary file")]
    NegativeSe,
    #[error("summary cell (t={t}, z={z}) has zero standard error")]
    ZeroSe { t: u8, z: u8 },
    #[error("cell (t={t}, z={z}) has {n} rows; at least 2 are required")]
    CellTooSmall { t: u8, z: u8, n: usize },
    #[error("exposure trends are parallel (delta_D = {delta_d:e})")]
    DegenerateTrend { delta_d: f64 },
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("logistic regression diverged (separation)")]
    Separation,
    #[error("logistic regression did not converge in {0} iterations")]
    NotConverged(usize),
    #[error("{0} observations have |delta_D(x)| below the floor")]
    DeltaDNearZero(usize),
    #[error("instrument has no first-stage variation")]
    WeakFirstStage,
    #[error("too many degenerate bootstrap resamples ({attempts} attempts for {replications} replicates)")]
    TooManyDegenerateResamples { attempts: usize, replications: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MissingColumn(_) => "MissingColumn",
            Error::NonBinaryValue { .. } => "NonBinaryValue",
            Error::NonFiniteValue { .. } => "NonFiniteValue",
            Error::EmptyCell { .. } => "EmptyCell",
            Error::MissingCell { .. } => "MissingCell",
            Error::NegativeSe => "NegativeSE",
            Error::ZeroSe { .. } => "ZeroSE",
            Error::CellTooSmall { .. } => "CellTooSmall",
            Error::DegenerateTrend { .. } => "DegenerateTrend",
            Error::RankDeficient => "RankDeficient",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::Separation => "Separation",
            Error::NotConverged(_) => "NotConverged",
            Error::DeltaDNearZero(_) => "DeltaDNearZero",
            Error::WeakFirstStage => "WeakFirstStage",
            Error::TooManyDegenerateResamples { .. } => "TooManyDegenerateResamples",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Io(_) => "Io",
            Error::Parse(_) => "Parse",
        }
    }

    /// Input validation failures, as opposed to estimation failures on valid input.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::MissingColumn(_)
                | Error::NonBinaryValue { .. }
                | Error::NonFiniteValue { .. }
                | Error::MissingCell { .. }
                | Error::NegativeSe
                | Error::DimensionMismatch(_)
                | Error::InvalidConfig(_)
                | Error::Io(_)
                | Error::Parse(_)
        )
    }

    /// Failures a bootstrap resample may hit by bad luck; such resamples are redrawn.
    pub fn is_degenerate_resample(&self) -> bool {
        matches!(
            self,
            Error::EmptyCell { .. }
                | Error::CellTooSmall { .. }
                | Error::DegenerateTrend { .. }
                | Error::DeltaDNearZero(_)
                | Error::RankDeficient
                | Error::Separation
                | Error::WeakFirstStage
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
