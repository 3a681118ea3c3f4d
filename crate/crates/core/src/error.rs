use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("design matrix is rank deficient (column {column} depends on earlier columns)")]
    RankDeficient { column: usize },
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("series is empty")]
    EmptySeries,
    #[error("window {window} exceeds series length {len}")]
    WindowTooLarge { window: usize, len: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("accuracy is only defined for classification models")]
    NotClassification,
    #[error("checkpoint count {count} exceeds total steps {total}")]
    CountExceedsSteps { count: usize, total: usize },
    #[error("training diverged at step {step}")]
    Diverged { step: usize },
    #[error("all {chains} SGLD chains diverged")]
    AllChainsDiverged { chains: usize },
    #[error("unknown experiment id `{0}`")]
    UnknownExperiment(String),
    #[error("trace has no validation accuracy records")]
    MissingValidationMetrics,
    #[error("need at least two transitions to pair, found {found}")]
    FewerThanTwoTransitions { found: usize },
    #[error("need at least {needed} events for a fit, found {found}")]
    TooFewEvents { needed: usize, found: usize },
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("layout mismatch in {path}: {reason}")]
    LayoutMismatch { path: PathBuf, reason: String },
    #[error("not found: {0}")]
    Missing(String),
    #[error("parse failure in {file}:{line}: {reason}")]
    ParseFailure {
        file: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("no data to report: {0}")]
    NoData(String),
    #[error("no checkpoint at step {step} for run {run_id}")]
    MissingCheckpoint { run_id: String, step: usize },
}

impl Error {
    /// Stable snake_case name of the variant, for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::RankDeficient { .. } => "rank_deficient",
            Error::NonFinite(_) => "non_finite",
            Error::EmptySeries => "empty_series",
            Error::WindowTooLarge { .. } => "window_too_large",
            Error::InvalidConfig(_) => "invalid_config",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::NotClassification => "not_classification",
            Error::CountExceedsSteps { .. } => "count_exceeds_steps",
            Error::Diverged { .. } => "diverged",
            Error::AllChainsDiverged { .. } => "all_chains_diverged",
            Error::UnknownExperiment(_) => "unknown_experiment",
            Error::MissingValidationMetrics => "missing_validation_metrics",
            Error::FewerThanTwoTransitions { .. } => "fewer_than_two_transitions",
            Error::TooFewEvents { .. } => "too_few_events",
            Error::Io { .. } => "io_failure",
            Error::LayoutMismatch { .. } => "layout_mismatch",
            Error::Missing(_) => "missing",
            Error::ParseFailure { .. } => "parse_failure",
            Error::NoData(_) => "no_data",
            Error::MissingCheckpoint { .. } => "missing_checkpoint",
        }
    }

    /// Errors caused by the request itself rather than by running it.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_) | Error::UnknownExperiment(_) | Error::CountExceedsSteps { .. }
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
