use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse grouping of errors, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad arguments, specs or configuration.
    Config,
    /// Input data violates a dataset invariant or cannot be read.
    Data,
    /// The pipeline ran but could not produce an estimate.
    Estimation,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("fold count k={k} out of range for n={n} (need 2 <= k <= n)")]
    FoldRange { k: usize, n: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("missing column '{0}'")]
    MissingColumn(String),

    #[error("parse error at row {row}, column '{column}': cannot read '{value}' as a number")]
    Parse { row: usize, column: String, value: String },

    #[error("degenerate treatment: {0}")]
    DegenerateTreatment(String),

    #[error("fold without treatment variation: training complement of fold {fold} has a single treatment value")]
    FoldWithoutTreatmentVariation { fold: usize },

    #[error("no identifying variation: final-stage design is singular")]
    NoIdentifyingVariation,

    #[error("singular system in {0}")]
    Singular(&'static str),

    #[error("overlap violated (positivity): stratum {stratum} has no {missing_arm} units")]
    Overlap { stratum: usize, missing_arm: &'static str },

    #[error("plug-in estimator needs at most {limit} covariate strata, found more")]
    TooManyStrata { limit: usize },

    #[error("task {index} failed: {source}")]
    Task {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("task {index} panicked: {message}")]
    TaskPanic { index: usize, message: String },

    #[error("estimates differ across worker counts for n={n}, d={d}")]
    Nondeterministic { n: usize, d: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidSpec(_) | Error::Argument(_) | Error::FoldRange { .. } | Error::TooManyStrata { .. } => {
                ErrorClass::Config
            }
            Error::InvalidData(_)
            | Error::MissingColumn(_)
            | Error::Parse { .. }
            | Error::DegenerateTreatment(_)
            | Error::DimensionMismatch { .. }
            | Error::Io { .. }
            | Error::Csv(_) => ErrorClass::Data,
            Error::Task { source, .. } => source.class(),
            _ => ErrorClass::Estimation,
        }
    }

    /// Short stable identifier for machine-readable error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidSpec(_) => "invalid_spec",
            Error::Argument(_) => "argument",
            Error::FoldRange { .. } => "fold_range",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidData(_) => "invalid_data",
            Error::MissingColumn(_) => "missing_column",
            Error::Parse { .. } => "parse",
            Error::DegenerateTreatment(_) => "degenerate_treatment",
            Error::FoldWithoutTreatmentVariation { .. } => "fold_without_treatment_variation",
            Error::NoIdentifyingVariation => "no_identifying_variation",
            Error::Singular(_) => "singular",
            Error::Overlap { .. } => "overlap",
            Error::TooManyStrata { .. } => "too_many_strata",
            Error::Task { source, .. } => source.kind(),
            Error::TaskPanic { .. } => "task_panic",
            Error::Nondeterministic { .. } => "nondeterministic",
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::Serde(_) => "serde",
        }
    }

    /// Strips task wrappers, returning the error raised inside the task.
    pub fn root(&self) -> &Error {
        match self {
            Error::Task { source, .. } => source.root(),
            other => other,
        }
    }
}
