use thiserror::Error;

/// Errors surfaced by the estimation pipeline.
#[derive(Debug, Error)]
pub enum SqvarError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("no observations")]
    NoObservations,

    #[error("row {row}: expected {expected} columns, found {found}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("row {row}, column {col}: cannot parse {cell:?} as a finite number")]
    BadCell { row: usize, col: usize, cell: String },

    #[error("series {series} is degenerate (zero range after margin expansion)")]
    DegenerateSeries { series: usize },

    #[error("lag order {p} must be positive and smaller than the sample size {t}")]
    BadLagOrder { p: usize, t: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("quantile level {0} outside (0, 1)")]
    TauOutOfRange(f64),

    #[error("non-invertible quantile curve")]
    NonInvertible,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("process diverged at step {step} (|y| = {value:e}); check stationarity")]
    Diverged { step: usize, value: f64 },

    #[error("bound updates did not stabilize within {steps} steps")]
    NotStabilized { steps: usize },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SqvarError>;
