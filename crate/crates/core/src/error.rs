use std::path::PathBuf;

use thiserror::Error;

/// Pipeline stage an error originated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Backtest,
    Selector,
    Fit,
    Forecast,
    Evaluation,
    Persistence,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Stage::Backtest => "backtest",
            Stage::Selector => "selector",
            Stage::Fit => "fit",
            Stage::Forecast => "forecast",
            Stage::Evaluation => "evaluation",
            Stage::Persistence => "persistence",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("duplicate key: series {series:?} has more than one row at time {time}")]
    DuplicateKey { series: String, time: String },
    #[error("gap in series {series:?}: missing time index {position}")]
    Gap { series: String, position: i64 },
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("empty slice: window [{lo}, {hi}] does not intersect series {series:?}")]
    EmptySlice { series: String, lo: i64, hi: i64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("singular system in normal equations; use a positive regularization strength (lambda > 0)")]
    SingularMatrix,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("backtest plan yields no valid split point: {0}")]
    EmptyPlan(String),
    #[error("every backtest split failed: {0}")]
    AllSplitsFailed(String),
    #[error("lookup error: no historic estimate for series {series:?}, time {time}, covariate {covariate:?}")]
    Lookup { series: String, time: i64, covariate: String },
    #[error("provenance mismatch: {0}")]
    ProvenanceMismatch(String),
    #[error("unknown feature {0:?}")]
    UnknownFeature(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("degenerate error ratios: all {0} selected records fail the denominator guard; use the additive formula")]
    DegenerateRatios(usize),
    #[error("quantile level {0} outside (0, 1)")]
    InvalidTau(f64),
    #[error("infeasible evaluation plan: {0}")]
    Infeasible(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn in_stage(self, stage: Stage) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage { stage, source: Box::new(e) },
        }
    }

    /// Innermost error, skipping stage attribution.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
