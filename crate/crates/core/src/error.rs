use std::fmt;

use crate::twostage::SolveResult;

/// Errors raised by fitting, scenario construction and the solvers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("design matrix is rank deficient (rank {rank} < {cols} columns)")]
    RankDeficient { rank: usize, cols: usize },
    #[error("all non-intercept columns are constant")]
    DegenerateDesign,
    #[error("k = {k} is outside [1, {n}]")]
    KOutOfRange { k: usize, n: usize },
    #[error("delta must be positive, got {0}")]
    NonpositiveDelta(f64),
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("observation {index} has leverage {leverage} (leave-one-out undefined)")]
    LeverageOne { index: usize, leverage: f64 },
    #[error("index {index} out of range for {len} observations")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("hyperparameter grid is empty")]
    EmptyGrid,
    #[error("empty input")]
    EmptyInput,
    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),
    #[error("recourse problem infeasible: {0}")]
    RecourseInfeasible(String),
    #[error("extensive form needs {vars} variables, cap is {cap}")]
    SizeCapExceeded { vars: usize, cap: usize },
    #[error("L-shaped iteration limit reached with relative gap {gap:e}")]
    IterationLimit { gap: f64, best: Box<SolveResult> },
    #[error("bad configuration: {0}")]
    BadConfig(String),
    #[error("candidate decision is infeasible: {0}")]
    InfeasibleCandidate(String),
    #[error("true regression model unavailable")]
    TrueModelUnavailable,
    #[error("linear program is {0}")]
    LpStatus(LpFailure),
    #[error("fit without observation {index} failed: {source}")]
    Omitted {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("batch {batch}: {source}")]
    Batch {
        batch: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Non-optimal terminal LP status surfaced as an error by callers that need an optimum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpFailure {
    Infeasible,
    Unbounded,
}

impl fmt::Display for LpFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LpFailure::Infeasible => write!(f, "infeasible"),
            LpFailure::Unbounded => write!(f, "unbounded"),
        }
    }
}

impl Error {
    /// Short machine-readable tag used in result tables.
    pub fn tag(&self) -> &'static str {
        match self {
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::RankDeficient { .. } => "rank_deficient",
            Error::DegenerateDesign => "degenerate_design",
            Error::KOutOfRange { .. } => "k_out_of_range",
            Error::NonpositiveDelta(_) => "nonpositive_delta",
            Error::DomainError(_) => "domain_error",
            Error::LeverageOne { .. } => "leverage_one",
            Error::IndexOutOfRange { .. } => "index_out_of_range",
            Error::EmptyGrid => "empty_grid",
            Error::EmptyInput => "empty_input",
            Error::NumericalBreakdown(_) => "numerical_breakdown",
            Error::RecourseInfeasible(_) => "recourse_infeasible",
            Error::SizeCapExceeded { .. } => "size_cap_exceeded",
            Error::IterationLimit { .. } => "iteration_limit",
            Error::BadConfig(_) => "bad_config",
            Error::InfeasibleCandidate(_) => "infeasible_candidate",
            Error::TrueModelUnavailable => "true_model_unavailable",
            Error::LpStatus(_) => "lp_status",
            Error::Omitted { source, .. } | Error::Batch { source, .. } => source.tag(),
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
        }
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
