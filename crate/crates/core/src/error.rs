use thiserror::Error;

use crate::system::Finding;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension {0} outside the supported range 1..=8")]
    UnsupportedDimension(usize),
    #[error("expected {} entries for a {dim}x{dim} matrix, found {found}", dim * dim)]
    EntryCount { dim: usize, found: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("NonsingularityViolated: |det| = {det:e} is at or below the singularity threshold")]
    Singular { det: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SvfError {
    #[error("exponent s = {0} must be non-negative")]
    NegativeExponent(f64),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("schema violation at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("{}", format_findings(.0))]
    Invariant(Vec<Finding>),
    #[error("unknown fixture `{0}`")]
    UnknownFixture(String),
}

fn format_findings(findings: &[Finding]) -> String {
    findings
        .iter()
        .map(|f| f.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

impl SpecError {
    pub(crate) fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        SpecError::Schema {
            path: path.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SymbolicError {
    #[error("digit {digit} at position {position} is outside 1..={branch_count}")]
    InvalidDigit {
        position: usize,
        digit: usize,
        branch_count: usize,
    },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DimsError {
    #[error("trend indeterminate: bracket [{lo}, {hi}]")]
    IndeterminateTrend { lo: f64, hi: f64 },
    #[error("map {map} of level {level} is not a scalar matrix")]
    NonScalarMap { level: usize, map: usize },
    #[error("schedule is not stationary (more than one distinct level)")]
    NotStationary,
    #[error("node budget of {budget} exhausted")]
    BudgetExhausted { budget: u64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Svf(#[from] SvfError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttractorError {
    #[error("no translation available for word {0:?}")]
    UnresolvedTranslation(Vec<usize>),
    #[error("enumeration of {size} words exceeds the limit of {limit}")]
    EnumerationTooLarge { size: f64, limit: u64 },
    #[error("degenerate scale range: {0}")]
    DegenerateScales(String),
    #[error("rendering needs a 2-dimensional system, got d = {0}")]
    NotPlanar(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Symbolic(#[from] SymbolicError),
}
