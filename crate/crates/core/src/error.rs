use thiserror::Error;

/// Errors raised by chain construction and the analysis routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid chain spec: {0}")]
    InvalidSpec(String),

    #[error("rate {rate} on edge {from} -> {to} is not strictly positive and finite")]
    NonPositiveRate { from: String, to: String, rate: f64 },

    #[error("transition graph is not irreducible: state {0} is unreachable")]
    NotIrreducible(String),

    #[error("detailed balance fails on edge {from} -> {to} (relative residual {residual:e})")]
    NotReversible { from: String, to: String, residual: f64 },

    #[error("reversible measure underflows at state {0}")]
    MeasureUnderflow(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("argument outside the domain: {0}")]
    DomainError(String),

    #[error("field must be strictly positive (index {index}, value {value})")]
    NonPositiveField { index: usize, value: f64 },

    #[error("chain has rates different from 0 and 1")]
    NotUnweighted,

    #[error("field too large: 2|f|_inf = {two_sup} exceeds delta_eps = {delta_eps}")]
    FieldTooLarge { two_sup: f64, delta_eps: f64 },

    #[error("vertex {0} has no neighbours")]
    IsolatedVertex(usize),

    #[error("condition M1(x)+M1(y)-2(k(x,y)+k(y,x)) > 0 fails (value {0})")]
    ConditionNotMet(f64),

    #[error("girth {0} is below 5")]
    GirthTooSmall(usize),

    #[error("rates are not strictly monotone at x = {0}")]
    MonotonicityViolated(usize),

    #[error("chain is not a star")]
    NotAStar,

    #[error("initial datum is not a probability density: {0}")]
    NonDensity(String),

    #[error("integrator lost positivity at t = {0}")]
    PositivityLoss(f64),

    #[error("time grid too coarse: {0}")]
    GridTooCoarse(String),

    #[error("product of {n1} x {n2} states exceeds the cap {cap}")]
    SizeOverflow { n1: usize, n2: usize, cap: usize },

    #[error("factor prerequisite failed: {0}")]
    PrerequisiteFailed(String),
}

pub type Result<T> = std::result::Result<T, Error>;
