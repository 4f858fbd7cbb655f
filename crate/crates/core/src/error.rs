//! Error types shared across the crate.

use thiserror::Error;

/// Rejected construction input.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("{what} = {value} violates {constraint}")]
    OutOfRange { what: &'static str, value: f64, constraint: &'static str },
    #[error("{what} must be non-empty")]
    Empty { what: &'static str },
    #[error("{0}")]
    Invalid(String),
}

/// Failure inside an exact or iterative solver.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("linear system is singular or ill-conditioned: {0}")]
    NumericFailure(String),
    #[error("no convergence after {iters} iterations (last span {span:.3e})")]
    NoConvergence { iters: usize, span: f64 },
    #[error(transparent)]
    Param(#[from] ParamError),
}

/// Failure while computing Whittle indices.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum IndexError {
    #[error(
        "index iteration did not converge after {iters} iterations \
         (last lambda {last_lambda:.6e}, last step {last_step:.3e}); retry with smaller alpha"
    )]
    NoConvergence { iters: usize, last_lambda: f64, last_step: f64 },
    #[error("bisection bracket expansion failed after {doublings} doublings on [{lo}, {hi}]")]
    BracketFailure { doublings: usize, lo: f64, hi: f64 },
    #[error("lambda grid must be sorted ascending")]
    UnsortedGrid,
    #[error("index table not monotone: W({state}) = {value} < W({prev_state}) = {prev_value}")]
    NonMonotoneTable { state: usize, value: f64, prev_state: usize, prev_value: f64 },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Param(#[from] ParamError),
}

/// Invalid simulation configuration.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("policy {policy} requires an index table per station (have {have}, need {need})")]
    MissingTables { policy: String, have: usize, need: usize },
    #[error(
        "index table for station {label} covers {len} states but occupancies up to {needed} \
         are reachable"
    )]
    TableTooShort { label: usize, len: usize, needed: usize },
    #[error(transparent)]
    Param(#[from] ParamError),
}
