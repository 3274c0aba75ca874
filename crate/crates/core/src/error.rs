use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("hessian is not positive semidefinite (minimum eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    #[error("hessian is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is singular: {0}")]
    Singular(&'static str),

    #[error("polytope is unbounded: {0}")]
    UnboundedPolytope(String),

    #[error("polytope is empty: {0}")]
    EmptyPolytope(String),

    #[error("feasible parameter set is empty for output {output}")]
    EmptyFeasibleSet { output: usize },

    #[error("measurement step {found} does not follow step {last}")]
    OutOfOrderMeasurement { last: u64, found: u64 },

    #[error("robust control problem infeasible at step {step}")]
    RecursiveFeasibilityBreach { step: u64 },

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("negative tank level {level} in tank {tank}")]
    NegativeLevel { tank: usize, level: f64 },

    #[error("valve schedule exhausted at t = {0} s")]
    ScheduleExhausted(f64),
}

pub(crate) fn check_len(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}

pub(crate) fn check_finite<'a>(
    context: &'static str,
    values: impl IntoIterator<Item = &'a f64>,
) -> Result<()> {
    if values.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(context))
    }
}
