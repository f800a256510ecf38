use std::fmt;

use thiserror::Error;

use crate::solver::IterationRecord;

pub type Result<T> = std::result::Result<T, Error>;

/// A single violated invariant, anchored on the offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldError {
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {}", join(.0))]
    Invalid(Vec<FieldError>),

    #[error("action set empty")]
    EmptyActions,

    #[error("state 0 admits only the idle action")]
    ActiveAtEmpty,

    #[error("state {state} is outside the state space 0..={top}")]
    StateOutOfRange { state: usize, top: usize },

    #[error("zero down-rate at state {state}; chain is not irreducible")]
    ZeroDownRate { state: usize },

    #[error("singular linear system at row {row}")]
    Singular { row: usize },

    #[error("policy iteration did not converge after {iterations} iterations")]
    NoConvergence {
        iterations: usize,
        trace: Vec<IterationRecord>,
    },

    #[error(
        "truncation level would exceed the ceiling of {ceiling} states; \
         review the parameters (slow tail convergence or an unreachable tolerance)"
    )]
    TruncationCeiling { ceiling: usize },

    #[error("value iteration budget of {iterations} sweeps exhausted (span {span:e})")]
    OracleBudget { iterations: usize, span: f64 },

    #[error("mismatched inputs: {0}")]
    Mismatch(String),

    #[error("{0}")]
    Unsupported(String),
}

fn join(errors: &[FieldError]) -> String {
    errors
        .iter()
        .map(|e| e.message.as_str())
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    pub(crate) fn field(field: &'static str, message: impl Into<String>) -> Self {
        Error::Invalid(vec![FieldError {
            field,
            message: message.into(),
        }])
    }
}
