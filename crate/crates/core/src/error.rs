//! Error types.

use crate::value::Location;

/// Evaluation failures in the machine language.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AsmError {
    #[error("unbound variable `{0}`")]
    UnboundVariable(String),
    #[error("function `{func}` expects {expected} argument(s), got {got}")]
    ArityMismatch { func: String, expected: usize, got: usize },
    #[error("unknown rule `{0}`")]
    UnknownRule(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("inconsistent update set at {0}")]
    InconsistentUpdateSet(Location),
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("rule call depth exceeded while expanding `{0}`")]
    CallDepth(String),
}
