//! Error types shared across the scheduler framework.

use thiserror::Error;

use crate::model::{TaskState, Timestamp};

/// Errors raised by the scheduler framework.
///
/// Most variants signal misuse of a contract (framework bugs) rather than
/// recoverable runtime conditions; the scheduler context records them in the
/// error log and, where the contract allows, keeps running.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum SchedulerError {
    #[error("illegal task transition: {from:?} -> {to:?} (task {task_id})")]
    IllegalTransition {
        task_id: String,
        from: TaskState,
        to: TaskState,
    },

    #[error("event clock regression: {attempted} is before last published {last}")]
    ClockRegression { last: Timestamp, attempted: Timestamp },

    #[error("scheduler is already running")]
    AlreadyRunning,

    #[error("scheduler is not running")]
    NotRunning,

    #[error("duplicate task id: {0}")]
    DuplicateTaskId(String),

    #[error("stale assignment of task {task_id} to resource {resource_id}: {reason}")]
    StaleAssignment {
        task_id: String,
        resource_id: String,
        reason: String,
    },

    #[error("unknown resource: {0}")]
    UnknownResource(String),

    #[error("resource {0} is not disconnected")]
    NotDisconnected(String),

    #[error("unknown task: {0}")]
    UnknownTask(String),

    #[error("unknown pool: {0}")]
    UnknownPool(String),

    #[error("pool {0} is a fixed local pool and cannot be grown")]
    LocalPoolFixed(String),

    #[error("resource {0} was not dynamically provisioned")]
    NotProvisioned(String),

    #[error("resource {0} is not idle")]
    NotIdle(String),

    #[error("provision request rejected: {0}")]
    InvalidRequest(String),

    #[error("algorithm callback invoked before set_scheduler")]
    NotAttached,

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for SchedulerError {
    fn from(err: std::io::Error) -> Self {
        SchedulerError::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, SchedulerError>;
