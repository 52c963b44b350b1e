//! Domain types: tasks, resources, QoS contracts and the task lifecycle
//! state machine.
//!
//! Everything in this module is a plain value type. Mutation goes through the
//! lifecycle operations ([`transition`], [`requeue`]) which the scheduler
//! context serializes; the types themselves are safe to share read-only.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SchedulerError};

/// A point on the virtual simulation clock, in seconds since experiment start.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub f64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0.0);

    pub fn seconds(self) -> f64 {
        self.0
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}s", self.0)
    }
}

impl Sub for Timestamp {
    type Output = Duration;
    fn sub(self, rhs: Timestamp) -> Duration {
        Duration(self.0 - rhs.0)
    }
}

impl Add<Duration> for Timestamp {
    type Output = Timestamp;
    fn add(self, rhs: Duration) -> Timestamp {
        Timestamp(self.0 + rhs.0)
    }
}

/// A span of virtual time, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Duration(pub f64);

impl Duration {
    pub const ZERO: Duration = Duration(0.0);

    pub fn seconds(self) -> f64 {
        self.0
    }
}

impl fmt::Display for Duration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}s", self.0)
    }
}

impl Add for Duration {
    type Output = Duration;
    fn add(self, rhs: Duration) -> Duration {
        Duration(self.0 + rhs.0)
    }
}

impl AddAssign for Duration {
    fn add_assign(&mut self, rhs: Duration) {
        self.0 += rhs.0;
    }
}

impl Sub for Duration {
    type Output = Duration;
    fn sub(self, rhs: Duration) -> Duration {
        Duration(self.0 - rhs.0)
    }
}

impl Mul<f64> for Duration {
    type Output = Duration;
    fn mul(self, rhs: f64) -> Duration {
        Duration(self.0 * rhs)
    }
}

macro_rules! string_id {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(
            Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_string())
            }
        }
    };
}

string_id!(
    /// Identifier of one schedulable work unit.
    TaskId
);
string_id!(
    /// Identifier of the application a task belongs to.
    ApplicationId
);
string_id!(
    /// Identifier of an execution endpoint.
    ResourceId
);
string_id!(
    /// Identifier of a provisioning source.
    PoolId
);

/// Identifier of a provisioning request, dense per run.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct RequestId(pub u64);

impl fmt::Display for RequestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "req-{}", self.0)
    }
}

/// Lifecycle state of a task attempt.
///
/// `Finished`, `Failed` and `Aborted` are terminal for the attempt; a failed
/// or aborted attempt may be requeued, which starts a fresh attempt at
/// `Queued`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskState {
    Queued,
    Scheduled,
    Running,
    Finished,
    Failed,
    Aborted,
}

impl TaskState {
    pub fn is_terminal(self) -> bool {
        matches!(self, TaskState::Finished | TaskState::Failed | TaskState::Aborted)
    }

    /// Legal lifecycle edges. Everything else is a framework bug.
    pub fn can_transition_to(self, target: TaskState) -> bool {
        use TaskState::*;
        matches!(
            (self, target),
            (Queued, Scheduled)
                | (Scheduled, Running)
                | (Running, Finished)
                | (Running, Failed)
                | (Scheduled, Failed)
                | (Queued, Aborted)
                | (Scheduled, Aborted)
                | (Running, Aborted)
        )
    }
}

impl fmt::Display for TaskState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self)
    }
}

/// One schedulable work unit with its lifecycle stamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskUnit {
    pub task_id: TaskId,
    pub application_id: ApplicationId,
    pub state: TaskState,
    /// 0 for the first submission, incremented by each requeue.
    pub attempt: u32,
    pub submit_time: Timestamp,
    pub scheduled_time: Option<Timestamp>,
    pub start_time: Option<Timestamp>,
    pub end_time: Option<Timestamp>,
    /// Seconds of pure computation on a reference (speed 1.0) slot.
    pub compute_demand: Duration,
    /// Input payload in megabytes, transferred before execution starts.
    pub input_data_size: f64,
    pub assigned_resource: Option<ResourceId>,
}

impl TaskUnit {
    pub fn new(
        task_id: TaskId,
        application_id: ApplicationId,
        submit_time: Timestamp,
        compute_demand: Duration,
        input_data_size: f64,
    ) -> Self {
        TaskUnit {
            task_id,
            application_id,
            state: TaskState::Queued,
            attempt: 0,
            submit_time,
            scheduled_time: None,
            start_time: None,
            end_time: None,
            compute_demand,
            input_data_size,
            assigned_resource: None,
        }
    }
}

/// An execution endpoint with slot capacity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resource {
    pub resource_id: ResourceId,
    pub total_slots: u32,
    pub free_slots: u32,
    pub is_connected: bool,
    pub pool_id: PoolId,
    /// Execution speed relative to the reference slot (1.0).
    pub speed_factor: f64,
    pub provisioned_at: Option<Timestamp>,
    pub released_at: Option<Timestamp>,
}

impl Resource {
    /// Eligible to receive work: connected with at least one free slot.
    pub fn is_free(&self) -> bool {
        self.is_connected && self.free_slots > 0
    }

    pub fn is_idle(&self) -> bool {
        self.free_slots == self.total_slots
    }
}

/// Per-application deadline bookkeeping.
///
/// `scheduled_tasks` counts tasks currently in Scheduled/Running plus
/// finished tasks, so `total_work - scheduled_tasks` is the number of tasks
/// not yet dispatched. The average execution time is the arithmetic mean over
/// finished attempts and falls back to a configured prior before the first
/// completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QosContract {
    pub application_id: ApplicationId,
    pub total_work: u32,
    pub scheduled_tasks: u32,
    pub work_completed: u32,
    pub deadline: Option<Timestamp>,
    /// Prior estimate used while no attempt has finished.
    pub prior_mean: Duration,
    completed_execution_sum: Duration,
}

impl QosContract {
    pub fn new(
        application_id: ApplicationId,
        total_work: u32,
        deadline: Option<Timestamp>,
        prior_mean: Duration,
    ) -> Self {
        QosContract {
            application_id,
            total_work,
            scheduled_tasks: 0,
            work_completed: 0,
            deadline,
            prior_mean,
            completed_execution_sum: Duration::ZERO,
        }
    }

    /// Mean execution time over finished attempts, or the prior before the
    /// first completion.
    pub fn average_task_execution_time(&self) -> Duration {
        if self.work_completed == 0 {
            self.prior_mean
        } else {
            Duration(self.completed_execution_sum.0 / self.work_completed as f64)
        }
    }

    /// Time left to the deadline, clamped at zero. Infinite when the
    /// application has no deadline.
    pub fn time_remaining(&self, now: Timestamp) -> Duration {
        match self.deadline {
            Some(deadline) => Duration((deadline.0 - now.0).max(0.0)),
            None => Duration(f64::INFINITY),
        }
    }

    /// Folds one finished attempt into the running mean.
    pub fn record_completion(&mut self, execution_time: Duration) {
        self.work_completed += 1;
        self.completed_execution_sum += execution_time;
    }
}

/// Timing record for one task, reported at the end of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulingData {
    pub task_id: TaskId,
    /// Waiting time: submission of the final attempt until it was scheduled.
    pub queue_time: Duration,
    /// Execution time: start of execution until completion.
    pub execution_time: Duration,
    pub final_state: TaskState,
}

/// Applies a lifecycle transition, stamping the timestamp that corresponds
/// to the target state. All other fields are left untouched.
pub fn transition(task: &TaskUnit, target: TaskState, now: Timestamp) -> Result<TaskUnit> {
    if !task.state.can_transition_to(target) {
        return Err(SchedulerError::IllegalTransition {
            task_id: task.task_id.0.clone(),
            from: task.state,
            to: target,
        });
    }
    let mut next = task.clone();
    next.state = target;
    match target {
        TaskState::Scheduled => next.scheduled_time = Some(now),
        TaskState::Running => next.start_time = Some(now),
        TaskState::Finished | TaskState::Failed | TaskState::Aborted => {
            next.end_time = Some(now)
        }
        TaskState::Queued => unreachable!("no legal edge enters Queued"),
    }
    Ok(next)
}

/// Starts a fresh attempt for a failed or aborted task.
///
/// The requeued task re-enters the queue as a new arrival: its submit time is
/// reset to `now`, so FIFO ordering places it at the back of the queue.
pub fn requeue(task: &TaskUnit, now: Timestamp) -> Result<TaskUnit> {
    if !matches!(task.state, TaskState::Failed | TaskState::Aborted) {
        return Err(SchedulerError::IllegalTransition {
            task_id: task.task_id.0.clone(),
            from: task.state,
            to: TaskState::Queued,
        });
    }
    let mut next = task.clone();
    next.state = TaskState::Queued;
    next.attempt += 1;
    next.submit_time = now;
    next.scheduled_time = None;
    next.start_time = None;
    next.end_time = None;
    next.assigned_resource = None;
    Ok(next)
}

/// Derives the reported timing metrics for a terminal task.
///
/// Intervals whose endpoints were never stamped (the task went terminal
/// before being scheduled or started) count as zero.
pub fn finalize_metrics(task: &TaskUnit) -> SchedulingData {
    debug_assert!(task.state.is_terminal());
    let queue_time = match task.scheduled_time {
        Some(scheduled) => scheduled - task.submit_time,
        None => Duration::ZERO,
    };
    let execution_time = match (task.start_time, task.end_time) {
        (Some(start), Some(end)) => end - start,
        _ => Duration::ZERO,
    };
    SchedulingData {
        task_id: task.task_id.clone(),
        queue_time,
        execution_time,
        final_state: task.state,
    }
}
