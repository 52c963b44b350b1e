//! The algorithm side of the plugin contract.
//!
//! A scheduling algorithm attaches to the scheduler context via
//! [`SchedulingAlgorithm::set_scheduler`] and from then on receives callbacks
//! for task and resource events. Its outputs flow back to the context as
//! assignment commands emitted through the [`SchedulerView`] and as
//! [`ProvisionDecision`] values returned from the provisioning tick.
//!
//! [`AlgorithmCore`] is the reusable template: it owns the task queue and the
//! free-resource list, so a concrete policy only overrides the decision
//! hooks. The scheduling loop in the context invokes [`SchedulingAlgorithm::schedule`]
//! while there are queued tasks and free resources, and parks otherwise.

mod base;
mod default_estimate;
mod deadline_priority;
mod fifo;

pub use base::AlgorithmCore;
pub use deadline_priority::DeadlinePriority;
pub use default_estimate::DefaultEstimate;
pub use fifo::Fifo;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{
    ApplicationId, Duration, PoolId, QosContract, Resource, ResourceId, TaskId, Timestamp,
};

/// Static description of an algorithm.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlgorithmDescriptor {
    pub name: String,
    /// Whether the algorithm issues dynamic provisioning requests.
    pub supports_provisioning: bool,
}

/// Tunables shared by the built-in algorithms, settable from configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmOptions {
    /// Instances requested per grow decision.
    pub grow_step: u32,
    /// Use ceiling instead of the truncating integer division when computing
    /// the task/resource ratio of the capacity test.
    pub ceil_ratio: bool,
    /// Requeued tasks go to the head of the queue instead of the back.
    pub requeue_to_front: bool,
}

impl Default for AlgorithmOptions {
    fn default() -> Self {
        AlgorithmOptions {
            grow_step: 1,
            ceil_ratio: false,
            requeue_to_front: false,
        }
    }
}

/// A provisioning decision together with the numbers that led to it.
#[derive(Debug, Clone, PartialEq)]
pub struct ProvisionDecision {
    pub action: ProvisionAction,
    pub rationale: Option<CapacityCheck>,
}

impl ProvisionDecision {
    pub fn none() -> Self {
        ProvisionDecision {
            action: ProvisionAction::None,
            rationale: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProvisionAction {
    None,
    Grow { pool_id: PoolId, count: u32 },
    Shrink { resource_ids: Vec<ResourceId> },
}

/// Read-only snapshot of the QoS counters a capacity test consumes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QosSnapshot {
    pub total_work: u32,
    pub scheduled_tasks: u32,
    pub work_completed: u32,
    pub average_task_execution_time: Duration,
    pub time_remaining: Duration,
}

impl QosSnapshot {
    pub fn of(qos: &QosContract, now: Timestamp) -> Self {
        QosSnapshot {
            total_work: qos.total_work,
            scheduled_tasks: qos.scheduled_tasks,
            work_completed: qos.work_completed,
            average_task_execution_time: qos.average_task_execution_time(),
            time_remaining: qos.time_remaining(now),
        }
    }
}

/// Result of one evaluation of the capacity test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapacityCheck {
    pub exceeded: bool,
    pub current_resources: u32,
    pub task_remaining: u32,
    pub task_resource_ratio: u32,
    pub required_time: Duration,
    pub time_remaining: Duration,
}

/// Checks whether the current allocation can still satisfy the contract.
///
/// With no resources the answer is always "exceeded". Otherwise the remaining
/// task count (not-yet-dispatched when growing, not-yet-completed when
/// shrinking) is divided by the current resource count — truncating integer
/// division unless `ceil_ratio` — and multiplied by the average task
/// execution time; capacity is exceeded when that required time is strictly
/// larger than the time remaining to the deadline.
pub fn capacity_check(
    qos: &QosSnapshot,
    current_resources: u32,
    to_grow: bool,
    ceil_ratio: bool,
) -> CapacityCheck {
    let task_remaining = if to_grow {
        qos.total_work.saturating_sub(qos.scheduled_tasks)
    } else {
        qos.total_work.saturating_sub(qos.work_completed)
    };
    if current_resources == 0 {
        return CapacityCheck {
            exceeded: true,
            current_resources,
            task_remaining,
            task_resource_ratio: 0,
            required_time: Duration::ZERO,
            time_remaining: qos.time_remaining,
        };
    }
    let task_resource_ratio = if ceil_ratio {
        task_remaining.div_ceil(current_resources)
    } else {
        task_remaining / current_resources
    };
    let required_time =
        Duration(qos.average_task_execution_time.seconds() * task_resource_ratio as f64);
    CapacityCheck {
        exceeded: required_time.seconds() > qos.time_remaining.seconds(),
        current_resources,
        task_remaining,
        task_resource_ratio,
        required_time,
        time_remaining: qos.time_remaining,
    }
}

/// Boolean form of [`capacity_check`].
pub fn exceed_resource_capacity(
    qos: &QosSnapshot,
    current_resources: u32,
    to_grow: bool,
    ceil_ratio: bool,
) -> bool {
    capacity_check(qos, current_resources, to_grow, ceil_ratio).exceeded
}

/// An assignment emitted by the algorithm for the context to validate and
/// apply.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignCommand {
    pub task_id: TaskId,
    pub resource_id: ResourceId,
}

/// The algorithm's window into the scheduler context during a callback.
///
/// Grants read access to resources and QoS state plus a buffer for
/// assignment commands; the context applies the commands after the callback
/// returns, so handlers never mutate shared state re-entrantly.
pub struct SchedulerView<'a> {
    now: Timestamp,
    resources: &'a BTreeMap<ResourceId, Resource>,
    qos: &'a BTreeMap<ApplicationId, QosContract>,
    pending_provision_apps: &'a BTreeSet<ApplicationId>,
    default_growable_pool: Option<&'a PoolId>,
    commands: Vec<AssignCommand>,
}

impl<'a> SchedulerView<'a> {
    pub fn new(
        now: Timestamp,
        resources: &'a BTreeMap<ResourceId, Resource>,
        qos: &'a BTreeMap<ApplicationId, QosContract>,
        pending_provision_apps: &'a BTreeSet<ApplicationId>,
        default_growable_pool: Option<&'a PoolId>,
    ) -> Self {
        SchedulerView {
            now,
            resources,
            qos,
            pending_provision_apps,
            default_growable_pool,
            commands: Vec::new(),
        }
    }

    pub fn now(&self) -> Timestamp {
        self.now
    }

    pub fn resource(&self, id: &ResourceId) -> Option<&Resource> {
        self.resources.get(id)
    }

    pub fn qos(&self, app: &ApplicationId) -> Option<&QosContract> {
        self.qos.get(app)
    }

    /// Total slot count over connected resources, free and busy.
    pub fn connected_slot_count(&self) -> u32 {
        self.resources
            .values()
            .filter(|r| r.is_connected)
            .map(|r| r.total_slots)
            .sum()
    }

    /// Connected provisioned (non-local) resources, ordered by id.
    pub fn provisioned_resources(&self) -> impl Iterator<Item = &Resource> {
        self.resources
            .values()
            .filter(|r| r.is_connected && r.provisioned_at.is_some())
    }

    /// True while a provisioning request for this application is unresolved.
    pub fn has_pending_provision(&self, app: &ApplicationId) -> bool {
        self.pending_provision_apps.contains(app)
    }

    pub fn default_growable_pool(&self) -> Option<&PoolId> {
        self.default_growable_pool
    }

    /// Emits an assignment for the context to validate and apply.
    pub fn assign(&mut self, task_id: TaskId, resource_id: ResourceId) {
        self.commands.push(AssignCommand {
            task_id,
            resource_id,
        });
    }

    pub fn into_commands(self) -> Vec<AssignCommand> {
        self.commands
    }
}

/// Contract every scheduling algorithm implements.
///
/// The default method bodies delegate the bookkeeping (task queue, free
/// list, attachment state) to [`AlgorithmCore`], so a policy typically
/// overrides only [`schedule`](Self::schedule) and, for provisioning-capable
/// algorithms, [`provisioning_tick`](Self::provisioning_tick).
pub trait SchedulingAlgorithm {
    fn descriptor(&self) -> AlgorithmDescriptor;

    fn core(&self) -> &AlgorithmCore;

    fn core_mut(&mut self) -> &mut AlgorithmCore;

    /// Attaches the algorithm to a scheduler context. Must be called before
    /// any other callback.
    fn set_scheduler(&mut self, context_id: &str) {
        self.core_mut().attach(context_id);
    }

    fn start(&mut self) -> Result<()> {
        self.core_mut().start()
    }

    fn stop(&mut self) {
        self.core_mut().stop();
    }

    /// Appends new tasks to the scheduling queue in arrival order.
    fn add_tasks(&mut self, tasks: &[TaskId]) -> Result<()> {
        self.core_mut().add_tasks(tasks)
    }

    /// Pops the next task to schedule. Order is policy-defined; the base
    /// queue is FIFO.
    fn get_next_task(&mut self) -> Option<TaskId> {
        self.core_mut().pop_next_task()
    }

    fn tasks_in_queue(&self) -> usize {
        self.core().tasks_in_queue()
    }

    fn add_resources(&mut self, resources: &[Resource]) -> Result<()> {
        self.core_mut().add_resources(resources)
    }

    fn add_free_resource(&mut self, resource: &Resource) -> Result<()> {
        self.core_mut().add_free_resource(resource)
    }

    fn remove_free_resource(&mut self, resource_id: &ResourceId) -> Result<()> {
        self.core_mut().remove_free_resource(resource_id)
    }

    fn have_free_resources(&self) -> bool {
        self.core().have_free_resources()
    }

    fn task_finished(&mut self, _task_id: &TaskId) -> Result<()> {
        self.core().ensure_attached()
    }

    fn task_failed(&mut self, _task_id: &TaskId) -> Result<()> {
        self.core().ensure_attached()
    }

    fn task_aborted(&mut self, _task_id: &TaskId) -> Result<()> {
        self.core().ensure_attached()
    }

    /// A failed or aborted task re-entered the queue; placement follows the
    /// core's requeue setting (back of the queue by default).
    fn task_requeued(&mut self, task_id: &TaskId) -> Result<()> {
        self.core_mut().requeue_task(task_id)
    }

    fn resource_disconnected(&mut self, resource_id: &ResourceId) -> Result<()> {
        self.core_mut().remove_free_resource(resource_id)
    }

    fn resource_reconnected(&mut self, resource: &Resource) -> Result<()> {
        self.core_mut().add_free_resource(resource)
    }

    /// One scheduling decision. Called repeatedly by the context's loop while
    /// the queue is non-empty and free resources exist.
    fn schedule(&mut self, view: &mut SchedulerView<'_>) -> Result<()>;

    /// Periodic/grow-shrink evaluation for provisioning-capable algorithms.
    fn provisioning_tick(
        &mut self,
        _app: &ApplicationId,
        _view: &SchedulerView<'_>,
    ) -> ProvisionDecision {
        ProvisionDecision::none()
    }
}

/// Builds one algorithm instance from the shared options.
pub type AlgorithmConstructor = Box<dyn Fn(&AlgorithmOptions) -> Box<dyn SchedulingAlgorithm>>;

/// Constructor registry keyed by algorithm name.
///
/// Third-party policies register a name and a constructor; the CLI resolves
/// `--algorithm NAME` against this registry.
pub struct AlgorithmRegistry {
    constructors: BTreeMap<String, AlgorithmConstructor>,
}

impl AlgorithmRegistry {
    /// Registry with the built-in policies: `fifo`, `default`,
    /// `deadline_priority` and `data_aware`.
    pub fn with_builtins() -> Self {
        fn configured<A: SchedulingAlgorithm + 'static>(
            mut algorithm: A,
            options: &AlgorithmOptions,
        ) -> Box<dyn SchedulingAlgorithm> {
            algorithm
                .core_mut()
                .set_requeue_to_front(options.requeue_to_front);
            Box::new(algorithm)
        }
        let mut registry = AlgorithmRegistry {
            constructors: BTreeMap::new(),
        };
        registry.register("fifo", |opts| configured(Fifo::new(), opts));
        registry.register("default", |opts| {
            configured(DefaultEstimate::new("default", opts.clone()), opts)
        });
        registry.register("data_aware", |opts| {
            configured(DefaultEstimate::new("data_aware", opts.clone()), opts)
        });
        registry.register("deadline_priority", |opts| {
            configured(DeadlinePriority::new(opts.clone()), opts)
        });
        registry
    }

    pub fn register<F>(&mut self, name: &str, constructor: F)
    where
        F: Fn(&AlgorithmOptions) -> Box<dyn SchedulingAlgorithm> + 'static,
    {
        self.constructors
            .insert(name.to_string(), Box::new(constructor));
    }

    pub fn build(
        &self,
        name: &str,
        options: &AlgorithmOptions,
    ) -> Result<Box<dyn SchedulingAlgorithm>> {
        match self.constructors.get(name) {
            Some(ctor) => Ok(ctor(options)),
            None => Err(crate::error::SchedulerError::ConfigInvalid(format!(
                "unknown algorithm '{name}'; registered: {}",
                self.names().join(", ")
            ))),
        }
    }

    pub fn names(&self) -> Vec<String> {
        self.constructors.keys().cloned().collect()
    }
}
