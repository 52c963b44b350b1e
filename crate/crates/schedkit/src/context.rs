//! The scheduler context: owns the application store, wires algorithm
//! callbacks to events, enforces the task lifecycle and mediates
//! provisioning requests.
//!
//! All operations are serialized: algorithm callbacks, event publication and
//! store mutation never interleave. The scheduling loop invokes the
//! algorithm's `schedule` while there are queued tasks and free resources;
//! assignments come back as commands which the context validates against the
//! store (the single source of truth for task state) before applying.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::algorithms::{
    AssignCommand, ProvisionAction, SchedulerView, SchedulingAlgorithm,
};
use crate::error::{Result, SchedulerError};
use crate::events::{
    EventBus, EventPayload, FailureCause, PoolStatus, RequeueCause, SchedulingEvent,
};
use crate::model::{
    finalize_metrics, requeue, transition, ApplicationId, QosContract, RequestId, Resource,
    ResourceId, TaskId, TaskState, TaskUnit, Timestamp,
};
use crate::provisioning::PoolManager;

/// Context-level knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextConfig {
    /// A task whose attempt count would exceed this stays failed for good.
    pub max_retries: u32,
    /// Measure the per-task mean from dispatch (transfer included) instead of
    /// from execution start.
    pub include_transfer_in_mean: bool,
}

impl Default for ContextConfig {
    fn default() -> Self {
        ContextConfig {
            max_retries: 3,
            include_transfer_in_mean: false,
        }
    }
}

/// Terminal outcome reported to [`SchedulerContext::on_task_outcome`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskOutcome {
    Finished,
    Failed(FailureCause),
    Aborted,
}

/// In-memory task and QoS store; the single source of truth for task state.
#[derive(Debug, Default)]
pub struct ApplicationStore {
    tasks: BTreeMap<TaskId, TaskUnit>,
    qos: BTreeMap<ApplicationId, QosContract>,
    submission_order: Vec<TaskId>,
}

impl ApplicationStore {
    pub fn task(&self, id: &TaskId) -> Option<&TaskUnit> {
        self.tasks.get(id)
    }

    pub fn tasks(&self) -> impl Iterator<Item = &TaskUnit> {
        self.tasks.values()
    }

    /// Tasks in the order they were submitted.
    pub fn tasks_in_submission_order(&self) -> impl Iterator<Item = &TaskUnit> {
        self.submission_order.iter().map(|id| &self.tasks[id])
    }

    pub fn qos(&self, app: &ApplicationId) -> Option<&QosContract> {
        self.qos.get(app)
    }

    pub fn all_terminal(&self) -> bool {
        self.tasks.values().all(|t| t.state.is_terminal())
    }

    fn tasks_assigned_to(&self, resource_id: &ResourceId) -> Vec<TaskId> {
        self.tasks
            .values()
            .filter(|t| {
                matches!(t.state, TaskState::Scheduled | TaskState::Running)
                    && t.assigned_resource.as_ref() == Some(resource_id)
            })
            .map(|t| t.task_id.clone())
            .collect()
    }
}

/// Verbosity of the error log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogLevel {
    Error,
    Debug,
}

/// One structured line of the error log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub time: Timestamp,
    pub level: LogLevel,
    pub operation: String,
    pub message: String,
}

/// Append-only error sink; recording never fails.
#[derive(Debug)]
pub struct ErrorLog {
    verbosity: LogLevel,
    records: Vec<ErrorRecord>,
}

impl ErrorLog {
    pub fn new(verbosity: LogLevel) -> Self {
        ErrorLog {
            verbosity,
            records: Vec::new(),
        }
    }

    pub fn record(&mut self, time: Timestamp, operation: &str, message: String) {
        self.records.push(ErrorRecord {
            time,
            level: LogLevel::Error,
            operation: operation.to_string(),
            message,
        });
    }

    pub fn debug(&mut self, time: Timestamp, operation: &str, message: String) {
        if self.verbosity >= LogLevel::Debug {
            self.records.push(ErrorRecord {
                time,
                level: LogLevel::Debug,
                operation: operation.to_string(),
                message,
            });
        }
    }

    pub fn records(&self) -> &[ErrorRecord] {
        &self.records
    }
}

/// Work the harness must pick up after a context operation.
#[derive(Debug, Clone, PartialEq)]
pub enum ContextOutput {
    /// A task was dispatched; the harness owns the transfer/compute timing.
    Dispatched {
        task_id: TaskId,
        attempt: u32,
        resource_id: ResourceId,
        at: Timestamp,
    },
    /// A provisioning request was issued and matures at the given time.
    ProvisionIssued {
        request_id: RequestId,
        matures_at: Timestamp,
    },
}

/// The runtime half of the plugin contract.
pub struct SchedulerContext {
    context_id: String,
    config: ContextConfig,
    store: ApplicationStore,
    resources: BTreeMap<ResourceId, Resource>,
    algorithm: Option<Box<dyn SchedulingAlgorithm>>,
    supports_provisioning: bool,
    bus: EventBus,
    pools: PoolManager,
    errors: ErrorLog,
    running: bool,
    outputs: Vec<ContextOutput>,
    released: BTreeMap<ResourceId, Resource>,
}

impl SchedulerContext {
    pub fn new(config: ContextConfig, mut pools: PoolManager, verbosity: LogLevel) -> Self {
        let mut resources = BTreeMap::new();
        for resource in pools.initial_resources() {
            resources.insert(resource.resource_id.clone(), resource);
        }
        SchedulerContext {
            context_id: "scheduler-context".to_string(),
            config,
            store: ApplicationStore::default(),
            resources,
            algorithm: None,
            supports_provisioning: false,
            bus: EventBus::new(),
            pools,
            errors: ErrorLog::new(verbosity),
            running: false,
            outputs: Vec::new(),
            released: BTreeMap::new(),
        }
    }

    pub fn store(&self) -> &ApplicationStore {
        &self.store
    }

    pub fn resource(&self, id: &ResourceId) -> Option<&Resource> {
        self.resources.get(id)
    }

    /// Looks a resource up among both live and released instances; used by
    /// end-of-run reporting.
    pub fn resource_record(&self, id: &ResourceId) -> Option<&Resource> {
        self.resources.get(id).or_else(|| self.released.get(id))
    }

    pub fn resources(&self) -> &BTreeMap<ResourceId, Resource> {
        &self.resources
    }

    pub fn bus(&self) -> &EventBus {
        &self.bus
    }

    pub fn bus_mut(&mut self) -> &mut EventBus {
        &mut self.bus
    }

    pub fn pools(&self) -> &PoolManager {
        &self.pools
    }

    pub fn errors(&self) -> &ErrorLog {
        &self.errors
    }

    pub fn is_running(&self) -> bool {
        self.running
    }

    pub fn supports_provisioning(&self) -> bool {
        self.supports_provisioning
    }

    /// Drains the actions the harness must schedule.
    pub fn take_outputs(&mut self) -> Vec<ContextOutput> {
        std::mem::take(&mut self.outputs)
    }

    /// Attaches the scheduling algorithm. Only legal while stopped.
    pub fn set_algorithm(&mut self, mut algorithm: Box<dyn SchedulingAlgorithm>) -> Result<()> {
        if self.running {
            return Err(SchedulerError::AlreadyRunning);
        }
        algorithm.set_scheduler(&self.context_id);
        self.supports_provisioning = algorithm.descriptor().supports_provisioning;
        self.algorithm = Some(algorithm);
        Ok(())
    }

    /// Starts the scheduling service: activates the algorithm, registers the
    /// known resources with it and delivers every queued task.
    pub fn start(&mut self, now: Timestamp) -> Result<()> {
        if self.running {
            return Err(SchedulerError::AlreadyRunning);
        }
        let algorithm = self
            .algorithm
            .as_mut()
            .ok_or_else(|| SchedulerError::ConfigInvalid("no algorithm attached".into()))?;
        let name = algorithm.descriptor().name;
        self.running = true;
        self.publish(SchedulingEvent::new(
            now,
            EventPayload::AlgorithmSelected { algorithm: name },
        ));

        let algorithm = self.algorithm.as_mut().expect("algorithm attached");
        if let Err(err) = algorithm.start() {
            self.running = false;
            return Err(err);
        }
        let registered: Vec<Resource> = self.resources.values().cloned().collect();
        self.forward("start/add_resources", |alg| alg.add_resources(&registered));
        let queued: Vec<TaskId> = self
            .store
            .tasks_in_submission_order()
            .filter(|t| t.state == TaskState::Queued)
            .map(|t| t.task_id.clone())
            .collect();
        self.forward("start/add_tasks", |alg| alg.add_tasks(&queued));
        self.run_schedule_loop(now);
        self.provisioning_tick(now);
        Ok(())
    }

    /// Stops the scheduling service; no further assignments occur.
    pub fn stop(&mut self, _now: Timestamp) -> Result<()> {
        if !self.running {
            return Err(SchedulerError::NotRunning);
        }
        if let Some(algorithm) = self.algorithm.as_mut() {
            algorithm.stop();
        }
        self.running = false;
        Ok(())
    }

    /// Stores new tasks as queued and forwards them to the algorithm.
    pub fn submit(
        &mut self,
        tasks: Vec<TaskUnit>,
        qos: QosContract,
        now: Timestamp,
    ) -> Result<()> {
        for task in &tasks {
            if self.store.tasks.contains_key(&task.task_id) {
                return Err(SchedulerError::DuplicateTaskId(task.task_id.0.clone()));
            }
            if task.application_id != qos.application_id {
                return Err(SchedulerError::ConfigInvalid(format!(
                    "task {} does not belong to application {}",
                    task.task_id, qos.application_id
                )));
            }
        }
        let submitted_so_far = self
            .store
            .tasks
            .values()
            .filter(|t| t.application_id == qos.application_id)
            .count();
        if submitted_so_far + tasks.len() > qos.total_work as usize {
            return Err(SchedulerError::ConfigInvalid(format!(
                "application {} submits more tasks than its total work {}",
                qos.application_id, qos.total_work
            )));
        }
        if tasks.is_empty() {
            return Ok(());
        }
        // Counters accumulate across incremental submissions; the first
        // submission establishes the contract.
        self.store
            .qos
            .entry(qos.application_id.clone())
            .or_insert(qos);
        let mut ids = Vec::with_capacity(tasks.len());
        for mut task in tasks {
            task.state = TaskState::Queued;
            task.submit_time = now;
            ids.push(task.task_id.clone());
            self.store.submission_order.push(task.task_id.clone());
            self.store.tasks.insert(task.task_id.clone(), task);
        }
        if self.running {
            self.forward("submit/add_tasks", |alg| alg.add_tasks(&ids));
            self.run_schedule_loop(now);
        }
        Ok(())
    }

    /// Validates and applies one assignment: the task moves to `Scheduled`,
    /// the resource loses a slot and a `TaskAssigned` event is published.
    pub fn on_assign(
        &mut self,
        task_id: &TaskId,
        resource_id: &ResourceId,
        now: Timestamp,
    ) -> Result<()> {
        let stale = |reason: &str| SchedulerError::StaleAssignment {
            task_id: task_id.0.clone(),
            resource_id: resource_id.0.clone(),
            reason: reason.to_string(),
        };
        let task = self
            .store
            .tasks
            .get(task_id)
            .ok_or_else(|| SchedulerError::UnknownTask(task_id.0.clone()))?;
        if task.state != TaskState::Queued {
            return Err(stale("task is no longer queued"));
        }
        let resource = match self.resources.get(resource_id) {
            Some(r) => r,
            None => return Err(stale("resource is gone")),
        };
        if !resource.is_connected {
            return Err(stale("resource is disconnected"));
        }
        if resource.free_slots == 0 {
            return Err(stale("resource has no free slots"));
        }

        let mut next = transition(task, TaskState::Scheduled, now)?;
        next.assigned_resource = Some(resource_id.clone());
        let attempt = next.attempt;
        let app = next.application_id.clone();
        self.store.tasks.insert(task_id.clone(), next);

        let resource = self.resources.get_mut(resource_id).expect("checked above");
        resource.free_slots -= 1;
        let now_full = resource.free_slots == 0;
        if now_full {
            let rid = resource_id.clone();
            self.forward("on_assign/remove_free_resource", |alg| {
                alg.remove_free_resource(&rid)
            });
        }
        if let Some(qos) = self.store.qos.get_mut(&app) {
            qos.scheduled_tasks += 1;
        }
        self.publish(SchedulingEvent::new(
            now,
            EventPayload::TaskAssigned {
                task_id: task_id.clone(),
                resource_id: resource_id.clone(),
                attempt,
            },
        ));
        self.outputs.push(ContextOutput::Dispatched {
            task_id: task_id.clone(),
            attempt,
            resource_id: resource_id.clone(),
            at: now,
        });
        Ok(())
    }

    /// Marks a dispatched task as executing (data transfer complete).
    pub fn on_task_started(&mut self, task_id: &TaskId, now: Timestamp) -> Result<()> {
        let task = self
            .store
            .tasks
            .get(task_id)
            .ok_or_else(|| SchedulerError::UnknownTask(task_id.0.clone()))?;
        let next = transition(task, TaskState::Running, now)?;
        self.store.tasks.insert(task_id.clone(), next);
        Ok(())
    }

    /// Applies a terminal outcome: transition, slot release, event, algorithm
    /// notification, QoS bookkeeping and the retry policy for failures.
    pub fn on_task_outcome(
        &mut self,
        task_id: &TaskId,
        outcome: TaskOutcome,
        now: Timestamp,
    ) -> Result<()> {
        let task = self
            .store
            .tasks
            .get(task_id)
            .ok_or_else(|| SchedulerError::UnknownTask(task_id.0.clone()))?;
        if !matches!(task.state, TaskState::Scheduled | TaskState::Running) {
            return Err(SchedulerError::IllegalTransition {
                task_id: task_id.0.clone(),
                from: task.state,
                to: match outcome {
                    TaskOutcome::Finished => TaskState::Finished,
                    TaskOutcome::Failed(_) => TaskState::Failed,
                    TaskOutcome::Aborted => TaskState::Aborted,
                },
            });
        }
        let target = match outcome {
            TaskOutcome::Finished => TaskState::Finished,
            TaskOutcome::Failed(_) => TaskState::Failed,
            TaskOutcome::Aborted => TaskState::Aborted,
        };
        let next = transition(task, target, now)?;
        let resource_id = next.assigned_resource.clone();
        let app = next.application_id.clone();
        self.store.tasks.insert(task_id.clone(), next);
        self.release_slot(resource_id.as_ref());
        self.apply_outcome_bookkeeping(task_id, outcome, &app, now);
        self.run_schedule_loop(now);
        self.provisioning_tick(now);
        Ok(())
    }

    fn apply_outcome_bookkeeping(
        &mut self,
        task_id: &TaskId,
        outcome: TaskOutcome,
        app: &ApplicationId,
        now: Timestamp,
    ) {
        let task = self.store.tasks.get(task_id).expect("stored above").clone();
        let metrics = finalize_metrics(&task);
        match outcome {
            TaskOutcome::Finished => {
                let measured = if self.config.include_transfer_in_mean {
                    match (task.scheduled_time, task.end_time) {
                        (Some(scheduled), Some(end)) => end - scheduled,
                        _ => metrics.execution_time,
                    }
                } else {
                    metrics.execution_time
                };
                if let Some(qos) = self.store.qos.get_mut(app) {
                    qos.record_completion(measured);
                }
                self.publish(SchedulingEvent::new(
                    now,
                    EventPayload::TaskFinished {
                        task_id: task_id.clone(),
                        resource_id: task.assigned_resource.clone().expect("finished on a resource"),
                        queue_time: metrics.queue_time,
                        execution_time: metrics.execution_time,
                    },
                ));
                self.forward("on_task_outcome/task_finished", |alg| {
                    alg.task_finished(task_id)
                });
            }
            TaskOutcome::Failed(cause) => {
                if let Some(qos) = self.store.qos.get_mut(app) {
                    qos.scheduled_tasks = qos.scheduled_tasks.saturating_sub(1);
                }
                self.publish(SchedulingEvent::new(
                    now,
                    EventPayload::TaskFailed {
                        task_id: task_id.clone(),
                        cause,
                        resource_id: task.assigned_resource.clone(),
                        queue_time: metrics.queue_time,
                        execution_time: metrics.execution_time,
                    },
                ));
                self.forward("on_task_outcome/task_failed", |alg| {
                    alg.task_failed(task_id)
                });
                self.requeue_after(task_id, RequeueCause::Failed, now);
            }
            TaskOutcome::Aborted => {
                if let Some(qos) = self.store.qos.get_mut(app) {
                    qos.scheduled_tasks = qos.scheduled_tasks.saturating_sub(1);
                }
                self.publish(SchedulingEvent::new(
                    now,
                    EventPayload::TaskAborted {
                        task_id: task_id.clone(),
                        queue_time: metrics.queue_time,
                        execution_time: metrics.execution_time,
                    },
                ));
                self.forward("on_task_outcome/task_aborted", |alg| {
                    alg.task_aborted(task_id)
                });
            }
        }
    }

    /// Requeues a failed task unless the retry cap is hit.
    fn requeue_after(&mut self, task_id: &TaskId, cause: RequeueCause, now: Timestamp) {
        let task = self.store.tasks.get(task_id).expect("exists").clone();
        if task.attempt + 1 > self.config.max_retries {
            self.errors.debug(
                now,
                "requeue",
                format!("task {task_id} exhausted its {} retries", self.config.max_retries),
            );
            return;
        }
        match requeue(&task, now) {
            Ok(next) => {
                let attempt = next.attempt;
                self.store.tasks.insert(task_id.clone(), next);
                self.store.submission_order.retain(|id| id != task_id);
                self.store.submission_order.push(task_id.clone());
                self.publish(SchedulingEvent::new(
                    now,
                    EventPayload::TaskRequeued {
                        task_id: task_id.clone(),
                        cause,
                        attempt,
                    },
                ));
                self.forward("requeue/task_requeued", |alg| alg.task_requeued(task_id));
            }
            Err(err) => self.errors.record(now, "requeue", err.to_string()),
        }
    }

    /// Marks a resource disconnected and fails every task assigned to it.
    pub fn on_resource_disconnected(
        &mut self,
        resource_id: &ResourceId,
        now: Timestamp,
    ) -> Result<()> {
        let resource = self
            .resources
            .get_mut(resource_id)
            .ok_or_else(|| SchedulerError::UnknownResource(resource_id.0.clone()))?;
        if !resource.is_connected {
            return Err(SchedulerError::InvalidRequest(format!(
                "resource {resource_id} is already disconnected"
            )));
        }
        resource.is_connected = false;
        resource.free_slots = 0;
        self.forward("disconnect/remove_free_resource", |alg| {
            alg.remove_free_resource(resource_id)
        });
        self.publish(SchedulingEvent::new(
            now,
            EventPayload::ResourceDisconnected {
                resource_id: resource_id.clone(),
            },
        ));
        self.forward("disconnect/resource_disconnected", |alg| {
            alg.resource_disconnected(resource_id)
        });

        for task_id in self.store.tasks_assigned_to(resource_id) {
            let task = self.store.tasks.get(&task_id).expect("assigned task exists");
            let failed = transition(task, TaskState::Failed, now).expect("legal from scheduled/running");
            let app = failed.application_id.clone();
            self.store.tasks.insert(task_id.clone(), failed);
            if let Some(qos) = self.store.qos.get_mut(&app) {
                qos.scheduled_tasks = qos.scheduled_tasks.saturating_sub(1);
            }
            let task = self.store.tasks.get(&task_id).expect("exists").clone();
            let metrics = finalize_metrics(&task);
            self.publish(SchedulingEvent::new(
                now,
                EventPayload::TaskFailed {
                    task_id: task_id.clone(),
                    cause: FailureCause::ResourceDisconnect,
                    resource_id: Some(resource_id.clone()),
                    queue_time: metrics.queue_time,
                    execution_time: metrics.execution_time,
                },
            ));
            self.forward("disconnect/task_failed", |alg| alg.task_failed(&task_id));
            self.requeue_after(&task_id, RequeueCause::Failed, now);
        }
        self.run_schedule_loop(now);
        self.provisioning_tick(now);
        Ok(())
    }

    /// Brings a disconnected resource back with all slots free.
    pub fn on_resource_reconnected(
        &mut self,
        resource_id: &ResourceId,
        now: Timestamp,
    ) -> Result<()> {
        let resource = self
            .resources
            .get_mut(resource_id)
            .ok_or_else(|| SchedulerError::UnknownResource(resource_id.0.clone()))?;
        if resource.is_connected {
            return Err(SchedulerError::NotDisconnected(resource_id.0.clone()));
        }
        resource.is_connected = true;
        resource.free_slots = resource.total_slots;
        let snapshot = resource.clone();
        self.publish(SchedulingEvent::new(
            now,
            EventPayload::ResourceReconnected {
                resource_id: resource_id.clone(),
            },
        ));
        self.forward("reconnect/resource_reconnected", |alg| {
            alg.resource_reconnected(&snapshot)
        });
        self.run_schedule_loop(now);
        Ok(())
    }

    /// Resolves matured provisioning requests: grants register new resources
    /// with the algorithm, denials are observable in the trace.
    pub fn pool_tick(&mut self, now: Timestamp) -> Result<()> {
        let matured = self.pools.pool_tick(now);
        if matured.is_empty() {
            return Ok(());
        }
        for m in matured {
            self.publish(SchedulingEvent::new(
                now,
                EventPayload::ResourceProvisionProcessed {
                    request_id: m.request.request_id,
                    pool_id: m.request.pool_id.clone(),
                    outcome: m.outcome.clone(),
                },
            ));
            if !m.new_resources.is_empty() {
                for resource in &m.new_resources {
                    self.resources
                        .insert(resource.resource_id.clone(), resource.clone());
                }
                let new = m.new_resources.clone();
                self.forward("pool_tick/add_resources", |alg| alg.add_resources(&new));
            }
        }
        self.run_schedule_loop(now);
        self.provisioning_tick(now);
        Ok(())
    }

    /// Releases idle provisioned resources and stops their cost accrual.
    pub fn request_release(&mut self, resource_ids: &[ResourceId], now: Timestamp) -> Result<()> {
        for rid in resource_ids {
            let resource = self
                .resources
                .get(rid)
                .ok_or_else(|| SchedulerError::UnknownResource(rid.0.clone()))?;
            if !self.pools.is_provisioned(rid) {
                return Err(SchedulerError::NotProvisioned(rid.0.clone()));
            }
            if resource.is_connected && !resource.is_idle() {
                return Err(SchedulerError::NotIdle(rid.0.clone()));
            }
        }
        for rid in resource_ids {
            if let Some(mut resource) = self.resources.remove(rid) {
                resource.released_at = Some(now);
                self.released.insert(rid.clone(), resource);
            }
            self.forward("release/remove_free_resource", |alg| {
                alg.remove_free_resource(rid)
            });
        }
        self.pools.mark_released(resource_ids, now);
        self.publish(SchedulingEvent::new(
            now,
            EventPayload::ResourceReleaseRequested {
                resource_ids: resource_ids.to_vec(),
            },
        ));
        Ok(())
    }

    /// Releases every live provisioned resource (used at experiment end).
    pub fn release_all_provisioned(&mut self, now: Timestamp) -> Result<()> {
        let ids: Vec<ResourceId> = self
            .resources
            .keys()
            .filter(|rid| self.pools.is_provisioned(rid))
            .cloned()
            .collect();
        if ids.is_empty() {
            return Ok(());
        }
        self.request_release(&ids, now)
    }

    /// Answers a pool query and records it in the trace.
    pub fn query_pools(&mut self, now: Timestamp) -> Vec<PoolStatus> {
        let mut pools = self.pools.query_pools();
        for status in &mut pools {
            status.connected_instances = self
                .resources
                .values()
                .filter(|r| r.pool_id == status.pool_id && r.is_connected)
                .count() as u32;
        }
        self.publish(SchedulingEvent::new(
            now,
            EventPayload::ResourcePoolsQueryRequested {
                pools: pools.clone(),
            },
        ));
        pools
    }

    /// Appends a structured error record; never fails.
    pub fn record_error(&mut self, now: Timestamp, operation: &str, err: &SchedulerError) {
        self.errors.record(now, operation, err.to_string());
    }

    /// Runs the scheduling loop: invoke `schedule` while the algorithm has
    /// queued tasks and free resources, applying each emitted assignment.
    /// Every applied assignment is followed by a provisioning tick, so grow
    /// decisions see the dispatch they just caused.
    pub fn run_schedule_loop(&mut self, now: Timestamp) {
        if !self.running {
            return;
        }
        loop {
            let Some(algorithm) = self.algorithm.as_ref() else {
                return;
            };
            if algorithm.tasks_in_queue() == 0 || !algorithm.have_free_resources() {
                break;
            }
            let commands = self.call_schedule(now);
            if commands.is_empty() {
                break;
            }
            let mut advanced = false;
            for command in commands {
                if self.apply_assignment(&command, now) {
                    advanced = true;
                    self.provisioning_tick(now);
                }
            }
            if !advanced {
                // Stale queue/free-list entries were pruned; re-check the gate.
                continue;
            }
        }
    }

    fn call_schedule(&mut self, now: Timestamp) -> Vec<AssignCommand> {
        let pending = self.pools.pending_applications();
        let default_pool = self.pools.default_growable_pool().cloned();
        let algorithm = self.algorithm.as_mut().expect("checked by caller");
        let mut view = SchedulerView::new(
            now,
            &self.resources,
            &self.store.qos,
            &pending,
            default_pool.as_ref(),
        );
        let outcome = algorithm.schedule(&mut view);
        let commands = view.into_commands();
        if let Err(err) = outcome {
            self.errors.record(now, "schedule", err.to_string());
            return Vec::new();
        }
        commands
    }

    /// Applies one assignment command; on staleness the algorithm's state is
    /// repaired (free-list pruning, task requeue) and false is returned.
    fn apply_assignment(&mut self, command: &AssignCommand, now: Timestamp) -> bool {
        match self.on_assign(&command.task_id, &command.resource_id, now) {
            Ok(()) => true,
            Err(err) => {
                self.errors.record(now, "on_assign", err.to_string());
                if matches!(err, SchedulerError::StaleAssignment { .. }) {
                    let still_queued = self
                        .store
                        .task(&command.task_id)
                        .is_some_and(|t| t.state == TaskState::Queued);
                    let resource_bad = self
                        .resources
                        .get(&command.resource_id)
                        .is_none_or(|r| !r.is_free());
                    if resource_bad {
                        let rid = command.resource_id.clone();
                        self.forward("on_assign/remove_free_resource", |alg| {
                            alg.remove_free_resource(&rid)
                        });
                    }
                    if still_queued {
                        let tid = command.task_id.clone();
                        self.forward("on_assign/task_requeued", |alg| alg.task_requeued(&tid));
                    }
                }
                false
            }
        }
    }

    /// Evaluates the provisioning policy for every application and mediates
    /// the resulting grow/shrink actions.
    pub fn provisioning_tick(&mut self, now: Timestamp) {
        if !self.running || !self.supports_provisioning {
            return;
        }
        let apps: Vec<ApplicationId> = self.store.qos.keys().cloned().collect();
        for app in apps {
            let pending = self.pools.pending_applications();
            let default_pool = self.pools.default_growable_pool().cloned();
            let Some(algorithm) = self.algorithm.as_mut() else {
                return;
            };
            let view = SchedulerView::new(
                now,
                &self.resources,
                &self.store.qos,
                &pending,
                default_pool.as_ref(),
            );
            let decision = algorithm.provisioning_tick(&app, &view);
            match decision.action {
                ProvisionAction::None => {}
                ProvisionAction::Grow { pool_id, count } => {
                    match self.pools.request_provision(&pool_id, count, &app, now) {
                        Ok(request) => {
                            if let Some(check) = &decision.rationale {
                                self.errors.debug(
                                    now,
                                    "provisioning_tick",
                                    format!(
                                        "grow {pool_id} x{count}: remaining={} ratio={} required={} time_remaining={}",
                                        check.task_remaining,
                                        check.task_resource_ratio,
                                        check.required_time,
                                        check.time_remaining
                                    ),
                                );
                            }
                            self.publish(SchedulingEvent::new(
                                now,
                                EventPayload::ResourceProvisionRequested {
                                    request_id: request.request_id,
                                    pool_id: request.pool_id.clone(),
                                    application_id: app.clone(),
                                    count,
                                },
                            ));
                            self.outputs.push(ContextOutput::ProvisionIssued {
                                request_id: request.request_id,
                                matures_at: request.matures_at,
                            });
                        }
                        Err(err) => self.errors.record(now, "request_provision", err.to_string()),
                    }
                }
                ProvisionAction::Shrink { resource_ids } => {
                    if let Err(err) = self.request_release(&resource_ids, now) {
                        self.errors.record(now, "request_release", err.to_string());
                    }
                }
            }
        }
    }

    /// Frees the slot a finished/failed/aborted task held, if the resource is
    /// still around and connected.
    fn release_slot(&mut self, resource_id: Option<&ResourceId>) {
        let Some(rid) = resource_id else { return };
        let Some(resource) = self.resources.get_mut(rid) else {
            return;
        };
        if !resource.is_connected {
            return;
        }
        resource.free_slots = (resource.free_slots + 1).min(resource.total_slots);
        let snapshot = resource.clone();
        self.forward("release_slot/add_free_resource", |alg| {
            alg.add_free_resource(&snapshot)
        });
    }

    /// Invokes an algorithm callback, recording instead of propagating errors.
    fn forward<F>(&mut self, operation: &str, call: F)
    where
        F: FnOnce(&mut dyn SchedulingAlgorithm) -> Result<()>,
    {
        let Some(algorithm) = self.algorithm.as_mut() else {
            return;
        };
        if let Err(err) = call(algorithm.as_mut()) {
            let time = self.bus.last_time().unwrap_or(Timestamp::ZERO);
            self.errors.record(time, operation, err.to_string());
        }
    }

    fn publish(&mut self, event: SchedulingEvent) {
        let time = event.time;
        if let Err(err) = self.bus.publish(event) {
            self.errors.record(time, "publish", err.to_string());
        }
    }

    /// Slot-conservation sweep: for every connected resource,
    /// `total - free` equals the tasks currently dispatched to it.
    pub fn check_slot_conservation(&self) -> Result<()> {
        let mut held: BTreeMap<&ResourceId, u32> = BTreeMap::new();
        for task in self.store.tasks.values() {
            if matches!(task.state, TaskState::Scheduled | TaskState::Running) {
                if let Some(rid) = &task.assigned_resource {
                    *held.entry(rid).or_insert(0) += 1;
                }
            }
        }
        for (rid, resource) in &self.resources {
            if !resource.is_connected {
                continue;
            }
            let used = resource.total_slots - resource.free_slots;
            let expected = held.get(rid).copied().unwrap_or(0);
            if used != expected {
                return Err(SchedulerError::ConfigInvalid(format!(
                    "slot conservation violated on {rid}: {used} used vs {expected} assigned"
                )));
            }
        }
        Ok(())
    }
}

