//! Deterministic discrete-event simulation harness: virtual clock, worker
//! execution model (data transfer + compute), fault injection, workload
//! generation and experiment reporting.
//!
//! The harness owns the event heap and drives the scheduler context with
//! virtual time. Identical (configuration, seed) pairs produce bit-identical
//! traces: every map iterates in key order, random draws come from labeled
//! seeded streams, and simultaneous events resolve by a fixed class priority
//! (task completions, then pool maturations, then faults, then the
//! provisioning timer, then arrivals) and sequence number.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::algorithms::{AlgorithmOptions, AlgorithmRegistry};
use crate::context::{ContextConfig, ContextOutput, LogLevel, SchedulerContext, TaskOutcome};
use crate::dist::{mix_seed, ValueDist};
use crate::error::{Result, SchedulerError};
use crate::model::{
    ApplicationId, Duration, QosContract, RequestId, Resource, ResourceId, TaskId, TaskState,
    TaskUnit, Timestamp,
};
use crate::provisioning::{PoolManager, ResourcePoolSpec};
use crate::report::{build_report, ExperimentOutcome};

/// How tasks of a workload arrive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Arrival {
    /// Everything is queued before the scheduler starts.
    AllAtStart,
    /// Poisson process with the given rate (tasks per second).
    Poisson { rate: f64 },
}

/// Synthetic bag-of-tasks description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub application_id: ApplicationId,
    pub task_count: u32,
    /// Per-task compute demand in reference-slot seconds.
    pub compute_demand: ValueDist,
    /// Per-task input payload in megabytes.
    pub input_data_mb: ValueDist,
    pub arrival: Arrival,
    /// Application deadline as an offset from experiment start.
    pub deadline: Option<Duration>,
    /// Mean-execution-time prior used before the first completion.
    pub prior_mean: Duration,
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<()> {
        if self.task_count == 0 {
            return Err(SchedulerError::ConfigInvalid(
                "workload: task_count must be >= 1".into(),
            ));
        }
        self.compute_demand.validate("workload.compute_demand")?;
        self.input_data_mb.validate("workload.input_data_mb")?;
        if let Arrival::Poisson { rate } = self.arrival {
            if rate <= 0.0 {
                return Err(SchedulerError::ConfigInvalid(
                    "workload: poisson rate must be > 0".into(),
                ));
            }
        }
        if self.prior_mean.seconds() <= 0.0 {
            return Err(SchedulerError::ConfigInvalid(
                "workload: prior_mean must be > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Deterministically expands a workload spec into tasks and a QoS contract.
pub fn generate_workload(spec: &WorkloadSpec, seed: u64) -> Result<(Vec<TaskUnit>, QosContract)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, "workload"));
    let width = (spec.task_count as usize).max(1).to_string().len().max(4);
    let mut tasks = Vec::with_capacity(spec.task_count as usize);
    let mut arrival_clock = 0.0;
    for index in 0..spec.task_count {
        let arrival = match spec.arrival {
            Arrival::AllAtStart => 0.0,
            Arrival::Poisson { rate } => {
                // Inverse-transform exponential interarrival.
                let u: f64 = rng.gen_range(f64::EPSILON..1.0);
                arrival_clock += -u.ln() / rate;
                arrival_clock
            }
        };
        let demand = spec.compute_demand.sample(&mut rng);
        let data = spec.input_data_mb.sample(&mut rng);
        tasks.push(TaskUnit::new(
            TaskId::new(format!("t{:0width$}", index + 1, width = width)),
            spec.application_id.clone(),
            Timestamp(arrival),
            Duration(demand),
            data,
        ));
    }
    let qos = QosContract::new(
        spec.application_id.clone(),
        spec.task_count,
        spec.deadline.map(|d| Timestamp(d.seconds())),
        spec.prior_mean,
    );
    Ok((tasks, qos))
}

/// A scripted connectivity change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FaultAction {
    Disconnect(ResourceId),
    Reconnect(ResourceId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultEntry {
    pub at: Timestamp,
    pub action: FaultAction,
}

/// Time-ordered connectivity script applied during the run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FaultScript(pub Vec<FaultEntry>);

impl FaultScript {
    pub fn validate(&self) -> Result<()> {
        let mut last = f64::NEG_INFINITY;
        let mut down: Vec<&ResourceId> = Vec::new();
        for entry in &self.0 {
            if entry.at.seconds() < last {
                return Err(SchedulerError::ConfigInvalid(
                    "faults: times must be non-decreasing".into(),
                ));
            }
            last = entry.at.seconds();
            match &entry.action {
                FaultAction::Disconnect(rid) => down.push(rid),
                FaultAction::Reconnect(rid) => {
                    let position = down.iter().position(|d| *d == rid);
                    match position {
                        Some(i) => {
                            down.remove(i);
                        }
                        None => {
                            return Err(SchedulerError::ConfigInvalid(format!(
                                "faults: reconnect of {rid} without a prior disconnect"
                            )))
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Everything a single experiment needs.
#[derive(Debug, Clone)]
pub struct ExperimentSetup {
    pub algorithm: String,
    pub algorithm_options: AlgorithmOptions,
    pub context: ContextConfig,
    /// Cadence of the periodic provisioning evaluation.
    pub tick_period: Duration,
    pub pools: Vec<ResourcePoolSpec>,
    pub workload: WorkloadSpec,
    pub faults: FaultScript,
    pub seed: u64,
    pub log_level: LogLevel,
}

impl ExperimentSetup {
    pub fn validate(&self) -> Result<()> {
        if self.pools.is_empty() {
            return Err(SchedulerError::ConfigInvalid("no pools configured".into()));
        }
        let locals = self
            .pools
            .iter()
            .filter(|p| p.kind == crate::provisioning::PoolKind::Local)
            .count();
        if locals != 1 {
            return Err(SchedulerError::ConfigInvalid(format!(
                "exactly one local pool is required, found {locals}"
            )));
        }
        for pool in &self.pools {
            pool.validate()?;
        }
        self.workload.validate()?;
        self.faults.validate()?;
        if self.tick_period.seconds() <= 0.0 {
            return Err(SchedulerError::ConfigInvalid(
                "tick_period must be > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Transfer and compute durations for a task on a resource.
///
/// Transfer is charged between dispatch and execution start, compute between
/// start and completion.
pub fn service_time(
    task: &TaskUnit,
    resource: &Resource,
    pool: &ResourcePoolSpec,
) -> (Duration, Duration) {
    let transfer = Duration(task.input_data_size / pool.bandwidth_mbps);
    let compute = Duration(task.compute_demand.seconds() / resource.speed_factor);
    (transfer, compute)
}

#[derive(Debug, Clone, PartialEq)]
enum SimEvent {
    TransferDone { task_id: TaskId, attempt: u32 },
    ComputeDone { task_id: TaskId, attempt: u32 },
    PoolMature { request_id: RequestId },
    Fault { index: usize },
    ProvisionTimer,
    Arrival { index: usize },
}

impl SimEvent {
    /// Tie-break class at equal timestamps.
    fn class(&self) -> u8 {
        match self {
            SimEvent::TransferDone { .. } | SimEvent::ComputeDone { .. } => 0,
            SimEvent::PoolMature { .. } => 1,
            SimEvent::Fault { .. } => 2,
            SimEvent::ProvisionTimer => 3,
            SimEvent::Arrival { .. } => 4,
        }
    }
}

#[derive(Debug, PartialEq)]
struct Pending {
    time: f64,
    class: u8,
    seq: u64,
    event: SimEvent,
}

impl Eq for Pending {}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap, we want the earliest first.
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.class.cmp(&self.class))
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct EventHeap {
    heap: BinaryHeap<Pending>,
    next_seq: u64,
}

impl EventHeap {
    fn new() -> Self {
        EventHeap {
            heap: BinaryHeap::new(),
            next_seq: 0,
        }
    }

    fn push(&mut self, time: Timestamp, event: SimEvent) {
        let class = event.class();
        self.heap.push(Pending {
            time: time.seconds(),
            class,
            seq: self.next_seq,
            event,
        });
        self.next_seq += 1;
    }

    fn pop(&mut self) -> Option<Pending> {
        self.heap.pop()
    }
}

/// Runs one experiment to completion and returns the in-memory outcome.
///
/// The loop pops the earliest pending event, advances the clock (never
/// backward), processes the event through the context and schedules the
/// follow-up work the context emitted. It ends when no pending events remain;
/// provisioned resources still alive are then released and their cost
/// included.
pub fn run_experiment(
    setup: &ExperimentSetup,
    registry: &AlgorithmRegistry,
) -> Result<ExperimentOutcome> {
    setup.validate()?;
    let algorithm = registry.build(&setup.algorithm, &setup.algorithm_options)?;
    let pools = PoolManager::new(setup.pools.clone(), setup.seed)?;
    let mut context = SchedulerContext::new(setup.context.clone(), pools, setup.log_level);
    context.set_algorithm(algorithm)?;

    let (tasks, qos) = generate_workload(&setup.workload, setup.seed)?;
    let mut heap = EventHeap::new();
    match setup.workload.arrival {
        Arrival::AllAtStart => {
            context.submit(tasks.clone(), qos.clone(), Timestamp::ZERO)?;
        }
        Arrival::Poisson { .. } => {
            for (index, task) in tasks.iter().enumerate() {
                heap.push(task.submit_time, SimEvent::Arrival { index });
            }
        }
    }
    for (index, entry) in setup.faults.0.iter().enumerate() {
        heap.push(entry.at, SimEvent::Fault { index });
    }

    context.start(Timestamp::ZERO)?;
    drain_outputs(&mut context, &mut heap);
    if context.supports_provisioning() {
        heap.push(Timestamp(setup.tick_period.seconds()), SimEvent::ProvisionTimer);
    }

    let mut clock = Timestamp::ZERO;
    while let Some(pending) = heap.pop() {
        debug_assert!(pending.time >= clock.seconds(), "virtual clock regression");
        clock = Timestamp(pending.time.max(clock.seconds()));
        let now = clock;
        match pending.event {
            SimEvent::Arrival { index } => {
                let task = tasks[index].clone();
                if let Err(err) = context.submit(vec![task], qos.clone(), now) {
                    context.record_error(now, "submit", &err);
                }
            }
            SimEvent::TransferDone { task_id, attempt } => {
                let live = context
                    .store()
                    .task(&task_id)
                    .is_some_and(|t| t.state == TaskState::Scheduled && t.attempt == attempt);
                if live {
                    context.on_task_started(&task_id, now)?;
                    let task = context.store().task(&task_id).expect("just started");
                    let resource_id = task.assigned_resource.clone().expect("running on a resource");
                    let resource = context
                        .resource(&resource_id)
                        .expect("resource holding a running task exists");
                    let pool = context
                        .pools()
                        .pool_spec(&resource.pool_id)
                        .expect("pool of a live resource exists");
                    let (_, compute) = service_time(task, resource, pool);
                    heap.push(now + compute, SimEvent::ComputeDone { task_id, attempt });
                }
            }
            SimEvent::ComputeDone { task_id, attempt } => {
                let live = context
                    .store()
                    .task(&task_id)
                    .is_some_and(|t| t.state == TaskState::Running && t.attempt == attempt);
                if live {
                    context.on_task_outcome(&task_id, TaskOutcome::Finished, now)?;
                }
            }
            SimEvent::PoolMature { .. } => {
                context.pool_tick(now)?;
            }
            SimEvent::Fault { index } => {
                let outcome = match &setup.faults.0[index].action {
                    FaultAction::Disconnect(rid) => context.on_resource_disconnected(rid, now),
                    FaultAction::Reconnect(rid) => context.on_resource_reconnected(rid, now),
                };
                if let Err(err) = outcome {
                    context.record_error(now, "apply_fault", &err);
                }
            }
            SimEvent::ProvisionTimer => {
                context.provisioning_tick(now);
                if !context.store().all_terminal() {
                    heap.push(now + setup.tick_period, SimEvent::ProvisionTimer);
                }
            }
        }
        drain_outputs(&mut context, &mut heap);
    }

    let end = context
        .bus()
        .last_time()
        .map_or(clock, |t| Timestamp(t.seconds().max(clock.seconds())));
    context.release_all_provisioned(end)?;
    context.stop(end)?;
    Ok(build_report(setup, context, end))
}

/// Schedules the follow-up events for work the context just emitted.
fn drain_outputs(context: &mut SchedulerContext, heap: &mut EventHeap) {
    for output in context.take_outputs() {
        match output {
            ContextOutput::Dispatched {
                task_id,
                attempt,
                resource_id,
                at,
            } => {
                let task = context.store().task(&task_id).expect("dispatched task exists");
                let resource = context
                    .resource(&resource_id)
                    .expect("assignment target exists");
                let pool = context
                    .pools()
                    .pool_spec(&resource.pool_id)
                    .expect("pool of assignment target exists");
                let (transfer, _) = service_time(task, resource, pool);
                heap.push(at + transfer, SimEvent::TransferDone { task_id, attempt });
            }
            ContextOutput::ProvisionIssued {
                request_id,
                matures_at,
            } => {
                heap.push(matures_at, SimEvent::PoolMature { request_id });
            }
        }
    }
}

/// Convenience entry point using the built-in algorithm registry.
pub fn run_with_builtins(setup: &ExperimentSetup) -> Result<ExperimentOutcome> {
    run_experiment(setup, &AlgorithmRegistry::with_builtins())
}
