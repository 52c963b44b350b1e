//! Experiment reporting: the final report derived from the store, the
//! independent trace folds used to cross-check it, and the output writers.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::context::{ErrorRecord, SchedulerContext};
use crate::error::{Result, SchedulerError};
use crate::events::{trace_to_string, EventPayload, ProvisionOutcome, TraceRecord};
use crate::model::{Duration, PoolId, ResourceId, TaskId, TaskState, Timestamp};
use crate::provisioning::ResourcePoolSpec;
use crate::sim::ExperimentSetup;

/// One line of the per-task metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRow {
    pub task_id: TaskId,
    pub attempt: u32,
    pub queue_time: Duration,
    pub execution_time: Duration,
    pub final_state: TaskState,
    pub resource_id: Option<ResourceId>,
    pub pool_id: Option<PoolId>,
}

/// Event counts folded from the trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RunCounters {
    pub tasks_finished: u64,
    pub task_failures: u64,
    pub tasks_requeued: u64,
    pub provisions_requested: u64,
    pub provisions_granted: u64,
    pub provisions_denied: u64,
}

/// Final report of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub algorithm: String,
    pub seed: u64,
    /// Experiment start to last task completion.
    pub makespan: Duration,
    pub deadline: Option<Duration>,
    pub deadline_met: bool,
    pub tasks: Vec<TaskRow>,
    pub provisioned_instance_seconds: f64,
    pub total_cost: f64,
    pub counters: RunCounters,
    pub event_trace_path: Option<String>,
}

/// Report plus the raw materials it was derived from.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: ExperimentReport,
    pub trace: Vec<TraceRecord>,
    pub errors: Vec<ErrorRecord>,
}

pub(crate) fn build_report(
    setup: &ExperimentSetup,
    context: SchedulerContext,
    end: Timestamp,
) -> ExperimentOutcome {
    let mut makespan = 0.0_f64;
    let mut rows = Vec::new();
    for task in context.store().tasks() {
        if task.state == TaskState::Finished {
            if let Some(end_time) = task.end_time {
                makespan = makespan.max(end_time.seconds());
            }
        }
        let (queue_time, execution_time) = if task.state.is_terminal() {
            let metrics = crate::model::finalize_metrics(task);
            (metrics.queue_time, metrics.execution_time)
        } else {
            (Duration::ZERO, Duration::ZERO)
        };
        let pool_id = task
            .assigned_resource
            .as_ref()
            .and_then(|rid| context.resource_record(rid))
            .map(|r| r.pool_id.clone());
        rows.push(TaskRow {
            task_id: task.task_id.clone(),
            attempt: task.attempt,
            queue_time,
            execution_time,
            final_state: task.state,
            resource_id: task.assigned_resource.clone(),
            pool_id,
        });
    }
    let trace = context.bus().trace().to_vec();
    let counters = fold_counters(&trace);
    let deadline = setup.workload.deadline;
    let report = ExperimentReport {
        algorithm: setup.algorithm.clone(),
        seed: setup.seed,
        makespan: Duration(makespan),
        deadline,
        deadline_met: deadline.is_none_or(|d| makespan <= d.seconds()),
        tasks: rows,
        provisioned_instance_seconds: context.pools().provisioned_instance_seconds(end),
        total_cost: context.pools().total_cost(end),
        counters,
        event_trace_path: None,
    };
    ExperimentOutcome {
        report,
        trace,
        errors: context.errors().records().to_vec(),
    }
}

/// Timing metrics of a task's final attempt, folded from the trace alone.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldedTask {
    pub queue_time: Duration,
    pub execution_time: Duration,
    pub final_state: TaskState,
}

/// Reduces the trace to per-task final metrics, independent of the store.
pub fn fold_task_outcomes(trace: &[TraceRecord]) -> BTreeMap<TaskId, FoldedTask> {
    let mut folded = BTreeMap::new();
    for record in trace {
        match &record.payload {
            EventPayload::TaskFinished {
                task_id,
                queue_time,
                execution_time,
                ..
            } => {
                folded.insert(
                    task_id.clone(),
                    FoldedTask {
                        queue_time: *queue_time,
                        execution_time: *execution_time,
                        final_state: TaskState::Finished,
                    },
                );
            }
            EventPayload::TaskFailed {
                task_id,
                queue_time,
                execution_time,
                ..
            } => {
                folded.insert(
                    task_id.clone(),
                    FoldedTask {
                        queue_time: *queue_time,
                        execution_time: *execution_time,
                        final_state: TaskState::Failed,
                    },
                );
            }
            EventPayload::TaskAborted {
                task_id,
                queue_time,
                execution_time,
            } => {
                folded.insert(
                    task_id.clone(),
                    FoldedTask {
                        queue_time: *queue_time,
                        execution_time: *execution_time,
                        final_state: TaskState::Aborted,
                    },
                );
            }
            _ => {}
        }
    }
    folded
}

/// Counts trace events by kind.
pub fn fold_counters(trace: &[TraceRecord]) -> RunCounters {
    let mut counters = RunCounters::default();
    for record in trace {
        match &record.payload {
            EventPayload::TaskFinished { .. } => counters.tasks_finished += 1,
            EventPayload::TaskFailed { .. } => counters.task_failures += 1,
            EventPayload::TaskRequeued { .. } => counters.tasks_requeued += 1,
            EventPayload::ResourceProvisionRequested { .. } => {
                counters.provisions_requested += 1
            }
            EventPayload::ResourceProvisionProcessed { outcome, .. } => match outcome {
                ProvisionOutcome::Granted { .. } => counters.provisions_granted += 1,
                ProvisionOutcome::Denied { .. } => counters.provisions_denied += 1,
            },
            _ => {}
        }
    }
    counters
}

/// Recomputes total provisioning cost from grant/release events alone.
///
/// Contributions are summed in resource-id order, matching the pool ledger's
/// iteration order, so agreement with the reported cost is bit-exact.
pub fn fold_cost(trace: &[TraceRecord], pools: &[ResourcePoolSpec], end: Timestamp) -> f64 {
    let rates: BTreeMap<&PoolId, f64> =
        pools.iter().map(|p| (&p.pool_id, p.cost_rate)).collect();
    let mut alive: BTreeMap<ResourceId, (f64, Timestamp)> = BTreeMap::new();
    let mut contributions: BTreeMap<ResourceId, f64> = BTreeMap::new();
    for record in trace {
        match &record.payload {
            EventPayload::ResourceProvisionProcessed {
                pool_id,
                outcome: ProvisionOutcome::Granted { resource_ids },
                ..
            } => {
                let rate = rates.get(pool_id).copied().unwrap_or(0.0);
                for rid in resource_ids {
                    alive.insert(rid.clone(), (rate, record.time));
                }
            }
            EventPayload::ResourceReleaseRequested { resource_ids } => {
                for rid in resource_ids {
                    if let Some((rate, start)) = alive.remove(rid) {
                        contributions.insert(
                            rid.clone(),
                            rate * (record.time.seconds() - start.seconds()).max(0.0),
                        );
                    }
                }
            }
            _ => {}
        }
    }
    for (rid, (rate, start)) in &alive {
        contributions.insert(
            rid.clone(),
            rate * (end.seconds() - start.seconds()).max(0.0),
        );
    }
    contributions.values().sum::<f64>() + 0.0
}

/// Paths of the files one run writes.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputPaths {
    pub trace: PathBuf,
    pub report: PathBuf,
    pub metrics: PathBuf,
    pub errors: PathBuf,
}

/// Writes trace, report, per-task metrics and error log into `dir`.
pub fn write_outputs(outcome: &ExperimentOutcome, dir: &Path) -> Result<OutputPaths> {
    fs::create_dir_all(dir)?;
    let paths = OutputPaths {
        trace: dir.join("trace.jsonl"),
        report: dir.join("report.json"),
        metrics: dir.join("metrics.csv"),
        errors: dir.join("errors.jsonl"),
    };

    fs::write(&paths.trace, trace_to_string(&outcome.trace))?;

    let mut report = outcome.report.clone();
    report.event_trace_path = Some(paths.trace.display().to_string());
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| SchedulerError::Io(e.to_string()))?;
    fs::write(&paths.report, json + "\n")?;

    let file = File::create(&paths.metrics)?;
    let mut out = BufWriter::new(file);
    writeln!(
        out,
        "task_id,attempt,queue_time,execution_time,final_state,resource_id,pool_id"
    )?;
    for row in &outcome.report.tasks {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            row.task_id,
            row.attempt,
            row.queue_time.seconds(),
            row.execution_time.seconds(),
            row.final_state,
            row.resource_id.as_ref().map_or("", |r| r.as_str()),
            row.pool_id.as_ref().map_or("", |p| p.as_str()),
        )?;
    }
    out.flush()?;

    let mut lines = String::new();
    for record in &outcome.errors {
        lines.push_str(
            &serde_json::to_string(record).map_err(|e| SchedulerError::Io(e.to_string()))?,
        );
        lines.push('\n');
    }
    fs::write(&paths.errors, lines)?;

    Ok(paths)
}
