//! End-to-end harness behavior: analytic makespans, determinism, fault
//! recovery, trace/store agreement and work conservation.

mod common;

use common::{baseline_workload, local_pool, ondemand_pool, setup};

use schedkit::algorithms::AlgorithmOptions;
use schedkit::events::{trace_to_string, EventKind, EventPayload};
use schedkit::model::{Duration, ResourceId, TaskState, Timestamp};
use schedkit::report::{fold_cost, fold_counters, fold_task_outcomes};
use schedkit::sim::{run_with_builtins, FaultAction, FaultEntry, FaultScript};

#[test]
fn local_baseline_makespan_is_seven_waves() {
    let setup = setup(
        "fifo",
        AlgorithmOptions::default(),
        vec![local_pool(8, 1)],
        baseline_workload(None, 0.0, 60.0),
    );
    let outcome = run_with_builtins(&setup).unwrap();
    assert_eq!(outcome.report.makespan, Duration(2772.0));
    assert!(outcome.report.deadline_met);
    assert_eq!(outcome.report.counters.tasks_finished, 55);
    assert_eq!(outcome.report.total_cost, 0.0);
    assert!(outcome.errors.is_empty());
    // First-wave tasks never wait and execute for exactly their demand.
    let first = &outcome.report.tasks[0];
    assert_eq!(first.queue_time, Duration(0.0));
    assert_eq!(first.execution_time, Duration(396.0));
    // No fault script, no disconnect events.
    assert!(!outcome
        .trace
        .iter()
        .any(|r| r.payload.kind() == EventKind::ResourceDisconnected));
}

#[test]
fn single_task_makespan_is_transfer_plus_compute() {
    let mut workload = baseline_workload(None, 100.0, 60.0);
    workload.task_count = 1;
    let setup = setup(
        "fifo",
        AlgorithmOptions::default(),
        vec![local_pool(1, 1)],
        workload,
    );
    let outcome = run_with_builtins(&setup).unwrap();
    // 100 MB at 10 MB/s, then 396 s of compute.
    assert_eq!(outcome.report.makespan, Duration(406.0));
    let row = &outcome.report.tasks[0];
    assert_eq!(row.queue_time, Duration(0.0));
    assert_eq!(row.execution_time, Duration(396.0));
}

#[test]
fn same_seed_gives_byte_identical_traces() {
    let mut workload = baseline_workload(Some(2400.0), 50.0, 60.0);
    workload.compute_demand = schedkit::dist::ValueDist::Uniform { min: 300.0, max: 500.0 };
    let setup = setup(
        "deadline_priority",
        AlgorithmOptions { ceil_ratio: true, ..Default::default() },
        vec![local_pool(8, 1), ondemand_pool(120.0, 1.0, Some(8))],
        workload,
    );
    let a = run_with_builtins(&setup).unwrap();
    let b = run_with_builtins(&setup).unwrap();
    assert_eq!(trace_to_string(&a.trace), trace_to_string(&b.trace));

    let mut reseeded = setup.clone();
    reseeded.seed = 43;
    let c = run_with_builtins(&reseeded).unwrap();
    assert_ne!(trace_to_string(&a.trace), trace_to_string(&c.trace));
}

#[test]
fn disconnect_mid_run_requeues_and_recovers() {
    let rid = ResourceId::from("local-0");
    let mut experiment = setup(
        "fifo",
        AlgorithmOptions::default(),
        vec![local_pool(8, 1)],
        baseline_workload(None, 0.0, 60.0),
    );
    experiment.faults = FaultScript(vec![
        FaultEntry { at: Timestamp(600.0), action: FaultAction::Disconnect(rid.clone()) },
        FaultEntry { at: Timestamp(900.0), action: FaultAction::Reconnect(rid.clone()) },
    ]);
    let outcome = run_with_builtins(&experiment).unwrap();

    // Every task still finishes exactly once.
    assert_eq!(outcome.report.counters.tasks_finished, 55);
    assert!(outcome
        .report
        .tasks
        .iter()
        .all(|row| row.final_state == TaskState::Finished));
    // The 8 tasks running at t=600 failed and were requeued.
    assert_eq!(outcome.report.counters.task_failures, 8);
    assert_eq!(outcome.report.counters.tasks_requeued, 8);
    // Makespan: 600 idle-until-900 gap pushes the tail out.
    assert!(outcome.report.makespan.seconds() > 2772.0);
}

#[test]
fn store_report_equals_trace_fold() {
    let rid = ResourceId::from("local-0");
    let mut experiment = setup(
        "deadline_priority",
        AlgorithmOptions { ceil_ratio: true, ..Default::default() },
        vec![local_pool(8, 1), ondemand_pool(120.0, 1.0, Some(4))],
        baseline_workload(Some(2400.0), 0.0, 396.0),
    );
    experiment.faults = FaultScript(vec![
        FaultEntry { at: Timestamp(500.0), action: FaultAction::Disconnect(rid.clone()) },
        FaultEntry { at: Timestamp(700.0), action: FaultAction::Reconnect(rid.clone()) },
    ]);
    let outcome = run_with_builtins(&experiment).unwrap();

    let folded = fold_task_outcomes(&outcome.trace);
    assert_eq!(folded.len(), outcome.report.tasks.len());
    for row in &outcome.report.tasks {
        let from_trace = &folded[&row.task_id];
        assert_eq!(from_trace.final_state, row.final_state, "{}", row.task_id);
        assert_eq!(from_trace.queue_time, row.queue_time, "{}", row.task_id);
        assert_eq!(from_trace.execution_time, row.execution_time, "{}", row.task_id);
    }
    assert_eq!(fold_counters(&outcome.trace), outcome.report.counters);

    let end = outcome.trace.last().unwrap().time;
    let folded_cost = fold_cost(&outcome.trace, &experiment.pools, end);
    assert_eq!(folded_cost, outcome.report.total_cost);
}

#[test]
fn fifo_without_faults_is_work_conserving() {
    let setup = setup(
        "fifo",
        AlgorithmOptions::default(),
        vec![local_pool(8, 1)],
        baseline_workload(None, 0.0, 60.0),
    );
    let outcome = run_with_builtins(&setup).unwrap();

    // Replay dispatch/finish times; whenever a slot is free there must be no
    // queued task waiting (checked at every dispatch boundary).
    let mut busy_intervals = Vec::new();
    for record in &outcome.trace {
        if let EventPayload::TaskAssigned { task_id, .. } = &record.payload {
            let finish = outcome
                .trace
                .iter()
                .find_map(|r| match &r.payload {
                    EventPayload::TaskFinished { task_id: tid, .. } if tid == task_id => {
                        Some(r.time)
                    }
                    _ => None,
                })
                .expect("every assigned task finishes");
            busy_intervals.push((record.time.seconds(), finish.seconds()));
        }
    }
    assert_eq!(busy_intervals.len(), 55);
    // All tasks arrive at t=0; with 8 slots the first 8 dispatches are at 0
    // and every later dispatch happens exactly when a slot frees.
    let mut dispatches: Vec<f64> = busy_intervals.iter().map(|(s, _)| *s).collect();
    dispatches.sort_by(f64::total_cmp);
    for (i, d) in dispatches.iter().enumerate() {
        if i < 8 {
            assert_eq!(*d, 0.0);
        } else {
            let mut finishes: Vec<f64> = busy_intervals.iter().map(|(_, f)| *f).collect();
            finishes.sort_by(f64::total_cmp);
            // The (i-8)th finish frees the slot for the i-th dispatch.
            assert_eq!(*d, finishes[i - 8], "dispatch {i} is late: slot sat idle");
        }
    }
}

#[test]
fn deadline_met_flag_matches_makespan() {
    let setup_met = setup(
        "fifo",
        AlgorithmOptions::default(),
        vec![local_pool(8, 1)],
        baseline_workload(Some(2772.0), 0.0, 60.0),
    );
    assert!(run_with_builtins(&setup_met).unwrap().report.deadline_met);

    let setup_missed = setup(
        "fifo",
        AlgorithmOptions::default(),
        vec![local_pool(8, 1)],
        baseline_workload(Some(2771.0), 0.0, 60.0),
    );
    let outcome = run_with_builtins(&setup_missed).unwrap();
    assert!(!outcome.report.deadline_met);
    assert_eq!(outcome.report.makespan, Duration(2772.0));
}

#[test]
fn poisson_arrivals_respect_submission_times() {
    let mut workload = baseline_workload(None, 0.0, 60.0);
    workload.task_count = 30;
    workload.arrival = schedkit::sim::Arrival::Poisson { rate: 0.05 };
    let setup = setup(
        "fifo",
        AlgorithmOptions::default(),
        vec![local_pool(2, 1)],
        workload,
    );
    let outcome = run_with_builtins(&setup).unwrap();
    assert_eq!(outcome.report.counters.tasks_finished, 30);
    // No dispatch can precede its task's arrival; queue times are >= 0 and
    // the trace is time-ordered.
    let mut last = 0.0;
    for record in &outcome.trace {
        assert!(record.time.seconds() >= last);
        last = record.time.seconds();
    }
    for row in &outcome.report.tasks {
        assert!(row.queue_time.seconds() >= 0.0);
    }
}

#[test]
fn released_resources_keep_pool_attribution_in_rows() {
    let setup = setup(
        "deadline_priority",
        AlgorithmOptions { ceil_ratio: true, ..Default::default() },
        vec![local_pool(8, 1), ondemand_pool(120.0, 1.0, Some(8))],
        baseline_workload(Some(2400.0), 0.0, 396.0),
    );
    let outcome = run_with_builtins(&setup).unwrap();
    assert!(outcome.report.counters.provisions_granted >= 1);
    let ondemand_rows = outcome
        .report
        .tasks
        .iter()
        .filter(|row| {
            row.pool_id.as_ref().is_some_and(|p| p.as_str() == "ondemand")
        })
        .count();
    assert!(ondemand_rows > 0, "some tasks ran on provisioned capacity");
    // Everything provisioned was released at experiment end.
    let released = outcome
        .trace
        .iter()
        .filter_map(|r| match &r.payload {
            EventPayload::ResourceReleaseRequested { resource_ids } => Some(resource_ids.len()),
            _ => None,
        })
        .sum::<usize>();
    let granted: usize = outcome
        .trace
        .iter()
        .filter_map(|r| match &r.payload {
            EventPayload::ResourceProvisionProcessed {
                outcome: schedkit::events::ProvisionOutcome::Granted { resource_ids },
                ..
            } => Some(resource_ids.len()),
            _ => None,
        })
        .sum();
    assert_eq!(released, granted);
    assert!(outcome.report.total_cost > 0.0);
}

#[test]
fn idle_provisioned_resources_shrink_mid_run() {
    // One 1-slot local plus two quickly granted instances; once the queue
    // drains the provisioned instances idle and the shrink branch releases
    // them one tick at a time, before the last local task finishes.
    let mut workload = baseline_workload(Some(600.0), 0.0, 100.0);
    workload.task_count = 10;
    workload.compute_demand = schedkit::dist::ValueDist::Constant(100.0);
    let experiment = setup(
        "deadline_priority",
        AlgorithmOptions { ceil_ratio: true, grow_step: 2, ..Default::default() },
        vec![local_pool(1, 1), ondemand_pool(50.0, 1.0, Some(2))],
        workload,
    );
    let outcome = run_with_builtins(&experiment).unwrap();
    assert_eq!(outcome.report.counters.tasks_finished, 10);
    assert!(outcome.report.deadline_met);

    let last_finish = outcome
        .trace
        .iter()
        .filter_map(|r| match &r.payload {
            EventPayload::TaskFinished { .. } => Some(r.time.seconds()),
            _ => None,
        })
        .fold(0.0_f64, f64::max);
    let early_releases: Vec<f64> = outcome
        .trace
        .iter()
        .filter_map(|r| match &r.payload {
            EventPayload::ResourceReleaseRequested { .. } if r.time.seconds() < last_finish => {
                Some(r.time.seconds())
            }
            _ => None,
        })
        .collect();
    assert!(
        !early_releases.is_empty(),
        "expected an idle provisioned resource to be released before the run ended"
    );
}

#[test]
fn trace_has_no_unpaired_provision_events() {
    let setup = setup(
        "deadline_priority",
        AlgorithmOptions { ceil_ratio: true, ..Default::default() },
        vec![local_pool(8, 1), ondemand_pool(120.0, 1.0, Some(2))],
        baseline_workload(Some(2400.0), 0.0, 396.0),
    );
    let outcome = run_with_builtins(&setup).unwrap();
    let mut requested = std::collections::BTreeMap::new();
    for record in &outcome.trace {
        match &record.payload {
            EventPayload::ResourceProvisionRequested { request_id, .. } => {
                requested.insert(*request_id, record.time);
            }
            EventPayload::ResourceProvisionProcessed { request_id, .. } => {
                let issued = requested
                    .remove(request_id)
                    .unwrap_or_else(|| panic!("{request_id} processed before requested"));
                assert!(record.time >= issued);
            }
            _ => {}
        }
    }
    assert!(
        requested.is_empty(),
        "unresolved provision requests: {requested:?}"
    );
    let kinds: Vec<EventKind> = outcome.trace.iter().map(|r| r.payload.kind()).collect();
    assert!(kinds.contains(&EventKind::ResourceProvisionProcessed));
}
