//! Randomized invariant sweep: many small experiments across algorithms,
//! stochastic workloads, flaky pools and fault scripts, each checked against
//! the cross-cutting invariants (lifecycle replay, slot conservation,
//! request pairing, cost folds, clock monotonicity, store/trace agreement).

mod common;

use std::collections::BTreeMap;

use common::{local_pool, ondemand_pool, setup};

use rand::prelude::*;
use schedkit::algorithms::AlgorithmOptions;
use schedkit::dist::ValueDist;
use schedkit::events::{EventPayload, ProvisionOutcome};
use schedkit::model::{ApplicationId, Duration, ResourceId, TaskId, TaskState, Timestamp};
use schedkit::report::{fold_cost, fold_counters, fold_task_outcomes};
use schedkit::sim::{
    run_with_builtins, Arrival, FaultAction, FaultEntry, FaultScript, WorkloadSpec,
};

#[derive(PartialEq, Debug, Clone, Copy)]
enum Phase {
    Queued,
    Dispatched,
    Terminal,
}

#[test]
fn invariants_hold_across_randomized_experiments() {
    let algorithms = ["fifo", "default", "data_aware", "deadline_priority"];
    let mut rng = StdRng::seed_from_u64(424242);
    for case in 0..200 {
        let algorithm = algorithms[case % algorithms.len()];
        let task_count = rng.gen_range(5..=60u32);
        let slots = rng.gen_range(1..=4u32);
        let deadline = rng.gen_bool(0.7).then(|| rng.gen_range(500.0..4000.0));

        let workload = WorkloadSpec {
            application_id: ApplicationId::from("app"),
            task_count,
            compute_demand: ValueDist::Uniform { min: 20.0, max: 300.0 },
            input_data_mb: if rng.gen_bool(0.5) {
                ValueDist::Constant(0.0)
            } else {
                ValueDist::Uniform { min: 0.0, max: 400.0 }
            },
            arrival: if rng.gen_bool(0.5) {
                Arrival::AllAtStart
            } else {
                Arrival::Poisson { rate: rng.gen_range(0.01..0.2) }
            },
            deadline: deadline.map(Duration),
            prior_mean: Duration(rng.gen_range(30.0..400.0)),
        };

        let mut cloud = ondemand_pool(rng.gen_range(30.0..300.0), 1.0, Some(rng.gen_range(1..=4)));
        if rng.gen_bool(0.3) {
            cloud.kind = schedkit::provisioning::PoolKind::SpotLike;
            cloud.denial_probability = rng.gen_range(0.0..1.0);
            cloud.deployment_latency = ValueDist::Uniform { min: 60.0, max: 400.0 };
        }
        let pools = vec![local_pool(slots, 1), cloud];

        // Alternating disconnect/reconnect bursts on the local worker.
        let mut faults = Vec::new();
        let mut t = 0.0;
        for _ in 0..rng.gen_range(0..3) {
            t += rng.gen_range(50.0..800.0);
            faults.push(FaultEntry {
                at: Timestamp(t),
                action: FaultAction::Disconnect(ResourceId::from("local-0")),
            });
            t += rng.gen_range(20.0..300.0);
            faults.push(FaultEntry {
                at: Timestamp(t),
                action: FaultAction::Reconnect(ResourceId::from("local-0")),
            });
        }

        let mut experiment = setup(
            algorithm,
            AlgorithmOptions {
                grow_step: rng.gen_range(1..=3),
                ceil_ratio: rng.gen_bool(0.5),
                requeue_to_front: rng.gen_bool(0.2),
            },
            pools,
            workload,
        );
        experiment.faults = FaultScript(faults);
        experiment.seed = rng.gen();

        let outcome = run_with_builtins(&experiment)
            .unwrap_or_else(|e| panic!("case {case} ({algorithm}) failed to run: {e}"));
        let label = format!("case {case} ({algorithm}, seed {})", experiment.seed);

        // Trace is time-ordered with dense sequence numbers.
        let mut last = 0.0;
        for (i, record) in outcome.trace.iter().enumerate() {
            assert_eq!(record.seq, i as u64, "{label}: seq gap");
            assert!(record.time.seconds() >= last, "{label}: clock regression");
            last = record.time.seconds();
        }

        // Lifecycle replay: assignments and terminal events alternate.
        let mut phases: BTreeMap<TaskId, Phase> = BTreeMap::new();
        let mut site: BTreeMap<TaskId, ResourceId> = BTreeMap::new();
        let mut used: BTreeMap<ResourceId, i64> = BTreeMap::new();
        for record in &outcome.trace {
            match &record.payload {
                EventPayload::TaskAssigned { task_id, resource_id, .. } => {
                    let phase = phases.entry(task_id.clone()).or_insert(Phase::Queued);
                    assert_eq!(*phase, Phase::Queued, "{label}: double dispatch of {task_id}");
                    *phase = Phase::Dispatched;
                    site.insert(task_id.clone(), resource_id.clone());
                    *used.entry(resource_id.clone()).or_insert(0) += 1;
                    let cap = if resource_id.as_str().starts_with("local") {
                        i64::from(slots)
                    } else {
                        1
                    };
                    assert!(used[resource_id] <= cap, "{label}: slot overflow on {resource_id}");
                }
                EventPayload::TaskFinished { task_id, .. }
                | EventPayload::TaskFailed { task_id, .. }
                | EventPayload::TaskAborted { task_id, .. } => {
                    let phase = phases.entry(task_id.clone()).or_insert(Phase::Queued);
                    assert_eq!(*phase, Phase::Dispatched, "{label}: orphan terminal for {task_id}");
                    *phase = Phase::Terminal;
                    let rid = site.remove(task_id).expect("terminal task had a site");
                    *used.get_mut(&rid).unwrap() -= 1;
                    assert!(used[&rid] >= 0, "{label}: slot underflow");
                }
                EventPayload::TaskRequeued { task_id, .. } => {
                    let phase = phases.entry(task_id.clone()).or_insert(Phase::Queued);
                    assert_eq!(*phase, Phase::Terminal, "{label}: requeue of live task");
                    *phase = Phase::Queued;
                }
                _ => {}
            }
        }

        // Provisioning pairing: every request resolves exactly once, never
        // before it was issued.
        let mut pending: BTreeMap<u64, Timestamp> = BTreeMap::new();
        let mut granted = 0u64;
        let mut denied = 0u64;
        for record in &outcome.trace {
            match &record.payload {
                EventPayload::ResourceProvisionRequested { request_id, .. } => {
                    assert!(
                        pending.insert(request_id.0, record.time).is_none(),
                        "{label}: duplicate request id"
                    );
                }
                EventPayload::ResourceProvisionProcessed { request_id, outcome: o, .. } => {
                    let issued = pending
                        .remove(&request_id.0)
                        .unwrap_or_else(|| panic!("{label}: unpaired processed event"));
                    assert!(record.time >= issued, "{label}: processed before issued");
                    match o {
                        ProvisionOutcome::Granted { .. } => granted += 1,
                        ProvisionOutcome::Denied { .. } => denied += 1,
                    }
                }
                _ => {}
            }
        }
        assert!(pending.is_empty(), "{label}: unresolved requests");
        assert_eq!(outcome.report.counters.provisions_granted, granted, "{label}");
        assert_eq!(outcome.report.counters.provisions_denied, denied, "{label}");

        // Store-derived report agrees with the trace fold.
        let folded = fold_task_outcomes(&outcome.trace);
        for row in &outcome.report.tasks {
            if row.final_state.is_terminal() {
                let from_trace = folded
                    .get(&row.task_id)
                    .unwrap_or_else(|| panic!("{label}: {} missing in fold", row.task_id));
                assert_eq!(from_trace.final_state, row.final_state, "{label}");
                assert_eq!(from_trace.queue_time, row.queue_time, "{label}");
                assert_eq!(from_trace.execution_time, row.execution_time, "{label}");
            }
        }
        assert_eq!(fold_counters(&outcome.trace), outcome.report.counters, "{label}");
        let end = outcome
            .trace
            .last()
            .map_or(Timestamp::ZERO, |r| r.time);
        assert_eq!(
            fold_cost(&outcome.trace, &experiment.pools, end),
            outcome.report.total_cost,
            "{label}: cost fold mismatch"
        );

        // Deadline verdict matches the makespan.
        if let Some(d) = deadline {
            assert_eq!(
                outcome.report.deadline_met,
                outcome.report.makespan.seconds() <= d,
                "{label}"
            );
        } else {
            assert!(outcome.report.deadline_met, "{label}");
        }

        // Faults always end reconnected here, so every attempt chain should
        // end terminal (permanent failures allowed via the retry cap).
        for row in &outcome.report.tasks {
            assert!(
                row.final_state.is_terminal(),
                "{label}: task {} left in {:?}",
                row.task_id,
                row.final_state
            );
            assert!(matches!(
                row.final_state,
                TaskState::Finished | TaskState::Failed
            ));
        }
    }
}
