//! Shared experiment builders for integration tests.

use schedkit::algorithms::AlgorithmOptions;
use schedkit::context::{ContextConfig, LogLevel};
use schedkit::dist::ValueDist;
use schedkit::model::{ApplicationId, Duration, PoolId};
use schedkit::provisioning::{PoolKind, ResourcePoolSpec};
use schedkit::sim::{Arrival, ExperimentSetup, FaultScript, WorkloadSpec};

pub fn local_pool(slots: u32, instances: u32) -> ResourcePoolSpec {
    ResourcePoolSpec {
        pool_id: PoolId::from("local"),
        kind: PoolKind::Local,
        slots_per_instance: slots,
        speed_factor: 1.0,
        deployment_latency: ValueDist::ZERO,
        cost_rate: 0.0,
        capacity_cap: None,
        denial_probability: 0.0,
        bandwidth_mbps: 10.0,
        initial_instances: instances,
    }
}

pub fn ondemand_pool(latency_s: f64, speed: f64, cap: Option<u32>) -> ResourcePoolSpec {
    ResourcePoolSpec {
        pool_id: PoolId::from("ondemand"),
        kind: PoolKind::OnDemand,
        slots_per_instance: 1,
        speed_factor: speed,
        deployment_latency: ValueDist::Constant(latency_s),
        cost_rate: 0.01,
        capacity_cap: cap,
        denial_probability: 0.0,
        bandwidth_mbps: 10.0,
        initial_instances: 0,
    }
}

/// 55 constant-396 s tasks, everything queued at start.
pub fn baseline_workload(deadline_s: Option<f64>, data_mb: f64, prior_s: f64) -> WorkloadSpec {
    WorkloadSpec {
        application_id: ApplicationId::from("app"),
        task_count: 55,
        compute_demand: ValueDist::Constant(396.0),
        input_data_mb: ValueDist::Constant(data_mb),
        arrival: Arrival::AllAtStart,
        deadline: deadline_s.map(Duration),
        prior_mean: Duration(prior_s),
    }
}

pub fn setup(
    algorithm: &str,
    options: AlgorithmOptions,
    pools: Vec<ResourcePoolSpec>,
    workload: WorkloadSpec,
) -> ExperimentSetup {
    let include_transfer = algorithm == "data_aware";
    ExperimentSetup {
        algorithm: algorithm.to_string(),
        algorithm_options: options,
        context: ContextConfig {
            max_retries: 3,
            include_transfer_in_mean: include_transfer,
        },
        tick_period: Duration(30.0),
        pools,
        workload,
        faults: FaultScript::default(),
        seed: 42,
        log_level: LogLevel::Error,
    }
}
