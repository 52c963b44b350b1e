//! Experiment configuration files.
//!
//! A config is a single TOML document with a `schema = 1` version field,
//! nested `[algorithm]`, `[workload]` and `[[pools]]` sections and an
//! optional fault script. Parsing yields field-level diagnostics; the result
//! converts into an [`ExperimentSetup`] ready to run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::algorithms::AlgorithmOptions;
use crate::context::{ContextConfig, LogLevel};
use crate::dist::ValueDist;
use crate::error::{Result, SchedulerError};
use crate::model::{ApplicationId, Duration, PoolId, ResourceId, Timestamp};
use crate::provisioning::{PoolKind, ResourcePoolSpec};
use crate::sim::{Arrival, ExperimentSetup, FaultAction, FaultEntry, FaultScript, WorkloadSpec};

pub const SCHEMA_VERSION: u32 = 1;

/// Raw, serde-deserialized form of a config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub algorithm: AlgorithmSection,
    pub workload: WorkloadSection,
    pub pools: Vec<PoolSection>,
    #[serde(default)]
    pub faults: Vec<FaultSection>,
}

fn default_seed() -> u64 {
    0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSection {
    pub name: String,
    #[serde(default = "default_grow_step")]
    pub grow_step: u32,
    #[serde(default)]
    pub ceil_ratio: bool,
    #[serde(default)]
    pub requeue_to_front: bool,
    #[serde(default = "default_tick_period")]
    pub tick_period_s: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// Defaults to true for the data_aware algorithm, false otherwise.
    #[serde(default)]
    pub include_transfer_in_mean: Option<bool>,
}

fn default_grow_step() -> u32 {
    1
}

fn default_tick_period() -> f64 {
    30.0
}

fn default_max_retries() -> u32 {
    3
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSection {
    pub task_count: u32,
    pub compute_demand_s: ValueDist,
    #[serde(default = "ValueDist::zero")]
    pub input_data_mb: ValueDist,
    /// "all_at_start" or a poisson rate via `poisson_rate`.
    #[serde(default)]
    pub poisson_rate: Option<f64>,
    /// Deadline from experiment start, e.g. "35m", "2100s", "1h".
    #[serde(default)]
    pub deadline: Option<String>,
    #[serde(default = "default_prior_mean")]
    pub prior_mean_s: f64,
    #[serde(default = "default_application")]
    pub application_id: String,
}

fn default_prior_mean() -> f64 {
    60.0
}

fn default_application() -> String {
    "app".to_string()
}

impl ValueDist {
    fn zero() -> Self {
        ValueDist::ZERO
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolSection {
    pub pool_id: String,
    pub kind: PoolKind,
    pub slots_per_instance: u32,
    #[serde(default = "default_speed")]
    pub speed_factor: f64,
    #[serde(default = "ValueDist::zero")]
    pub deployment_latency_s: ValueDist,
    #[serde(default)]
    pub cost_rate_per_s: f64,
    #[serde(default)]
    pub capacity_cap: Option<u32>,
    #[serde(default)]
    pub denial_probability: f64,
    #[serde(default = "default_bandwidth")]
    pub bandwidth_mbps: f64,
    #[serde(default)]
    pub initial_instances: u32,
}

fn default_speed() -> f64 {
    1.0
}

fn default_bandwidth() -> f64 {
    100.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSection {
    pub at_s: f64,
    #[serde(default)]
    pub disconnect: Option<String>,
    #[serde(default)]
    pub reconnect: Option<String>,
}

/// Parses a duration like `2100s`, `35m`, `1.5h` or a bare seconds number.
pub fn parse_duration(text: &str) -> Result<Duration> {
    let text = text.trim();
    let (number, unit) = match text.chars().last() {
        Some('s') => (&text[..text.len() - 1], 1.0),
        Some('m') => (&text[..text.len() - 1], 60.0),
        Some('h') => (&text[..text.len() - 1], 3600.0),
        _ => (text, 1.0),
    };
    let value: f64 = number.trim().parse().map_err(|_| {
        SchedulerError::ConfigInvalid(format!(
            "invalid duration '{text}': expected a number with optional s/m/h suffix"
        ))
    })?;
    if value < 0.0 {
        return Err(SchedulerError::ConfigInvalid(format!(
            "invalid duration '{text}': must be non-negative"
        )));
    }
    Ok(Duration(value * unit))
}

impl std::str::FromStr for ExperimentConfig {
    type Err = SchedulerError;

    fn from_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text)
            .map_err(|e| SchedulerError::ConfigInvalid(format!("config parse error: {e}")))?;
        if config.schema != SCHEMA_VERSION {
            return Err(SchedulerError::ConfigInvalid(format!(
                "unsupported schema version {} (expected {SCHEMA_VERSION})",
                config.schema
            )));
        }
        Ok(config)
    }
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            SchedulerError::Io(format!("cannot read config {}: {e}", path.display()))
        })?;
        text.parse()
    }

    /// Converts the raw config into a validated experiment setup.
    pub fn into_setup(self, log_level: LogLevel) -> Result<ExperimentSetup> {
        let include_transfer = self
            .algorithm
            .include_transfer_in_mean
            .unwrap_or(self.algorithm.name == "data_aware");
        let deadline = self
            .workload
            .deadline
            .as_deref()
            .map(parse_duration)
            .transpose()?;
        let arrival = match self.workload.poisson_rate {
            Some(rate) => Arrival::Poisson { rate },
            None => Arrival::AllAtStart,
        };
        let mut faults = Vec::new();
        for entry in &self.faults {
            let action = match (&entry.disconnect, &entry.reconnect) {
                (Some(rid), None) => FaultAction::Disconnect(ResourceId::from(rid.as_str())),
                (None, Some(rid)) => FaultAction::Reconnect(ResourceId::from(rid.as_str())),
                _ => {
                    return Err(SchedulerError::ConfigInvalid(
                        "faults: each entry needs exactly one of disconnect/reconnect".into(),
                    ))
                }
            };
            faults.push(FaultEntry {
                at: Timestamp(entry.at_s),
                action,
            });
        }
        let setup = ExperimentSetup {
            algorithm: self.algorithm.name.clone(),
            algorithm_options: AlgorithmOptions {
                grow_step: self.algorithm.grow_step,
                ceil_ratio: self.algorithm.ceil_ratio,
                requeue_to_front: self.algorithm.requeue_to_front,
            },
            context: ContextConfig {
                max_retries: self.algorithm.max_retries,
                include_transfer_in_mean: include_transfer,
            },
            tick_period: Duration(self.algorithm.tick_period_s),
            pools: self
                .pools
                .into_iter()
                .map(|p| ResourcePoolSpec {
                    pool_id: PoolId::new(p.pool_id),
                    kind: p.kind,
                    slots_per_instance: p.slots_per_instance,
                    speed_factor: p.speed_factor,
                    deployment_latency: p.deployment_latency_s,
                    cost_rate: p.cost_rate_per_s,
                    capacity_cap: p.capacity_cap,
                    denial_probability: p.denial_probability,
                    bandwidth_mbps: p.bandwidth_mbps,
                    initial_instances: p.initial_instances,
                })
                .collect(),
            workload: WorkloadSpec {
                application_id: ApplicationId::new(self.workload.application_id),
                task_count: self.workload.task_count,
                compute_demand: self.workload.compute_demand_s,
                input_data_mb: self.workload.input_data_mb,
                arrival,
                deadline,
                prior_mean: Duration(self.workload.prior_mean_s),
            },
            faults: FaultScript(faults),
            seed: self.seed,
            log_level,
        };
        setup.validate()?;
        Ok(setup)
    }
}
