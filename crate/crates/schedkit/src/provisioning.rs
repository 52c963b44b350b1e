//! Simulated resource pools: provision/release request lifecycle, deployment
//! latency, capacity caps and cost accounting.
//!
//! Pools stand in for the fixed local machines and the dynamically
//! provisioned on-demand / spot-like cloud capacity. Provisioning requests
//! mature after a sampled deployment latency; matured requests are resolved
//! by [`PoolManager::pool_tick`], which either grants new resources or denies
//! the request (capacity cap, or a seeded refusal draw for spot-like pools).

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{mix_seed, ValueDist};
use crate::error::{Result, SchedulerError};
use crate::events::{DenialReason, PoolStatus, ProvisionOutcome};
use crate::model::{
    ApplicationId, Duration, PoolId, RequestId, Resource, ResourceId, Timestamp,
};

/// What kind of provisioning source a pool models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    /// Fixed local machines: zero deployment latency, zero cost, not growable.
    Local,
    /// On-demand cloud capacity with a deployment latency and a cost rate.
    OnDemand,
    /// Spot-like capacity: typically higher latency, lower cost, and a
    /// probability of refusing a request.
    SpotLike,
}

impl PoolKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PoolKind::Local => "local",
            PoolKind::OnDemand => "on_demand",
            PoolKind::SpotLike => "spot_like",
        }
    }
}

/// Static description of a provisioning source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourcePoolSpec {
    pub pool_id: PoolId,
    pub kind: PoolKind,
    pub slots_per_instance: u32,
    pub speed_factor: f64,
    /// Seconds between a provision request and its resolution.
    pub deployment_latency: ValueDist,
    /// Cost per instance-second while an instance is alive.
    pub cost_rate: f64,
    /// Maximum number of simultaneously live provisioned instances.
    pub capacity_cap: Option<u32>,
    /// Probability that a matured request is refused (spot-like only).
    pub denial_probability: f64,
    /// Data transfer bandwidth seen by tasks on this pool's instances, MB/s.
    pub bandwidth_mbps: f64,
    /// Instances that exist at experiment start (local machines).
    pub initial_instances: u32,
}

impl ResourcePoolSpec {
    pub fn validate(&self) -> Result<()> {
        let field = |name: &str| format!("pool {}: {name}", self.pool_id);
        if self.slots_per_instance == 0 {
            return Err(SchedulerError::ConfigInvalid(field("slots_per_instance must be >= 1")));
        }
        if self.speed_factor <= 0.0 {
            return Err(SchedulerError::ConfigInvalid(field("speed_factor must be > 0")));
        }
        if self.cost_rate < 0.0 {
            return Err(SchedulerError::ConfigInvalid(field("cost_rate must be >= 0")));
        }
        if !(0.0..=1.0).contains(&self.denial_probability) {
            return Err(SchedulerError::ConfigInvalid(field("denial_probability must be in [0, 1]")));
        }
        if self.bandwidth_mbps <= 0.0 {
            return Err(SchedulerError::ConfigInvalid(field("bandwidth_mbps must be > 0")));
        }
        self.deployment_latency.validate(&field("deployment_latency"))?;
        match self.kind {
            PoolKind::Local => {
                if !self.deployment_latency.is_zero() {
                    return Err(SchedulerError::ConfigInvalid(field(
                        "local pools have zero deployment latency",
                    )));
                }
                if self.cost_rate != 0.0 {
                    return Err(SchedulerError::ConfigInvalid(field("local pools are free")));
                }
                if self.denial_probability != 0.0 {
                    return Err(SchedulerError::ConfigInvalid(field(
                        "local pools never deny requests",
                    )));
                }
            }
            PoolKind::OnDemand => {
                if self.denial_probability != 0.0 {
                    return Err(SchedulerError::ConfigInvalid(field(
                        "denial_probability is only meaningful for spot_like pools",
                    )));
                }
            }
            PoolKind::SpotLike => {}
        }
        Ok(())
    }
}

/// One in-flight or resolved provisioning request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvisionRequest {
    pub request_id: RequestId,
    pub pool_id: PoolId,
    pub application_id: ApplicationId,
    pub count: u32,
    pub issued_at: Timestamp,
    pub matures_at: Timestamp,
    pub status: RequestStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RequestStatus {
    Pending,
    Granted,
    Denied,
}

/// A matured request together with its resolution.
#[derive(Debug, Clone)]
pub struct MaturedRequest {
    pub request: ProvisionRequest,
    pub outcome: ProvisionOutcome,
    /// Resource records created for a granted request, already connected.
    pub new_resources: Vec<Resource>,
}

#[derive(Debug, Clone)]
struct InstanceRecord {
    pool_id: PoolId,
    provisioned_at: Timestamp,
    released_at: Option<Timestamp>,
}

struct PoolState {
    spec: ResourcePoolSpec,
    rng: ChaCha8Rng,
    live_instances: u32,
    instance_counter: u32,
}

/// Owns every pool's state: pending requests, live-instance counts, the
/// per-pool seeded random source and the cost ledger.
pub struct PoolManager {
    pools: Vec<PoolId>,
    states: BTreeMap<PoolId, PoolState>,
    requests: BTreeMap<RequestId, ProvisionRequest>,
    ledger: BTreeMap<ResourceId, InstanceRecord>,
    next_request_id: u64,
}

impl PoolManager {
    pub fn new(specs: Vec<ResourcePoolSpec>, seed: u64) -> Result<Self> {
        let mut pools = Vec::new();
        let mut states = BTreeMap::new();
        for spec in specs {
            spec.validate()?;
            if states.contains_key(&spec.pool_id) {
                return Err(SchedulerError::ConfigInvalid(format!(
                    "duplicate pool id {}",
                    spec.pool_id
                )));
            }
            pools.push(spec.pool_id.clone());
            let rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, spec.pool_id.as_str()));
            states.insert(
                spec.pool_id.clone(),
                PoolState {
                    spec,
                    rng,
                    live_instances: 0,
                    instance_counter: 0,
                },
            );
        }
        Ok(PoolManager {
            pools,
            states,
            requests: BTreeMap::new(),
            ledger: BTreeMap::new(),
            next_request_id: 0,
        })
    }

    pub fn pool_spec(&self, pool_id: &PoolId) -> Option<&ResourcePoolSpec> {
        self.states.get(pool_id).map(|s| &s.spec)
    }

    /// Instantiates the fixed resources that exist before the run starts.
    pub fn initial_resources(&mut self) -> Vec<Resource> {
        let mut resources = Vec::new();
        for pool_id in self.pools.clone() {
            let state = self.states.get_mut(&pool_id).expect("pool exists");
            for _ in 0..state.spec.initial_instances {
                let resource_id =
                    ResourceId::new(format!("{}-{}", pool_id, state.instance_counter));
                state.instance_counter += 1;
                state.live_instances += 1;
                resources.push(Resource {
                    resource_id,
                    total_slots: state.spec.slots_per_instance,
                    free_slots: state.spec.slots_per_instance,
                    is_connected: true,
                    pool_id: pool_id.clone(),
                    speed_factor: state.spec.speed_factor,
                    provisioned_at: None,
                    released_at: None,
                });
            }
        }
        resources
    }

    /// Issues a provisioning request against a growable pool. The request
    /// matures after the pool's sampled deployment latency.
    pub fn request_provision(
        &mut self,
        pool_id: &PoolId,
        count: u32,
        application_id: &ApplicationId,
        now: Timestamp,
    ) -> Result<ProvisionRequest> {
        let state = self
            .states
            .get_mut(pool_id)
            .ok_or_else(|| SchedulerError::UnknownPool(pool_id.0.clone()))?;
        if state.spec.kind == PoolKind::Local {
            return Err(SchedulerError::LocalPoolFixed(pool_id.0.clone()));
        }
        if count == 0 {
            return Err(SchedulerError::InvalidRequest(
                "provision count must be >= 1".to_string(),
            ));
        }
        let latency = Duration(state.spec.deployment_latency.sample(&mut state.rng));
        let request = ProvisionRequest {
            request_id: RequestId(self.next_request_id),
            pool_id: pool_id.clone(),
            application_id: application_id.clone(),
            count,
            issued_at: now,
            matures_at: now + latency,
            status: RequestStatus::Pending,
        };
        self.next_request_id += 1;
        self.requests.insert(request.request_id, request.clone());
        Ok(request)
    }

    /// Resolves every pending request that has matured by `now`, in request
    /// order. Granted requests yield connected resource records; requests
    /// that would exceed the pool's capacity cap, and spot-like refusals, are
    /// denied.
    pub fn pool_tick(&mut self, now: Timestamp) -> Vec<MaturedRequest> {
        let due: Vec<RequestId> = self
            .requests
            .values()
            .filter(|r| r.status == RequestStatus::Pending && r.matures_at <= now)
            .map(|r| r.request_id)
            .collect();
        let mut matured = Vec::new();
        for id in due {
            let mut request = self.requests.get(&id).expect("request exists").clone();
            let state = self.states.get_mut(&request.pool_id).expect("pool exists");
            let refused = state.spec.denial_probability > 0.0
                && state.rng.gen::<f64>() < state.spec.denial_probability;
            let over_cap = state
                .spec
                .capacity_cap
                .is_some_and(|cap| state.live_instances + request.count > cap);
            let outcome = if refused {
                request.status = RequestStatus::Denied;
                ProvisionOutcome::Denied {
                    reason: DenialReason::PoolRefused,
                }
            } else if over_cap {
                request.status = RequestStatus::Denied;
                ProvisionOutcome::Denied {
                    reason: DenialReason::CapacityCap,
                }
            } else {
                request.status = RequestStatus::Granted;
                let mut ids = Vec::new();
                for _ in 0..request.count {
                    let resource_id = ResourceId::new(format!(
                        "{}-{}",
                        request.pool_id, state.instance_counter
                    ));
                    state.instance_counter += 1;
                    state.live_instances += 1;
                    self.ledger.insert(
                        resource_id.clone(),
                        InstanceRecord {
                            pool_id: request.pool_id.clone(),
                            provisioned_at: request.matures_at,
                            released_at: None,
                        },
                    );
                    ids.push(resource_id);
                }
                ProvisionOutcome::Granted {
                    resource_ids: ids,
                }
            };
            let new_resources = match &outcome {
                ProvisionOutcome::Granted { resource_ids } => resource_ids
                    .iter()
                    .map(|rid| Resource {
                        resource_id: rid.clone(),
                        total_slots: state.spec.slots_per_instance,
                        free_slots: state.spec.slots_per_instance,
                        is_connected: true,
                        pool_id: request.pool_id.clone(),
                        speed_factor: state.spec.speed_factor,
                        provisioned_at: Some(request.matures_at),
                        released_at: None,
                    })
                    .collect(),
                ProvisionOutcome::Denied { .. } => Vec::new(),
            };
            self.requests.insert(id, request.clone());
            matured.push(MaturedRequest {
                request,
                outcome,
                new_resources,
            });
        }
        matured
    }

    /// Stamps release time for provisioned instances and stops cost accrual.
    /// Eligibility (provisioned, idle) is validated by the scheduler context,
    /// which owns the live resource state.
    pub fn mark_released(&mut self, resource_ids: &[ResourceId], now: Timestamp) {
        for rid in resource_ids {
            if let Some(record) = self.ledger.get_mut(rid) {
                if record.released_at.is_none() {
                    record.released_at = Some(now);
                    if let Some(state) = self.states.get_mut(&record.pool_id) {
                        state.live_instances = state.live_instances.saturating_sub(1);
                    }
                }
            }
        }
    }

    pub fn is_provisioned(&self, resource_id: &ResourceId) -> bool {
        self.ledger.contains_key(resource_id)
    }

    /// Applications with at least one unresolved request.
    pub fn pending_applications(&self) -> BTreeSet<ApplicationId> {
        self.requests
            .values()
            .filter(|r| r.status == RequestStatus::Pending)
            .map(|r| r.application_id.clone())
            .collect()
    }

    /// Pool descriptors with live instance counts, in configuration order.
    /// Connectivity is owned by the scheduler context, which overlays the
    /// connected counts before publishing a query.
    pub fn query_pools(&self) -> Vec<PoolStatus> {
        self.pools
            .iter()
            .map(|pid| {
                let state = &self.states[pid];
                PoolStatus {
                    pool_id: pid.clone(),
                    kind: state.spec.kind.as_str().to_string(),
                    live_instances: state.live_instances,
                    connected_instances: state.live_instances,
                }
            })
            .collect()
    }

    /// First growable (non-local) pool, in configuration order.
    pub fn default_growable_pool(&self) -> Option<&PoolId> {
        self.pools
            .iter()
            .find(|pid| self.states[*pid].spec.kind != PoolKind::Local)
    }

    /// Total accrued cost of provisioned instances up to `now`.
    pub fn total_cost(&self, now: Timestamp) -> f64 {
        let cost: f64 = self
            .ledger
            .values()
            .map(|record| {
                let rate = self.states[&record.pool_id].spec.cost_rate;
                let end = record.released_at.map_or(now, |r| Timestamp(r.0.min(now.0)));
                rate * (end.0 - record.provisioned_at.0).max(0.0)
            })
            .sum();
        // An empty sum is -0.0; keep reports free of negative zero.
        cost + 0.0
    }

    /// Total instance-seconds of provisioned capacity up to `now`.
    pub fn provisioned_instance_seconds(&self, now: Timestamp) -> f64 {
        let seconds: f64 = self
            .ledger
            .values()
            .map(|record| {
                let end = record.released_at.map_or(now, |r| Timestamp(r.0.min(now.0)));
                (end.0 - record.provisioned_at.0).max(0.0)
            })
            .sum();
        seconds + 0.0
    }
}
