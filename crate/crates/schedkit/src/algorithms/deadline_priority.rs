//! Deadline-driven provisioning: grow when the capacity test says the
//! deadline cannot be met with the current allocation, shrink when even the
//! uncompleted work fits comfortably.

use crate::error::Result;
use crate::model::ApplicationId;

use super::{
    capacity_check, AlgorithmCore, AlgorithmDescriptor, AlgorithmOptions, ProvisionAction,
    ProvisionDecision, SchedulerView, SchedulingAlgorithm,
};

/// FIFO dispatch plus the grow/shrink capacity test.
///
/// The current-allocation measure is the total slot count over connected
/// resources. One grow request is kept outstanding per application; shrink
/// releases one idle provisioned resource at a time and only when every
/// provisioned resource is idle.
#[derive(Debug)]
pub struct DeadlinePriority {
    core: AlgorithmCore,
    options: AlgorithmOptions,
}

impl DeadlinePriority {
    pub fn new(options: AlgorithmOptions) -> Self {
        DeadlinePriority {
            core: AlgorithmCore::new(),
            options,
        }
    }
}

impl SchedulingAlgorithm for DeadlinePriority {
    fn descriptor(&self) -> AlgorithmDescriptor {
        AlgorithmDescriptor {
            name: "deadline_priority".to_string(),
            supports_provisioning: true,
        }
    }

    fn core(&self) -> &AlgorithmCore {
        &self.core
    }

    fn core_mut(&mut self) -> &mut AlgorithmCore {
        &mut self.core
    }

    fn schedule(&mut self, view: &mut SchedulerView<'_>) -> Result<()> {
        self.core.ensure_attached()?;
        if self.core.have_free_resources() && self.core.tasks_in_queue() > 0 {
            if let Some(task) = self.core.pop_next_task() {
                self.core.start_schedule_task(view, task);
            }
        }
        Ok(())
    }

    fn provisioning_tick(
        &mut self,
        app: &ApplicationId,
        view: &SchedulerView<'_>,
    ) -> ProvisionDecision {
        let Some(qos) = view.qos(app) else {
            return ProvisionDecision::none();
        };
        let snapshot = super::QosSnapshot::of(qos, view.now());
        let current = view.connected_slot_count();

        let grow_check = capacity_check(&snapshot, current, true, self.options.ceil_ratio);
        if grow_check.exceeded {
            if view.has_pending_provision(app) {
                // A request is already in flight; do not duplicate it.
                return ProvisionDecision {
                    action: ProvisionAction::None,
                    rationale: Some(grow_check),
                };
            }
            let Some(pool) = view.default_growable_pool() else {
                return ProvisionDecision {
                    action: ProvisionAction::None,
                    rationale: Some(grow_check),
                };
            };
            return ProvisionDecision {
                action: ProvisionAction::Grow {
                    pool_id: pool.clone(),
                    count: self.options.grow_step,
                },
                rationale: Some(grow_check),
            };
        }

        let shrink_check = capacity_check(&snapshot, current, false, self.options.ceil_ratio);
        if !shrink_check.exceeded {
            let provisioned: Vec<_> = view.provisioned_resources().collect();
            if !provisioned.is_empty() && provisioned.iter().all(|r| r.is_idle()) {
                let victim = provisioned[0].resource_id.clone();
                return ProvisionDecision {
                    action: ProvisionAction::Shrink {
                        resource_ids: vec![victim],
                    },
                    rationale: Some(shrink_check),
                };
            }
        }
        ProvisionDecision {
            action: ProvisionAction::None,
            rationale: Some(shrink_check),
        }
    }
}
