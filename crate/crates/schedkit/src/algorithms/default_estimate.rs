//! Completion-time-estimation provisioning.
//!
//! Estimates when the application will finish on the currently connected
//! slots and requests extra resources while that estimate lands past the
//! deadline. The estimator runs on the application's average task execution
//! time: with the transfer-excluding mean (`default`) it systematically
//! underestimates data-heavy workloads; the `data_aware` variant points the
//! same estimator at the transfer-inclusive mean.

use crate::error::Result;
use crate::model::ApplicationId;

use super::{
    AlgorithmCore, AlgorithmDescriptor, AlgorithmOptions, ProvisionAction, ProvisionDecision,
    SchedulerView, SchedulingAlgorithm,
};

#[derive(Debug)]
pub struct DefaultEstimate {
    name: String,
    core: AlgorithmCore,
    options: AlgorithmOptions,
}

impl DefaultEstimate {
    pub fn new(name: impl Into<String>, options: AlgorithmOptions) -> Self {
        DefaultEstimate {
            name: name.into(),
            core: AlgorithmCore::new(),
            options,
        }
    }
}

impl SchedulingAlgorithm for DefaultEstimate {
    fn descriptor(&self) -> AlgorithmDescriptor {
        AlgorithmDescriptor {
            name: self.name.clone(),
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
        let Some(deadline) = qos.deadline else {
            return ProvisionDecision::none();
        };
        let remaining = qos.total_work.saturating_sub(qos.scheduled_tasks);
        if remaining == 0 {
            return ProvisionDecision::none();
        }
        let slots = view.connected_slot_count();
        let avg = qos.average_task_execution_time();
        // Waves of `slots` parallel tasks; zero slots can never finish.
        let expected_completion = if slots == 0 {
            f64::INFINITY
        } else {
            view.now().seconds() + remaining.div_ceil(slots) as f64 * avg.seconds()
        };
        if expected_completion > deadline.seconds() {
            if view.has_pending_provision(app) {
                return ProvisionDecision::none();
            }
            let Some(pool) = view.default_growable_pool() else {
                return ProvisionDecision::none();
            };
            return ProvisionDecision {
                action: ProvisionAction::Grow {
                    pool_id: pool.clone(),
                    count: self.options.grow_step,
                },
                rationale: None,
            };
        }
        ProvisionDecision::none()
    }
}
