//! First-in first-out scheduling: tasks run in their order of arrival.

use crate::error::Result;

use super::{AlgorithmCore, AlgorithmDescriptor, SchedulerView, SchedulingAlgorithm};

/// Assigns the first task in the queue to the first resource in the free
/// list, one assignment per scheduling call.
#[derive(Debug, Default)]
pub struct Fifo {
    core: AlgorithmCore,
}

impl Fifo {
    pub fn new() -> Self {
        Self::default()
    }
}

impl SchedulingAlgorithm for Fifo {
    fn descriptor(&self) -> AlgorithmDescriptor {
        AlgorithmDescriptor {
            name: "fifo".to_string(),
            supports_provisioning: false,
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
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PoolId, Resource, ResourceId, TaskId, Timestamp};
    use std::collections::{BTreeMap, BTreeSet};

    fn one_slot(id: &str) -> Resource {
        Resource {
            resource_id: ResourceId::from(id),
            total_slots: 1,
            free_slots: 1,
            is_connected: true,
            pool_id: PoolId::from("local"),
            speed_factor: 1.0,
            provisioned_at: None,
            released_at: None,
        }
    }

    #[test]
    fn assigns_first_task_to_first_resource() {
        let mut fifo = Fifo::new();
        fifo.set_scheduler("ctx");
        fifo.add_resources(&[one_slot("rA"), one_slot("rB")]).unwrap();
        fifo.add_tasks(&[TaskId::from("t1")]).unwrap();

        let mut resources = BTreeMap::new();
        resources.insert(ResourceId::from("rA"), one_slot("rA"));
        resources.insert(ResourceId::from("rB"), one_slot("rB"));
        let qos = BTreeMap::new();
        let pending = BTreeSet::new();
        let mut view = SchedulerView::new(Timestamp::ZERO, &resources, &qos, &pending, None);

        fifo.schedule(&mut view).unwrap();
        let commands = view.into_commands();
        assert_eq!(commands.len(), 1);
        assert_eq!(commands[0].task_id, TaskId::from("t1"));
        assert_eq!(commands[0].resource_id, ResourceId::from("rA"));
    }

    #[test]
    fn schedules_one_task_per_call_in_arrival_order() {
        let mut fifo = Fifo::new();
        fifo.set_scheduler("ctx");
        fifo.add_resources(&[one_slot("r")]).unwrap();
        fifo.add_tasks(&[TaskId::from("t1"), TaskId::from("t2"), TaskId::from("t3")])
            .unwrap();

        let mut resources = BTreeMap::new();
        resources.insert(ResourceId::from("r"), one_slot("r"));
        let qos = BTreeMap::new();
        let pending = BTreeSet::new();
        let mut view = SchedulerView::new(Timestamp::ZERO, &resources, &qos, &pending, None);

        fifo.schedule(&mut view).unwrap();
        let commands = view.into_commands();
        assert_eq!(commands.len(), 1);
        assert_eq!(commands[0].task_id, TaskId::from("t1"));
        assert_eq!(fifo.tasks_in_queue(), 2);
    }

    #[test]
    fn empty_queue_makes_no_assignment() {
        let mut fifo = Fifo::new();
        fifo.set_scheduler("ctx");
        fifo.add_resources(&[one_slot("r")]).unwrap();

        let resources = BTreeMap::new();
        let qos = BTreeMap::new();
        let pending = BTreeSet::new();
        let mut view = SchedulerView::new(Timestamp::ZERO, &resources, &qos, &pending, None);
        fifo.schedule(&mut view).unwrap();
        assert!(view.into_commands().is_empty());
    }
}
