//! Template state shared by every algorithm: the task queue, the
//! free-resource list and the attachment/running flags.

use std::collections::{BTreeSet, VecDeque};

use crate::error::{Result, SchedulerError};
use crate::model::{Resource, ResourceId, TaskId};

use super::SchedulerView;

/// Reusable algorithm internals.
///
/// The free list keeps the order in which resources became free: adding an
/// already-listed resource moves it to the back, and membership requires the
/// resource to be connected with at least one free slot.
#[derive(Debug, Default)]
pub struct AlgorithmCore {
    attached_to: Option<String>,
    running: bool,
    queue: VecDeque<TaskId>,
    queued: BTreeSet<TaskId>,
    free_list: Vec<ResourceId>,
    requeue_to_front: bool,
}

impl AlgorithmCore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Requeued tasks re-enter at the back by default; enabling this puts
    /// them at the head instead, restoring their original priority.
    pub fn set_requeue_to_front(&mut self, front: bool) {
        self.requeue_to_front = front;
    }

    pub fn attach(&mut self, context_id: &str) {
        self.attached_to = Some(context_id.to_string());
    }

    pub fn is_attached(&self) -> bool {
        self.attached_to.is_some()
    }

    pub fn ensure_attached(&self) -> Result<()> {
        if self.is_attached() {
            Ok(())
        } else {
            Err(SchedulerError::NotAttached)
        }
    }

    pub fn start(&mut self) -> Result<()> {
        self.ensure_attached()?;
        self.running = true;
        Ok(())
    }

    pub fn stop(&mut self) {
        self.running = false;
    }

    pub fn is_running(&self) -> bool {
        self.running
    }

    pub fn add_tasks(&mut self, tasks: &[TaskId]) -> Result<()> {
        self.ensure_attached()?;
        for task in tasks {
            if self.queued.insert(task.clone()) {
                self.queue.push_back(task.clone());
            }
        }
        Ok(())
    }

    pub fn pop_next_task(&mut self) -> Option<TaskId> {
        let task = self.queue.pop_front()?;
        self.queued.remove(&task);
        Some(task)
    }

    /// Puts a task back at the head of the queue, preserving arrival order.
    pub fn push_front_task(&mut self, task: TaskId) {
        if self.queued.insert(task.clone()) {
            self.queue.push_front(task);
        }
    }

    /// Re-enters a failed/aborted task per the configured requeue placement.
    pub fn requeue_task(&mut self, task: &TaskId) -> Result<()> {
        self.ensure_attached()?;
        if self.requeue_to_front {
            self.push_front_task(task.clone());
            Ok(())
        } else {
            self.add_tasks(std::slice::from_ref(task))
        }
    }

    pub fn tasks_in_queue(&self) -> usize {
        self.queue.len()
    }

    pub fn add_resources(&mut self, resources: &[Resource]) -> Result<()> {
        self.ensure_attached()?;
        for resource in resources {
            self.add_free_resource(resource)?;
        }
        Ok(())
    }

    pub fn add_free_resource(&mut self, resource: &Resource) -> Result<()> {
        self.ensure_attached()?;
        if resource.is_free() {
            self.free_list.retain(|rid| rid != &resource.resource_id);
            self.free_list.push(resource.resource_id.clone());
        }
        Ok(())
    }

    pub fn remove_free_resource(&mut self, resource_id: &ResourceId) -> Result<()> {
        self.ensure_attached()?;
        self.free_list.retain(|rid| rid != resource_id);
        Ok(())
    }

    pub fn have_free_resources(&self) -> bool {
        !self.free_list.is_empty()
    }

    pub fn free_list(&self) -> &[ResourceId] {
        &self.free_list
    }

    /// Assigns the task to the first eligible resource in the free list and
    /// emits the assignment for the context.
    ///
    /// Returns false — putting the task back at the head of the queue — when
    /// no listed resource is currently eligible.
    pub fn start_schedule_task(&mut self, view: &mut SchedulerView<'_>, task_id: TaskId) -> bool {
        let eligible = self
            .free_list
            .iter()
            .position(|rid| view.resource(rid).is_some_and(Resource::is_free));
        match eligible {
            Some(index) => {
                let resource_id = self.free_list[index].clone();
                view.assign(task_id, resource_id);
                true
            }
            None => {
                self.push_front_task(task_id);
                false
            }
        }
    }
}
