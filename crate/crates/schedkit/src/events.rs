//! Scheduling event taxonomy, the serial-delivery event bus and the
//! append-only trace log.
//!
//! Every state change in a run maps to exactly one published event, so the
//! trace file is a complete, replayable record of the run. The bus delivers
//! events serially in publish order; handlers that need to publish do so via
//! the deferred queue passed to them, never re-entrantly.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SchedulerError};
use crate::model::{
    ApplicationId, Duration, PoolId, RequestId, ResourceId, TaskId, Timestamp,
};

/// Why a task attempt failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureCause {
    /// The resource executing the task disconnected.
    ResourceDisconnect,
    /// The execution itself failed, unrelated to connectivity.
    ExecutionError,
    /// The application was aborted by the user and the failure cascaded.
    UserAbortCascade,
}

/// Why a task went back to the queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RequeueCause {
    Failed,
    Aborted,
}

/// Outcome of a processed provisioning request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ProvisionOutcome {
    Granted { resource_ids: Vec<ResourceId> },
    Denied { reason: DenialReason },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DenialReason {
    /// The pool's capacity cap would be exceeded.
    CapacityCap,
    /// The pool refused the request (spot-like sources).
    PoolRefused,
}

/// Summary row returned by a pool query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolStatus {
    pub pool_id: PoolId,
    pub kind: String,
    /// Instances provisioned/fixed and not yet released.
    pub live_instances: u32,
    /// Live instances currently connected.
    pub connected_instances: u32,
}

/// Discriminant of a scheduling event, used for subscription filters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EventKind {
    AlgorithmSelected,
    ResourceDisconnected,
    ResourceReconnected,
    ResourceProvisionRequested,
    ResourceProvisionProcessed,
    ResourceReleaseRequested,
    ResourcePoolsQueryRequested,
    TaskAssigned,
    TaskFinished,
    TaskFailed,
    TaskAborted,
    TaskRequeued,
}

impl EventKind {
    pub const ALL: [EventKind; 12] = [
        EventKind::AlgorithmSelected,
        EventKind::ResourceDisconnected,
        EventKind::ResourceReconnected,
        EventKind::ResourceProvisionRequested,
        EventKind::ResourceProvisionProcessed,
        EventKind::ResourceReleaseRequested,
        EventKind::ResourcePoolsQueryRequested,
        EventKind::TaskAssigned,
        EventKind::TaskFinished,
        EventKind::TaskFailed,
        EventKind::TaskAborted,
        EventKind::TaskRequeued,
    ];
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self)
    }
}

/// Event payloads, tagged by kind.
///
/// Terminal task events carry the attempt's timing metrics so a report can be
/// folded from the trace alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum EventPayload {
    AlgorithmSelected {
        algorithm: String,
    },
    ResourceDisconnected {
        resource_id: ResourceId,
    },
    ResourceReconnected {
        resource_id: ResourceId,
    },
    ResourceProvisionRequested {
        request_id: RequestId,
        pool_id: PoolId,
        application_id: ApplicationId,
        count: u32,
    },
    ResourceProvisionProcessed {
        request_id: RequestId,
        pool_id: PoolId,
        outcome: ProvisionOutcome,
    },
    ResourceReleaseRequested {
        resource_ids: Vec<ResourceId>,
    },
    ResourcePoolsQueryRequested {
        pools: Vec<PoolStatus>,
    },
    TaskAssigned {
        task_id: TaskId,
        resource_id: ResourceId,
        attempt: u32,
    },
    TaskFinished {
        task_id: TaskId,
        resource_id: ResourceId,
        queue_time: Duration,
        execution_time: Duration,
    },
    TaskFailed {
        task_id: TaskId,
        cause: FailureCause,
        resource_id: Option<ResourceId>,
        queue_time: Duration,
        execution_time: Duration,
    },
    TaskAborted {
        task_id: TaskId,
        queue_time: Duration,
        execution_time: Duration,
    },
    TaskRequeued {
        task_id: TaskId,
        cause: RequeueCause,
        attempt: u32,
    },
}

impl EventPayload {
    pub fn kind(&self) -> EventKind {
        match self {
            EventPayload::AlgorithmSelected { .. } => EventKind::AlgorithmSelected,
            EventPayload::ResourceDisconnected { .. } => EventKind::ResourceDisconnected,
            EventPayload::ResourceReconnected { .. } => EventKind::ResourceReconnected,
            EventPayload::ResourceProvisionRequested { .. } => {
                EventKind::ResourceProvisionRequested
            }
            EventPayload::ResourceProvisionProcessed { .. } => {
                EventKind::ResourceProvisionProcessed
            }
            EventPayload::ResourceReleaseRequested { .. } => {
                EventKind::ResourceReleaseRequested
            }
            EventPayload::ResourcePoolsQueryRequested { .. } => {
                EventKind::ResourcePoolsQueryRequested
            }
            EventPayload::TaskAssigned { .. } => EventKind::TaskAssigned,
            EventPayload::TaskFinished { .. } => EventKind::TaskFinished,
            EventPayload::TaskFailed { .. } => EventKind::TaskFailed,
            EventPayload::TaskAborted { .. } => EventKind::TaskAborted,
            EventPayload::TaskRequeued { .. } => EventKind::TaskRequeued,
        }
    }
}

/// A scheduling event stamped with virtual time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulingEvent {
    pub time: Timestamp,
    #[serde(flatten)]
    pub payload: EventPayload,
}

impl SchedulingEvent {
    pub fn new(time: Timestamp, payload: EventPayload) -> Self {
        SchedulingEvent { time, payload }
    }

    pub fn kind(&self) -> EventKind {
        self.payload.kind()
    }
}

/// One line of the trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub seq: u64,
    pub time: Timestamp,
    #[serde(flatten)]
    pub payload: EventPayload,
}

/// Registration receipt for a bus subscriber.
#[derive(Debug, Clone)]
pub struct Subscription {
    pub subscriber_id: u64,
    pub kinds: BTreeSet<EventKind>,
}

/// Queue handed to handlers for publishing follow-up events.
///
/// Events pushed here are published after the current delivery completes,
/// preserving serial, publish-order semantics.
#[derive(Debug, Default)]
pub struct Deferred {
    queue: Vec<SchedulingEvent>,
}

impl Deferred {
    pub fn publish(&mut self, event: SchedulingEvent) {
        self.queue.push(event);
    }
}

type Handler = Box<dyn FnMut(&SchedulingEvent, &mut Deferred)>;

struct Subscriber {
    id: u64,
    kinds: BTreeSet<EventKind>,
    handler: Handler,
}

/// Serial-delivery event bus with an append-only trace.
///
/// Publication order is preserved: an event is appended to the trace and
/// delivered to every matching subscriber (ascending subscriber id) before
/// the next publish completes. The bus clock is monotone; publishing an event
/// timestamped before the last published one is a `ClockRegression`.
pub struct EventBus {
    subscribers: Vec<Subscriber>,
    next_subscriber_id: u64,
    trace: Vec<TraceRecord>,
    last_time: Option<Timestamp>,
    delivering: bool,
}

impl Default for EventBus {
    fn default() -> Self {
        Self::new()
    }
}

impl EventBus {
    pub fn new() -> Self {
        EventBus {
            subscribers: Vec::new(),
            next_subscriber_id: 0,
            trace: Vec::new(),
            last_time: None,
            delivering: false,
        }
    }

    /// Registers a handler for the given event kinds.
    pub fn subscribe<F>(&mut self, kinds: impl IntoIterator<Item = EventKind>, handler: F) -> Subscription
    where
        F: FnMut(&SchedulingEvent, &mut Deferred) + 'static,
    {
        let kinds: BTreeSet<EventKind> = kinds.into_iter().collect();
        let id = self.next_subscriber_id;
        self.next_subscriber_id += 1;
        self.subscribers.push(Subscriber {
            id,
            kinds: kinds.clone(),
            handler: Box::new(handler),
        });
        self.subscribers.sort_by_key(|s| s.id);
        Subscription {
            subscriber_id: id,
            kinds,
        }
    }

    /// Publishes an event: appends it to the trace and delivers it to every
    /// matching subscriber, then drains any events the handlers deferred.
    pub fn publish(&mut self, event: SchedulingEvent) -> Result<()> {
        assert!(!self.delivering, "re-entrant publish; use the deferred queue");
        let mut pending = vec![event];
        while !pending.is_empty() {
            let batch = std::mem::take(&mut pending);
            for event in batch {
                if let Some(last) = self.last_time {
                    if event.time < last {
                        return Err(SchedulerError::ClockRegression {
                            last,
                            attempted: event.time,
                        });
                    }
                }
                self.last_time = Some(event.time);
                self.trace.push(TraceRecord {
                    seq: self.trace.len() as u64,
                    time: event.time,
                    payload: event.payload.clone(),
                });
                let mut deferred = Deferred::default();
                self.delivering = true;
                for sub in self.subscribers.iter_mut() {
                    if sub.kinds.contains(&event.kind()) {
                        (sub.handler)(&event, &mut deferred);
                    }
                }
                self.delivering = false;
                pending.extend(deferred.queue);
            }
        }
        Ok(())
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn last_time(&self) -> Option<Timestamp> {
        self.last_time
    }

    /// Writes the trace as one JSON object per line.
    pub fn write_trace(&self, path: &Path) -> Result<()> {
        let file = File::create(path)?;
        let mut out = BufWriter::new(file);
        for record in &self.trace {
            let line = serde_json::to_string(record)
                .map_err(|e| SchedulerError::Io(e.to_string()))?;
            writeln!(out, "{line}")?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Renders a trace to the line format used by the trace file.
pub fn trace_to_string(trace: &[TraceRecord]) -> String {
    let mut s = String::new();
    for record in trace {
        s.push_str(&serde_json::to_string(record).expect("trace record serializes"));
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::RefCell;
    use std::rc::Rc;

    fn finished(task: &str, time: f64) -> SchedulingEvent {
        SchedulingEvent::new(
            Timestamp(time),
            EventPayload::TaskFinished {
                task_id: TaskId::from(task),
                resource_id: ResourceId::from("r1"),
                queue_time: Duration(0.0),
                execution_time: Duration(1.0),
            },
        )
    }

    fn failed(task: &str, time: f64) -> SchedulingEvent {
        SchedulingEvent::new(
            Timestamp(time),
            EventPayload::TaskFailed {
                task_id: TaskId::from(task),
                cause: FailureCause::ExecutionError,
                resource_id: None,
                queue_time: Duration(0.0),
                execution_time: Duration(0.0),
            },
        )
    }

    #[test]
    fn publish_appends_to_trace_and_delivers_once() {
        let mut bus = EventBus::new();
        let count = Rc::new(RefCell::new(0));
        let c = count.clone();
        bus.subscribe([EventKind::TaskFinished], move |_, _| *c.borrow_mut() += 1);
        bus.publish(finished("t1", 72.0)).unwrap();
        assert_eq!(bus.trace().len(), 1);
        assert_eq!(*count.borrow(), 1);
        assert_eq!(bus.trace()[0].seq, 0);
    }

    #[test]
    fn clock_regression_is_rejected() {
        let mut bus = EventBus::new();
        bus.publish(finished("t1", 10.0)).unwrap();
        let err = bus.publish(finished("t2", 5.0)).unwrap_err();
        assert!(matches!(err, SchedulerError::ClockRegression { .. }));
    }

    #[test]
    fn subscription_filters_by_kind() {
        let mut bus = EventBus::new();
        let hits = Rc::new(RefCell::new(0));
        let h = hits.clone();
        bus.subscribe([EventKind::TaskFinished], move |_, _| *h.borrow_mut() += 1);
        bus.publish(failed("t1", 1.0)).unwrap();
        assert_eq!(*hits.borrow(), 0);
    }

    #[test]
    fn all_kinds_subscriber_sees_publish_order() {
        let mut bus = EventBus::new();
        let seen: Rc<RefCell<Vec<String>>> = Rc::new(RefCell::new(Vec::new()));
        let s = seen.clone();
        bus.subscribe(EventKind::ALL, move |e, _| {
            if let EventPayload::TaskFinished { task_id, .. } = &e.payload {
                s.borrow_mut().push(task_id.0.clone());
            }
        });
        for i in 0..5 {
            bus.publish(finished(&format!("t{i}"), i as f64)).unwrap();
        }
        assert_eq!(*seen.borrow(), vec!["t0", "t1", "t2", "t3", "t4"]);
    }

    #[test]
    fn two_subscribers_deliver_in_subscriber_id_order() {
        let mut bus = EventBus::new();
        let order: Rc<RefCell<Vec<u64>>> = Rc::new(RefCell::new(Vec::new()));
        let o1 = order.clone();
        let first = bus.subscribe([EventKind::TaskFinished], move |_, _| {
            o1.borrow_mut().push(0)
        });
        let o2 = order.clone();
        let second = bus.subscribe([EventKind::TaskFinished], move |_, _| {
            o2.borrow_mut().push(1)
        });
        assert!(first.subscriber_id < second.subscriber_id);
        bus.publish(finished("t1", 1.0)).unwrap();
        assert_eq!(*order.borrow(), vec![0, 1]);
    }

    #[test]
    fn deferred_events_publish_after_current_delivery() {
        let mut bus = EventBus::new();
        let seen: Rc<RefCell<Vec<EventKind>>> = Rc::new(RefCell::new(Vec::new()));
        let s = seen.clone();
        bus.subscribe(EventKind::ALL, move |e, deferred| {
            s.borrow_mut().push(e.kind());
            if e.kind() == EventKind::TaskFailed {
                deferred.publish(SchedulingEvent::new(
                    e.time,
                    EventPayload::TaskRequeued {
                        task_id: TaskId::from("t1"),
                        cause: RequeueCause::Failed,
                        attempt: 1,
                    },
                ));
            }
        });
        bus.publish(failed("t1", 3.0)).unwrap();
        assert_eq!(
            *seen.borrow(),
            vec![EventKind::TaskFailed, EventKind::TaskRequeued]
        );
        assert_eq!(bus.trace().len(), 2);
        assert_eq!(bus.trace()[1].seq, 1);
    }

    #[test]
    fn trace_lines_are_self_describing_json() {
        let mut bus = EventBus::new();
        bus.publish(finished("t1", 72.0)).unwrap();
        let text = trace_to_string(bus.trace());
        let value: serde_json::Value = serde_json::from_str(text.trim()).unwrap();
        assert_eq!(value["seq"], 0);
        assert_eq!(value["time"], 72.0);
        assert_eq!(value["kind"], "TaskFinished");
        assert_eq!(value["payload"]["task_id"], "t1");
    }
}
