//! Hooks through which a run exposes its internal activity. Every method has
//! a no-op default so sinks implement only what they record.

use core::fmt;

use crate::admission::AdmissionAudit;
use crate::engine::EventKind;
use crate::netsim::FlowId;
use crate::ratecontrol::QpChange;
use crate::units::SimTime;

/// What an event acted upon.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Entity {
    Link,
    Gateway,
    Flow(FlowId),
    Sim,
}

impl fmt::Display for Entity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Entity::Link => f.write_str("link"),
            Entity::Gateway => f.write_str("gateway"),
            Entity::Flow(id) => write!(f, "{id}"),
            Entity::Sim => f.write_str("sim"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PacketEvent {
    Send,
    Enq,
    Drop,
    Deq,
    Recv,
    Mark,
}

impl PacketEvent {
    pub fn as_str(self) -> &'static str {
        match self {
            PacketEvent::Send => "send",
            PacketEvent::Enq => "enq",
            PacketEvent::Drop => "drop",
            PacketEvent::Deq => "deq",
            PacketEvent::Recv => "recv",
            PacketEvent::Mark => "mark",
        }
    }
}

pub trait Observer {
    fn wants_events(&self) -> bool {
        false
    }

    fn wants_packets(&self) -> bool {
        false
    }

    fn event(&mut self, _time: SimTime, _sequence: u64, _kind: EventKind, _entity: Entity) {}

    fn packet(
        &mut self,
        _time: SimTime,
        _flow: FlowId,
        _seq: u64,
        _event: PacketEvent,
        _queue_occupancy: usize,
    ) {
    }

    fn admission(&mut self, _audit: &AdmissionAudit) {}

    fn qp_change(&mut self, _time: SimTime, _flow: FlowId, _change: &QpChange) {}
}

/// Discards everything.
#[derive(Clone, Copy, Debug, Default)]
pub struct NullObserver;

impl Observer for NullObserver {}
