//! Future-event list and virtual clock.
//!
//! Events fire in `(fire_at, sequence)` order. The sequence is a monotone
//! counter assigned at scheduling time, so events that share a timestamp are
//! delivered in insertion order.

use alloc::collections::BinaryHeap;
use core::cmp::Ordering;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::units::SimTime;

/// Coarse event class recorded in the event log.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    PacketArrival,
    PacketDeparture,
    GopBoundary,
    SessionRequest,
    FeedbackReport,
    MeasurementTick,
    SimEnd,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::PacketArrival => "PacketArrival",
            EventKind::PacketDeparture => "PacketDeparture",
            EventKind::GopBoundary => "GopBoundary",
            EventKind::SessionRequest => "SessionRequest",
            EventKind::FeedbackReport => "FeedbackReport",
            EventKind::MeasurementTick => "MeasurementTick",
            EventKind::SimEnd => "SimEnd",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("event scheduled at {fire_at} but the clock is already at {now}")]
    ScheduleInPast { fire_at: SimTime, now: SimTime },
    #[error("sequence counter exhausted")]
    SequenceExhausted,
}

#[derive(Debug)]
pub struct Event<P> {
    pub fire_at: SimTime,
    pub sequence: u64,
    pub payload: P,
}

impl<P> PartialEq for Event<P> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.sequence == other.sequence
    }
}

impl<P> Eq for Event<P> {}

impl<P> PartialOrd for Event<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Event<P> {
    // Reversed: BinaryHeap is a max-heap and we want the earliest event on top.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .fire_at
            .cmp(&self.fire_at)
            .then_with(|| other.sequence.cmp(&self.sequence))
    }
}

/// Single-threaded future-event list with a monotone clock.
#[derive(Debug)]
pub struct EventQueue<P> {
    heap: BinaryHeap<Event<P>>,
    now: SimTime,
    next_sequence: u64,
    scheduled: u64,
    processed: u64,
}

impl<P> Default for EventQueue<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> EventQueue<P> {
    pub fn new() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            now: SimTime::ZERO,
            next_sequence: 0,
            scheduled: 0,
            processed: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Total events ever accepted by [`schedule`](Self::schedule).
    pub fn scheduled(&self) -> u64 {
        self.scheduled
    }

    /// Total events handed to a handler so far.
    pub fn processed(&self) -> u64 {
        self.processed
    }

    /// Enqueues `payload` to fire at `fire_at` and returns its sequence number.
    pub fn schedule(&mut self, fire_at: SimTime, payload: P) -> Result<u64, EngineError> {
        if fire_at < self.now {
            return Err(EngineError::ScheduleInPast {
                fire_at,
                now: self.now,
            });
        }
        let sequence = self.next_sequence;
        self.next_sequence = sequence
            .checked_add(1)
            .ok_or(EngineError::SequenceExhausted)?;
        self.heap.push(Event {
            fire_at,
            sequence,
            payload,
        });
        self.scheduled += 1;
        Ok(sequence)
    }

    /// Schedules relative to the current clock.
    pub fn schedule_in(&mut self, delay: SimTime, payload: P) -> Result<u64, EngineError> {
        self.schedule(self.now + delay, payload)
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|e| e.fire_at)
    }

    /// Pops the next event if it fires no later than `end`, advancing the
    /// clock to its timestamp.
    pub fn pop_until(&mut self, end: SimTime) -> Option<Event<P>> {
        if self.heap.peek()?.fire_at > end {
            return None;
        }
        let ev = self.heap.pop()?;
        debug_assert!(ev.fire_at >= self.now);
        self.now = ev.fire_at;
        self.processed += 1;
        Some(ev)
    }

    /// Processes every event with `fire_at <= end`, then sets the clock to
    /// `end`. Returns the number of events processed by this call.
    pub fn run_until<F>(&mut self, end: SimTime, mut handler: F) -> u64
    where
        F: FnMut(&mut Self, Event<P>),
    {
        let before = self.processed;
        while let Some(ev) = self.pop_until(end) {
            handler(self, ev);
        }
        if end > self.now {
            self.now = end;
        }
        self.processed - before
    }
}
