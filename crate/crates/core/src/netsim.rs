//! Bottleneck data plane: droptail FIFO with threshold ECN marking, the link
//! service process, receiver feedback for video, and AIMD bulk-transfer
//! sources.

use alloc::collections::{BTreeMap, VecDeque};
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::traces::FrameType;
use crate::units::{BitRate, SimTime};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FlowId {
    Video(u32),
    Ftp(u32),
}

impl fmt::Display for FlowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FlowId::Video(i) => write!(f, "v{i}"),
            FlowId::Ftp(i) => write!(f, "f{i}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PacketKind {
    Video,
    Ftp,
    Ack,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Packet {
    pub flow: FlowId,
    pub seq: u64,
    /// Wire size including UDP/IP headers.
    pub size_bytes: u32,
    /// Frame index within the session (video only).
    pub frame_index: u32,
    pub frame_type: FrameType,
    /// Quantizer of the variant that produced the packet (video only).
    pub qp: u8,
    /// When the packet left the sender and reached the gateway.
    pub sent_at: SimTime,
    pub enqueue_time: SimTime,
    pub ecn_marked: bool,
    pub kind: PacketKind,
}

impl Packet {
    pub fn bits(&self) -> u64 {
        self.size_bytes as u64 * 8
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnqueueOutcome {
    Queued { marked: bool, occupancy: usize },
    Dropped { occupancy: usize },
}

/// Droptail FIFO. The packet in service counts towards occupancy until it
/// has fully left the link.
#[derive(Clone, Debug)]
pub struct DroptailQueue {
    capacity: usize,
    ecn_threshold: f64,
    packets: VecDeque<Packet>,
    drops: BTreeMap<FlowId, u64>,
    marks: u64,
    peak: usize,
}

impl DroptailQueue {
    pub fn new(capacity: usize, ecn_threshold: f64) -> Self {
        assert!(capacity > 0, "queue capacity must be positive");
        DroptailQueue {
            capacity,
            ecn_threshold,
            packets: VecDeque::with_capacity(capacity),
            drops: BTreeMap::new(),
            marks: 0,
            peak: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    pub fn peak_occupancy(&self) -> usize {
        self.peak
    }

    /// Audit counter of drops per flow, independent of flow metrics.
    pub fn drops(&self, flow: FlowId) -> u64 {
        self.drops.get(&flow).copied().unwrap_or(0)
    }

    pub fn total_marks(&self) -> u64 {
        self.marks
    }

    pub fn enqueue(&mut self, mut pkt: Packet, now: SimTime) -> (EnqueueOutcome, Packet) {
        if self.packets.len() >= self.capacity {
            *self.drops.entry(pkt.flow).or_default() += 1;
            return (
                EnqueueOutcome::Dropped {
                    occupancy: self.packets.len(),
                },
                pkt,
            );
        }
        let occupancy = self.packets.len() + 1;
        let marked = occupancy as f64 > self.ecn_threshold * self.capacity as f64;
        pkt.enqueue_time = now;
        if marked {
            pkt.ecn_marked = true;
            self.marks += 1;
        }
        self.packets.push_back(pkt);
        self.peak = self.peak.max(occupancy);
        (EnqueueOutcome::Queued { marked, occupancy }, pkt)
    }

    pub fn head(&self) -> Option<&Packet> {
        self.packets.front()
    }

    pub fn pop(&mut self) -> Option<Packet> {
        self.packets.pop_front()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Packet> {
        self.packets.iter()
    }
}

/// Store-and-forward link draining a droptail queue.
#[derive(Clone, Debug)]
pub struct BottleneckLink {
    pub capacity: BitRate,
    pub propagation_delay: SimTime,
    pub queue: DroptailQueue,
    busy_until: Option<SimTime>,
    delivered_bits: u64,
    busy_time: SimTime,
}

impl BottleneckLink {
    pub fn new(capacity: BitRate, propagation_delay: SimTime, queue: DroptailQueue) -> Self {
        BottleneckLink {
            capacity,
            propagation_delay,
            queue,
            busy_until: None,
            delivered_bits: 0,
            busy_time: SimTime::ZERO,
        }
    }

    pub fn is_busy(&self) -> bool {
        self.busy_until.is_some()
    }

    pub fn busy_until(&self) -> Option<SimTime> {
        self.busy_until
    }

    /// Bits that have finished serialization onto the link.
    pub fn transmitted_bits(&self) -> u64 {
        self.delivered_bits
    }

    /// Total time spent serializing completed packets.
    pub fn busy_time(&self) -> SimTime {
        self.busy_time
    }

    /// Offers `pkt` to the queue. Returns the outcome and, when the link was
    /// idle, the departure time of the packet that just entered service.
    pub fn enqueue(
        &mut self,
        pkt: Packet,
        now: SimTime,
    ) -> (EnqueueOutcome, Packet, Option<SimTime>) {
        let (outcome, pkt) = self.queue.enqueue(pkt, now);
        let departure = match outcome {
            EnqueueOutcome::Queued { .. } if self.busy_until.is_none() => self.serve(now),
            _ => None,
        };
        (outcome, pkt, departure)
    }

    /// Starts serializing the head packet if idle. Returns its departure time.
    pub fn serve(&mut self, now: SimTime) -> Option<SimTime> {
        if self.busy_until.is_some() {
            return None;
        }
        let head = self.queue.head()?;
        let done = now + self.capacity.serialization_time(head.size_bytes);
        self.busy_until = Some(done);
        Some(done)
    }

    /// Completes the current transmission. Returns the departed packet, the
    /// time it reaches the far end, and the next departure if the queue is
    /// still backlogged.
    pub fn complete_departure(&mut self, now: SimTime) -> (Packet, SimTime, Option<SimTime>) {
        let done = self.busy_until.take().expect("departure without service");
        debug_assert_eq!(done, now);
        let pkt = self.queue.pop().expect("departure from empty queue");
        self.delivered_bits += pkt.bits();
        self.busy_time += self.capacity.serialization_time(pkt.size_bytes);
        let next = self.serve(now);
        (pkt, now + self.propagation_delay, next)
    }
}

/// Receiver-to-sender congestion report for one feedback interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct FeedbackReport {
    pub ecn_seen: bool,
    pub loss_events: u32,
    pub rtt_sample: SimTime,
}

/// Per-flow receiver state that accumulates one feedback interval.
#[derive(Clone, Debug, Default)]
pub struct FeedbackCollector {
    ecn_seen: bool,
    loss_events: u32,
    next_expected: u64,
    last_delay: Option<SimTime>,
}

impl FeedbackCollector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a delivered data packet. Sequence gaps count as losses since
    /// the path never reorders.
    pub fn on_packet(&mut self, seq: u64, ecn_marked: bool, one_way_delay: SimTime) {
        if seq > self.next_expected {
            self.loss_events += (seq - self.next_expected) as u32;
        }
        self.next_expected = self.next_expected.max(seq + 1);
        self.ecn_seen |= ecn_marked;
        self.last_delay = Some(one_way_delay);
    }

    /// Closes the interval and starts a fresh one.
    pub fn take_report(&mut self, reverse_delay: SimTime) -> FeedbackReport {
        let rtt = self.last_delay.unwrap_or(SimTime::ZERO) + reverse_delay;
        let r = FeedbackReport {
            ecn_seen: self.ecn_seen,
            loss_events: self.loss_events,
            rtt_sample: rtt,
        };
        self.ecn_seen = false;
        self.loss_events = 0;
        r
    }

    /// Current round-trip estimate used to pace reports.
    pub fn rtt_estimate(&self, reverse_delay: SimTime) -> SimTime {
        self.last_delay.unwrap_or(SimTime::ZERO) + reverse_delay
    }
}

/// Report spacing: one RTT, but never faster than `min_interval`.
pub fn feedback_interval(rtt: SimTime, min_interval: SimTime) -> SimTime {
    rtt.max(min_interval)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FtpPhase {
    SlowStart,
    CongestionAvoidance,
}

/// Window-based Reno-like bulk sender with per-packet acknowledgements.
///
/// `max_window` plays the role of the receiver's advertised window: `cwnd`
/// never grows past it.
#[derive(Clone, Debug)]
pub struct FtpSource {
    pub flow: FlowId,
    cwnd: f64,
    ssthresh: f64,
    in_flight: u32,
    max_window: u32,
    phase: FtpPhase,
    next_seq: u64,
    /// Losses of packets sent before this sequence belong to a window that
    /// was already halved.
    recover_seq: u64,
    srtt: Option<SimTime>,
}

impl FtpSource {
    pub fn new(flow: FlowId, max_window: u32) -> Self {
        let max_window = max_window.max(1);
        FtpSource {
            flow,
            cwnd: 1.0,
            ssthresh: max_window as f64,
            in_flight: 0,
            max_window,
            phase: FtpPhase::SlowStart,
            next_seq: 0,
            recover_seq: 0,
            srtt: None,
        }
    }

    pub fn with_window(flow: FlowId, cwnd: f64, ssthresh: f64, phase: FtpPhase) -> Self {
        FtpSource {
            flow,
            cwnd: cwnd.max(1.0),
            ssthresh,
            in_flight: 0,
            max_window: u32::MAX,
            phase,
            next_seq: 0,
            recover_seq: 0,
            srtt: None,
        }
    }

    pub fn cwnd(&self) -> f64 {
        self.cwnd
    }

    pub fn ssthresh(&self) -> f64 {
        self.ssthresh
    }

    pub fn in_flight(&self) -> u32 {
        self.in_flight
    }

    pub fn phase(&self) -> FtpPhase {
        self.phase
    }

    pub fn rtt(&self) -> Option<SimTime> {
        self.srtt
    }

    fn window(&self) -> u32 {
        (libm::floor(self.cwnd) as u32).clamp(1, self.max_window)
    }

    /// Sequence number of the next packet if the window has room.
    pub fn try_send(&mut self) -> Option<u64> {
        if self.in_flight >= self.window() {
            return None;
        }
        self.in_flight += 1;
        let seq = self.next_seq;
        self.next_seq += 1;
        Some(seq)
    }

    /// Acknowledgement of one delivered packet.
    pub fn on_ack(&mut self, rtt_sample: Option<SimTime>) {
        self.in_flight = self.in_flight.saturating_sub(1);
        if let Some(r) = rtt_sample {
            self.srtt = Some(r);
        }
        match self.phase {
            FtpPhase::SlowStart => {
                self.cwnd += 1.0;
                if self.cwnd >= self.ssthresh {
                    self.phase = FtpPhase::CongestionAvoidance;
                }
            }
            FtpPhase::CongestionAvoidance => self.cwnd += 1.0 / self.cwnd,
        }
        self.cwnd = self.cwnd.min(self.max_window as f64);
    }

    /// Multiplicative decrease.
    pub fn on_loss(&mut self) {
        self.ssthresh = (self.cwnd / 2.0).max(2.0);
        self.cwnd = self.ssthresh;
        self.phase = FtpPhase::CongestionAvoidance;
    }

    /// Acknowledgement of `seq` that echoes a congestion mark. Reacts like a
    /// loss, at most once per window, without growing the window. Returns
    /// whether the window was reduced.
    pub fn on_ecn_echo(&mut self, seq: u64, rtt_sample: Option<SimTime>) -> bool {
        if seq < self.recover_seq {
            self.on_ack(rtt_sample);
            return false;
        }
        self.in_flight = self.in_flight.saturating_sub(1);
        if let Some(r) = rtt_sample {
            self.srtt = Some(r);
        }
        self.on_loss();
        self.recover_seq = self.next_seq;
        true
    }

    /// Drop notification for packet `seq`. Halves the window at most once
    /// per window of data. Returns whether the window was reduced.
    pub fn on_drop_notice(&mut self, seq: u64) -> bool {
        self.in_flight = self.in_flight.saturating_sub(1);
        if seq < self.recover_seq {
            return false;
        }
        self.on_loss();
        self.recover_seq = self.next_seq;
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn pkt(flow: FlowId, seq: u64, size: u32) -> Packet {
        Packet {
            flow,
            seq,
            size_bytes: size,
            frame_index: 0,
            frame_type: FrameType::P,
            qp: 2,
            sent_at: SimTime::ZERO,
            enqueue_time: SimTime::ZERO,
            ecn_marked: false,
            kind: PacketKind::Video,
        }
    }

    #[test]
    fn empty_queue_accepts_unmarked() {
        let mut q = DroptailQueue::new(300, 0.8);
        let (out, p) = q.enqueue(pkt(FlowId::Video(0), 0, 1052), SimTime::ZERO);
        assert_eq!(
            out,
            EnqueueOutcome::Queued {
                marked: false,
                occupancy: 1
            }
        );
        assert!(!p.ecn_marked);
    }

    #[test]
    fn full_queue_drops() {
        let mut q = DroptailQueue::new(300, 0.8);
        for i in 0..300 {
            q.enqueue(pkt(FlowId::Ftp(0), i, 1052), SimTime::ZERO);
        }
        let (out, _) = q.enqueue(pkt(FlowId::Video(1), 0, 1052), SimTime::ZERO);
        assert_eq!(out, EnqueueOutcome::Dropped { occupancy: 300 });
        assert_eq!(q.drops(FlowId::Video(1)), 1);
        assert_eq!(q.len(), 300);
    }

    #[test]
    fn marks_above_threshold() {
        // 0.8 * 100 = 80: the 81st packet is the first marked one
        let mut q = DroptailQueue::new(100, 0.8);
        let mut first_marked = None;
        for i in 0..100 {
            let (out, _) = q.enqueue(pkt(FlowId::Ftp(0), i, 100), SimTime::ZERO);
            if let EnqueueOutcome::Queued {
                marked: true,
                occupancy,
            } = out
            {
                first_marked.get_or_insert(occupancy);
            }
        }
        assert_eq!(first_marked, Some(81));
        assert_eq!(q.total_marks(), 20);
    }

    #[test]
    fn back_to_back_service() {
        let cap = BitRate::from_mbps(7);
        let mut link =
            BottleneckLink::new(cap, SimTime::from_millis(1), DroptailQueue::new(100, 0.8));
        let t0 = SimTime::from_secs(1);
        let (_, _, d1) = link.enqueue(pkt(FlowId::Video(0), 0, 1052), t0);
        let (_, _, d2) = link.enqueue(pkt(FlowId::Video(0), 1, 1052), t0);
        let d1 = d1.unwrap();
        assert_eq!(d2, None, "second packet waits behind the first");
        assert_eq!(d1 - t0, cap.serialization_time(1052));
        let (p, arrive, next) = link.complete_departure(d1);
        assert_eq!(p.seq, 0);
        assert_eq!(arrive, d1 + SimTime::from_millis(1));
        let next = next.unwrap();
        assert_eq!(next - d1, cap.serialization_time(1052));
        let (p2, _, none) = link.complete_departure(next);
        assert_eq!(p2.seq, 1);
        assert_eq!(none, None);
        assert_eq!(link.serve(next), None, "idle link schedules nothing");
    }

    #[test]
    fn feedback_intervals() {
        let mut c = FeedbackCollector::new();
        c.on_packet(0, false, SimTime::from_millis(5));
        c.on_packet(1, false, SimTime::from_millis(5));
        let r = c.take_report(SimTime::from_millis(1));
        assert!(!r.ecn_seen);
        assert_eq!(r.loss_events, 0);
        assert_eq!(r.rtt_sample, SimTime::from_millis(6));
        c.on_packet(2, true, SimTime::from_millis(5));
        c.on_packet(5, false, SimTime::from_millis(5));
        let r = c.take_report(SimTime::from_millis(1));
        assert!(r.ecn_seen);
        assert_eq!(r.loss_events, 2);
        assert_eq!(
            feedback_interval(SimTime::from_millis(6), SimTime::from_millis(100)),
            SimTime::from_millis(100)
        );
        assert_eq!(
            feedback_interval(SimTime::from_millis(130), SimTime::from_millis(100)),
            SimTime::from_millis(130)
        );
    }

    #[test]
    fn slow_start_doubles_per_window() {
        let mut s = FtpSource::with_window(FlowId::Ftp(0), 4.0, 64.0, FtpPhase::SlowStart);
        for _ in 0..4 {
            s.on_ack(None);
        }
        assert_eq!(s.cwnd(), 8.0);
    }

    #[test]
    fn loss_halves_window() {
        let mut s =
            FtpSource::with_window(FlowId::Ftp(0), 10.0, 64.0, FtpPhase::CongestionAvoidance);
        s.on_loss();
        assert_eq!(s.cwnd(), 5.0);
        assert_eq!(s.phase(), FtpPhase::CongestionAvoidance);
        let mut tiny = FtpSource::with_window(FlowId::Ftp(0), 1.0, 64.0, FtpPhase::SlowStart);
        tiny.on_loss();
        assert_eq!(tiny.cwnd(), 2.0);
    }

    #[test]
    fn one_halving_per_window_of_losses() {
        let mut s = FtpSource::new(FlowId::Ftp(0), 64);
        for _ in 0..20 {
            s.on_ack(None);
        }
        let mut sent = alloc::vec::Vec::new();
        while let Some(seq) = s.try_send() {
            sent.push(seq);
        }
        let before = s.cwnd();
        assert!(s.on_drop_notice(sent[0]));
        assert!(!s.on_drop_notice(sent[1]));
        assert_eq!(s.cwnd(), before / 2.0);
    }

    #[test]
    fn window_limits_in_flight() {
        let mut s = FtpSource::new(FlowId::Ftp(0), 4);
        assert!(s.try_send().is_some());
        assert!(s.try_send().is_none());
        s.on_ack(None);
        for _ in 0..10 {
            s.on_ack(None);
        }
        assert!(s.cwnd() <= 4.0);
        let mut n = 0;
        while s.try_send().is_some() {
            n += 1;
        }
        assert_eq!(n, 4);
        assert!(s.in_flight() as f64 <= s.cwnd());
    }
}
