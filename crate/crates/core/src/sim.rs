//! Wires sources, the bottleneck, the gateway and the receivers into one
//! event-driven run.
//!
//! Topology: every source attaches to the gateway with no access delay, so a
//! packet's send time is also its arrival time at the bottleneck queue. The
//! bottleneck serializes at `C_l` and adds the forward propagation delay; the
//! reverse path (acknowledgements, receiver reports, drop notices) is
//! uncongested and adds `reverse_delay`.

use alloc::string::ToString;
use alloc::vec::Vec;

use rand::Rng;
use thiserror::Error;

use crate::admission::{AdmissionAudit, AdmissionError, AdmissionState, Decision, RateMeter};
use crate::config::{Architecture, ArrivalPolicy, ScenarioConfig};
use crate::engine::{EventKind, EventQueue};
use crate::metrics::{
    mos, session_decoded, utilization, ConservationAudit, FlowKind, FlowMetrics, FlowSummary,
    FrameDelivery, RunSummary,
};
use crate::netsim::{
    feedback_interval, BottleneckLink, DroptailQueue, EnqueueOutcome, FeedbackCollector,
    FeedbackReport, FlowId, FtpSource, Packet, PacketKind,
};
use crate::observer::{Entity, Observer, PacketEvent};
use crate::ratecontrol::{ControllerMode, ControllerState, LeakyBucket};
use crate::rng::{stream, substream, SimRng};
use crate::traces::{generate_ladder, packetize, FrameType, TraceError, VariantLadder, QP_MIN};
use crate::units::{BitRate, SimTime};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("trace generation failed: {0}")]
    Trace(#[from] TraceError),
    #[error("admission setup failed: {0}")]
    Admission(#[from] AdmissionError),
    #[error("ladder does not match the scenario content: {0}")]
    LadderMismatch(&'static str),
}

/// Everything a run produces besides what observers saw.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub audits: Vec<AdmissionAudit>,
    /// Processed events per kind, in [`EventKind`] declaration order.
    pub event_counts: [u64; 7],
}

#[derive(Clone, Copy, Debug)]
enum Node {
    Gateway,
    Sink,
    Source,
}

#[derive(Clone, Copy, Debug)]
enum Start {
    Video { idx: u32 },
    Request,
    Ftp(u32),
}

#[derive(Clone, Copy, Debug)]
enum Feedback {
    Emit(u32),
    Deliver(u32, FeedbackReport),
    DropNotice(u32, u64),
}

#[derive(Clone, Copy, Debug)]
enum Payload {
    Arrival(Node, Packet),
    Departure,
    Gop(u32),
    Start(Start),
    Feedback(Feedback),
    Tick,
    End,
}

impl Payload {
    fn kind(&self) -> EventKind {
        match self {
            Payload::Arrival(..) => EventKind::PacketArrival,
            Payload::Departure => EventKind::PacketDeparture,
            Payload::Gop(_) => EventKind::GopBoundary,
            Payload::Start(_) => EventKind::SessionRequest,
            Payload::Feedback(_) => EventKind::FeedbackReport,
            Payload::Tick => EventKind::MeasurementTick,
            Payload::End => EventKind::SimEnd,
        }
    }

    fn entity(&self) -> Entity {
        match self {
            Payload::Arrival(_, p) => Entity::Flow(p.flow),
            Payload::Departure => Entity::Link,
            Payload::Gop(i) | Payload::Start(Start::Video { idx: i }) => {
                Entity::Flow(FlowId::Video(*i))
            }
            Payload::Start(Start::Request) | Payload::Tick => Entity::Gateway,
            Payload::Start(Start::Ftp(i)) | Payload::Feedback(Feedback::DropNotice(i, _)) => {
                Entity::Flow(FlowId::Ftp(*i))
            }
            Payload::Feedback(Feedback::Emit(i) | Feedback::Deliver(i, _)) => {
                Entity::Flow(FlowId::Video(*i))
            }
            Payload::End => Entity::Sim,
        }
    }
}

fn kind_index(kind: EventKind) -> usize {
    match kind {
        EventKind::PacketArrival => 0,
        EventKind::PacketDeparture => 1,
        EventKind::GopBoundary => 2,
        EventKind::SessionRequest => 3,
        EventKind::FeedbackReport => 4,
        EventKind::MeasurementTick => 5,
        EventKind::SimEnd => 6,
    }
}

struct VideoFlow {
    active: bool,
    started_at: SimTime,
    controller: ControllerState,
    bucket: Option<LeakyBucket>,
    next_seq: u64,
    gops: u64,
    collector: FeedbackCollector,
    meter: Option<RateMeter>,
    metrics: FlowMetrics,
    in_flight: u64,
}

struct FtpFlow {
    source: FtpSource,
    metrics: FlowMetrics,
    in_flight: u64,
}

type Queue = EventQueue<Payload>;

struct World<'a> {
    cfg: &'a ScenarioConfig,
    ladder: &'a VariantLadder,
    obs: &'a mut dyn Observer,
    log_events: bool,
    log_packets: bool,
    link: BottleneckLink,
    video: Vec<VideoFlow>,
    ftp: Vec<FtpFlow>,
    admission: Option<AdmissionState>,
    audits: Vec<AdmissionAudit>,
    request_rng: SimRng,
    request_second: u64,
    sessions_requested: u32,
    sessions_admitted: u32,
    conservation: ConservationAudit,
    counts: [u64; 7],
}

fn schedule(q: &mut Queue, at: SimTime, payload: Payload) {
    q.schedule(at, payload)
        .expect("event scheduled into the past");
}

fn uniform_time(rng: &mut SimRng, start: SimTime, end: SimTime) -> SimTime {
    if end <= start {
        return start;
    }
    SimTime::from_micros(rng.random_range(start.as_micros()..end.as_micros()))
}

/// Generates the ladder for `seed` and runs the scenario.
pub fn run_scenario(
    cfg: &ScenarioConfig,
    seed: u64,
    obs: &mut dyn Observer,
) -> Result<RunOutput, SimError> {
    let ladder = generate_ladder(&cfg.content, &mut substream(seed, stream::TRACES))?;
    run_with_ladder(cfg, &ladder, seed, obs)
}

/// Runs the scenario over a given ladder (synthetic or imported).
pub fn run_with_ladder(
    cfg: &ScenarioConfig,
    ladder: &VariantLadder,
    seed: u64,
    obs: &mut dyn Observer,
) -> Result<RunOutput, SimError> {
    if ladder.content.frame_rate != cfg.content.frame_rate {
        return Err(SimError::LadderMismatch("frame rate"));
    }
    if ladder.content.gop_length != cfg.content.gop_length {
        return Err(SimError::LadderMismatch("GoP length"));
    }
    if !ladder.variants()[0]
        .len()
        .is_multiple_of(ladder.content.gop_length as usize)
    {
        return Err(SimError::LadderMismatch(
            "trace is not a whole number of GoPs",
        ));
    }

    let admission = match cfg.architecture {
        Architecture::CrossLayer => {
            let mut st = AdmissionState::new(
                cfg.link.capacity,
                cfg.admission.beta_mode,
                cfg.admission.epsilon_mode,
            )?;
            st.default_activity = cfg.admission.activity_probability;
            Some(st)
        }
        _ => None,
    };
    let mode = match cfg.architecture {
        Architecture::NonAdaptive => ControllerMode::NonAdaptive,
        _ => ControllerMode::Adaptive,
    };

    let video = (0..cfg.sources.video)
        .map(|i| VideoFlow {
            active: false,
            started_at: SimTime::ZERO,
            controller: ControllerState::new(mode, QP_MIN, cfg.controller.params),
            bucket: None,
            next_seq: 0,
            gops: 0,
            collector: FeedbackCollector::new(),
            meter: None,
            metrics: FlowMetrics::new(FlowId::Video(i), FlowKind::Video),
            in_flight: 0,
        })
        .collect();
    let ftp = (0..cfg.sources.ftp)
        .map(|i| FtpFlow {
            source: FtpSource::new(FlowId::Ftp(i), cfg.sources.ftp_max_window),
            metrics: FlowMetrics::new(FlowId::Ftp(i), FlowKind::Ftp),
            in_flight: 0,
        })
        .collect();

    let link = BottleneckLink::new(
        cfg.link.capacity,
        cfg.link.propagation_delay,
        DroptailQueue::new(cfg.link.queue_packets, cfg.link.ecn_threshold),
    );

    let log_events = obs.wants_events();
    let log_packets = obs.wants_packets();
    let mut world = World {
        cfg,
        ladder,
        obs,
        log_events,
        log_packets,
        link,
        video,
        ftp,
        admission,
        audits: Vec::new(),
        request_rng: substream(seed, stream::REQUESTS),
        request_second: 0,
        sessions_requested: 0,
        sessions_admitted: 0,
        conservation: ConservationAudit::default(),
        counts: [0; 7],
    };

    let mut q: Queue = EventQueue::new();
    let end = cfg.duration;
    schedule(&mut q, end, Payload::End);
    match cfg.arrivals {
        ArrivalPolicy::UniformWindow { start, end } => {
            for i in 0..cfg.sources.video {
                let mut rng = substream(seed, stream::VIDEO_BASE + i as u64);
                let at = uniform_time(&mut rng, start, end);
                schedule(&mut q, at, Payload::Start(Start::Video { idx: i }));
            }
        }
        ArrivalPolicy::PerSecondRandom {
            max_sessions,
            start,
        } => {
            if max_sessions > 0 {
                world.schedule_request(&mut q, start);
            }
        }
    }
    let (fs, fe) = cfg.sources.ftp_start_window;
    for i in 0..cfg.sources.ftp {
        let mut rng = substream(seed, stream::FTP_BASE + i as u64);
        let at = uniform_time(&mut rng, fs, fe);
        schedule(&mut q, at, Payload::Start(Start::Ftp(i)));
    }
    schedule(
        &mut q,
        cfg.admission.measurement_interval.min(end),
        Payload::Tick,
    );

    let processed = q.run_until(end, |q, ev| {
        world.handle(q, ev.fire_at, ev.sequence, ev.payload)
    });
    world.check_conservation();

    let summary = world.summarize(seed, processed);
    Ok(RunOutput {
        summary,
        audits: world.audits,
        event_counts: world.counts,
    })
}

impl World<'_> {
    fn handle(&mut self, q: &mut Queue, now: SimTime, sequence: u64, payload: Payload) {
        let kind = payload.kind();
        self.counts[kind_index(kind)] += 1;
        if self.log_events {
            self.obs.event(now, sequence, kind, payload.entity());
        }
        match payload {
            Payload::Arrival(Node::Gateway, pkt) => self.at_gateway(q, now, pkt),
            Payload::Arrival(Node::Sink, pkt) => self.at_sink(q, now, pkt),
            Payload::Arrival(Node::Source, pkt) => self.ack_at_source(q, now, pkt),
            Payload::Departure => self.departure(q, now),
            Payload::Gop(i) => self.gop_boundary(q, now, i),
            Payload::Start(Start::Video { idx }) => self.start_video(q, now, idx, QP_MIN),
            Payload::Start(Start::Request) => self.session_request(q, now),
            Payload::Start(Start::Ftp(i)) => self.pump_ftp(q, now, i),
            Payload::Feedback(Feedback::Emit(i)) => self.emit_report(q, now, i),
            Payload::Feedback(Feedback::Deliver(i, report)) => self.deliver_report(now, i, report),
            Payload::Feedback(Feedback::DropNotice(i, seq)) => {
                self.ftp[i as usize].source.on_drop_notice(seq);
                self.pump_ftp(q, now, i);
            }
            Payload::Tick => self.tick(q, now),
            Payload::End => {}
        }
    }

    fn packet_log(&mut self, now: SimTime, pkt: &Packet, event: PacketEvent) {
        if self.log_packets {
            let occ = self.link.queue.len();
            self.obs.packet(now, pkt.flow, pkt.seq, event, occ);
        }
    }

    fn metrics_mut(&mut self, flow: FlowId) -> &mut FlowMetrics {
        match flow {
            FlowId::Video(i) => &mut self.video[i as usize].metrics,
            FlowId::Ftp(i) => &mut self.ftp[i as usize].metrics,
        }
    }

    fn in_flight_mut(&mut self, flow: FlowId) -> &mut u64 {
        match flow {
            FlowId::Video(i) => &mut self.video[i as usize].in_flight,
            FlowId::Ftp(i) => &mut self.ftp[i as usize].in_flight,
        }
    }

    fn frame_of(&mut self, pkt: &Packet) -> &mut FrameDelivery {
        let FlowId::Video(i) = pkt.flow else {
            unreachable!("frame lookup for a non-video packet")
        };
        let gop_len = self.ladder.content.gop_length;
        let gop = (pkt.frame_index / gop_len) as usize;
        let pos = (pkt.frame_index % gop_len) as usize;
        self.video[i as usize].metrics.frame_mut(gop, pos)
    }

    fn schedule_request(&mut self, q: &mut Queue, first: SimTime) {
        let second = first + SimTime::from_secs(self.request_second);
        let at = second + SimTime::from_micros(self.request_rng.random_range(0..1_000_000));
        self.request_second += 1;
        if at < self.cfg.duration {
            schedule(q, at, Payload::Start(Start::Request));
        }
    }

    fn start_video(&mut self, q: &mut Queue, now: SimTime, idx: u32, qp: u8) {
        let mode = match self.cfg.architecture {
            Architecture::NonAdaptive => ControllerMode::NonAdaptive,
            _ => ControllerMode::Adaptive,
        };
        let window = self.cfg.admission.measurement_window;
        let cross_layer = self.admission.is_some();
        let v = &mut self.video[idx as usize];
        v.active = true;
        v.started_at = now;
        v.controller = ControllerState::new(mode, qp, self.cfg.controller.params);
        v.metrics.started_at = Some(now);
        if cross_layer {
            v.meter = Some(RateMeter::new(window, now));
        }
        schedule(q, now, Payload::Gop(idx));
        if mode == ControllerMode::Adaptive {
            let first = now + self.cfg.controller.feedback_min_interval;
            if first <= self.cfg.duration {
                schedule(q, first, Payload::Feedback(Feedback::Emit(idx)));
            }
        }
    }

    fn session_request(&mut self, q: &mut Queue, now: SimTime) {
        let ArrivalPolicy::PerSecondRandom {
            max_sessions,
            start,
        } = self.cfg.arrivals
        else {
            unreachable!("session request without per-second arrivals")
        };
        self.sessions_requested += 1;
        self.refresh_measurements(now);
        let slot = self.sessions_admitted;
        let audit = self
            .admission
            .as_mut()
            .expect("cross-layer run without admission state")
            .admit(slot, now, self.ladder)
            .expect("admission evaluation");
        self.obs.admission(&audit);
        let accepted = match audit.decision {
            Decision::Accepted { qp, .. } => Some(qp),
            Decision::Rejected => None,
        };
        self.audits.push(audit);
        if let Some(qp) = accepted {
            self.sessions_admitted += 1;
            self.start_video(q, now, slot, qp);
        }
        if self.sessions_admitted < max_sessions {
            self.schedule_request(q, start);
        }
    }

    /// Pushes each admitted session's sliding-window rate into the gateway
    /// view. Sessions younger than one window keep their admitted rate.
    fn refresh_measurements(&mut self, now: SimTime) {
        let Some(adm) = self.admission.as_mut() else {
            return;
        };
        let window = self.cfg.admission.measurement_window;
        for (i, v) in self.video.iter_mut().enumerate() {
            if !v.active || now.saturating_sub(v.started_at) < window {
                continue;
            }
            if let Some(rate) = v.meter.as_mut().and_then(|m| m.rate(now)) {
                adm.update_measurement(i as u32, rate)
                    .expect("measured session is admitted");
            }
        }
    }

    fn gop_boundary(&mut self, q: &mut Queue, now: SimTime, idx: u32) {
        let content = &self.ladder.content;
        let gop_len = content.gop_length as u64;
        let fps = content.frame_rate as u64;
        let packet_bytes = self.cfg.sources.packet_bytes;
        let header_bytes = self.cfg.sources.header_bytes;
        let drain_factor = self.cfg.controller.bucket_drain_factor;
        let depth_gops = self.cfg.controller.bucket_depth_gops;
        let ladder = self.ladder;

        let v = &mut self.video[idx as usize];
        if let Some(change) = v.controller.on_gop_boundary() {
            self.obs.qp_change(now, FlowId::Video(idx), &change);
        }
        let qp = v.controller.current_qp();
        let drain = BitRate::from_bps_f64(ladder.mean_rate(qp).as_f64() * drain_factor)
            .max(BitRate::from_bps(1));
        let depth = ladder.mean_gop_bits(qp) * depth_gops;
        match v.bucket.as_mut() {
            Some(b) => b.reconfigure(drain, depth, now),
            None => v.bucket = Some(LeakyBucket::new(drain, depth)),
        }
        let bucket = v.bucket.as_mut().expect("bucket configured above");

        let g = v.gops;
        v.gops += 1;
        let gop = v.metrics.begin_gop(qp);
        let trace = ladder.variant(qp);
        let first_frame = g * gop_len;
        let started = v.started_at;
        let frame_time = |k: u64| started + SimTime::from_micros(k * 1_000_000 / fps);
        let mut releases = Vec::new();
        for j in 0..gop_len {
            let k = first_frame + j;
            let frame = trace.frames[(k % trace.len() as u64) as usize];
            let offered = frame_time(k);
            let sizes = packetize(frame.size_bytes, packet_bytes, header_bytes)
                .expect("packet size validated in config");
            v.metrics.gops[gop].push(FrameDelivery::new(frame.frame_type, qp, sizes.len() as u16));
            for size in sizes {
                let release = bucket.shape(offered, size);
                let pkt = Packet {
                    flow: FlowId::Video(idx),
                    seq: v.next_seq,
                    size_bytes: size,
                    frame_index: k as u32,
                    frame_type: frame.frame_type,
                    qp,
                    sent_at: release,
                    enqueue_time: release,
                    ecn_marked: false,
                    kind: PacketKind::Video,
                };
                v.next_seq += 1;
                releases.push(pkt);
            }
        }
        let next = frame_time(first_frame + gop_len);
        for pkt in releases {
            if pkt.sent_at <= self.cfg.duration {
                schedule(q, pkt.sent_at, Payload::Arrival(Node::Gateway, pkt));
            }
        }
        if next <= self.cfg.duration {
            schedule(q, next, Payload::Gop(idx));
        }
    }

    fn at_gateway(&mut self, q: &mut Queue, now: SimTime, pkt: Packet) {
        let bits = pkt.bits();
        self.metrics_mut(pkt.flow).on_sent(now, bits);
        if let FlowId::Video(i) = pkt.flow {
            if let Some(m) = self.video[i as usize].meter.as_mut() {
                m.record(now, bits);
            }
        }
        self.packet_log(now, &pkt, PacketEvent::Send);
        let (outcome, pkt, departure) = self.link.enqueue(pkt, now);
        match outcome {
            EnqueueOutcome::Queued { marked, .. } => {
                self.packet_log(now, &pkt, PacketEvent::Enq);
                if marked {
                    self.packet_log(now, &pkt, PacketEvent::Mark);
                }
                if let Some(at) = departure {
                    schedule(q, at, Payload::Departure);
                }
            }
            EnqueueOutcome::Dropped { .. } => {
                self.packet_log(now, &pkt, PacketEvent::Drop);
                self.metrics_mut(pkt.flow).on_dropped();
                match pkt.flow {
                    FlowId::Video(_) => self.frame_of(&pkt).dropped += 1,
                    FlowId::Ftp(i) => {
                        let base = self.cfg.link.propagation_delay + self.cfg.link.reverse_delay;
                        let rtt = self.ftp[i as usize].source.rtt().unwrap_or(base);
                        schedule(
                            q,
                            now + rtt,
                            Payload::Feedback(Feedback::DropNotice(i, pkt.seq)),
                        );
                    }
                }
            }
        }
    }

    fn departure(&mut self, q: &mut Queue, now: SimTime) {
        let (pkt, arrives, next) = self.link.complete_departure(now);
        self.packet_log(now, &pkt, PacketEvent::Deq);
        *self.in_flight_mut(pkt.flow) += 1;
        schedule(q, arrives, Payload::Arrival(Node::Sink, pkt));
        if let Some(at) = next {
            schedule(q, at, Payload::Departure);
        }
    }

    fn at_sink(&mut self, q: &mut Queue, now: SimTime, pkt: Packet) {
        *self.in_flight_mut(pkt.flow) -= 1;
        self.packet_log(now, &pkt, PacketEvent::Recv);
        let delay = now - pkt.sent_at;
        let bits = pkt.bits();
        match pkt.flow {
            FlowId::Video(i) => {
                let rate = self.ladder.mean_rate(pkt.qp);
                self.frame_of(&pkt).delivered += 1;
                let v = &mut self.video[i as usize];
                v.metrics.on_delivered(bits, delay, Some(rate));
                v.collector.on_packet(pkt.seq, pkt.ecn_marked, delay);
            }
            FlowId::Ftp(i) => {
                self.ftp[i as usize].metrics.on_delivered(bits, delay, None);
                let ack = Packet {
                    kind: PacketKind::Ack,
                    ..pkt
                };
                schedule(
                    q,
                    now + self.cfg.link.reverse_delay,
                    Payload::Arrival(Node::Source, ack),
                );
            }
        }
    }

    fn ack_at_source(&mut self, q: &mut Queue, now: SimTime, ack: Packet) {
        let FlowId::Ftp(i) = ack.flow else {
            unreachable!("acknowledgement for a video flow")
        };
        let rtt = Some(now - ack.sent_at);
        let src = &mut self.ftp[i as usize].source;
        if ack.ecn_marked && self.cfg.sources.ftp_ecn {
            src.on_ecn_echo(ack.seq, rtt);
        } else {
            src.on_ack(rtt);
        }
        self.pump_ftp(q, now, i);
    }

    fn pump_ftp(&mut self, q: &mut Queue, now: SimTime, i: u32) {
        let size = self.cfg.sources.packet_bytes;
        let f = &mut self.ftp[i as usize];
        if f.metrics.started_at.is_none() {
            f.metrics.started_at = Some(now);
        }
        while let Some(seq) = f.source.try_send() {
            let pkt = Packet {
                flow: FlowId::Ftp(i),
                seq,
                size_bytes: size,
                frame_index: 0,
                frame_type: FrameType::P,
                qp: 0,
                sent_at: now,
                enqueue_time: now,
                ecn_marked: false,
                kind: PacketKind::Ftp,
            };
            schedule(q, now, Payload::Arrival(Node::Gateway, pkt));
        }
    }

    fn emit_report(&mut self, q: &mut Queue, now: SimTime, idx: u32) {
        let rev = self.cfg.link.reverse_delay;
        let v = &mut self.video[idx as usize];
        let report = v.collector.take_report(rev);
        let interval = feedback_interval(
            v.collector.rtt_estimate(rev),
            self.cfg.controller.feedback_min_interval,
        );
        schedule(
            q,
            now + rev,
            Payload::Feedback(Feedback::Deliver(idx, report)),
        );
        let next = now + interval;
        if next <= self.cfg.duration {
            schedule(q, next, Payload::Feedback(Feedback::Emit(idx)));
        }
    }

    fn deliver_report(&mut self, now: SimTime, idx: u32, report: FeedbackReport) {
        if let Some(change) = self.video[idx as usize].controller.on_feedback(&report) {
            self.obs.qp_change(now, FlowId::Video(idx), &change);
        }
    }

    fn tick(&mut self, q: &mut Queue, now: SimTime) {
        self.refresh_measurements(now);
        self.check_conservation();
        let next = now + self.cfg.admission.measurement_interval;
        if next <= self.cfg.duration {
            schedule(q, next, Payload::Tick);
        }
    }

    /// Samples the per-flow packet balance and the queue bound.
    fn check_conservation(&mut self) {
        let audit = &mut self.conservation;
        audit.samples += 1;
        let queue = &self.link.queue;
        audit.peak_queue = audit.peak_queue.max(queue.len());
        if queue.len() > queue.capacity() {
            audit.queue_violations += 1;
        }
        let mut queued_video = alloc::vec![0u64; self.video.len()];
        let mut queued_ftp = alloc::vec![0u64; self.ftp.len()];
        for p in queue.iter() {
            match p.flow {
                FlowId::Video(i) => queued_video[i as usize] += 1,
                FlowId::Ftp(i) => queued_ftp[i as usize] += 1,
            }
        }
        let balanced = |m: &FlowMetrics, queued: u64, in_flight: u64| {
            m.packets_sent == m.packets_delivered + m.packets_dropped + queued + in_flight
                && m.packets_dropped == queue.drops(m.flow)
        };
        for (v, queued) in self.video.iter().zip(queued_video) {
            if !balanced(&v.metrics, queued, v.in_flight) {
                audit.flow_violations += 1;
            }
        }
        for (f, queued) in self.ftp.iter().zip(queued_ftp) {
            if !balanced(&f.metrics, queued, f.in_flight) {
                audit.flow_violations += 1;
            }
        }
    }

    fn summarize(&self, seed: u64, events: u64) -> RunSummary {
        let cfg = self.cfg;
        let theta = cfg.decode_threshold;
        let gop_len = self.ladder.content.gop_length as usize;
        let end = cfg.duration;
        let mut flows = Vec::with_capacity(self.video.len() + self.ftp.len());
        let mut decoded_count = 0;
        let mut admitted_count = 0;
        for v in &self.video {
            let m = &v.metrics;
            let decoded = v.active && session_decoded(m, theta, gop_len);
            admitted_count += v.active as u32;
            decoded_count += decoded as u32;
            let (frames_sent, frames_decodable) = m.frame_counts();
            flows.push(FlowSummary {
                flow: m.flow.to_string(),
                kind: FlowKind::Video,
                admitted: v.active,
                decoded,
                mos: v.active.then(|| mos(m, self.ladder, theta)),
                mean_delay_ms: m.mean_delay().map(|d| d.as_millis_f64()),
                loss_ratio: m.loss_ratio(),
                delivered_bits: m.delivered_bits,
                packets_sent: m.packets_sent,
                packets_delivered: m.packets_delivered,
                packets_dropped: m.packets_dropped,
                frames_sent,
                frames_decodable,
                rate_cv: m
                    .started_at
                    .and_then(|s| m.rate_cv(s.max(cfg.rate_cv_warmup), end)),
            });
        }
        for f in &self.ftp {
            let m = &f.metrics;
            flows.push(FlowSummary {
                flow: m.flow.to_string(),
                kind: FlowKind::Ftp,
                admitted: true,
                decoded: false,
                mos: None,
                mean_delay_ms: m.mean_delay().map(|d| d.as_millis_f64()),
                loss_ratio: m.loss_ratio(),
                delivered_bits: m.delivered_bits,
                packets_sent: m.packets_sent,
                packets_delivered: m.packets_delivered,
                packets_dropped: m.packets_dropped,
                frames_sent: 0,
                frames_decodable: 0,
                rate_cv: m
                    .started_at
                    .and_then(|s| m.rate_cv(s.max(cfg.rate_cv_warmup), end)),
            });
        }
        let requested = match cfg.architecture {
            Architecture::CrossLayer => self.sessions_requested,
            _ => admitted_count,
        };
        RunSummary {
            seed,
            architecture: cfg.architecture.as_str().to_string(),
            duration_s: end.as_secs_f64(),
            flows,
            sessions_requested: requested,
            sessions_admitted: admitted_count,
            sessions_decoded: decoded_count,
            utilization: utilization(self.link.transmitted_bits(), cfg.link.capacity, end),
            events_processed: events,
            conservation: self.conservation.clone(),
        }
    }
}
