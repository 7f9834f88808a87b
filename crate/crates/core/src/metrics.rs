//! Receiver-side decodability, the MOS proxy, per-run statistics and
//! cross-run CDF aggregation.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netsim::FlowId;
use crate::traces::{FrameType, VariantLadder, QP_MAX, QP_MIN};
use crate::units::{BitRate, SimTime};

pub const MOS_MIN: f64 = 1.0;
pub const MOS_MAX: f64 = 4.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("CDF of an empty sample")]
    EmptySample,
    #[error("CDF sample contains a non-finite value")]
    NonFinite,
}

/// Delivery state of one video frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameDelivery {
    pub frame_type: FrameType,
    pub qp: u8,
    pub packets: u16,
    pub delivered: u16,
    pub dropped: u16,
}

impl FrameDelivery {
    pub fn new(frame_type: FrameType, qp: u8, packets: u16) -> Self {
        FrameDelivery {
            frame_type,
            qp,
            packets,
            delivered: 0,
            dropped: 0,
        }
    }

    pub fn complete(&self) -> bool {
        self.delivered == self.packets
    }

    /// Every packet has either arrived or been dropped.
    pub fn resolved(&self) -> bool {
        self.delivered + self.dropped == self.packets
    }
}

/// A frame decodes when it and every earlier frame of its GoP arrived whole.
pub fn frame_decodable(position: usize, gop: &[FrameDelivery]) -> bool {
    position < gop.len() && gop[..=position].iter().all(FrameDelivery::complete)
}

/// `(resolved frames, decodable frames)` of one GoP. Frames after the first
/// unresolved one are not yet judged.
pub fn gop_tally(gop: &[FrameDelivery]) -> (usize, usize) {
    let resolved = gop.iter().take_while(|f| f.resolved()).count();
    let decodable = gop[..resolved].iter().take_while(|f| f.complete()).count();
    (resolved, decodable)
}

/// Log-bucketed delay histogram with about 1% relative resolution.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DelaySketch {
    buckets: Vec<u64>,
    count: u64,
}

const SKETCH_LINEAR: u64 = 64;
const SKETCH_GROWTH: f64 = 1.01;

impl DelaySketch {
    fn bucket(us: u64) -> usize {
        if us < SKETCH_LINEAR {
            us as usize
        } else {
            let k =
                libm::floor(libm::log(us as f64 / SKETCH_LINEAR as f64) / libm::log(SKETCH_GROWTH));
            SKETCH_LINEAR as usize + k as usize
        }
    }

    fn lower_bound(bucket: usize) -> u64 {
        if bucket < SKETCH_LINEAR as usize {
            bucket as u64
        } else {
            let k = (bucket - SKETCH_LINEAR as usize) as f64;
            libm::ceil(SKETCH_LINEAR as f64 * libm::pow(SKETCH_GROWTH, k)) as u64
        }
    }

    pub fn record(&mut self, delay: SimTime) {
        let b = Self::bucket(delay.as_micros());
        if self.buckets.len() <= b {
            self.buckets.resize(b + 1, 0);
        }
        self.buckets[b] += 1;
        self.count += 1;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Approximate `q`-quantile, never above the true value by more than the
    /// bucket width.
    pub fn quantile(&self, q: f64) -> Option<SimTime> {
        if self.count == 0 {
            return None;
        }
        let rank = libm::ceil(q.clamp(0.0, 1.0) * self.count as f64).max(1.0) as u64;
        let mut seen = 0;
        for (b, &c) in self.buckets.iter().enumerate() {
            seen += c;
            if seen >= rank {
                return Some(SimTime::from_micros(Self::lower_bound(b)));
            }
        }
        None
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowKind {
    Video,
    Ftp,
}

impl FlowKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FlowKind::Video => "video",
            FlowKind::Ftp => "ftp",
        }
    }
}

/// Counters for one flow, filled in by the simulation as packets move.
#[derive(Clone, Debug)]
pub struct FlowMetrics {
    pub flow: FlowId,
    pub kind: FlowKind,
    pub started_at: Option<SimTime>,
    pub packets_sent: u64,
    pub packets_delivered: u64,
    pub packets_dropped: u64,
    pub sent_bits: u64,
    pub delivered_bits: u64,
    delay_sum_us: u128,
    pub delays: DelaySketch,
    /// Video frames grouped by GoP.
    pub gops: Vec<Vec<FrameDelivery>>,
    /// Variant used by each GoP.
    pub gop_variants: Vec<u8>,
    /// Sum over delivered video packets of `bits * variant mean rate`.
    rate_weighted_bits: f64,
    /// Bits offered to the bottleneck, bucketed per wall second.
    pub per_second_bits: Vec<u64>,
}

impl FlowMetrics {
    pub fn new(flow: FlowId, kind: FlowKind) -> Self {
        FlowMetrics {
            flow,
            kind,
            started_at: None,
            packets_sent: 0,
            packets_delivered: 0,
            packets_dropped: 0,
            sent_bits: 0,
            delivered_bits: 0,
            delay_sum_us: 0,
            delays: DelaySketch::default(),
            gops: Vec::new(),
            gop_variants: Vec::new(),
            rate_weighted_bits: 0.0,
            per_second_bits: Vec::new(),
        }
    }

    pub fn on_sent(&mut self, at: SimTime, bits: u64) {
        self.packets_sent += 1;
        self.sent_bits += bits;
        let sec = (at.as_micros() / 1_000_000) as usize;
        if self.per_second_bits.len() <= sec {
            self.per_second_bits.resize(sec + 1, 0);
        }
        self.per_second_bits[sec] += bits;
    }

    pub fn on_delivered(&mut self, bits: u64, delay: SimTime, variant_rate: Option<BitRate>) {
        self.packets_delivered += 1;
        self.delivered_bits += bits;
        self.delay_sum_us += delay.as_micros() as u128;
        self.delays.record(delay);
        if let Some(r) = variant_rate {
            self.rate_weighted_bits += bits as f64 * r.as_f64();
        }
    }

    pub fn on_dropped(&mut self) {
        self.packets_dropped += 1;
    }

    /// Registers a new GoP emitted from variant `qp`; returns its index.
    pub fn begin_gop(&mut self, qp: u8) -> usize {
        self.gops.push(Vec::new());
        self.gop_variants.push(qp);
        self.gops.len() - 1
    }

    pub fn frame_mut(&mut self, gop: usize, position: usize) -> &mut FrameDelivery {
        &mut self.gops[gop][position]
    }

    pub fn residual(&self) -> u64 {
        self.packets_sent - self.packets_delivered - self.packets_dropped
    }

    pub fn mean_delay(&self) -> Option<SimTime> {
        if self.packets_delivered == 0 {
            return None;
        }
        Some(SimTime::from_micros(
            (self.delay_sum_us / self.packets_delivered as u128) as u64,
        ))
    }

    pub fn loss_ratio(&self) -> f64 {
        if self.packets_sent == 0 {
            0.0
        } else {
            self.packets_dropped as f64 / self.packets_sent as f64
        }
    }

    /// `(frames_sent, frames_decodable)` over frames whose fate is known.
    pub fn frame_counts(&self) -> (u64, u64) {
        self.gops.iter().fold((0, 0), |(s, d), g| {
            let (rs, dc) = gop_tally(g);
            (s + rs as u64, d + dc as u64)
        })
    }

    /// Number of GoPs of `gop_length` frames that decoded end to end.
    pub fn full_gops_decoded(&self, gop_length: usize) -> usize {
        self.gops
            .iter()
            .filter(|g| g.len() == gop_length && gop_tally(g).1 == gop_length)
            .count()
    }

    /// Delivered-bit-weighted mean of the variant rates carried.
    pub fn mean_delivered_variant_rate(&self) -> Option<f64> {
        (self.delivered_bits > 0 && self.rate_weighted_bits > 0.0)
            .then(|| self.rate_weighted_bits / self.delivered_bits as f64)
    }

    /// Coefficient of variation of the per-second offered rate over the whole
    /// seconds between `from` and `until`.
    pub fn rate_cv(&self, from: SimTime, until: SimTime) -> Option<f64> {
        let first = from.as_micros().div_ceil(1_000_000) as usize;
        let last = (until.as_micros() / 1_000_000) as usize;
        if last <= first + 1 {
            return None;
        }
        let samples: Vec<f64> = (first..last)
            .map(|s| self.per_second_bits.get(s).copied().unwrap_or(0) as f64)
            .collect();
        coefficient_of_variation(&samples)
    }
}

pub fn coefficient_of_variation(samples: &[f64]) -> Option<f64> {
    if samples.len() < 2 {
        return None;
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if mean <= 0.0 {
        return None;
    }
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Some(libm::sqrt(var) / mean)
}

/// Decoded when at least `theta` of the judged frames decode and at least
/// one full GoP decoded. The boundary is inclusive.
pub fn session_decoded(metrics: &FlowMetrics, theta: f64, gop_length: usize) -> bool {
    let (sent, decodable) = metrics.frame_counts();
    sent > 0 && decodable as f64 / sent as f64 >= theta && metrics.full_gops_decoded(gop_length) > 0
}

/// `clamp(1 + 3.5 * d * r, 1, 4.5)` where `r` is the position of `r_bar`
/// between the coarsest and finest rung on a log scale.
pub fn mos_score(decodable_ratio: f64, r_bar: f64, r_min: f64, r_max: f64) -> f64 {
    let d = decodable_ratio.clamp(0.0, 1.0);
    let r = if r_max > r_min && r_bar > 0.0 && r_min > 0.0 {
        (libm::log(r_bar / r_min) / libm::log(r_max / r_min)).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (MOS_MIN + 3.5 * d * r).clamp(MOS_MIN, MOS_MAX)
}

/// Per-session MOS proxy. Sessions that did not decode score 1.
pub fn mos(metrics: &FlowMetrics, ladder: &VariantLadder, theta: f64) -> f64 {
    let gop_len = ladder.content.gop_length as usize;
    if !session_decoded(metrics, theta, gop_len) {
        return MOS_MIN;
    }
    let (sent, decodable) = metrics.frame_counts();
    let d = decodable as f64 / sent as f64;
    let r_min = ladder.mean_rate(QP_MAX).as_f64();
    let r_max = ladder.mean_rate(QP_MIN).as_f64();
    let r_bar = metrics.mean_delivered_variant_rate().unwrap_or(r_min);
    mos_score(d, r_bar, r_min, r_max)
}

/// Bits carried across the bottleneck over the capacity-time product.
pub fn utilization(transmitted_bits: u64, capacity: BitRate, duration: SimTime) -> f64 {
    let budget = capacity.as_f64() * duration.as_secs_f64();
    if budget <= 0.0 {
        return 0.0;
    }
    transmitted_bits as f64 / budget
}

/// Empirical CDF as `(value, cumulative fraction)` pairs, one per distinct
/// value.
pub fn aggregate_cdf(values: &[f64]) -> Result<Vec<(f64, f64)>, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptySample);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, v) in sorted.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *v => last.1 = frac,
            _ => out.push((*v, frac)),
        }
    }
    Ok(out)
}

/// Final per-flow figures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowSummary {
    pub flow: String,
    pub kind: FlowKind,
    pub admitted: bool,
    pub decoded: bool,
    pub mos: Option<f64>,
    pub mean_delay_ms: Option<f64>,
    pub loss_ratio: f64,
    pub delivered_bits: u64,
    pub packets_sent: u64,
    pub packets_delivered: u64,
    pub packets_dropped: u64,
    pub frames_sent: u64,
    pub frames_decodable: u64,
    pub rate_cv: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConservationAudit {
    pub samples: u64,
    pub flow_violations: u64,
    pub queue_violations: u64,
    pub peak_queue: usize,
}

/// Outcome of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub architecture: String,
    pub duration_s: f64,
    pub flows: Vec<FlowSummary>,
    pub sessions_requested: u32,
    pub sessions_admitted: u32,
    pub sessions_decoded: u32,
    pub utilization: f64,
    pub events_processed: u64,
    pub conservation: ConservationAudit,
}

impl RunSummary {
    pub fn video(&self) -> impl Iterator<Item = &FlowSummary> {
        self.flows.iter().filter(|f| f.kind == FlowKind::Video)
    }

    pub fn ftp(&self) -> impl Iterator<Item = &FlowSummary> {
        self.flows.iter().filter(|f| f.kind == FlowKind::Ftp)
    }

    fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
        let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        (n > 0).then(|| s / n as f64)
    }

    /// Mean MOS over admitted video sessions.
    pub fn mean_mos(&self) -> Option<f64> {
        Self::mean(self.video().filter_map(|f| f.mos))
    }

    pub fn mean_video_loss(&self) -> Option<f64> {
        Self::mean(
            self.video()
                .filter(|f| f.packets_sent > 0)
                .map(|f| f.loss_ratio),
        )
    }

    pub fn mean_video_delay_ms(&self) -> Option<f64> {
        Self::mean(self.video().filter_map(|f| f.mean_delay_ms))
    }

    pub fn transmitted_video_packets(&self) -> u64 {
        self.video().map(|f| f.packets_sent).sum()
    }

    fn median(mut v: Vec<f64>) -> Option<f64> {
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let m = v.len() / 2;
        Some(if v.len() % 2 == 1 {
            v[m]
        } else {
            (v[m - 1] + v[m]) / 2.0
        })
    }

    pub fn median_video_rate_cv(&self) -> Option<f64> {
        Self::median(self.video().filter_map(|f| f.rate_cv).collect())
    }

    pub fn median_ftp_rate_cv(&self) -> Option<f64> {
        Self::median(self.ftp().filter_map(|f| f.rate_cv).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn gop(delivered: &[bool]) -> Vec<FrameDelivery> {
        delivered
            .iter()
            .enumerate()
            .map(|(i, &ok)| {
                let mut f =
                    FrameDelivery::new(if i == 0 { FrameType::I } else { FrameType::P }, 2, 2);
                if ok {
                    f.delivered = 2;
                } else {
                    f.delivered = 1;
                    f.dropped = 1;
                }
                f
            })
            .collect()
    }

    #[test]
    fn i_frame_alone_decodes() {
        assert!(frame_decodable(0, &gop(&[true])));
    }

    #[test]
    fn lost_i_frame_breaks_the_gop() {
        let g = gop(&[false, true, true]);
        assert!(!frame_decodable(1, &g));
        assert!(!frame_decodable(2, &g));
    }

    #[test]
    fn loss_at_frame_ten_cuts_the_chain() {
        let mut flags = vec![true; 30];
        flags[10] = false;
        let g = gop(&flags);
        // independent oracle: walk the reference chain frame by frame
        let mut chain_ok = true;
        for (i, ok) in flags.iter().enumerate() {
            chain_ok &= *ok;
            assert_eq!(frame_decodable(i, &g), chain_ok, "frame {i}");
        }
        assert_eq!(gop_tally(&g), (30, 10));
    }

    fn flow_with(gops: Vec<Vec<FrameDelivery>>) -> FlowMetrics {
        let mut m = FlowMetrics::new(FlowId::Video(0), FlowKind::Video);
        for g in gops {
            m.begin_gop(2);
            *m.gops.last_mut().unwrap() = g;
        }
        m
    }

    #[test]
    fn perfect_delivery_decodes_for_any_theta() {
        let m = flow_with(vec![gop(&[true; 30]), gop(&[true; 30])]);
        assert!(session_decoded(&m, 1.0, 30));
        assert!(session_decoded(&m, 0.75, 30));
    }

    #[test]
    fn nothing_delivered_does_not_decode() {
        let m = flow_with(vec![gop(&[false; 30])]);
        assert!(!session_decoded(&m, 0.0, 30));
        let empty = FlowMetrics::new(FlowId::Video(0), FlowKind::Video);
        assert!(!session_decoded(&empty, 0.0, 30));
    }

    #[test]
    fn theta_boundary_is_inclusive() {
        // 4 GoPs, 3 perfect + 1 with the I frame lost: ratio exactly 0.75
        let m = flow_with(vec![
            gop(&[true; 30]),
            gop(&[true; 30]),
            gop(&[true; 30]),
            gop(&[false; 30]),
        ]);
        assert_eq!(m.frame_counts(), (120, 90));
        assert!(session_decoded(&m, 0.75, 30));
        assert!(!session_decoded(&m, 0.7501, 30));
    }

    #[test]
    fn unresolved_frames_are_not_judged() {
        let mut g = gop(&[true; 5]);
        g[3].dropped = 0;
        g[3].delivered = 1;
        assert_eq!(gop_tally(&g), (3, 3));
    }

    #[test]
    fn mos_bounds_and_examples() {
        assert_eq!(mos_score(1.0, 4.0, 1.0, 4.0), 4.5);
        assert_eq!(mos_score(0.0, 4.0, 1.0, 4.0), 1.0);
        assert_eq!(mos_score(1.0, 1.0, 1.0, 4.0), 1.0);
        let mid = mos_score(1.0, 2.0, 1.0, 4.0);
        assert!((mid - 2.75).abs() < 1e-12);
    }

    #[test]
    fn utilization_examples() {
        assert_eq!(
            utilization(0, BitRate::from_mbps(7), SimTime::from_secs(60)),
            0.0
        );
        assert_eq!(
            utilization(
                7_000_000 * 60,
                BitRate::from_mbps(7),
                SimTime::from_secs(60)
            ),
            1.0
        );
    }

    #[test]
    fn cdf_examples() {
        assert_eq!(
            aggregate_cdf(&[2.0, 2.0, 4.0]).unwrap(),
            vec![(2.0, 2.0 / 3.0), (4.0, 1.0)]
        );
        assert_eq!(aggregate_cdf(&[3.5]).unwrap(), vec![(3.5, 1.0)]);
        assert_eq!(aggregate_cdf(&[]), Err(MetricsError::EmptySample));
        assert_eq!(aggregate_cdf(&[f64::NAN]), Err(MetricsError::NonFinite));
    }

    #[test]
    fn sketch_quantiles_are_close() {
        let mut s = DelaySketch::default();
        for us in 1..=10_000u64 {
            s.record(SimTime::from_micros(us * 10));
        }
        let p50 = s.quantile(0.5).unwrap().as_micros() as f64;
        assert!((p50 / 50_000.0 - 1.0).abs() < 0.011, "{p50}");
        let p99 = s.quantile(0.99).unwrap().as_micros() as f64;
        assert!((p99 / 99_000.0 - 1.0).abs() < 0.011, "{p99}");
    }

    #[test]
    fn flow_counters() {
        let mut m = FlowMetrics::new(FlowId::Ftp(1), FlowKind::Ftp);
        for i in 0..4 {
            m.on_sent(SimTime::from_millis(300 * i), 8_000);
        }
        m.on_delivered(8_000, SimTime::from_millis(10), None);
        m.on_delivered(8_000, SimTime::from_millis(30), None);
        m.on_dropped();
        assert_eq!(m.residual(), 1);
        assert_eq!(m.loss_ratio(), 0.25);
        assert_eq!(m.mean_delay(), Some(SimTime::from_millis(20)));
        assert_eq!(m.per_second_bits, vec![32_000]);
    }

    #[test]
    fn cv_of_constant_rate_is_zero() {
        assert_eq!(coefficient_of_variation(&[5.0, 5.0, 5.0]), Some(0.0));
        assert_eq!(coefficient_of_variation(&[5.0]), None);
    }
}
