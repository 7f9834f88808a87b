//! Sender-side rate controller and leaky-bucket shaper.
//!
//! ECN or loss feedback asks for the next coarser variant; a run of quiet
//! feedback intervals asks for the next finer one. Requests only take effect
//! at the next GoP boundary, so every GoP is encoded from a single variant.

use serde::{Deserialize, Serialize};

use crate::netsim::FeedbackReport;
use crate::traces::{QP_MAX, QP_MIN};
use crate::units::{BitRate, SimTime};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerMode {
    NonAdaptive,
    Adaptive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwitchTrigger {
    Ecn,
    Loss,
    Quiet,
    GopApply,
}

impl SwitchTrigger {
    pub fn as_str(self) -> &'static str {
        match self {
            SwitchTrigger::Ecn => "ecn",
            SwitchTrigger::Loss => "loss",
            SwitchTrigger::Quiet => "quiet",
            SwitchTrigger::GopApply => "gop_apply",
        }
    }
}

/// A change of the current or pending quantizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QpChange {
    pub old_qp: u8,
    pub new_qp: u8,
    pub trigger: SwitchTrigger,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControllerParams {
    /// Rungs to move down per congested interval.
    pub step: u8,
    /// Consecutive clean intervals before moving one rung up.
    pub quiet_intervals: u32,
}

impl Default for ControllerParams {
    fn default() -> Self {
        ControllerParams {
            step: 1,
            quiet_intervals: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ControllerState {
    current_qp: u8,
    pending_qp: Option<u8>,
    mode: ControllerMode,
    quiet: u32,
    params: ControllerParams,
}

impl ControllerState {
    /// A controller starting at `initial_qp`. Non-adaptive controllers are
    /// pinned to QP 2 whatever `initial_qp` says.
    pub fn new(mode: ControllerMode, initial_qp: u8, params: ControllerParams) -> Self {
        let current_qp = match mode {
            ControllerMode::NonAdaptive => QP_MIN,
            ControllerMode::Adaptive => initial_qp.clamp(QP_MIN, QP_MAX),
        };
        ControllerState {
            current_qp,
            pending_qp: None,
            mode,
            quiet: 0,
            params,
        }
    }

    pub fn current_qp(&self) -> u8 {
        self.current_qp
    }

    pub fn pending_qp(&self) -> Option<u8> {
        self.pending_qp
    }

    pub fn mode(&self) -> ControllerMode {
        self.mode
    }

    pub fn quiet_count(&self) -> u32 {
        self.quiet
    }

    /// Feeds one receiver report. Returns the pending change it caused, if any.
    pub fn on_feedback(&mut self, report: &FeedbackReport) -> Option<QpChange> {
        if self.mode == ControllerMode::NonAdaptive {
            return None;
        }
        let before = self.pending_qp.unwrap_or(self.current_qp);
        let trigger = if report.ecn_seen {
            Some(SwitchTrigger::Ecn)
        } else if report.loss_events > 0 {
            Some(SwitchTrigger::Loss)
        } else {
            None
        };
        let trigger = match trigger {
            Some(t) => {
                self.quiet = 0;
                self.pending_qp =
                    Some(self.current_qp.saturating_add(self.params.step).min(QP_MAX));
                t
            }
            None => {
                self.quiet += 1;
                if self.quiet < self.params.quiet_intervals {
                    return None;
                }
                self.quiet = 0;
                self.pending_qp = Some(self.current_qp.saturating_sub(1).max(QP_MIN));
                SwitchTrigger::Quiet
            }
        };
        let after = self.pending_qp.unwrap_or(self.current_qp);
        (after != before).then_some(QpChange {
            old_qp: before,
            new_qp: after,
            trigger,
        })
    }

    /// Applies any pending switch and returns the change if the QP moved.
    pub fn on_gop_boundary(&mut self) -> Option<QpChange> {
        let pending = self.pending_qp.take()?;
        if pending == self.current_qp {
            return None;
        }
        let change = QpChange {
            old_qp: self.current_qp,
            new_qp: pending,
            trigger: SwitchTrigger::GopApply,
        };
        self.current_qp = pending;
        Some(change)
    }
}

/// Leaky bucket expressed as a virtual-scheduling shaper.
///
/// `bucket_empty_at` is the instant the bucket would drain if no further
/// packet arrived. A packet of `b` bits offered at `t` leaves at
/// `max(t, bucket_empty_at + b/drain - depth/drain)`, so bursts that fit the
/// depth pass untouched and sustained overload leaves at the drain rate.
#[derive(Clone, Debug, PartialEq)]
pub struct LeakyBucket {
    drain_bps: f64,
    depth_bits: f64,
    /// Microseconds, fractional.
    bucket_empty_at: f64,
    last_release: SimTime,
}

impl LeakyBucket {
    pub fn new(drain: BitRate, depth_bits: f64) -> Self {
        assert!(drain.bps() > 0, "leaky bucket needs a positive drain rate");
        LeakyBucket {
            drain_bps: drain.as_f64(),
            depth_bits: depth_bits.max(0.0),
            bucket_empty_at: 0.0,
            last_release: SimTime::ZERO,
        }
    }

    /// Sized for a variant: drain at `factor * mean_rate`, depth of
    /// `depth_gops` mean GoPs.
    pub fn for_variant(mean_rate: BitRate, gop_bits: f64, factor: f64, depth_gops: f64) -> Self {
        LeakyBucket::new(
            BitRate::from_bps_f64(mean_rate.as_f64() * factor).max(BitRate::from_bps(1)),
            gop_bits * depth_gops,
        )
    }

    /// Re-targets the bucket while keeping its current fill.
    pub fn reconfigure(&mut self, drain: BitRate, depth_bits: f64, now: SimTime) {
        assert!(drain.bps() > 0, "leaky bucket needs a positive drain rate");
        let fill = self.fill_bits(now);
        self.drain_bps = drain.as_f64();
        self.depth_bits = depth_bits.max(0.0);
        self.bucket_empty_at = now.as_micros() as f64 + fill / self.drain_bps * 1e6;
    }

    pub fn drain_rate(&self) -> BitRate {
        BitRate::from_bps_f64(self.drain_bps)
    }

    pub fn depth_bits(&self) -> f64 {
        self.depth_bits
    }

    /// Bits still in the bucket at `now`.
    pub fn fill_bits(&self, now: SimTime) -> f64 {
        let backlog_us = self.bucket_empty_at - now.as_micros() as f64;
        (backlog_us.max(0.0) / 1e6 * self.drain_bps).max(0.0)
    }

    /// Release time for a packet of `bytes` offered at `offered`.
    pub fn shape(&mut self, offered: SimTime, bytes: u32) -> SimTime {
        let bits = bytes as f64 * 8.0;
        let t = offered.as_micros() as f64;
        let service_us = bits / self.drain_bps * 1e6;
        let depth_us = self.depth_bits / self.drain_bps * 1e6;
        let earliest = self.bucket_empty_at + service_us - depth_us;
        let release_us = if earliest > t { earliest } else { t };
        self.bucket_empty_at = self.bucket_empty_at.max(release_us) + service_us;
        let release = SimTime::from_micros(libm::ceil(release_us) as u64).max(self.last_release);
        self.last_release = release;
        release
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    fn report(ecn: bool, loss: u32) -> FeedbackReport {
        FeedbackReport {
            ecn_seen: ecn,
            loss_events: loss,
            rtt_sample: SimTime::from_millis(2),
        }
    }

    fn adaptive(qp: u8) -> ControllerState {
        ControllerState::new(ControllerMode::Adaptive, qp, ControllerParams::default())
    }

    #[test]
    fn ecn_requests_one_rung_down() {
        let mut c = adaptive(5);
        let ch = c.on_feedback(&report(true, 0)).unwrap();
        assert_eq!(
            (ch.old_qp, ch.new_qp, ch.trigger),
            (5, 6, SwitchTrigger::Ecn)
        );
        assert_eq!(c.pending_qp(), Some(6));
        // a second mark in the same GoP does not stack
        assert_eq!(c.on_feedback(&report(true, 0)), None);
        assert_eq!(c.pending_qp(), Some(6));
    }

    #[test]
    fn bottom_rung_is_sticky() {
        let mut c = adaptive(31);
        c.on_feedback(&report(true, 0));
        assert_eq!(c.pending_qp(), Some(31));
        assert_eq!(c.on_gop_boundary(), None);
        assert_eq!(c.current_qp(), 31);
    }

    #[test]
    fn loss_alone_also_downgrades() {
        let mut c = adaptive(8);
        let ch = c.on_feedback(&report(false, 2)).unwrap();
        assert_eq!(ch.trigger, SwitchTrigger::Loss);
        assert_eq!(c.pending_qp(), Some(9));
    }

    #[test]
    fn three_quiet_intervals_upgrade() {
        let mut c = adaptive(6);
        assert_eq!(c.on_feedback(&report(false, 0)), None);
        assert_eq!(c.on_feedback(&report(false, 0)), None);
        let ch = c.on_feedback(&report(false, 0)).unwrap();
        assert_eq!((ch.new_qp, ch.trigger), (5, SwitchTrigger::Quiet));
        assert_eq!(c.pending_qp(), Some(5));
    }

    #[test]
    fn congestion_resets_quiet_counter() {
        let mut c = adaptive(6);
        c.on_feedback(&report(false, 0));
        c.on_feedback(&report(false, 0));
        c.on_feedback(&report(true, 0));
        assert_eq!(c.quiet_count(), 0);
        c.on_feedback(&report(false, 0));
        assert_eq!(c.pending_qp(), Some(7));
    }

    #[test]
    fn pending_applies_only_at_boundary() {
        let mut c = adaptive(6);
        c.on_feedback(&report(true, 0));
        assert_eq!(c.current_qp(), 6);
        let ch = c.on_gop_boundary().unwrap();
        assert_eq!((ch.old_qp, ch.new_qp), (6, 7));
        assert_eq!(c.current_qp(), 7);
        assert_eq!(c.on_gop_boundary(), None);
        assert_eq!(c.current_qp(), 7);
    }

    #[test]
    fn non_adaptive_is_pinned() {
        let mut c =
            ControllerState::new(ControllerMode::NonAdaptive, 12, ControllerParams::default());
        assert_eq!(c.current_qp(), 2);
        for _ in 0..10 {
            assert_eq!(c.on_feedback(&report(true, 3)), None);
            assert_eq!(c.on_gop_boundary(), None);
        }
        assert_eq!(c.current_qp(), 2);
    }

    #[test]
    fn burst_within_depth_passes() {
        let mut b = LeakyBucket::new(BitRate::from_mbps(1), 100_000.0);
        let t = SimTime::from_secs(1);
        for _ in 0..10 {
            assert_eq!(b.shape(t, 1052), t);
        }
    }

    #[test]
    fn sustained_overload_leaves_at_drain_rate() {
        let drain = BitRate::from_kbps(500);
        let mut b = LeakyBucket::new(drain, 20_000.0);
        // offer 1 Mbps: one 1000-byte packet every 8 ms for 20 s
        let mut releases = Vec::new();
        for i in 0..2_500u64 {
            releases.push(b.shape(SimTime::from_millis(8 * i), 1000));
        }
        let span = (*releases.last().unwrap() - releases[1_000]).as_secs_f64();
        let rate = 1_499.0 * 8_000.0 / span;
        assert!((rate / 500_000.0 - 1.0).abs() < 0.001, "rate {rate}");
        assert!(releases.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn gop_sized_depth_absorbs_i_frame() {
        // mean GoP of 600 kbit at 600 kbps, I frame of 4x a P frame
        let mean = BitRate::from_kbps(600);
        let gop_bits = 600_000.0;
        let p_bits = gop_bits / 33.0;
        let i_bytes = (4.0 * p_bits / 8.0) as u32;
        let mut b = LeakyBucket::for_variant(mean, gop_bits, 1.2, 1.0);
        let t = SimTime::from_secs(3);
        let mut left = i_bytes;
        while left > 0 {
            let chunk = left.min(1024);
            assert_eq!(b.shape(t, chunk + 28), t);
            left -= chunk;
        }
    }
}
