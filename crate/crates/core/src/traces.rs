//! Synthetic VBR trace ladders.
//!
//! A content profile yields 30 variants, one per quantizer parameter in
//! `2..=31`. Variant mean rates follow `base_rate_qp2 * (2 / qp)^gamma`.
//!
//! Frame sizes share a single per-content complexity pattern across all
//! rungs: one multiplicative noise factor per frame (log-normal with mean 1
//! and coefficient of variation `burstiness`, clamped to `[0.25, 4]`), scaled
//! per rung so the realised mean rate hits its target. I frames are
//! `i_to_p_ratio` times the mean P frame. GoPs are `1 I + (gop_length - 1) P`.

use alloc::string::String;
use alloc::vec::Vec;

use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SimRng;
use crate::units::{BitRate, SimTime};

pub const QP_MIN: u8 = 2;
pub const QP_MAX: u8 = 31;
pub const RUNGS: usize = (QP_MAX - QP_MIN + 1) as usize;

const NOISE_CLAMP: (f64, f64) = (0.25, 4.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TraceError {
    #[error("quantizer {0} outside 2..=31")]
    QpOutOfRange(u8),
    #[error("invalid profile: {0}")]
    InvalidProfile(&'static str),
    #[error("ladder must hold exactly 30 variants for QP 2..=31, got {0}")]
    IncompleteLadder(usize),
    #[error("variant QP {0} has a non-positive frame size")]
    EmptyFrame(u8),
    #[error("mean rate of QP {0} is not strictly below QP {1}")]
    NotMonotone(u8, u8),
    #[error("packet size must exceed the {0} header bytes")]
    PacketTooSmall(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resolution {
    Cif,
    Qcif,
}

impl Resolution {
    pub fn dimensions(self) -> (u32, u32) {
        match self {
            Resolution::Cif => (352, 288),
            Resolution::Qcif => (176, 144),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrameType {
    I,
    P,
}

impl FrameType {
    pub fn as_char(self) -> char {
        match self {
            FrameType::I => 'I',
            FrameType::P => 'P',
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContentProfile {
    pub name: String,
    pub resolution: Resolution,
    pub frame_rate: u32,
    pub gop_length: u32,
    /// Trace length in frames before it loops.
    pub frames: u32,
    pub base_rate_qp2: BitRate,
    /// Exponent of the QP-to-rate power law.
    pub rate_exponent: f64,
    /// Coefficient of variation of per-frame sizes.
    pub burstiness: f64,
    pub i_to_p_ratio: f64,
}

impl ContentProfile {
    /// Mother-and-daughter style CIF clip: 900 frames at 30 fps.
    pub fn mad_like() -> Self {
        ContentProfile {
            name: "mad-like".into(),
            resolution: Resolution::Cif,
            frame_rate: 30,
            gop_length: 30,
            frames: 900,
            base_rate_qp2: BitRate::from_kbps(2_000),
            rate_exponent: 1.0,
            burstiness: 0.25,
            i_to_p_ratio: 4.0,
        }
    }

    /// Grandma style QCIF clip: 870 frames at 30 fps.
    pub fn grandma_like() -> Self {
        ContentProfile {
            name: "grandma-like".into(),
            resolution: Resolution::Qcif,
            frame_rate: 30,
            gop_length: 30,
            frames: 870,
            base_rate_qp2: BitRate::from_kbps(600),
            rate_exponent: 1.0,
            burstiness: 0.25,
            i_to_p_ratio: 4.0,
        }
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        if self.frame_rate == 0 {
            return Err(TraceError::InvalidProfile("frame_rate must be positive"));
        }
        if self.gop_length == 0 {
            return Err(TraceError::InvalidProfile("gop_length must be positive"));
        }
        if self.frames < self.gop_length {
            return Err(TraceError::InvalidProfile("frames must be >= gop_length"));
        }
        if !self.frames.is_multiple_of(self.gop_length) {
            return Err(TraceError::InvalidProfile(
                "frames must be a whole number of GoPs",
            ));
        }
        if self.base_rate_qp2 == BitRate::ZERO {
            return Err(TraceError::InvalidProfile("base_rate_qp2 must be positive"));
        }
        if !self.rate_exponent.is_finite() || self.rate_exponent <= 0.0 {
            return Err(TraceError::InvalidProfile("rate_exponent must be positive"));
        }
        if !self.burstiness.is_finite() || self.burstiness < 0.0 {
            return Err(TraceError::InvalidProfile("burstiness must be >= 0"));
        }
        if !self.i_to_p_ratio.is_finite() || self.i_to_p_ratio < 1.0 {
            return Err(TraceError::InvalidProfile("i_to_p_ratio must be >= 1"));
        }
        let mut prev = u64::MAX;
        for qp in QP_MIN..=QP_MAX {
            let bytes = self.rung_bytes(qp)?;
            if bytes >= prev {
                return Err(TraceError::InvalidProfile(
                    "base_rate_qp2 too low to tell the coarse rungs apart",
                ));
            }
            prev = bytes;
        }
        if prev < self.frames as u64 {
            return Err(TraceError::InvalidProfile(
                "base_rate_qp2 too low for one byte per frame at QP 31",
            ));
        }
        Ok(())
    }

    /// Total bytes of the whole clip at rung `qp`.
    pub fn rung_bytes(&self, qp: u8) -> Result<u64, TraceError> {
        let secs = self.frames as f64 / self.frame_rate as f64;
        Ok(libm::round(self.target_rate(qp)? / 8.0 * secs) as u64)
    }

    /// Target mean rate of rung `qp`.
    pub fn target_rate(&self, qp: u8) -> Result<f64, TraceError> {
        check_qp(qp)?;
        Ok(self.base_rate_qp2.as_f64() * libm::pow(2.0 / qp as f64, self.rate_exponent))
    }

    pub fn frame_interval(&self) -> SimTime {
        SimTime::from_micros(1_000_000 / self.frame_rate as u64)
    }
}

pub fn check_qp(qp: u8) -> Result<(), TraceError> {
    if (QP_MIN..=QP_MAX).contains(&qp) {
        Ok(())
    } else {
        Err(TraceError::QpOutOfRange(qp))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub index: u32,
    pub frame_type: FrameType,
    pub size_bytes: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoTrace {
    pub qp: u8,
    pub frames: Vec<Frame>,
}

impl VideoTrace {
    pub fn total_bytes(&self) -> u64 {
        self.frames.iter().map(|f| f.size_bytes as u64).sum()
    }

    /// Mean bit rate when played back at `fps`.
    pub fn mean_rate(&self, fps: u32) -> BitRate {
        if self.frames.is_empty() {
            return BitRate::ZERO;
        }
        let bits = self.total_bytes() as u128 * 8 * fps as u128;
        BitRate::from_bps((bits / self.frames.len() as u128) as u64)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Frame shown `elapsed` after the session started, looping over the trace.
pub fn frame_at(trace: &VideoTrace, fps: u32, elapsed: SimTime) -> Frame {
    let n = trace.frames.len() as u64;
    assert!(n > 0, "frame_at on an empty trace");
    let pos = (elapsed.as_micros() as u128 * fps as u128 / 1_000_000) as u64;
    trace.frames[(pos % n) as usize]
}

/// Family of 30 variants of one content, indexed by QP.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantLadder {
    pub content: ContentProfile,
    variants: Vec<VideoTrace>,
    mean_rates: Vec<BitRate>,
}

impl VariantLadder {
    /// Builds a ladder from externally produced traces, checking that all 30
    /// rungs are present, non-empty and strictly decreasing in mean rate.
    pub fn from_traces(
        content: ContentProfile,
        mut variants: Vec<VideoTrace>,
    ) -> Result<Self, TraceError> {
        if variants.len() != RUNGS {
            return Err(TraceError::IncompleteLadder(variants.len()));
        }
        variants.sort_by_key(|v| v.qp);
        for (i, v) in variants.iter().enumerate() {
            if v.qp != QP_MIN + i as u8 {
                return Err(TraceError::IncompleteLadder(variants.len()));
            }
            if v.frames.is_empty() || v.frames.iter().any(|f| f.size_bytes == 0) {
                return Err(TraceError::EmptyFrame(v.qp));
            }
        }
        let mean_rates: Vec<BitRate> = variants
            .iter()
            .map(|v| v.mean_rate(content.frame_rate))
            .collect();
        for k in 1..RUNGS {
            if mean_rates[k] >= mean_rates[k - 1] {
                return Err(TraceError::NotMonotone(
                    QP_MIN + k as u8,
                    QP_MIN + k as u8 - 1,
                ));
            }
        }
        Ok(VariantLadder {
            content,
            variants,
            mean_rates,
        })
    }

    pub fn variant(&self, qp: u8) -> &VideoTrace {
        check_qp(qp).expect("ladder lookup");
        &self.variants[(qp - QP_MIN) as usize]
    }

    pub fn mean_rate(&self, qp: u8) -> BitRate {
        check_qp(qp).expect("ladder lookup");
        self.mean_rates[(qp - QP_MIN) as usize]
    }

    /// `(qp, mean rate)` from the highest-quality rung downwards.
    pub fn rungs(&self) -> impl Iterator<Item = (u8, BitRate)> + '_ {
        self.mean_rates
            .iter()
            .enumerate()
            .map(|(i, r)| (QP_MIN + i as u8, *r))
    }

    pub fn variants(&self) -> &[VideoTrace] {
        &self.variants
    }

    /// Mean bits per GoP of rung `qp`.
    pub fn mean_gop_bits(&self, qp: u8) -> f64 {
        self.mean_rate(qp).as_f64() * self.content.gop_length as f64
            / self.content.frame_rate as f64
    }
}

/// Synthesises the 30-rung ladder for `profile`.
pub fn generate_ladder(
    profile: &ContentProfile,
    rng: &mut SimRng,
) -> Result<VariantLadder, TraceError> {
    profile.validate()?;
    let n = profile.frames as usize;
    let gop = profile.gop_length as usize;

    let noise: Vec<f64> = if profile.burstiness > 0.0 {
        let dist = LogNormal::from_mean_cv(1.0, profile.burstiness)
            .map_err(|_| TraceError::InvalidProfile("burstiness out of range"))?;
        (0..n)
            .map(|_| dist.sample(rng).clamp(NOISE_CLAMP.0, NOISE_CLAMP.1))
            .collect()
    } else {
        alloc::vec![1.0; n]
    };

    // Relative weight of each frame before scaling to a rung's target.
    let weights: Vec<f64> = (0..n)
        .map(|i| {
            let base = if i % gop == 0 {
                profile.i_to_p_ratio
            } else {
                1.0
            };
            base * noise[i]
        })
        .collect();
    let weight_sum: f64 = weights.iter().sum();

    let mut variants = Vec::with_capacity(RUNGS);
    for qp in QP_MIN..=QP_MAX {
        // one byte per frame, the rest split by weight on cumulative
        // rounding so the clip total is exact
        let spare = (profile.rung_bytes(qp)? - n as u64) as f64;
        let mut cum = 0.0;
        let mut placed = 0u64;
        let frames = weights
            .iter()
            .enumerate()
            .map(|(i, w)| {
                cum += w;
                let upto = if i + 1 == n {
                    spare as u64
                } else {
                    libm::round(spare * cum / weight_sum) as u64
                };
                let extra = upto.saturating_sub(placed);
                placed = placed.max(upto);
                Frame {
                    index: i as u32,
                    frame_type: if i % gop == 0 {
                        FrameType::I
                    } else {
                        FrameType::P
                    },
                    size_bytes: 1 + extra as u32,
                }
            })
            .collect();
        variants.push(VideoTrace { qp, frames });
    }
    VariantLadder::from_traces(profile.clone(), variants)
}

/// Splits one frame into wire packets of at most `packet_size` bytes, each
/// carrying `header_bytes` of UDP/IP overhead.
pub fn packetize(
    frame_bytes: u32,
    packet_size: u32,
    header_bytes: u32,
) -> Result<Vec<u32>, TraceError> {
    if packet_size <= header_bytes {
        return Err(TraceError::PacketTooSmall(header_bytes));
    }
    let capacity = packet_size - header_bytes;
    let mut out = Vec::with_capacity(frame_bytes.div_ceil(capacity) as usize);
    let mut left = frame_bytes;
    while left > 0 {
        let chunk = left.min(capacity);
        out.push(chunk + header_bytes);
        left -= chunk;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, substream};

    fn ladder(profile: &ContentProfile) -> VariantLadder {
        generate_ladder(profile, &mut substream(7, stream::TRACES)).unwrap()
    }

    #[test]
    fn qp4_is_half_of_qp2_with_unit_exponent() {
        let mut p = ContentProfile::mad_like();
        p.base_rate_qp2 = BitRate::from_kbps(1_200);
        let l = ladder(&p);
        let r2 = l.mean_rate(2).as_f64();
        let r4 = l.mean_rate(4).as_f64();
        assert!((r2 / 1.2e6 - 1.0).abs() < 0.02, "qp2 {r2}");
        assert!((r4 / 0.6e6 - 1.0).abs() < 0.02, "qp4 {r4}");
    }

    #[test]
    fn ladder_is_strictly_decreasing() {
        for p in [ContentProfile::mad_like(), ContentProfile::grandma_like()] {
            let l = ladder(&p);
            let rates: Vec<_> = l.rungs().map(|(_, r)| r).collect();
            assert_eq!(rates.len(), 30);
            assert!(rates.windows(2).all(|w| w[0] > w[1]));
        }
    }

    #[test]
    fn mad_like_has_thirty_i_frames_per_loop() {
        let l = ladder(&ContentProfile::mad_like());
        for v in l.variants() {
            assert_eq!(v.len(), 900);
            let i_frames = v
                .frames
                .iter()
                .filter(|f| f.frame_type == FrameType::I)
                .count();
            assert_eq!(i_frames, 30);
            assert!(v.frames.iter().all(|f| f.size_bytes > 0));
        }
    }

    #[test]
    fn i_frames_are_larger_on_average() {
        let l = ladder(&ContentProfile::mad_like());
        let v = l.variant(2);
        let (mut i_sum, mut i_n, mut p_sum, mut p_n) = (0u64, 0u64, 0u64, 0u64);
        for f in &v.frames {
            match f.frame_type {
                FrameType::I => {
                    i_sum += f.size_bytes as u64;
                    i_n += 1
                }
                FrameType::P => {
                    p_sum += f.size_bytes as u64;
                    p_n += 1
                }
            }
        }
        let ratio = (i_sum as f64 / i_n as f64) / (p_sum as f64 / p_n as f64);
        assert!((ratio - 4.0).abs() < 0.6, "ratio {ratio}");
    }

    #[test]
    fn frame_at_wraps_and_tracks_gops() {
        let l = ladder(&ContentProfile::mad_like());
        let t = l.variant(10);
        let f0 = frame_at(t, 30, SimTime::ZERO);
        assert_eq!((f0.index, f0.frame_type), (0, FrameType::I));
        let f_loop = frame_at(t, 30, SimTime::from_secs(30));
        assert_eq!(f_loop.index, 0);
        let f30 = frame_at(t, 30, SimTime::from_secs(1));
        assert_eq!((f30.index, f30.frame_type), (30, FrameType::I));
        let f31 = frame_at(t, 30, SimTime::from_micros(1_040_000));
        assert_eq!((f31.index, f31.frame_type), (31, FrameType::P));
    }

    #[test]
    fn packetize_table_sizes() {
        assert_eq!(packetize(3000, 1052, 28).unwrap(), [1052, 1052, 980]);
        assert_eq!(packetize(1024, 1052, 28).unwrap(), [1052]);
        assert!(packetize(0, 1052, 28).unwrap().is_empty());
        assert!(packetize(10, 28, 28).is_err());
    }

    #[test]
    fn rejects_bad_profiles() {
        let mut p = ContentProfile::mad_like();
        p.i_to_p_ratio = 0.5;
        assert!(p.validate().is_err());
        let mut p = ContentProfile::mad_like();
        p.frames = 10;
        assert!(p.validate().is_err());
        let mut p = ContentProfile::mad_like();
        p.base_rate_qp2 = BitRate::from_kbps(1);
        assert!(p.validate().is_err());
        let mut p = ContentProfile::mad_like();
        p.base_rate_qp2 = BitRate::ZERO;
        assert!(generate_ladder(&p, &mut substream(1, 1)).is_err());
        assert!(p.target_rate(1).is_err());
        assert!(check_qp(32).is_err());
    }

    #[test]
    fn imported_ladder_must_be_complete() {
        let l = ladder(&ContentProfile::grandma_like());
        let mut v = l.variants().to_vec();
        v.pop();
        assert_eq!(
            VariantLadder::from_traces(l.content.clone(), v).unwrap_err(),
            TraceError::IncompleteLadder(29)
        );
    }
}
