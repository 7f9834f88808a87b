//! Unit-safe quantities shared by every module.

use core::fmt;
use core::ops::{Add, AddAssign, Sub};

use serde::{Deserialize, Serialize};

/// Virtual time in integer microseconds.
///
/// Arithmetic is checked: overflow or a negative difference aborts the run,
/// since either means the event schedule is corrupt.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000)
    }

    /// Rounds to the nearest microsecond. Negative and non-finite inputs clamp
    /// to zero.
    pub fn from_secs_f64(s: f64) -> Self {
        if s.is_nan() || s <= 0.0 {
            return SimTime::ZERO;
        }
        SimTime(libm::round(s * 1e6) as u64)
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn as_millis_f64(self) -> f64 {
        self.0 as f64 / 1e3
    }

    pub fn checked_add(self, rhs: SimTime) -> Option<SimTime> {
        self.0.checked_add(rhs.0).map(SimTime)
    }

    pub fn checked_sub(self, rhs: SimTime) -> Option<SimTime> {
        self.0.checked_sub(rhs.0).map(SimTime)
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;

    fn add(self, rhs: SimTime) -> SimTime {
        self.checked_add(rhs).expect("SimTime overflow")
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        *self = *self + rhs;
    }
}

impl Sub for SimTime {
    type Output = SimTime;

    fn sub(self, rhs: SimTime) -> SimTime {
        self.checked_sub(rhs).expect("SimTime underflow")
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:06}", self.0 / 1_000_000, self.0 % 1_000_000)
    }
}

/// A data rate in integer bits per second.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct BitRate(u64);

impl BitRate {
    pub const ZERO: BitRate = BitRate(0);

    pub const fn from_bps(bps: u64) -> Self {
        BitRate(bps)
    }

    pub const fn from_kbps(kbps: u64) -> Self {
        BitRate(kbps * 1_000)
    }

    pub const fn from_mbps(mbps: u64) -> Self {
        BitRate(mbps * 1_000_000)
    }

    /// Rounds to the nearest bit per second; negative input clamps to zero.
    pub fn from_mbps_f64(mbps: f64) -> Self {
        Self::from_bps_f64(mbps * 1e6)
    }

    pub fn from_bps_f64(bps: f64) -> Self {
        if bps.is_nan() || bps <= 0.0 {
            return BitRate::ZERO;
        }
        BitRate(libm::round(bps) as u64)
    }

    /// Average rate of `bits` delivered over `span`. A zero span yields zero.
    pub fn from_bits_over(bits: u64, span: SimTime) -> Self {
        if span.as_micros() == 0 {
            return BitRate::ZERO;
        }
        let bps = (bits as u128 * 1_000_000) / span.as_micros() as u128;
        BitRate(bps as u64)
    }

    pub const fn bps(self) -> u64 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64
    }

    pub fn as_mbps(self) -> f64 {
        self.0 as f64 / 1e6
    }

    /// Time needed to clock `bytes` onto a link of this rate, rounded up to a
    /// whole microsecond so back-to-back service never exceeds the rate.
    pub fn serialization_time(self, bytes: u32) -> SimTime {
        assert!(self.0 > 0, "serialization on a zero-rate link");
        let bits = bytes as u128 * 8 * 1_000_000;
        let rate = self.0 as u128;
        SimTime::from_micros(bits.div_ceil(rate) as u64)
    }
}

impl Add for BitRate {
    type Output = BitRate;

    fn add(self, rhs: BitRate) -> BitRate {
        BitRate(self.0.checked_add(rhs.0).expect("BitRate overflow"))
    }
}

impl fmt::Display for BitRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}bps", self.0)
    }
}
