//! Integer virtual time.
//!
//! All scheduling arithmetic runs on nanosecond ticks so that event ordering
//! is exact. Millisecond inputs are rounded once, at ingestion.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Sub};

use serde::{Deserialize, Serialize};

pub const NANOS_PER_MS: f64 = 1_000_000.0;
pub const NANOS_PER_US: f64 = 1_000.0;
pub const NANOS_PER_SEC: f64 = 1_000_000_000.0;

/// A point on the virtual timeline, in nanoseconds.
///
/// `Time::NEG_INF` and `Time::INF` are saturating sentinels; arithmetic
/// involving them never wraps.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Time(pub i64);

/// A span of virtual time, in nanoseconds.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Dur(pub i64);

impl Time {
    pub const ZERO: Time = Time(0);
    pub const INF: Time = Time(i64::MAX);
    pub const NEG_INF: Time = Time(i64::MIN);

    pub fn from_ms(ms: f64) -> Time {
        Time((ms * NANOS_PER_MS).round() as i64)
    }

    pub fn from_secs(s: f64) -> Time {
        Time((s * NANOS_PER_SEC).round() as i64)
    }

    pub fn as_ms(self) -> f64 {
        self.0 as f64 / NANOS_PER_MS
    }

    pub fn as_secs(self) -> f64 {
        self.0 as f64 / NANOS_PER_SEC
    }

    pub fn is_finite(self) -> bool {
        self != Time::INF && self != Time::NEG_INF
    }

    pub fn nanos(self) -> i64 {
        self.0
    }
}

impl Dur {
    pub const ZERO: Dur = Dur(0);

    pub fn from_ms(ms: f64) -> Dur {
        Dur((ms * NANOS_PER_MS).round() as i64)
    }

    pub fn from_us(us: f64) -> Dur {
        Dur((us * NANOS_PER_US).round() as i64)
    }

    pub fn from_secs(s: f64) -> Dur {
        Dur((s * NANOS_PER_SEC).round() as i64)
    }

    pub fn as_ms(self) -> f64 {
        self.0 as f64 / NANOS_PER_MS
    }

    pub fn as_secs(self) -> f64 {
        self.0 as f64 / NANOS_PER_SEC
    }

    pub fn nanos(self) -> i64 {
        self.0
    }
}

impl Add<Dur> for Time {
    type Output = Time;
    fn add(self, rhs: Dur) -> Time {
        Time(self.0.saturating_add(rhs.0))
    }
}

impl AddAssign<Dur> for Time {
    fn add_assign(&mut self, rhs: Dur) {
        *self = *self + rhs;
    }
}

impl Sub<Dur> for Time {
    type Output = Time;
    fn sub(self, rhs: Dur) -> Time {
        Time(self.0.saturating_sub(rhs.0))
    }
}

impl Sub<Time> for Time {
    type Output = Dur;
    fn sub(self, rhs: Time) -> Dur {
        Dur(self.0.saturating_sub(rhs.0))
    }
}

impl Add for Dur {
    type Output = Dur;
    fn add(self, rhs: Dur) -> Dur {
        Dur(self.0.saturating_add(rhs.0))
    }
}

impl Sub for Dur {
    type Output = Dur;
    fn sub(self, rhs: Dur) -> Dur {
        Dur(self.0.saturating_sub(rhs.0))
    }
}

impl Mul<i64> for Dur {
    type Output = Dur;
    fn mul(self, rhs: i64) -> Dur {
        Dur(self.0.saturating_mul(rhs))
    }
}

impl fmt::Debug for Time {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Time::INF => write!(f, "+inf"),
            Time::NEG_INF => write!(f, "-inf"),
            Time(ns) => write!(f, "{}ms", ns as f64 / NANOS_PER_MS),
        }
    }
}

impl fmt::Display for Time {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl fmt::Debug for Dur {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ms", self.0 as f64 / NANOS_PER_MS)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ms_roundtrip_is_exact_for_table_values() {
        assert_eq!(Dur::from_ms(1.053).nanos(), 1_053_000);
        assert_eq!(Dur::from_ms(0.75).nanos(), 750_000);
        assert_eq!(Time::from_ms(11.25).nanos(), 11_250_000);
    }

    #[test]
    fn sentinels_saturate() {
        assert_eq!(Time::INF + Dur::from_ms(1.0), Time::INF);
        assert_eq!(Time::NEG_INF - Dur::from_ms(1.0), Time::NEG_INF);
        assert!(Time::NEG_INF < Time::ZERO && Time::ZERO < Time::INF);
    }
}
