//! Latency profiles and schedulable-window arithmetic.
//!
//! A profile maps a batch size to its execution duration. The scheduler, the
//! simulator, and the analytical oracle all read the same profile.

use serde::Serialize;
use thiserror::Error;

use crate::ids::ModelId;
use crate::time::{Dur, Time};

/// Cap applied to linear profiles when no explicit cap is configured.
pub const DEFAULT_MAX_BATCH: u32 = 1024;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProfileError {
    #[error("batch size {b} outside 1..={max_batch}")]
    InvalidBatchSize { b: u32, max_batch: u32 },
    #[error("invalid linear profile: alpha must be >= 0 and beta > 0 (alpha={alpha_ms}ms, beta={beta_ms}ms)")]
    InvalidLinear { alpha_ms: f64, beta_ms: f64 },
    #[error("latency table is empty")]
    EmptyTable,
    #[error("latency table must start at batch size 1 (first entry is {0})")]
    TableStart(u32),
    #[error("latency table batch sizes must strictly increase (at {0})")]
    TableOrder(u32),
    #[error("latency table decreases at batch size {b}: {prev_ms}ms -> {next_ms}ms")]
    NonMonotone { b: u32, prev_ms: f64, next_ms: f64 },
    #[error("latency must be positive (batch size {0})")]
    NonPositive(u32),
    #[error("max_batch must be >= 1")]
    ZeroMaxBatch,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProfileKind {
    /// `l(b) = alpha * b + beta`
    Linear { alpha: Dur, beta: Dur },
    /// `durations[b - 1]` is the latency of batch size `b`.
    Table { durations: Vec<Dur> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyProfile {
    kind: ProfileKind,
    max_batch: u32,
}

/// The interval in which a batch of a given size may be dispatched.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub frontrun: Time,
    pub latest: Time,
}

impl LatencyProfile {
    pub fn linear(alpha: Dur, beta: Dur, max_batch: u32) -> Result<Self, ProfileError> {
        if alpha.nanos() < 0 || beta.nanos() <= 0 {
            return Err(ProfileError::InvalidLinear {
                alpha_ms: alpha.as_ms(),
                beta_ms: beta.as_ms(),
            });
        }
        if max_batch == 0 {
            return Err(ProfileError::ZeroMaxBatch);
        }
        Ok(LatencyProfile {
            kind: ProfileKind::Linear { alpha, beta },
            max_batch,
        })
    }

    /// Linear profile from millisecond constants, capped at [`DEFAULT_MAX_BATCH`].
    pub fn linear_ms(alpha_ms: f64, beta_ms: f64) -> Result<Self, ProfileError> {
        if !(alpha_ms >= 0.0 && beta_ms > 0.0) {
            return Err(ProfileError::InvalidLinear { alpha_ms, beta_ms });
        }
        Self::linear(Dur::from_ms(alpha_ms), Dur::from_ms(beta_ms), DEFAULT_MAX_BATCH)
    }

    /// Builds a table profile from measured `(batch_size, latency)` points.
    ///
    /// Batch sizes between measured points are filled by linear
    /// interpolation; the cap is the largest measured batch size. Tables
    /// that decrease anywhere are rejected.
    pub fn from_points(points: &[(u32, Dur)]) -> Result<Self, ProfileError> {
        let (first, _) = *points.first().ok_or(ProfileError::EmptyTable)?;
        if first != 1 {
            return Err(ProfileError::TableStart(first));
        }
        let mut durations: Vec<Dur> = Vec::new();
        for pair in points.windows(2) {
            let ((b0, l0), (b1, l1)) = (pair[0], pair[1]);
            if b1 <= b0 {
                return Err(ProfileError::TableOrder(b1));
            }
            for b in b0..b1 {
                let frac = (b - b0) as f64 / (b1 - b0) as f64;
                let ns = l0.nanos() as f64 + frac * (l1.nanos() - l0.nanos()) as f64;
                durations.push(Dur(ns.round() as i64));
            }
        }
        durations.push(points[points.len() - 1].1);
        for (i, d) in durations.iter().enumerate() {
            if d.nanos() <= 0 {
                return Err(ProfileError::NonPositive(i as u32 + 1));
            }
            if i > 0 && *d < durations[i - 1] {
                return Err(ProfileError::NonMonotone {
                    b: i as u32 + 1,
                    prev_ms: durations[i - 1].as_ms(),
                    next_ms: d.as_ms(),
                });
            }
        }
        let max_batch = durations.len() as u32;
        Ok(LatencyProfile {
            kind: ProfileKind::Table { durations },
            max_batch,
        })
    }

    pub fn with_max_batch(mut self, max_batch: u32) -> Result<Self, ProfileError> {
        if max_batch == 0 {
            return Err(ProfileError::ZeroMaxBatch);
        }
        if let ProfileKind::Table { durations } = &self.kind {
            if max_batch as usize > durations.len() {
                return Err(ProfileError::InvalidBatchSize {
                    b: max_batch,
                    max_batch: durations.len() as u32,
                });
            }
        }
        self.max_batch = max_batch;
        Ok(self)
    }

    pub fn kind(&self) -> &ProfileKind {
        &self.kind
    }

    pub fn max_batch(&self) -> u32 {
        self.max_batch
    }

    /// `(alpha, beta)` in milliseconds for linear profiles.
    pub fn linear_params_ms(&self) -> Option<(f64, f64)> {
        match self.kind {
            ProfileKind::Linear { alpha, beta } => Some((alpha.as_ms(), beta.as_ms())),
            ProfileKind::Table { .. } => None,
        }
    }

    /// Execution latency of a batch of `b` requests.
    pub fn exec_latency(&self, b: u32) -> Result<Dur, ProfileError> {
        if b == 0 || b > self.max_batch {
            return Err(ProfileError::InvalidBatchSize {
                b,
                max_batch: self.max_batch,
            });
        }
        Ok(self.latency(b))
    }

    /// Unchecked latency; `b` is clamped into `1..=max_batch`.
    #[inline]
    pub fn latency(&self, b: u32) -> Dur {
        let b = b.clamp(1, self.max_batch);
        match &self.kind {
            ProfileKind::Linear { alpha, beta } => *alpha * b as i64 + *beta,
            ProfileKind::Table { durations } => durations[b as usize - 1],
        }
    }

    /// `l(b + 1)`, except at the cap where a full batch cannot grow and the
    /// value collapses to `l(max_batch)`.
    #[inline]
    pub fn latency_next(&self, b: u32) -> Dur {
        self.latency((b + 1).min(self.max_batch))
    }

    /// `[deadline - l(b+1), deadline - l(b)]`. Either end may lie in the past.
    pub fn schedulable_window(&self, deadline: Time, b: u32) -> Result<Window, ProfileError> {
        self.exec_latency(b)?;
        Ok(Window {
            frontrun: deadline - self.latency_next(b),
            latest: deadline - self.latency(b),
        })
    }

    /// Largest `b` with `start_offset + l(b) <= slo`, or 0 when none fits.
    pub fn max_feasible_batch(&self, slo: Dur, start_offset: Dur) -> u32 {
        let budget = slo - start_offset;
        // l is non-decreasing, so the feasible set is a prefix of 1..=max_batch.
        let (mut lo, mut hi) = (0u32, self.max_batch);
        while lo < hi {
            let mid = lo + (hi - lo).div_ceil(2);
            if self.latency(mid) <= budget {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        lo
    }

    /// Exhaustive monotonicity check over every batch size.
    pub fn check_monotone(&self) -> Result<(), ProfileError> {
        let mut prev = self.latency(1);
        for b in 2..=self.max_batch {
            let next = self.latency(b);
            if next < prev {
                return Err(ProfileError::NonMonotone {
                    b,
                    prev_ms: prev.as_ms(),
                    next_ms: next.as_ms(),
                });
            }
            prev = next;
        }
        Ok(())
    }
}

/// A served model: its latency profile and latency objective.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSpec {
    pub id: ModelId,
    pub name: String,
    pub profile: LatencyProfile,
    pub slo: Dur,
}

impl ModelSpec {
    pub fn new(id: ModelId, name: impl Into<String>, profile: LatencyProfile, slo: Dur) -> Self {
        ModelSpec {
            id,
            name: name.into(),
            profile,
            slo,
        }
    }

    /// A batch of one must fit inside the SLO.
    pub fn is_feasible(&self) -> bool {
        self.slo > self.profile.latency(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> LatencyProfile {
        LatencyProfile::linear_ms(1.0, 5.0).unwrap()
    }

    #[test]
    fn exec_latency_examples() {
        assert_eq!(toy().exec_latency(4).unwrap(), Dur::from_ms(9.0));
        let resnet = LatencyProfile::linear_ms(1.053, 5.072).unwrap();
        assert_eq!(resnet.exec_latency(16).unwrap(), Dur::from_ms(21.920));
        let densenet = LatencyProfile::linear_ms(0.054, 10.546).unwrap();
        assert_eq!(densenet.exec_latency(1).unwrap(), Dur::from_ms(10.600));
    }

    #[test]
    fn exec_latency_rejects_out_of_range() {
        let p = toy().with_max_batch(8).unwrap();
        assert!(matches!(p.exec_latency(0), Err(ProfileError::InvalidBatchSize { .. })));
        assert!(matches!(p.exec_latency(9), Err(ProfileError::InvalidBatchSize { .. })));
        assert!(p.exec_latency(8).is_ok());
    }

    #[test]
    fn window_examples() {
        let w = toy().schedulable_window(Time::from_ms(12.0), 4).unwrap();
        assert_eq!(w.frontrun, Time::from_ms(2.0));
        assert_eq!(w.latest, Time::from_ms(3.0));

        let flat = LatencyProfile::linear_ms(0.0, 7.0).unwrap();
        let w = flat.schedulable_window(Time::from_ms(20.0), 3).unwrap();
        assert_eq!(w.frontrun, Time::from_ms(13.0));
        assert_eq!(w.latest, Time::from_ms(13.0));

        let resnet = LatencyProfile::linear_ms(1.053, 5.072).unwrap();
        let w = resnet.schedulable_window(Time::from_ms(25.0), 7).unwrap();
        assert_eq!(w.frontrun, Time::from_ms(11.504));
        assert_eq!(w.latest, Time::from_ms(12.557));
    }

    #[test]
    fn window_collapses_at_cap() {
        let p = toy().with_max_batch(4).unwrap();
        let w = p.schedulable_window(Time::from_ms(12.0), 4).unwrap();
        assert_eq!(w.frontrun, w.latest);
    }

    #[test]
    fn max_feasible_batch_examples() {
        assert_eq!(toy().max_feasible_batch(Dur::from_ms(12.0), Dur::ZERO), 7);
        let resnet = LatencyProfile::linear_ms(1.053, 5.072).unwrap();
        assert_eq!(resnet.max_feasible_batch(Dur::from_ms(12.5), Dur::ZERO), 7);
        let irv2 = LatencyProfile::linear_ms(5.090, 18.368).unwrap();
        assert_eq!(irv2.max_feasible_batch(Dur::from_ms(62.222), Dur::ZERO), 8);
        assert_eq!(toy().max_feasible_batch(Dur::from_ms(5.5), Dur::ZERO), 0);
    }

    #[test]
    fn table_interpolates_and_rejects_decrease() {
        let p = LatencyProfile::from_points(&[
            (1, Dur::from_ms(2.0)),
            (3, Dur::from_ms(4.0)),
            (4, Dur::from_ms(4.0)),
        ])
        .unwrap();
        assert_eq!(p.max_batch(), 4);
        assert_eq!(p.exec_latency(2).unwrap(), Dur::from_ms(3.0));
        assert_eq!(p.exec_latency(4).unwrap(), Dur::from_ms(4.0));
        p.check_monotone().unwrap();

        let bad = LatencyProfile::from_points(&[(1, Dur::from_ms(2.0)), (2, Dur::from_ms(1.0))]);
        assert!(matches!(bad, Err(ProfileError::NonMonotone { b: 2, .. })));
        assert!(matches!(
            LatencyProfile::from_points(&[(2, Dur::from_ms(1.0))]),
            Err(ProfileError::TableStart(2))
        ));
    }

    #[test]
    fn linear_rejects_bad_parameters() {
        assert!(LatencyProfile::linear_ms(-1.0, 5.0).is_err());
        assert!(LatencyProfile::linear_ms(1.0, 0.0).is_err());
    }
}
