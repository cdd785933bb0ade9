//! Overload and underload behaviour relative to a measured capacity, and
//! the GPU allocation advice that follows from it.

use serde::Serialize;

use crate::sim::{run, Scenario, SimError};

use super::stats::RunStats;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlatTopPoint {
    pub offered_rps: f64,
    pub goodput_rps: f64,
    pub bad_rate: f64,
    pub idle_fraction: f64,
    /// `(o - p) / o` above capacity, `(p - o) / p` below it.
    pub expected: f64,
    /// Measured quantity the expectation applies to.
    pub measured: f64,
    pub within: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlatTopReport {
    pub capacity_rps: f64,
    pub epsilon: f64,
    pub points: Vec<FlatTopPoint>,
}

impl FlatTopReport {
    pub fn all_within(&self) -> bool {
        self.points.iter().all(|p| p.within)
    }
}

/// Evaluates one run at offered load `o` against capacity `p`.
pub fn flat_top_point(stats: &RunStats, capacity: f64, epsilon: f64) -> FlatTopPoint {
    let o = stats.offered_rps;
    let (expected, measured) = if o > capacity {
        ((o - capacity) / o, stats.bad_rate)
    } else {
        ((capacity - o) / capacity, stats.mean_idle_fraction)
    };
    FlatTopPoint {
        offered_rps: o,
        goodput_rps: stats.goodput_rps,
        bad_rate: stats.bad_rate,
        idle_fraction: stats.mean_idle_fraction,
        expected,
        measured,
        within: (measured - expected).abs() <= epsilon,
    }
}

/// Runs `template` at each offered load and compares bad rate (above
/// capacity) or idle fraction (below it) with the flat-top expectation.
pub fn flat_top_check(template: &Scenario, capacity: f64, offered: &[f64], epsilon: f64) -> Result<FlatTopReport, SimError> {
    let mut points = Vec::with_capacity(offered.len());
    for &o in offered {
        let result = run(&template.with_rate(o))?;
        points.push(flat_top_point(&RunStats::from_result(&result), capacity, epsilon));
    }
    Ok(FlatTopReport {
        capacity_rps: capacity,
        epsilon,
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Thresholds {
    pub bad_rate: f64,
    pub idle_fraction: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            bad_rate: 0.01,
            idle_fraction: 0.05,
        }
    }
}

/// Signed change in GPU count: `+ceil(N r / (1 - r))` when the bad rate is
/// above threshold, else `-floor(N f)` when idle time is, never leaving
/// fewer than one GPU.
pub fn autoscale_advice(bad_rate: f64, idle_fraction: f64, gpus: u32, t: Thresholds) -> i64 {
    let n = gpus as f64;
    if bad_rate > t.bad_rate {
        let r = bad_rate.min(0.999_999);
        (n * r / (1.0 - r) - 1e-9).ceil() as i64
    } else if idle_fraction > t.idle_fraction {
        let release = (n * idle_fraction.min(1.0) + 1e-9).floor() as i64;
        -release.min(gpus as i64 - 1).max(0)
    } else {
        0
    }
}
