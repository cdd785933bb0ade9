//! Parameter sweeps: policy comparisons over latency profiles, timeouts and
//! SLOs, and offered-load curves around a measured capacity.
//!
//! A sweep is expanded into independent [`SweepPoint`]s so callers can run
//! them in any order or in parallel; [`assemble`] restores the row order and
//! fills in the relative column.

use std::io::Write;
use std::str::FromStr;

use serde::Serialize;

use crate::profile::LatencyProfile;
use crate::scheduler::PolicyKind;
use crate::sim::{run, Scenario, SimError};
use crate::time::Dur;

use super::goodput::{goodput_search, GoodputConfig};
use super::stats::RunStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    /// beta/alpha with alpha taken from the template and SLO = 2 l(8).
    BetaRatio,
    /// Timeout as a fraction of each model's SLO.
    Timeout,
    /// Offered load as a multiple of the template's goodput.
    OfferedLoad,
    /// Absolute SLO in milliseconds applied to every model.
    Slo,
}

impl Dimension {
    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::BetaRatio => "beta_ratio",
            Dimension::Timeout => "timeout",
            Dimension::OfferedLoad => "offered_load",
            Dimension::Slo => "slo",
        }
    }
}

impl FromStr for Dimension {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "beta_ratio" => Ok(Dimension::BetaRatio),
            "timeout" => Ok(Dimension::Timeout),
            "offered_load" => Ok(Dimension::OfferedLoad),
            "slo" => Ok(Dimension::Slo),
            other => Err(format!("unknown sweep dimension `{other}` (expected beta_ratio, timeout, offered_load or slo)")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error("sweep: {0}")]
    Invalid(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// What a point measures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Measure {
    Goodput,
    /// One run at a fixed offered rate.
    Offered(f64),
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    /// Row position in the assembled output.
    pub index: usize,
    /// Rows sharing a group are compared with that group's deferred row.
    pub group: usize,
    pub value: f64,
    pub scenario: Scenario,
    pub measure: Measure,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub dimension: &'static str,
    pub value: f64,
    pub policy: String,
    pub offered_rps: f64,
    pub goodput_rps: f64,
    pub bad_rate: f64,
    pub idle_fraction: f64,
    pub median_batch: Option<u32>,
    /// Goodput over the group's deferred goodput (or over the capacity for
    /// offered-load sweeps).
    pub relative: Option<f64>,
    #[serde(skip)]
    pub group: usize,
    #[serde(skip)]
    pub index: usize,
}

/// SLO = 2 l(8) for the linear profile `alpha`, `beta`.
pub fn beta_sweep_slo(alpha_ms: f64, beta_ms: f64) -> f64 {
    2.0 * (8.0 * alpha_ms + beta_ms)
}

/// Copy of `template` with every model on `l(b) = alpha b + ratio alpha`.
pub fn with_beta_ratio(template: &Scenario, ratio: f64) -> Result<Scenario, SweepError> {
    let mut s = template.clone();
    for m in &mut s.models {
        let (alpha, _) = m
            .profile
            .linear_params_ms()
            .ok_or_else(|| SweepError::Invalid(format!("beta_ratio needs linear profiles; `{}` is tabulated", m.name)))?;
        let beta = ratio * alpha;
        m.profile = LatencyProfile::linear(Dur::from_ms(alpha), Dur::from_ms(beta), m.profile.max_batch())
            .map_err(|e| SweepError::Invalid(e.to_string()))?;
        m.slo = Dur::from_ms(beta_sweep_slo(alpha, beta));
    }
    s.refresh_batching();
    Ok(s)
}

/// Copy of `template` with every model's SLO set to `slo_ms`.
pub fn with_slo(template: &Scenario, slo_ms: f64) -> Scenario {
    let mut s = template.clone();
    for m in &mut s.models {
        m.slo = Dur::from_ms(slo_ms);
    }
    s.refresh_batching();
    s
}

/// Expands a sweep. `capacity` is required for offered-load sweeps (the
/// template's goodput); other dimensions ignore it. Point `i` runs with
/// seed `template.seed + group`, so policies at one grid value share their
/// arrivals.
pub fn expand(template: &Scenario, dim: Dimension, grid: &[f64], capacity: Option<f64>) -> Result<Vec<SweepPoint>, SweepError> {
    if grid.is_empty() {
        return Err(SweepError::Invalid("empty grid".into()));
    }
    if let Some(v) = grid.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(SweepError::Invalid(format!("grid values must be finite and non-negative, got {v}")));
    }
    let mut points = Vec::new();
    let mut push = |group: usize, value: f64, scenario: Scenario, measure: Measure| {
        let index = points.len();
        let seed = scenario.seed.wrapping_add(group as u64);
        points.push(SweepPoint {
            index,
            group,
            value,
            scenario: scenario.with_seed(seed),
            measure,
        });
    };
    match dim {
        Dimension::BetaRatio | Dimension::Slo => {
            for (g, &v) in grid.iter().enumerate() {
                let s = if dim == Dimension::BetaRatio {
                    with_beta_ratio(template, v)?
                } else {
                    if v <= 0.0 {
                        return Err(SweepError::Invalid("SLO must be positive".into()));
                    }
                    with_slo(template, v)
                };
                push(g, v, s.with_policy_kind(PolicyKind::Deferred), Measure::Goodput);
                push(g, v, s.with_policy_kind(PolicyKind::Eager), Measure::Goodput);
            }
        }
        Dimension::Timeout => {
            if let Some(v) = grid.iter().find(|v| **v > 1.0) {
                return Err(SweepError::Invalid(format!("timeout fractions must be within [0, 1], got {v}")));
            }
            push(0, f64::NAN, template.with_policy_kind(PolicyKind::Deferred), Measure::Goodput);
            for &v in grid {
                push(0, v, template.with_policy_kind(PolicyKind::TimeoutSloFraction { fraction: v }), Measure::Goodput);
            }
        }
        Dimension::OfferedLoad => {
            let p = capacity.ok_or_else(|| SweepError::Invalid("offered_load needs the capacity".into()))?;
            for &v in grid {
                push(0, v, template.with_rate(v * p), Measure::Offered(v * p));
            }
        }
    }
    Ok(points)
}

/// Runs one point. Goodput points report bad rate, idle fraction and batch
/// size from a run at the goodput found.
pub fn run_point(point: &SweepPoint, dim: Dimension, cfg: &GoodputConfig) -> Result<SweepRow, SweepError> {
    let (offered, goodput, stats) = match point.measure {
        Measure::Goodput => {
            let g = goodput_search(&point.scenario, cfg)?;
            let stats = if g.rate_rps > 0.0 {
                Some(RunStats::from_result(&run(&point.scenario.with_rate(g.rate_rps))?))
            } else {
                None
            };
            (g.rate_rps, g.rate_rps, stats)
        }
        Measure::Offered(o) => {
            let stats = RunStats::from_result(&run(&point.scenario.with_rate(o))?);
            (o, stats.goodput_rps, Some(stats))
        }
    };
    Ok(SweepRow {
        dimension: dim.as_str(),
        value: point.value,
        policy: point.scenario.policy.kind.label(),
        offered_rps: offered,
        goodput_rps: goodput,
        bad_rate: stats.as_ref().map_or(0.0, |s| s.bad_rate),
        idle_fraction: stats.as_ref().map_or(1.0, |s| s.mean_idle_fraction),
        median_batch: stats.as_ref().and_then(|s| s.median_batch),
        relative: None,
        group: point.group,
        index: point.index,
    })
}

/// Orders rows by point index and fills `relative`.
pub fn assemble(mut rows: Vec<SweepRow>, capacity: Option<f64>) -> Vec<SweepRow> {
    rows.sort_by_key(|r| r.index);
    let baseline: Vec<(usize, f64)> = rows
        .iter()
        .filter(|r| r.policy == "deferred")
        .map(|r| (r.group, r.goodput_rps))
        .collect();
    for r in &mut rows {
        let base = if r.dimension == "offered_load" {
            capacity
        } else {
            baseline.iter().find(|(g, _)| *g == r.group).map(|(_, v)| *v)
        };
        r.relative = base.filter(|b| *b > 0.0).map(|b| r.goodput_rps / b);
    }
    rows
}

/// Runs a whole sweep serially.
pub fn sweep(template: &Scenario, dim: Dimension, grid: &[f64], capacity: Option<f64>, cfg: &GoodputConfig) -> Result<Vec<SweepRow>, SweepError> {
    let points = expand(template, dim, grid, capacity)?;
    let rows = points.iter().map(|p| run_point(p, dim, cfg)).collect::<Result<Vec<_>, _>>()?;
    Ok(assemble(rows, capacity))
}

/// `dimension,value,policy,offered_rps,goodput_rps,bad_rate,idle_fraction,median_batch,relative`
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["dimension", "value", "policy", "offered_rps", "goodput_rps", "bad_rate", "idle_fraction", "median_batch", "relative"])?;
    for r in rows {
        w.write_record([
            r.dimension.to_string(),
            if r.value.is_nan() { String::new() } else { r.value.to_string() },
            r.policy.clone(),
            format!("{:.3}", r.offered_rps),
            format!("{:.3}", r.goodput_rps),
            format!("{:.6}", r.bad_rate),
            format!("{:.6}", r.idle_fraction),
            r.median_batch.map(|b| b.to_string()).unwrap_or_default(),
            r.relative.map(|v| format!("{v:.6}")).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
