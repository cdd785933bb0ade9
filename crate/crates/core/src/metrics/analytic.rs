//! Closed-form batch sizes and throughput for a single model on `N` GPUs.
//!
//! Without coordination every GPU may find a batch just formed, so a request
//! can wait a full execution before its own: `2 l(b) <= SLO`. With
//! staggered execution the wait is at most `l(b) / N`:
//! `(1 + 1/N) l(b) <= SLO`. Throughput is `N b / l(b)` in both cases.

use serde::Serialize;

use crate::profile::{LatencyProfile, ProfileKind};
use crate::time::Dur;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Staggered,
    NoCoordination,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Staggered => "staggered",
            Mode::NoCoordination => "no_coordination",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StaggeredSolution {
    pub mode: Mode,
    pub batch: u32,
    pub throughput_rps: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalyticError {
    #[error("no batch size fits the {mode} budget of {budget_ms:.3} ms")]
    Infeasible { mode: &'static str, budget_ms: f64 },
    #[error("gpu count must be at least 1")]
    NoGpus,
}

/// Latency budget available to `l(b)` under `mode`, in milliseconds.
pub fn budget_ms(slo: Dur, gpus: u32, mode: Mode) -> f64 {
    let slo = slo.as_ms();
    match mode {
        Mode::Staggered => slo / (1.0 + 1.0 / gpus as f64),
        Mode::NoCoordination => slo / 2.0,
    }
}

pub fn analytical_solution(profile: &LatencyProfile, slo: Dur, gpus: u32, mode: Mode) -> Result<StaggeredSolution, AnalyticError> {
    if gpus == 0 {
        return Err(AnalyticError::NoGpus);
    }
    let budget = budget_ms(slo, gpus, mode);
    let batch = match profile.kind() {
        ProfileKind::Linear { alpha, beta } => {
            let (a, b) = (alpha.as_ms(), beta.as_ms());
            if a == 0.0 {
                if b <= budget {
                    profile.max_batch()
                } else {
                    0
                }
            } else {
                let x = ((budget - b) / a + 1e-9).floor();
                if x < 1.0 {
                    0
                } else {
                    (x as u64).min(profile.max_batch() as u64) as u32
                }
            }
        }
        ProfileKind::Table { .. } => profile.max_feasible_batch(Dur::from_ms(budget), Dur::ZERO),
    };
    if batch == 0 {
        return Err(AnalyticError::Infeasible {
            mode: mode.as_str(),
            budget_ms: budget,
        });
    }
    Ok(StaggeredSolution {
        mode,
        batch,
        throughput_rps: throughput_rps(profile, batch, gpus as f64),
    })
}

/// Largest batch meeting `(1 + 1/n) l(b) <= SLO` for a possibly fractional
/// GPU count `n`; 0 if none.
pub fn staggered_batch(profile: &LatencyProfile, slo: Dur, gpus: f64) -> u32 {
    if gpus <= 0.0 {
        return 0;
    }
    let budget = slo.as_ms() / (1.0 + 1.0 / gpus);
    profile.max_feasible_batch(Dur::from_ms(budget), Dur::ZERO)
}

/// `N b / l(b)` in requests per second; `gpus` may be fractional.
pub fn throughput_rps(profile: &LatencyProfile, batch: u32, gpus: f64) -> f64 {
    gpus * batch as f64 / profile.latency(batch).as_secs()
}

/// Best possible rate on `gpus` GPUs ignoring queueing: the largest batch
/// that fits the SLO, executed back to back.
pub fn batching_ceiling_rps(profile: &LatencyProfile, slo: Dur, gpus: f64) -> f64 {
    let b = profile.max_feasible_batch(slo, Dur::ZERO);
    if b == 0 {
        0.0
    } else {
        throughput_rps(profile, b, gpus)
    }
}
