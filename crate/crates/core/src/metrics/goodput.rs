//! Goodput: the highest offered rate at which every model still meets its
//! p99 latency objective, found by bisection over full simulation runs.

use serde::Serialize;

use crate::sim::{generate_arrivals, run_with, workload::count_in_window, RunOptions, RunResult, Scenario, SimError};

use super::analytic::{analytical_solution, batching_ceiling_rps, Mode};
use super::stats::{bad_allowance, RunStats};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GoodputConfig {
    /// Latency quantile that must stay within the SLO.
    pub quantile: f64,
    pub rel_tol: f64,
    pub max_iter: u32,
    /// Upper end of the initial bracket; derived from the analytics when
    /// absent.
    pub high_rps: Option<f64>,
    /// Re-run 0.9x the answer and require it to be feasible as well.
    pub verify: bool,
}

impl Default for GoodputConfig {
    fn default() -> Self {
        GoodputConfig {
            quantile: 0.99,
            rel_tol: 0.005,
            max_iter: 24,
            high_rps: None,
            verify: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Probe {
    pub rate_rps: f64,
    pub feasible: bool,
    /// The probe stopped early once a model ran out of allowance.
    pub aborted: bool,
    /// Worst model's bad count and its allowance.
    pub worst_bad: u64,
    pub worst_allowance: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GoodputResult {
    pub rate_rps: f64,
    pub bracket_high_rps: f64,
    pub probes: Vec<Probe>,
    /// No feasible probe was found above 0.
    pub zero: bool,
    /// Feasibility never increased with rate across probes.
    pub monotone: bool,
    pub diagnostics: String,
}

/// Initial upper bracket: twice the staggered throughput for one model, or
/// twice the sum of per-model batching ceilings, each on its popularity
/// share of the GPUs.
pub fn initial_high(template: &Scenario) -> f64 {
    let n = template.gpus as f64;
    if template.models.len() == 1 {
        let m = &template.models[0];
        if let Ok(s) = analytical_solution(&m.profile, m.slo, template.gpus as u32, Mode::Staggered) {
            return 2.0 * s.throughput_rps;
        }
        return 2.0 * batching_ceiling_rps(&m.profile, m.slo, n);
    }
    let shares = template.workload.popularity.shares(template.models.len());
    let total: f64 = template
        .models
        .iter()
        .zip(&shares)
        .map(|(m, w)| batching_ceiling_rps(&m.profile, m.slo, n * w))
        .sum();
    2.0 * total
}

/// Runs one probe at `rate_rps`, stopping as soon as the answer is known.
pub fn probe(template: &Scenario, rate_rps: f64, quantile: f64) -> Result<(Probe, RunResult), SimError> {
    let scenario = template.with_rate(rate_rps);
    let requests = generate_arrivals(&scenario.workload, &scenario.models, scenario.duration, scenario.seed);
    let (ws, we) = scenario.window();
    let counts = count_in_window(&requests, ws, we, scenario.models.len());
    let allowance: Vec<u64> = counts.iter().map(|n| bad_allowance(*n, quantile)).collect();
    let opts = RunOptions {
        check_invariants: false,
        abort_after_bad: Some(allowance.clone()),
    };
    let result = run_with(&scenario, Some(&requests), &opts)?;
    let stats = RunStats::from_result(&result);
    let (worst_bad, worst_allowance) = stats
        .models
        .iter()
        .zip(&allowance)
        .map(|(m, a)| (m.late + m.dropped, *a))
        .max_by_key(|(b, a)| (*b as i64 - *a as i64, *b))
        .unwrap_or((0, 0));
    let feasible = !result.aborted && stats.models.iter().zip(&allowance).all(|(m, a)| m.late + m.dropped <= *a);
    Ok((
        Probe {
            rate_rps,
            feasible,
            aborted: result.aborted,
            worst_bad,
            worst_allowance,
        },
        result,
    ))
}

pub fn goodput_search(template: &Scenario, cfg: &GoodputConfig) -> Result<GoodputResult, SimError> {
    let mut probes = Vec::new();
    let mut lo = 0.0f64;
    let mut hi = cfg.high_rps.unwrap_or_else(|| initial_high(template));
    let bracket = hi;
    // Grow the bracket until its top is infeasible.
    let mut grow = 0;
    loop {
        let (p, _) = probe(template, hi, cfg.quantile)?;
        let feasible = p.feasible;
        probes.push(p);
        if !feasible {
            break;
        }
        lo = hi;
        hi *= 2.0;
        grow += 1;
        if grow > 8 {
            break;
        }
    }
    let mut iter = 0;
    while iter < cfg.max_iter && (hi - lo) > cfg.rel_tol * hi {
        let mid = 0.5 * (lo + hi);
        let (p, _) = probe(template, mid, cfg.quantile)?;
        if p.feasible {
            lo = mid;
        } else {
            hi = mid;
        }
        probes.push(p);
        iter += 1;
    }
    if cfg.verify && lo > 0.0 {
        let (p, _) = probe(template, 0.9 * lo, cfg.quantile)?;
        probes.push(p);
    }
    let monotone = probes
        .iter()
        .all(|a| !a.feasible || probes.iter().all(|b| b.feasible || b.rate_rps > a.rate_rps));
    let zero = lo == 0.0;
    let diagnostics = if zero {
        let worst = probes.iter().min_by(|a, b| a.rate_rps.total_cmp(&b.rate_rps));
        match worst {
            Some(p) => format!(
                "no feasible rate found; lowest probe {:.3} r/s had {} bad requests against an allowance of {}",
                p.rate_rps, p.worst_bad, p.worst_allowance
            ),
            None => "no probes ran".into(),
        }
    } else {
        format!("{} probes, final bracket [{lo:.2}, {hi:.2}] r/s", probes.len())
    };
    Ok(GoodputResult {
        rate_rps: lo,
        bracket_high_rps: bracket,
        probes,
        zero,
        monotone,
        diagnostics,
    })
}
