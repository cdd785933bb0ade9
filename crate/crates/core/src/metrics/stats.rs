//! Summary statistics over the measurement window of a run.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::ids::GpuId;
use crate::sim::{Outcome, RunResult};
use crate::time::{Dur, Time};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelStats {
    pub name: String,
    pub slo_ms: f64,
    /// Arrivals inside the measurement window.
    pub arrivals: u64,
    pub completed: u64,
    pub late: u64,
    pub dropped: u64,
    /// Nearest-rank p99 with drops counted as infinite; `None` is infinite.
    pub p99_latency_ms: Option<f64>,
    pub meets_slo: bool,
    /// Batches dispatched for this model over the whole run, by size.
    pub batch_hist: BTreeMap<u32, u64>,
    /// Median batch size weighted by request.
    pub median_batch: Option<u32>,
    pub max_queueing_delay_ms: Option<f64>,
    pub median_queueing_delay_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunStats {
    pub scenario: String,
    pub policy: String,
    pub seed: u64,
    pub offered_rps: f64,
    pub window_s: f64,
    pub arrivals: u64,
    /// Requests served within their SLO per second of window.
    pub goodput_rps: f64,
    /// (dropped + late) / arrivals, over the window.
    pub bad_rate: f64,
    pub meets_slo: bool,
    pub gpu_busy_ns: Vec<i64>,
    pub gpu_idle_fraction: Vec<f64>,
    pub mean_idle_fraction: f64,
    pub median_batch: Option<u32>,
    pub aborted: bool,
    pub models: Vec<ModelStats>,
}

/// Nearest-rank quantile of `samples` (sorted in place); `None` elements
/// are infinite.
pub fn nearest_rank(samples: &mut [Option<Dur>], q: f64) -> Option<Option<Dur>> {
    if samples.is_empty() {
        return None;
    }
    samples.sort_by_key(|s| s.unwrap_or(Dur(i64::MAX)));
    let rank = ((q * samples.len() as f64).ceil() as usize).clamp(1, samples.len());
    Some(samples[rank - 1])
}

/// Largest number of bad samples out of `n` that still keeps the
/// nearest-rank `q` quantile good.
pub fn bad_allowance(n: u64, q: f64) -> u64 {
    if n == 0 {
        return 0;
    }
    let rank = ((q * n as f64).ceil() as u64).clamp(1, n);
    n - rank
}

fn weighted_median(hist: &BTreeMap<u32, u64>) -> Option<u32> {
    let total: u64 = hist.iter().map(|(b, c)| *b as u64 * c).sum();
    if total == 0 {
        return None;
    }
    let half = total.div_ceil(2);
    let mut acc = 0;
    for (b, c) in hist {
        acc += *b as u64 * c;
        if acc >= half {
            return Some(*b);
        }
    }
    None
}

/// Busy time of `gpu` that overlaps `[start, end)`.
pub fn busy_in(result: &RunResult, gpu: GpuId, start: Time, end: Time) -> Dur {
    result
        .orders
        .iter()
        .filter(|o| o.gpu == gpu)
        .map(|o| {
            let s = o.start.max(start);
            let e = o.finish.min(end);
            if e > s {
                e - s
            } else {
                Dur::ZERO
            }
        })
        .fold(Dur::ZERO, |a, b| a + b)
}

impl RunStats {
    pub fn from_result(result: &RunResult) -> RunStats {
        let (ws, we) = result.window;
        let window = we - ws;
        let n_models = result.models.len();
        let mut samples: Vec<Vec<Option<Dur>>> = vec![Vec::new(); n_models];
        let mut delays: Vec<Vec<Dur>> = vec![Vec::new(); n_models];
        let mut counts = vec![(0u64, 0u64, 0u64, 0u64); n_models];
        for r in result.requests.iter().filter(|r| result.in_window(r)) {
            let m = r.model.index();
            let c = &mut counts[m];
            c.0 += 1;
            match r.outcome {
                Outcome::Completed => c.1 += 1,
                Outcome::Late => c.2 += 1,
                Outcome::Dropped | Outcome::Unresolved => c.3 += 1,
            }
            samples[m].push(if r.outcome == Outcome::Dropped { None } else { r.latency() });
            if let Some(d) = r.queueing_delay() {
                delays[m].push(d);
            }
        }
        let mut hists: Vec<BTreeMap<u32, u64>> = vec![BTreeMap::new(); n_models];
        let mut all_hist = BTreeMap::new();
        for o in &result.orders {
            *hists[o.model.index()].entry(o.size()).or_insert(0) += 1;
            *all_hist.entry(o.size()).or_insert(0) += 1;
        }
        let models: Vec<ModelStats> = (0..n_models)
            .map(|m| {
                let info = &result.models[m];
                let p99 = nearest_rank(&mut samples[m], 0.99);
                let meets = match p99 {
                    None => true,
                    Some(None) => false,
                    Some(Some(d)) => d <= info.slo,
                };
                delays[m].sort();
                let (arrivals, completed, late, dropped) = counts[m];
                ModelStats {
                    name: info.name.clone(),
                    slo_ms: info.slo.as_ms(),
                    arrivals,
                    completed,
                    late,
                    dropped,
                    p99_latency_ms: p99.flatten().map(|d| d.as_ms()),
                    meets_slo: meets,
                    median_batch: weighted_median(&hists[m]),
                    batch_hist: std::mem::take(&mut hists[m]),
                    max_queueing_delay_ms: delays[m].last().map(|d| d.as_ms()),
                    median_queueing_delay_ms: delays[m].get(delays[m].len().saturating_sub(1) / 2).map(|d| d.as_ms()),
                }
            })
            .collect();
        let arrivals: u64 = models.iter().map(|m| m.arrivals).sum();
        let good: u64 = models.iter().map(|m| m.completed).sum();
        let bad: u64 = models.iter().map(|m| m.late + m.dropped).sum();
        let gpu_busy: Vec<Dur> = (0..result.gpus).map(|g| busy_in(result, GpuId(g as u32), ws, we)).collect();
        let idle: Vec<f64> = gpu_busy.iter().map(|b| 1.0 - b.nanos() as f64 / window.nanos() as f64).collect();
        let mean_idle = if idle.is_empty() { 0.0 } else { idle.iter().sum::<f64>() / idle.len() as f64 };
        RunStats {
            scenario: result.scenario.clone(),
            policy: result.policy.clone(),
            seed: result.seed,
            offered_rps: result.rate_rps,
            window_s: window.as_secs(),
            arrivals,
            goodput_rps: good as f64 / window.as_secs(),
            bad_rate: if arrivals == 0 { 0.0 } else { bad as f64 / arrivals as f64 },
            meets_slo: !result.aborted && models.iter().all(|m| m.meets_slo),
            gpu_busy_ns: gpu_busy.iter().map(|d| d.nanos()).collect(),
            gpu_idle_fraction: idle,
            mean_idle_fraction: mean_idle,
            median_batch: weighted_median(&all_hist),
            aborted: result.aborted,
            models,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }

    /// CSV `model,batch_size,count`.
    pub fn write_batch_hist_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["model", "batch_size", "count"])?;
        for m in &self.models {
            for (b, c) in &m.batch_hist {
                w.write_record([m.name.clone(), b.to_string(), c.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// CSV `gpu,busy_ns,idle_ns` over the measurement window.
    pub fn write_utilization_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let window = Dur::from_secs(self.window_s).nanos();
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["gpu", "busy_ns", "idle_ns"])?;
        for (g, busy) in self.gpu_busy_ns.iter().enumerate() {
            w.write_record([g.to_string(), busy.to_string(), (window - busy).to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// CSV `request_id,model,latency_ns,queueing_delay_ns,outcome` for requests
/// in the measurement window; latency is empty for drops.
pub fn write_latency_csv<W: Write>(result: &RunResult, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["request_id", "model", "latency_ns", "queueing_delay_ns", "outcome"])?;
    for r in result.requests.iter().filter(|r| result.in_window(r)) {
        w.write_record([
            r.id.0.to_string(),
            result.models[r.model.index()].name.clone(),
            r.latency().map(|d| d.nanos().to_string()).unwrap_or_default(),
            r.queueing_delay().map(|d| d.nanos().to_string()).unwrap_or_default(),
            r.outcome.as_str().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_counts_drops_as_infinite() {
        let mut s: Vec<Option<Dur>> = (1..=99).map(|i| Some(Dur(i))).collect();
        s.push(None);
        assert_eq!(nearest_rank(&mut s, 0.99), Some(Some(Dur(99))));
        s.push(None);
        assert_eq!(nearest_rank(&mut s, 0.99), Some(None));
    }

    #[test]
    fn allowance_matches_nearest_rank() {
        assert_eq!(bad_allowance(100, 0.99), 1);
        assert_eq!(bad_allowance(101, 0.99), 1);
        assert_eq!(bad_allowance(99, 0.99), 0);
        assert_eq!(bad_allowance(1000, 0.99), 10);
        assert_eq!(bad_allowance(0, 0.99), 0);
        for n in 1..500u64 {
            let allow = bad_allowance(n, 0.99);
            let mut s: Vec<Option<Dur>> = (0..n).map(|i| if i < allow { None } else { Some(Dur(1)) }).collect();
            assert_eq!(nearest_rank(&mut s, 0.99), Some(Some(Dur(1))), "n={n}");
            let mut s: Vec<Option<Dur>> = (0..n).map(|i| if i <= allow { None } else { Some(Dur(1)) }).collect();
            assert_eq!(nearest_rank(&mut s, 0.99), Some(None), "n={n}");
        }
    }

    #[test]
    fn weighted_median_by_requests() {
        let hist = BTreeMap::from([(1, 10), (16, 10)]);
        assert_eq!(weighted_median(&hist), Some(16));
    }
}
