//! Request stream generation.
//!
//! Each model draws its arrivals from its own random substream, so changing
//! one model's share of the load never perturbs another model's stream.
//! Request ids are assigned in global arrival order starting at 1; a
//! single-model uniform stream keeps its 1-based position as the id so that
//! skipped positions leave gaps.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma};
use serde::Serialize;

use crate::ids::{ModelId, RequestId};
use crate::profile::ModelSpec;
use crate::scheduler::Request;
use crate::time::{Dur, Time};

/// Substream ids. Arrivals for model `m` use `ARRIVAL_STREAM + m`.
pub const ARRIVAL_STREAM: u64 = 1 << 20;
pub const NETWORK_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ArrivalProcess {
    Poisson,
    /// Gamma-distributed gaps with scale `1 / (rate * shape)`, so the mean
    /// rate does not depend on the shape.
    Gamma { shape: f64 },
    Uniform { gap: Dur, offset: Dur, skip: Vec<u64> },
    Replay { entries: Vec<(Time, ModelId)> },
    /// `(start, total_rate_rps)` segments.
    Piecewise { segments: Vec<(Time, f64)> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Popularity {
    Uniform,
    Zipf { shape: f64 },
    Weights(Vec<f64>),
}

impl Popularity {
    /// Normalized per-model shares.
    pub fn shares(&self, n: usize) -> Vec<f64> {
        let raw: Vec<f64> = match self {
            Popularity::Uniform => vec![1.0; n],
            Popularity::Zipf { shape } => (1..=n).map(|k| (k as f64).powf(-shape)).collect(),
            Popularity::Weights(w) => w.clone(),
        };
        let total: f64 = raw.iter().sum();
        raw.iter().map(|w| w / total).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkloadSpec {
    pub arrival: ArrivalProcess,
    pub popularity: Popularity,
    /// Total offered rate, requests per second. Unused by uniform and replay.
    pub rate_rps: f64,
}

impl WorkloadSpec {
    pub fn new(arrival: ArrivalProcess, popularity: Popularity, rate_rps: f64) -> Self {
        WorkloadSpec {
            arrival,
            popularity,
            rate_rps,
        }
    }

    pub fn poisson(rate_rps: f64) -> Self {
        Self::new(ArrivalProcess::Poisson, Popularity::Uniform, rate_rps)
    }

    pub fn is_stochastic(&self) -> bool {
        matches!(
            self.arrival,
            ArrivalProcess::Poisson | ArrivalProcess::Gamma { .. } | ArrivalProcess::Piecewise { .. }
        )
    }

    pub fn check(&self, models: usize) -> Result<(), Vec<String>> {
        let mut errors = Vec::new();
        match &self.arrival {
            ArrivalProcess::Poisson => {}
            ArrivalProcess::Gamma { shape } => {
                if !(*shape > 0.0 && shape.is_finite()) {
                    errors.push(format!("workload: gamma shape must be positive, got {shape}"));
                }
            }
            ArrivalProcess::Uniform { gap, offset, .. } => {
                if *gap <= Dur::ZERO {
                    errors.push("workload: uniform gap_ms must be positive".into());
                }
                if *offset < Dur::ZERO {
                    errors.push("workload: uniform offset_ms must be non-negative".into());
                }
            }
            ArrivalProcess::Replay { .. } => {}
            ArrivalProcess::Piecewise { segments } => {
                if segments.first().map(|s| s.0) != Some(Time::ZERO) {
                    errors.push("workload: piecewise segments must start at 0".into());
                }
                if segments.windows(2).any(|w| w[1].0 <= w[0].0) {
                    errors.push("workload: piecewise segment starts must increase".into());
                }
                if segments.iter().any(|s| !(s.1 >= 0.0 && s.1.is_finite())) {
                    errors.push("workload: piecewise rates must be non-negative".into());
                }
            }
        }
        if matches!(self.arrival, ArrivalProcess::Poisson | ArrivalProcess::Gamma { .. })
            && !(self.rate_rps >= 0.0 && self.rate_rps.is_finite())
        {
            errors.push(format!("workload: rate_rps must be non-negative, got {}", self.rate_rps));
        }
        match &self.popularity {
            Popularity::Uniform => {}
            Popularity::Zipf { shape } => {
                if !(*shape > 0.0) {
                    errors.push("workload: zipf shape must be positive".into());
                }
            }
            Popularity::Weights(w) => {
                if w.len() != models {
                    errors.push(format!("workload: {} popularity weights for {models} models", w.len()));
                }
                if w.iter().any(|x| !(*x >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
                    errors.push("workload: popularity weights must be non-negative with a positive sum".into());
                }
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }
}

fn model_rng(seed: u64, model: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(ARRIVAL_STREAM + model as u64);
    rng
}

fn exp_gaps(rate_per_ns: f64, start: Time, end: Time, rng: &mut ChaCha8Rng, out: &mut Vec<Time>) {
    if rate_per_ns <= 0.0 {
        return;
    }
    let exp = Exp::new(rate_per_ns).expect("positive rate");
    let mut t = start.nanos() as f64;
    loop {
        t += exp.sample(rng);
        if t >= end.nanos() as f64 {
            return;
        }
        out.push(Time(t as i64));
    }
}

/// Generates all arrivals in `[0, horizon)`, ordered by time then model.
pub fn generate_arrivals(workload: &WorkloadSpec, models: &[ModelSpec], horizon: Dur, seed: u64) -> Vec<Request> {
    let end = Time::ZERO + horizon;
    let shares = workload.popularity.shares(models.len());
    let mut tagged: Vec<(Time, ModelId, u64)> = Vec::new();
    for (m, share) in shares.iter().enumerate() {
        let model = ModelId(m as u32);
        let mut times = Vec::new();
        let rate_ns = workload.rate_rps * share / 1e9;
        match &workload.arrival {
            ArrivalProcess::Poisson => exp_gaps(rate_ns, Time::ZERO, end, &mut model_rng(seed, m), &mut times),
            ArrivalProcess::Gamma { shape } => {
                if rate_ns > 0.0 {
                    let mut rng = model_rng(seed, m);
                    let gamma = Gamma::new(*shape, 1.0 / (rate_ns * shape)).expect("validated gamma");
                    let mut t = 0.0;
                    loop {
                        t += gamma.sample(&mut rng);
                        if t >= end.nanos() as f64 {
                            break;
                        }
                        times.push(Time(t as i64));
                    }
                }
            }
            ArrivalProcess::Piecewise { segments } => {
                let mut rng = model_rng(seed, m);
                for (i, (start, rate)) in segments.iter().enumerate() {
                    let seg_end = segments.get(i + 1).map_or(end, |s| s.0.min(end));
                    exp_gaps(rate * share / 1e9, *start, seg_end, &mut rng, &mut times);
                }
            }
            ArrivalProcess::Uniform { gap, offset, skip } => {
                let mut i = 1u64;
                loop {
                    let t = Time::ZERO + *offset + *gap * (i as i64 - 1);
                    if t >= end {
                        break;
                    }
                    if !skip.contains(&i) {
                        tagged.push((t, model, i));
                    }
                    i += 1;
                }
                continue;
            }
            ArrivalProcess::Replay { entries } => {
                tagged.extend(entries.iter().filter(|(t, mm)| *mm == model && *t < end).map(|(t, _)| (*t, model, 0)));
                continue;
            }
        }
        tagged.extend(times.into_iter().map(|t| (t, model, 0)));
    }
    tagged.sort_by_key(|&(t, m, i)| (t, m, i));
    let keep_positions = models.len() == 1 && matches!(workload.arrival, ArrivalProcess::Uniform { .. });
    tagged
        .into_iter()
        .enumerate()
        .map(|(k, (t, m, i))| Request {
            id: RequestId(if keep_positions { i } else { k as u64 + 1 }),
            model: m,
            arrival: t,
            deadline: t + models[m.index()].slo,
        })
        .collect()
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("replay {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("replay {path}: line {line}: {message}")]
    Malformed { path: String, line: u64, message: String },
}

/// Reads a CSV `arrival_ns,model_name` trace.
pub fn read_replay(path: &Path, models: &[ModelSpec]) -> Result<Vec<(Time, ModelId)>, ReplayError> {
    let text = std::fs::read_to_string(path).map_err(|source| ReplayError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_replay(&path.display().to_string(), &text, models)
}

pub fn parse_replay(name: &str, text: &str, models: &[ModelSpec]) -> Result<Vec<(Time, ModelId)>, ReplayError> {
    let malformed = |line: u64, message: String| ReplayError::Malformed {
        path: name.to_string(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| malformed(1, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != ["arrival_ns", "model_name"] {
        return Err(malformed(1, "expected header `arrival_ns,model_name`".into()));
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| malformed(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let t: i64 = record[0]
            .parse()
            .map_err(|_| malformed(line, format!("bad arrival_ns `{}`", &record[0])))?;
        if t < 0 {
            return Err(malformed(line, "negative arrival_ns".into()));
        }
        let model = models
            .iter()
            .find(|m| m.name == record[1])
            .ok_or_else(|| malformed(line, format!("unknown model `{}`", &record[1])))?;
        out.push((Time(t), model.id));
    }
    Ok(out)
}

/// Per-model counts of requests arriving in `[start, end)`.
pub fn count_in_window(requests: &[Request], start: Time, end: Time, models: usize) -> Vec<u64> {
    let mut counts = vec![0; models];
    for r in requests.iter().filter(|r| r.arrival >= start && r.arrival < end) {
        counts[r.model.index()] += 1;
    }
    counts
}

/// A uniform draw in `[lo, hi]`, used by the network model.
pub(crate) fn uniform_between(rng: &mut ChaCha8Rng, lo: i64, hi: i64) -> i64 {
    if hi <= lo {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::LatencyProfile;

    fn models(n: usize) -> Vec<ModelSpec> {
        (0..n)
            .map(|i| {
                ModelSpec::new(
                    ModelId(i as u32),
                    format!("m{i}"),
                    LatencyProfile::linear_ms(1.0, 5.0).unwrap(),
                    Dur::from_ms(12.0),
                )
            })
            .collect()
    }

    #[test]
    fn uniform_stream_keeps_positions_and_skips() {
        let w = WorkloadSpec::new(
            ArrivalProcess::Uniform {
                gap: Dur::from_ms(0.75),
                offset: Dur::ZERO,
                skip: vec![13, 14, 15],
            },
            Popularity::Uniform,
            0.0,
        );
        let reqs = generate_arrivals(&w, &models(1), Dur::from_ms(15.0), 0);
        assert_eq!(reqs[0].arrival, Time::ZERO);
        assert_eq!(reqs[2].arrival, Time::from_ms(1.5));
        let ids: Vec<u64> = reqs.iter().map(|r| r.id.0).collect();
        assert_eq!(ids, [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 16, 17, 18, 19, 20]);
        assert_eq!(reqs[12].arrival, Time::from_ms(11.25));
        assert_eq!(reqs[0].deadline, Time::from_ms(12.0));
    }

    #[test]
    fn same_seed_same_stream() {
        let w = WorkloadSpec::new(ArrivalProcess::Gamma { shape: 0.3 }, Popularity::Zipf { shape: 0.9 }, 2000.0);
        let a = generate_arrivals(&w, &models(4), Dur::from_secs(1.0), 7);
        let b = generate_arrivals(&w, &models(4), Dur::from_secs(1.0), 7);
        let c = generate_arrivals(&w, &models(4), Dur::from_secs(1.0), 8);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn ids_increase_with_arrival() {
        let w = WorkloadSpec::poisson(5000.0);
        let reqs = generate_arrivals(&w, &models(3), Dur::from_secs(0.5), 1);
        assert!(reqs.windows(2).all(|p| p[0].id < p[1].id && p[0].arrival <= p[1].arrival));
    }

    #[test]
    fn poisson_and_gamma_hit_the_mean_rate() {
        for arrival in [ArrivalProcess::Poisson, ArrivalProcess::Gamma { shape: 1.0 }, ArrivalProcess::Gamma { shape: 0.5 }] {
            let w = WorkloadSpec::new(arrival.clone(), Popularity::Uniform, 10_000.0);
            let n = generate_arrivals(&w, &models(1), Dur::from_secs(40.0), 11).len() as f64;
            let rate = n / 40.0;
            assert!((rate / 10_000.0 - 1.0).abs() < 0.01, "{arrival:?}: {rate}");
        }
    }

    #[test]
    fn zipf_shares_decrease() {
        let s = Popularity::Zipf { shape: 0.9 }.shares(5);
        assert!(s.windows(2).all(|w| w[0] > w[1]));
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adding_a_model_leaves_other_streams_alone() {
        let w = WorkloadSpec::new(ArrivalProcess::Poisson, Popularity::Weights(vec![1.0, 1.0]), 1000.0);
        let w3 = WorkloadSpec::new(ArrivalProcess::Poisson, Popularity::Weights(vec![1.0, 1.0, 1.0]), 1500.0);
        let a: Vec<_> = generate_arrivals(&w, &models(2), Dur::from_secs(1.0), 5)
            .into_iter()
            .filter(|r| r.model == ModelId(1))
            .map(|r| r.arrival)
            .collect();
        let b: Vec<_> = generate_arrivals(&w3, &models(3), Dur::from_secs(1.0), 5)
            .into_iter()
            .filter(|r| r.model == ModelId(1))
            .map(|r| r.arrival)
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn piecewise_rate_changes() {
        let w = WorkloadSpec::new(
            ArrivalProcess::Piecewise {
                segments: vec![(Time::ZERO, 1000.0), (Time::from_secs(5.0), 4000.0)],
            },
            Popularity::Uniform,
            0.0,
        );
        let reqs = generate_arrivals(&w, &models(1), Dur::from_secs(10.0), 3);
        let early = reqs.iter().filter(|r| r.arrival < Time::from_secs(5.0)).count() as f64;
        let late = reqs.len() as f64 - early;
        assert!((late / early - 4.0).abs() < 0.3);
    }

    #[test]
    fn replay_errors_carry_line_numbers() {
        let text = "arrival_ns,model_name\n0,m0\n5,nope\n";
        let err = parse_replay("t.csv", text, &models(1)).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        let ok = parse_replay("t.csv", "arrival_ns,model_name\n10,m0\n", &models(1)).unwrap();
        assert_eq!(ok, vec![(Time(10), ModelId(0))]);
    }
}
