//! Wall-clock throughput of the two-plane scheduler.
//!
//! Model planes are spread over worker threads; the rank plane runs on its
//! own thread. Planes exchange the same messages as in simulation, over
//! channels. Workers inject requests as fast as the rank plane accepts their
//! messages, and GPUs are bookkeeping only.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, unbounded, Receiver, RecvTimeoutError, Sender};
use serde::Serialize;

use crate::ids::{ModelId, RequestId};
use crate::profile::{LatencyProfile, ModelSpec};
use crate::scheduler::{Effects, Grant, ModelPlane, PolicyConfig, RankPlane, Request, TimerKind, TimerRequest, ToRank};
use crate::time::{Dur, Time};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchConfig {
    pub workers: usize,
    pub gpus: usize,
    pub models: usize,
    pub duration: Duration,
    pub alpha_ms: f64,
    pub beta_ms: f64,
    pub slo_ms: f64,
}

impl BenchConfig {
    pub fn new(workers: usize, gpus: usize) -> Self {
        BenchConfig {
            workers,
            gpus,
            models: 64,
            duration: Duration::from_secs(2),
            alpha_ms: 1.053,
            beta_ms: 5.072,
            slo_ms: 25.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchPoint {
    pub workers: usize,
    pub gpus: usize,
    pub models: usize,
    pub requests: u64,
    pub grants: u64,
    pub elapsed_s: f64,
    /// Requests scheduled per second of wall-clock time.
    pub decisions_per_sec: f64,
    pub ns_per_decision: f64,
}

enum ToWorker {
    Grant(Grant),
    Evicted { model: ModelId, floor: Time },
}

fn wall(start: Instant) -> Time {
    Time(start.elapsed().as_nanos() as i64)
}

pub fn scale_bench(cfg: &BenchConfig) -> BenchPoint {
    if cfg.workers == 0 || cfg.models == 0 || cfg.gpus == 0 {
        return BenchPoint {
            workers: cfg.workers,
            gpus: cfg.gpus,
            models: cfg.models,
            requests: 0,
            grants: 0,
            elapsed_s: 0.0,
            decisions_per_sec: 0.0,
            ns_per_decision: f64::INFINITY,
        };
    }
    let profile = LatencyProfile::linear_ms(cfg.alpha_ms, cfg.beta_ms).expect("valid bench profile");
    let specs: Vec<ModelSpec> = (0..cfg.models)
        .map(|m| ModelSpec::new(ModelId(m as u32), format!("m{m}"), profile.clone(), Dur::from_ms(cfg.slo_ms)))
        .collect();
    let policy = PolicyConfig::deferred();
    let (to_rank_tx, to_rank_rx) = bounded::<ToRank>(4096);
    let worker_channels: Vec<(Sender<ToWorker>, Receiver<ToWorker>)> = (0..cfg.workers).map(|_| unbounded()).collect();
    let start = Instant::now();
    let deadline = start + cfg.duration;

    let (requests, grants) = std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for w in 0..cfg.workers {
            let planes: Vec<ModelPlane> = specs
                .iter()
                .filter(|s| s.id.index() % cfg.workers == w)
                .map(|s| ModelPlane::new(s, &policy))
                .collect();
            let tx = to_rank_tx.clone();
            let rx = worker_channels[w].1.clone();
            handles.push(scope.spawn(move || worker(planes, cfg.workers, tx, rx, start, deadline)));
        }
        drop(to_rank_tx);
        let outboxes: Vec<Sender<ToWorker>> = worker_channels.iter().map(|c| c.0.clone()).collect();
        let rank = RankPlane::new(cfg.models, cfg.gpus, policy.delay);
        let grants = rank_loop(rank, to_rank_rx, outboxes, cfg.workers, start);
        let requests: u64 = handles.into_iter().map(|h| h.join().expect("bench worker panicked")).sum();
        (requests, grants)
    });
    let elapsed = start.elapsed().as_secs_f64();
    BenchPoint {
        workers: cfg.workers,
        gpus: cfg.gpus,
        models: cfg.models,
        requests,
        grants,
        elapsed_s: elapsed,
        decisions_per_sec: requests as f64 / elapsed,
        ns_per_decision: if requests == 0 { f64::INFINITY } else { elapsed * 1e9 / requests as f64 },
    }
}

fn worker(
    mut planes: Vec<ModelPlane>,
    workers: usize,
    tx: Sender<ToRank>,
    rx: Receiver<ToWorker>,
    start: Instant,
    deadline: Instant,
) -> u64 {
    let mut fx = Effects::default();
    let mut out = Vec::new();
    let mut drop_timers: BinaryHeap<Reverse<(Time, usize, u64)>> = BinaryHeap::new();
    let mut next_id = 1u64;
    let mut injected = 0u64;
    let mut turn = 0usize;
    let local = |m: ModelId| m.index() / workers;
    'run: while Instant::now() < deadline {
        let now = wall(start);
        while let Ok(msg) = rx.try_recv() {
            match msg {
                ToWorker::Grant(g) => planes[local(g.model)].on_grant(g.gpu, g.gpu_free_at, now, &mut fx, &mut out),
                ToWorker::Evicted { model, floor } => planes[local(model)].on_evicted(floor, now, &mut fx, &mut out),
            }
        }
        while let Some(&Reverse((at, p, generation))) = drop_timers.peek() {
            if at > now {
                break;
            }
            drop_timers.pop();
            planes[p].on_drop_timer(generation, now, &mut fx, &mut out);
        }
        let p = turn % planes.len();
        turn += 1;
        let model = planes[p].id();
        let r = Request {
            id: RequestId(next_id),
            model,
            arrival: now,
            deadline: now + planes[p].slo(),
        };
        next_id += 1;
        if planes[p].on_new_request(r, now, &mut fx, &mut out).is_ok() {
            injected += 1;
        }
        for t in fx.timers.drain(..) {
            if let TimerKind::Drop(m) = t.kind {
                drop_timers.push(Reverse((t.at, local(m), t.generation)));
            }
        }
        fx.clear();
        for msg in out.drain(..) {
            if tx.send(msg).is_err() {
                break 'run;
            }
        }
    }
    injected
}

fn rank_loop(mut rank: RankPlane, rx: Receiver<ToRank>, outboxes: Vec<Sender<ToWorker>>, workers: usize, start: Instant) -> u64 {
    let mut timers: BinaryHeap<Reverse<(Time, TimerKind, u64)>> = BinaryHeap::new();
    let mut pending = Vec::new();
    let mut evicted = Vec::new();
    let mut grants = 0u64;
    loop {
        let now = wall(start);
        let wait = timers
            .peek()
            .map(|Reverse((at, _, _))| Duration::from_nanos((*at - now).nanos().max(0) as u64))
            .unwrap_or(Duration::from_millis(1));
        match rx.recv_timeout(wait) {
            Ok(msg) => {
                let now = wall(start);
                let result = match msg {
                    ToRank::InformCandidate { model, candidate } => rank.inform_candidate(model, candidate, now, &mut pending),
                    ToRank::InformGpu { gpu, free_at } => rank.inform_gpu(gpu, free_at, now, &mut pending),
                };
                result.expect("bench protocol");
            }
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => return grants,
        }
        timers.extend(pending.drain(..).map(|t: TimerRequest| Reverse((t.at, t.kind, t.generation))));
        let now = wall(start);
        while let Some(&Reverse((at, kind, generation))) = timers.peek() {
            if at > now {
                break;
            }
            timers.pop();
            let grant = match kind {
                TimerKind::Model(m) => rank.on_model_timer(m, generation, now, &mut pending),
                TimerKind::Gpu(g) => rank.on_gpu_timer(g, generation, now, &mut pending, &mut evicted),
                TimerKind::Drop(_) => Ok(None),
            }
            .expect("bench protocol");
            for (model, floor) in evicted.drain(..) {
                let _ = outboxes[model.index() % workers].send(ToWorker::Evicted { model, floor });
            }
            if let Some(g) = grant {
                grants += 1;
                let _ = outboxes[g.model.index() % workers].send(ToWorker::Grant(g));
            }
            timers.extend(pending.drain(..).map(|t| Reverse((t.at, t.kind, t.generation))));
        }
    }
}

/// Runs every combination of worker and GPU counts.
pub fn scale_bench_table(workers: &[usize], gpus: &[usize], models: usize, duration: Duration) -> Vec<BenchPoint> {
    let mut out = Vec::new();
    for &g in gpus {
        for &w in workers {
            let mut cfg = BenchConfig::new(w, g);
            cfg.models = models;
            cfg.duration = duration;
            out.push(scale_bench(&cfg));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_workers_schedule_nothing() {
        let p = scale_bench(&BenchConfig::new(0, 8));
        assert_eq!(p.requests, 0);
        assert_eq!(p.decisions_per_sec, 0.0);
    }

    #[test]
    fn short_run_makes_progress() {
        let mut cfg = BenchConfig::new(2, 16);
        cfg.models = 8;
        cfg.duration = Duration::from_millis(200);
        let p = scale_bench(&cfg);
        assert!(p.requests > 0);
        assert!(p.grants > 0);
    }
}
