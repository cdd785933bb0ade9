//! The discrete-event engine.
//!
//! Events at the same tick run in class order: batch completions, request
//! arrivals, drop timers, model timers, then GPU timers; within a class,
//! in scheduling order.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ids::GpuId;
use crate::scheduler::{Effects, Request, SchedError, Scheduler, TimerKind, TimerRequest};
use crate::time::Time;

use super::result::{DropEvent, EngineCounters, ModelInfo, OrderRecord, Outcome, RequestRecord, RunResult};
use super::scenario::{Scenario, ValidationErrors};
use super::workload::{generate_arrivals, NETWORK_STREAM};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid scenario:\n{0}")]
    Invalid(ValidationErrors),
    #[error("scheduler protocol error: {0}")]
    Protocol(#[from] SchedError),
    #[error("invariant violated at {at:?}: {message}")]
    Invariant { at: Time, message: String },
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Check scheduler and conservation invariants after every event.
    pub check_invariants: bool,
    /// Per-model allowance of bad (dropped or late) requests inside the
    /// measurement window; the run stops once any model exceeds it.
    pub abort_after_bad: Option<Vec<u64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Payload {
    Completion { order: usize },
    Timer(TimerKind, u64),
}

const CLASS_COMPLETION: u8 = 0;
const CLASS_ARRIVAL: u8 = 1;

fn timer_class(kind: TimerKind) -> u8 {
    match kind {
        TimerKind::Drop(_) => 2,
        TimerKind::Model(_) => 3,
        TimerKind::Gpu(_) => 4,
    }
}

struct EmulatedGpu {
    busy_until: Time,
}

/// Runs a scenario on its generated workload.
pub fn run(scenario: &Scenario) -> Result<RunResult, SimError> {
    run_with(scenario, None, &RunOptions::default())
}

/// Runs a scenario. `requests` overrides the generated workload; it must be
/// ordered by arrival with increasing ids.
pub fn run_with(scenario: &Scenario, requests: Option<&[Request]>, opts: &RunOptions) -> Result<RunResult, SimError> {
    scenario.validate().map_err(SimError::Invalid)?;
    let generated;
    let requests = match requests {
        Some(r) => r,
        None => {
            generated = generate_arrivals(&scenario.workload, &scenario.models, scenario.duration, scenario.seed);
            &generated
        }
    };
    Engine::new(scenario, requests, opts).run()
}

struct Engine<'a> {
    scenario: &'a Scenario,
    requests: &'a [Request],
    opts: &'a RunOptions,
    sched: Scheduler,
    heap: BinaryHeap<Reverse<(Time, u8, u64, Payload)>>,
    seq: u64,
    emit_seq: u64,
    gpus: Vec<EmulatedGpu>,
    net_rng: ChaCha8Rng,
    records: Vec<RequestRecord>,
    orders: Vec<OrderRecord>,
    drops: Vec<DropEvent>,
    counters: EngineCounters,
    bad_in_window: Vec<u64>,
    arrived: u64,
    dropped: u64,
    dispatched: u64,
    completed: u64,
}

impl<'a> Engine<'a> {
    fn new(scenario: &'a Scenario, requests: &'a [Request], opts: &'a RunOptions) -> Self {
        let mut net_rng = ChaCha8Rng::seed_from_u64(scenario.seed);
        net_rng.set_stream(NETWORK_STREAM);
        let records = requests
            .iter()
            .map(|r| RequestRecord {
                id: r.id,
                model: r.model,
                arrival: r.arrival,
                deadline: r.deadline,
                dispatch: None,
                start: None,
                finish: None,
                batch_size: 0,
                outcome: Outcome::Unresolved,
            })
            .collect();
        Engine {
            scenario,
            requests,
            opts,
            sched: Scheduler::with_batching(&scenario.models, scenario.gpus, &scenario.policy, &scenario.model_batching),
            heap: BinaryHeap::new(),
            seq: 0,
            emit_seq: 0,
            gpus: (0..scenario.gpus).map(|_| EmulatedGpu { busy_until: Time::ZERO }).collect(),
            net_rng,
            records,
            orders: Vec::new(),
            drops: Vec::new(),
            counters: EngineCounters::default(),
            bad_in_window: vec![0; scenario.models.len()],
            arrived: 0,
            dropped: 0,
            dispatched: 0,
            completed: 0,
        }
    }

    fn push(&mut self, at: Time, class: u8, payload: Payload) {
        self.seq += 1;
        self.heap.push(Reverse((at, class, self.seq, payload)));
    }

    fn record_index(&self, id: crate::ids::RequestId) -> usize {
        self.records
            .binary_search_by_key(&id, |r| r.id)
            .expect("scheduler only reports known requests")
    }

    fn in_window(&self, t: Time) -> bool {
        let (s, e) = self.scenario.window();
        t >= s && t < e
    }

    fn mark_bad(&mut self, idx: usize) {
        let r = &self.records[idx];
        if self.in_window(r.arrival) {
            self.bad_in_window[r.model.index()] += 1;
        }
    }

    fn over_allowance(&self) -> bool {
        match &self.opts.abort_after_bad {
            Some(allow) => self.bad_in_window.iter().zip(allow).any(|(b, a)| b > a),
            None => false,
        }
    }

    fn run(mut self) -> Result<RunResult, SimError> {
        let mut fx = Effects::default();
        let mut next_arrival = 0usize;
        let mut now = Time::ZERO;
        let mut aborted = false;
        loop {
            let arrival_key = self.requests.get(next_arrival).map(|r| (r.arrival, CLASS_ARRIVAL));
            let heap_key = self.heap.peek().map(|Reverse((t, c, _, _))| (*t, *c));
            let take_arrival = match (arrival_key, heap_key) {
                (None, None) => break,
                (Some(_), None) => true,
                (None, Some(_)) => false,
                (Some(a), Some(h)) => a < h,
            };
            let ops_before = self.sched.rank().index_ops();
            if take_arrival {
                let r = self.requests[next_arrival];
                next_arrival += 1;
                now = r.arrival;
                self.arrived += 1;
                self.counters.arrivals += 1;
                self.sched.on_request(r, now, &mut fx)?;
            } else {
                let Reverse((at, _, _, payload)) = self.heap.pop().unwrap();
                now = at;
                match payload {
                    Payload::Completion { order } => {
                        self.completed += self.orders[order].size() as u64;
                    }
                    Payload::Timer(kind, generation) => {
                        self.counters.timers_fired += 1;
                        self.sched.on_timer(TimerRequest { at, kind, generation }, now, &mut fx)?;
                    }
                }
            }
            self.counters.events += 1;
            let ops = self.sched.rank().index_ops() - ops_before;
            self.counters.max_index_ops_per_event = self.counters.max_index_ops_per_event.max(ops);
            self.apply(&mut fx, now);
            if self.opts.check_invariants {
                self.check(now)?;
            }
            if self.over_allowance() {
                aborted = true;
                break;
            }
        }
        self.counters.messages = self.sched.message_count();
        self.counters.grants = self.sched.grant_count();
        self.counters.evictions = self.sched.eviction_count();
        self.counters.rank_index_ops = self.sched.rank().index_ops();
        let s = self.scenario;
        Ok(RunResult {
            scenario: s.name.clone(),
            policy: s.policy.kind.label(),
            seed: s.seed,
            rate_rps: s.workload.rate_rps,
            gpus: s.gpus,
            models: s
                .models
                .iter()
                .map(|m| ModelInfo {
                    name: m.name.clone(),
                    slo: m.slo,
                })
                .collect(),
            window: s.window(),
            end_time: now,
            aborted,
            requests: self.records,
            orders: self.orders,
            drops: self.drops,
            counters: self.counters,
        })
    }

    fn apply(&mut self, fx: &mut Effects, now: Time) {
        // Within one event, drops are listed before orders.
        let mut i = 0;
        while i < fx.drops.len() {
            let model = fx.drops[i].request.model;
            let forced = fx.drops[i].forced;
            let mut ids = Vec::new();
            while i < fx.drops.len() && fx.drops[i].request.model == model && fx.drops[i].forced == forced {
                let d = fx.drops[i];
                let idx = self.record_index(d.request.id);
                let rec = &mut self.records[idx];
                rec.dispatch = Some(d.at);
                rec.outcome = Outcome::Dropped;
                ids.push(d.request.id);
                self.mark_bad(idx);
                self.dropped += 1;
                i += 1;
            }
            self.emit_seq += 1;
            self.drops.push(DropEvent {
                seq: self.emit_seq,
                model,
                at: now,
                forced,
                requests: ids,
            });
        }
        for order in fx.orders.drain(..) {
            let b = order.size();
            let delay = self.scenario.policy.delay;
            let ctrl = self
                .scenario
                .network
                .sample_ctrl(&mut self.net_rng)
                .unwrap_or(delay.ctrl);
            let reaches_gpu = order.dispatched_at + ctrl + delay.per_request * b as i64;
            let gpu = &mut self.gpus[order.gpu.index()];
            let start = order.start.max(reaches_gpu).max(gpu.busy_until);
            let finish = start + self.scenario.models[order.model.index()].profile.latency(b);
            gpu.busy_until = finish;
            let ids: Vec<_> = order.requests.iter().map(|r| r.id).collect();
            for r in &order.requests {
                let idx = self.record_index(r.id);
                let rec = &mut self.records[idx];
                rec.dispatch = Some(order.dispatched_at);
                rec.start = Some(start);
                rec.finish = Some(finish);
                rec.batch_size = b;
                rec.outcome = if finish <= rec.deadline {
                    Outcome::Completed
                } else {
                    Outcome::Late
                };
                if rec.outcome == Outcome::Late {
                    self.mark_bad(idx);
                }
            }
            self.dispatched += b as u64;
            self.emit_seq += 1;
            let index = self.orders.len();
            self.orders.push(OrderRecord {
                seq: self.emit_seq,
                model: order.model,
                gpu: order.gpu,
                dispatched_at: order.dispatched_at,
                planned_start: order.start,
                start,
                finish,
                shrunk: order.shrunk,
                requests: ids,
            });
            self.push(finish, CLASS_COMPLETION, Payload::Completion { order: index });
        }
        for t in fx.timers.drain(..) {
            self.push(t.at.max(now), timer_class(t.kind), Payload::Timer(t.kind, t.generation));
        }
        fx.clear();
    }

    fn check(&mut self, now: Time) -> Result<(), SimError> {
        self.counters.invariant_checks += 1;
        let fail = |message: String| SimError::Invariant { at: now, message };
        self.sched.check_invariants(now).map_err(fail)?;
        let queued: u64 = self.sched.models().iter().map(|m| m.queue().len() as u64).sum();
        let in_flight = self.dispatched - self.completed;
        if self.arrived != self.completed + self.dropped + queued + in_flight {
            return Err(fail(format!(
                "conservation: arrived {} != completed {} + dropped {} + queued {} + in flight {}",
                self.arrived, self.completed, self.dropped, queued, in_flight
            )));
        }
        for g in 0..self.scenario.gpus {
            if self.sched.gpu_free_at(GpuId(g as u32)) == Some(Time::INF) {
                return Err(fail(format!("GPU {g} left with an outstanding grant")));
            }
        }
        Ok(())
    }
}
