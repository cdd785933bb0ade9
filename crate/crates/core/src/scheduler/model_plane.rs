use std::collections::VecDeque;

use crate::ids::{GpuId, ModelId, RequestId};
use crate::profile::{LatencyProfile, ModelSpec};
use crate::time::{Dur, Time};

use super::policy::{BatchPolicy, DispatchDelay, DispatchRule, PolicyConfig};
use super::{BatchCandidate, DropRecord, Effects, ExecutionOrder, Request, SchedError, TimerKind, TimerRequest, ToRank};

/// Result of gathering a batch from the head of a queue.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BatchSelection {
    /// The batch is `queue[..size]` after the drops below were popped.
    pub size: u32,
    pub dropped: Vec<Request>,
    /// Number of leading `dropped` entries removed only to fit `floor`.
    pub forced: usize,
}

/// Gathers the longest feasible prefix of `queue`.
///
/// Heads that cannot finish even alone when dispatched now are popped and
/// returned as drops. The remaining prefix of size `b` must satisfy
/// `max(now + delay(b), floor, hold) + l(b) <= head deadline`, where `hold`
/// is the head's arrival plus the timeout `k` when one applies. If `floor`
/// (a granted GPU's free time) admits no batch at all, the head is dropped
/// and the search repeats.
pub fn get_batch(
    queue: &mut VecDeque<Request>,
    now: Time,
    floor: Time,
    timeout: Option<Dur>,
    profile: &LatencyProfile,
    delay: DispatchDelay,
    batching: BatchPolicy,
) -> BatchSelection {
    let mut sel = BatchSelection::default();
    let hold = |r: &Request| timeout.map_or(Time::NEG_INF, |k| r.arrival + k);
    loop {
        while let Some(head) = queue.front() {
            if (now + delay.of(1)).max(hold(head)) + profile.latency(1) > head.deadline {
                sel.dropped.push(queue.pop_front().unwrap());
            } else {
                break;
            }
        }
        let Some(head) = queue.front() else {
            return sel;
        };
        let deadline = head.deadline;
        let floor = floor.max(hold(head));
        let limit = (queue.len() as u32).min(profile.max_batch());
        let fits = |b: u32| (now + delay.of(b)).max(floor) + profile.latency(b) <= deadline;
        let (mut lo, mut hi) = (0u32, limit);
        while lo < hi {
            let mid = lo + (hi - lo).div_ceil(2);
            if fits(mid) {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        let b = lo;
        if b == 0 {
            sel.dropped.push(queue.pop_front().unwrap());
            sel.forced = sel.dropped.len();
            continue;
        }
        if let BatchPolicy::DropHead { target } = batching {
            if b < limit && b < target.min(limit) {
                sel.dropped.push(queue.pop_front().unwrap());
                continue;
            }
        }
        sel.size = b;
        return sel;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ModelCounters {
    pub received: u64,
    pub dropped: u64,
    pub batches: u64,
    pub dispatched: u64,
}

/// Per-model batching state: the FIFO queue and the current candidate.
#[derive(Debug, Clone)]
pub struct ModelPlane {
    id: ModelId,
    profile: LatencyProfile,
    slo: Dur,
    rule: DispatchRule,
    lead_in: Option<(DispatchRule, Time)>,
    batching: BatchPolicy,
    delay: DispatchDelay,
    queue: VecDeque<Request>,
    candidate: Option<BatchCandidate>,
    last_request: Option<RequestId>,
    drop_generation: u64,
    drop_armed_for: Option<RequestId>,
    counters: ModelCounters,
}

impl ModelPlane {
    pub fn new(spec: &ModelSpec, policy: &PolicyConfig) -> Self {
        Self::with_batching(spec, policy, policy.batching)
    }

    /// Like `new`, with a model-specific batch-gathering policy.
    pub fn with_batching(spec: &ModelSpec, policy: &PolicyConfig, batching: BatchPolicy) -> Self {
        ModelPlane {
            id: spec.id,
            profile: spec.profile.clone(),
            slo: spec.slo,
            rule: policy.kind.resolve(spec.slo),
            lead_in: policy.lead_in.map(|l| (l.kind.resolve(spec.slo), l.until)),
            batching,
            delay: policy.delay,
            queue: VecDeque::new(),
            candidate: None,
            last_request: None,
            drop_generation: 0,
            drop_armed_for: None,
            counters: ModelCounters::default(),
        }
    }

    pub fn id(&self) -> ModelId {
        self.id
    }

    pub fn slo(&self) -> Dur {
        self.slo
    }

    pub fn profile(&self) -> &LatencyProfile {
        &self.profile
    }

    pub fn candidate(&self) -> Option<BatchCandidate> {
        self.candidate
    }

    pub fn queue(&self) -> &VecDeque<Request> {
        &self.queue
    }

    pub fn counters(&self) -> ModelCounters {
        self.counters
    }

    /// Ids of the current candidate's members.
    pub fn candidate_members(&self) -> Vec<RequestId> {
        let n = self.candidate.map_or(0, |c| c.size as usize);
        self.queue.iter().take(n).map(|r| r.id).collect()
    }

    fn rule_at(&self, now: Time) -> DispatchRule {
        match self.lead_in {
            Some((rule, until)) if now < until => rule,
            _ => self.rule,
        }
    }

    /// Enqueues `r` and refreshes the candidate.
    pub fn on_new_request(&mut self, r: Request, now: Time, fx: &mut Effects, out: &mut Vec<ToRank>) -> Result<(), SchedError> {
        if r.model != self.id {
            return Err(SchedError::MisroutedRequest {
                request: r.id,
                plane: self.id,
                target: r.model,
            });
        }
        if let Some(last) = self.last_request {
            if r.id <= last {
                return Err(SchedError::DuplicateRequest {
                    model: self.id,
                    request: r.id,
                    last,
                });
            }
        }
        self.last_request = Some(r.id);
        self.counters.received += 1;
        self.queue.push_back(r);
        self.update_candidate(now, Time::NEG_INF, fx);
        out.push(self.inform());
        Ok(())
    }

    /// Recomputes the candidate. `gpu_free_floor` is the granted GPU's free
    /// time when called from a grant, `Time::NEG_INF` otherwise.
    pub fn update_candidate(&mut self, now: Time, gpu_free_floor: Time, fx: &mut Effects) -> Option<BatchCandidate> {
        let rule = self.rule_at(now);
        let timeout = match rule {
            DispatchRule::Deferred => None,
            DispatchRule::Timeout(k) => Some(k),
        };
        let sel = get_batch(&mut self.queue, now, gpu_free_floor, timeout, &self.profile, self.delay, self.batching);
        for (i, request) in sel.dropped.iter().enumerate() {
            fx.drops.push(DropRecord {
                request: *request,
                at: now,
                forced: i < sel.forced,
            });
        }
        self.counters.dropped += sel.dropped.len() as u64;

        self.candidate = if sel.size > 0 {
            let b = sel.size;
            let head = self.queue[0];
            let latest = head.deadline - self.profile.latency(b);
            let policy_floor = match rule {
                DispatchRule::Deferred => head.deadline - self.profile.latency_next(b),
                DispatchRule::Timeout(k) => head.arrival + k,
            };
            let exec_at = (now + self.delay.of(b)).max(gpu_free_floor).max(policy_floor);
            debug_assert!(exec_at <= latest, "exec_at {exec_at:?} > latest {latest:?}");
            Some(BatchCandidate {
                size: b,
                exec_at,
                latest,
                head_deadline: head.deadline,
            })
        } else {
            None
        };
        self.arm_drop_timer(fx);
        self.candidate
    }

    fn arm_drop_timer(&mut self, fx: &mut Effects) {
        let head = self.queue.front().copied();
        if head.map(|h| h.id) == self.drop_armed_for {
            return;
        }
        self.drop_generation += 1;
        self.drop_armed_for = head.map(|h| h.id);
        if let Some(head) = head {
            // One tick past the last instant the head can still start alone.
            let last_start = head.deadline - self.profile.latency(1) - self.delay.of(1);
            fx.timers.push(TimerRequest {
                at: last_start + Dur(1),
                kind: TimerKind::Drop(self.id),
                generation: self.drop_generation,
            });
        }
    }

    pub fn on_drop_timer(&mut self, generation: u64, now: Time, fx: &mut Effects, out: &mut Vec<ToRank>) {
        if generation != self.drop_generation {
            return;
        }
        self.drop_armed_for = None;
        self.update_candidate(now, Time::NEG_INF, fx);
        out.push(self.inform());
    }

    /// Handles a GPU grant from the rank plane: refits the candidate to the
    /// GPU, emits the execution order, and registers the next candidate.
    pub fn on_grant(&mut self, gpu: GpuId, gpu_free_at: Time, now: Time, fx: &mut Effects, out: &mut Vec<ToRank>) {
        let before = self.candidate;
        let drops_before = fx.drops.len();
        let refit = self.update_candidate(now, gpu_free_at, fx);
        let free_at = match refit {
            None => now.max(gpu_free_at),
            Some(c) => {
                let requests: Vec<Request> = self.queue.drain(..c.size as usize).collect();
                let finish = c.exec_at + self.profile.latency(c.size);
                let shrunk = fx.drops[drops_before..].iter().any(|d| d.forced)
                    || before.is_some_and(|b| b.size > c.size);
                self.counters.batches += 1;
                self.counters.dispatched += c.size as u64;
                fx.orders.push(ExecutionOrder {
                    model: self.id,
                    gpu,
                    requests,
                    dispatched_at: now,
                    start: c.exec_at,
                    finish,
                    shrunk,
                });
                self.update_candidate(now, Time::NEG_INF, fx);
                finish
            }
        };
        out.push(ToRank::InformGpu { gpu, free_at });
        out.push(self.inform());
    }

    /// The rank plane evicted the candidate because no GPU frees up before
    /// its `latest`. Refit against the earliest GPU free time `floor`.
    pub fn on_evicted(&mut self, floor: Time, now: Time, fx: &mut Effects, out: &mut Vec<ToRank>) {
        self.update_candidate(now, floor, fx);
        out.push(self.inform());
    }

    fn inform(&self) -> ToRank {
        ToRank::InformCandidate {
            model: self.id,
            candidate: self.candidate,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheduler::PolicyKind;

    fn toy_spec() -> ModelSpec {
        ModelSpec::new(
            ModelId(0),
            "toy",
            LatencyProfile::linear_ms(1.0, 5.0).unwrap(),
            Dur::from_ms(12.0),
        )
    }

    fn req(i: u64, arrival_ms: f64, slo_ms: f64) -> Request {
        let arrival = Time::from_ms(arrival_ms);
        Request {
            id: RequestId(i),
            model: ModelId(0),
            arrival,
            deadline: arrival + Dur::from_ms(slo_ms),
        }
    }

    fn queue_of(reqs: &[Request]) -> VecDeque<Request> {
        reqs.iter().copied().collect()
    }

    #[test]
    fn get_batch_takes_first_four_in_stagger_scenario() {
        let p = LatencyProfile::linear_ms(1.0, 5.0).unwrap();
        let mut q = queue_of(&[req(1, 0.0, 12.0), req(2, 0.75, 12.0), req(3, 1.5, 12.0), req(4, 2.25, 12.0)]);
        let sel = get_batch(&mut q, Time::from_ms(2.25), Time::NEG_INF, None, &p, DispatchDelay::ZERO, BatchPolicy::SlidingWindow);
        assert_eq!(sel.size, 4);
        assert!(sel.dropped.is_empty());
    }

    #[test]
    fn get_batch_empty_queue() {
        let p = LatencyProfile::linear_ms(1.0, 5.0).unwrap();
        let mut q = VecDeque::new();
        let sel = get_batch(&mut q, Time::from_ms(3.0), Time::NEG_INF, None, &p, DispatchDelay::ZERO, BatchPolicy::SlidingWindow);
        assert_eq!(sel, BatchSelection::default());
    }

    #[test]
    fn get_batch_drops_infeasible_singleton() {
        // l(1) = 6, deadline 10, now 5: 5 + 6 > 10.
        let p = LatencyProfile::linear_ms(1.0, 5.0).unwrap();
        let mut q = queue_of(&[req(1, 0.0, 10.0)]);
        let sel = get_batch(&mut q, Time::from_ms(5.0), Time::NEG_INF, None, &p, DispatchDelay::ZERO, BatchPolicy::SlidingWindow);
        assert_eq!(sel.size, 0);
        assert_eq!(sel.dropped.len(), 1);
        assert_eq!(sel.forced, 0);
        assert!(q.is_empty());
    }

    #[test]
    fn get_batch_shrinks_to_gpu_floor_then_forces_head_drop() {
        let p = LatencyProfile::linear_ms(1.0, 5.0).unwrap();
        let mut q = queue_of(&[req(1, 0.0, 12.0), req(2, 0.75, 12.0), req(3, 1.5, 12.0)]);
        // GPU free at 5: 5 + l(b) <= 12 allows b = 2.
        let sel = get_batch(&mut q.clone(), Time::from_ms(1.5), Time::from_ms(5.0), None, &p, DispatchDelay::ZERO, BatchPolicy::SlidingWindow);
        assert_eq!(sel.size, 2);
        // GPU free at 6.5: head (deadline 12) cannot fit, R2 (deadline 12.75) can alone.
        let sel = get_batch(&mut q, Time::from_ms(1.5), Time::from_ms(6.5), None, &p, DispatchDelay::ZERO, BatchPolicy::SlidingWindow);
        assert_eq!(sel.forced, 1);
        assert_eq!(sel.dropped[0].id, RequestId(1));
        assert_eq!(sel.size, 1);
    }

    #[test]
    fn timeout_hold_limits_the_batch_and_drops_unservable_heads() {
        let p = LatencyProfile::linear_ms(1.0, 5.0).unwrap();
        let reqs = [req(1, 0.0, 12.0), req(2, 0.5, 12.0), req(3, 1.0, 12.0)];
        // Hold until 4: 4 + l(b) <= 12 allows b = 3.
        let sel = get_batch(&mut queue_of(&reqs), Time::from_ms(1.0), Time::NEG_INF, Some(Dur::from_ms(4.0)), &p, DispatchDelay::ZERO, BatchPolicy::SlidingWindow);
        assert_eq!((sel.size, sel.dropped.len()), (3, 0));
        // Hold until 5: only b = 2 fits.
        let sel = get_batch(&mut queue_of(&reqs), Time::from_ms(1.0), Time::NEG_INF, Some(Dur::from_ms(5.0)), &p, DispatchDelay::ZERO, BatchPolicy::SlidingWindow);
        assert_eq!((sel.size, sel.dropped.len()), (2, 0));
        // Hold of 7 leaves no room even for l(1) = 6: every request is dropped.
        let mut q = queue_of(&reqs);
        let sel = get_batch(&mut q, Time::from_ms(1.0), Time::NEG_INF, Some(Dur::from_ms(7.0)), &p, DispatchDelay::ZERO, BatchPolicy::SlidingWindow);
        assert_eq!((sel.size, sel.dropped.len(), sel.forced), (0, 3, 0));
        assert!(q.is_empty());
    }

    #[test]
    fn drop_head_policy_trades_an_old_head_for_a_larger_batch() {
        let p = LatencyProfile::linear_ms(1.0, 5.0).unwrap();
        let mut reqs = vec![req(0, 0.0, 12.0)];
        reqs.extend((1..6).map(|i| req(i, 4.0 + 0.1 * i as f64, 12.0)));
        // At t=4.6 the head affords l(b) <= 7.4 -> b = 2, the next request affords b = 5.
        let now = Time::from_ms(4.6);
        let sel = get_batch(&mut queue_of(&reqs), now, Time::NEG_INF, None, &p, DispatchDelay::ZERO, BatchPolicy::SlidingWindow);
        assert_eq!((sel.size, sel.dropped.len()), (2, 0));
        let sel = get_batch(&mut queue_of(&reqs), now, Time::NEG_INF, None, &p, DispatchDelay::ZERO, BatchPolicy::DropHead { target: 8 });
        assert_eq!((sel.size, sel.dropped.len()), (5, 1));
    }

    #[test]
    fn deferred_candidate_follows_frontrun() {
        let mut plane = ModelPlane::new(&toy_spec(), &PolicyConfig::deferred());
        let mut fx = Effects::default();
        let mut out = Vec::new();
        for (i, t) in [0.0, 0.75, 1.5].iter().enumerate() {
            plane.on_new_request(req(i as u64 + 1, *t, 12.0), Time::from_ms(*t), &mut fx, &mut out).unwrap();
        }
        let c = plane.candidate().unwrap();
        assert_eq!((c.size, c.exec_at, c.latest), (3, Time::from_ms(3.0), Time::from_ms(4.0)));

        plane.on_new_request(req(4, 2.25, 12.0), Time::from_ms(2.25), &mut fx, &mut out).unwrap();
        let c = plane.candidate().unwrap();
        assert_eq!((c.size, c.exec_at, c.latest), (4, Time::from_ms(2.25), Time::from_ms(3.0)));
    }

    #[test]
    fn first_request_candidate_sits_at_its_window_start() {
        let mut plane = ModelPlane::new(&toy_spec(), &PolicyConfig::deferred());
        let mut fx = Effects::default();
        plane.on_new_request(req(1, 0.0, 12.0), Time::ZERO, &mut fx, &mut Vec::new()).unwrap();
        let c = plane.candidate().unwrap();
        assert_eq!(c.size, 1);
        assert_eq!(c.exec_at, Time::from_ms(12.0) - Dur::from_ms(7.0));
    }

    #[test]
    fn eager_and_timeout_zero_dispatch_now() {
        for kind in [PolicyKind::Eager, PolicyKind::Timeout { k: Dur::ZERO }] {
            let mut plane = ModelPlane::new(&toy_spec(), &PolicyConfig::new(kind));
            let mut fx = Effects::default();
            let now = Time::from_ms(0.1);
            plane.on_new_request(req(1, 0.1, 12.0), now, &mut fx, &mut Vec::new()).unwrap();
            assert_eq!(plane.candidate().unwrap().exec_at, now);
        }
    }

    #[test]
    fn dispatch_delay_pushes_exec_at() {
        let delay = DispatchDelay {
            ctrl: Dur::from_us(30.0),
            per_request: Dur::from_us(5.0),
        };
        let mut plane = ModelPlane::new(&toy_spec(), &PolicyConfig::eager().with_delay(delay));
        let mut fx = Effects::default();
        plane.on_new_request(req(1, 0.1, 12.0), Time::from_ms(0.1), &mut fx, &mut Vec::new()).unwrap();
        assert_eq!(plane.candidate().unwrap().exec_at, Time::from_ms(0.1) + Dur::from_us(35.0));
    }

    #[test]
    fn late_arrival_does_not_join_a_full_window() {
        // Queue R1..R4 (deadline 12), R5 at t=2.5 would need l(5)=10 from 2.5 > 12.
        let mut plane = ModelPlane::new(&toy_spec(), &PolicyConfig::deferred());
        let mut fx = Effects::default();
        let mut out = Vec::new();
        for (i, t) in [0.0, 0.75, 1.5, 2.25].iter().enumerate() {
            plane.on_new_request(req(i as u64 + 1, *t, 12.0), Time::from_ms(*t), &mut fx, &mut out).unwrap();
        }
        plane.on_new_request(req(5, 2.5, 12.0), Time::from_ms(2.5), &mut fx, &mut out).unwrap();
        assert_eq!(plane.candidate().unwrap().size, 4);
    }

    #[test]
    fn duplicate_request_is_a_protocol_error() {
        let mut plane = ModelPlane::new(&toy_spec(), &PolicyConfig::deferred());
        let mut fx = Effects::default();
        plane.on_new_request(req(5, 0.0, 12.0), Time::ZERO, &mut fx, &mut Vec::new()).unwrap();
        let err = plane.on_new_request(req(5, 0.0, 12.0), Time::ZERO, &mut fx, &mut Vec::new());
        assert!(matches!(err, Err(SchedError::DuplicateRequest { .. })));
    }

    #[test]
    fn grant_dispatches_and_reports_gpu_free_time() {
        let mut plane = ModelPlane::new(&toy_spec(), &PolicyConfig::deferred());
        let mut fx = Effects::default();
        let mut out = Vec::new();
        for (i, t) in [0.0, 0.75, 1.5, 2.25].iter().enumerate() {
            plane.on_new_request(req(i as u64 + 1, *t, 12.0), Time::from_ms(*t), &mut fx, &mut out).unwrap();
        }
        out.clear();
        plane.on_grant(GpuId(0), Time::ZERO, Time::from_ms(2.25), &mut fx, &mut out);
        let order = fx.orders.last().unwrap();
        assert_eq!((order.start, order.finish, order.size()), (Time::from_ms(2.25), Time::from_ms(11.25), 4));
        assert_eq!(
            out[0],
            ToRank::InformGpu {
                gpu: GpuId(0),
                free_at: Time::from_ms(11.25)
            }
        );
        assert!(plane.candidate().is_none());
    }

    #[test]
    fn grant_on_empty_queue_returns_gpu() {
        let mut plane = ModelPlane::new(&toy_spec(), &PolicyConfig::deferred());
        let mut fx = Effects::default();
        let mut out = Vec::new();
        plane.on_grant(GpuId(2), Time::from_ms(1.0), Time::from_ms(4.0), &mut fx, &mut out);
        assert!(fx.orders.is_empty());
        assert_eq!(
            out[0],
            ToRank::InformGpu {
                gpu: GpuId(2),
                free_at: Time::from_ms(4.0)
            }
        );
    }

    #[test]
    fn grant_with_busy_gpu_pushes_start_and_revalidates() {
        let mut plane = ModelPlane::new(&toy_spec(), &PolicyConfig::eager());
        let mut fx = Effects::default();
        let mut out = Vec::new();
        for (i, t) in [0.0, 0.75, 1.5].iter().enumerate() {
            plane.on_new_request(req(i as u64 + 1, *t, 12.0), Time::from_ms(*t), &mut fx, &mut out).unwrap();
        }
        assert_eq!(plane.candidate().unwrap().size, 3);
        plane.on_grant(GpuId(0), Time::from_ms(5.0), Time::from_ms(1.5), &mut fx, &mut out);
        let order = fx.orders.last().unwrap();
        assert_eq!(order.start, Time::from_ms(5.0));
        assert_eq!(order.size(), 2);
        assert!(order.shrunk);
        assert!(order.finish <= order.requests[0].deadline);
    }
}
