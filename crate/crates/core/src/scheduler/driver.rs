use std::collections::VecDeque;

use crate::ids::{GpuId, ModelId};
use crate::profile::ModelSpec;
use crate::time::Time;

use super::model_plane::ModelPlane;
use super::policy::{BatchPolicy, PolicyConfig};
use super::rank_plane::RankPlane;
use super::{Effects, Grant, Request, SchedError, TimerKind, TimerRequest, ToRank};

enum Msg {
    ToRank(ToRank),
    Grant(Grant),
    Evicted { model: ModelId, floor: Time },
}

/// All planes multiplexed on one thread. Messages between planes are
/// delivered in FIFO order until quiescence after every external event.
#[derive(Debug, Clone)]
pub struct Scheduler {
    models: Vec<ModelPlane>,
    rank: RankPlane,
    messages: u64,
    grants: u64,
    evictions: u64,
}

impl Scheduler {
    /// `models[i].id` must equal `ModelId(i)`.
    pub fn new(models: &[ModelSpec], gpu_count: usize, policy: &PolicyConfig) -> Self {
        Self::with_batching(models, gpu_count, policy, &[])
    }

    /// `batching[i]` overrides the policy's batch gathering for model `i`.
    pub fn with_batching(models: &[ModelSpec], gpu_count: usize, policy: &PolicyConfig, batching: &[BatchPolicy]) -> Self {
        let planes = models
            .iter()
            .enumerate()
            .map(|(i, m)| {
                assert_eq!(m.id.index(), i, "model ids must be dense and ordered");
                ModelPlane::with_batching(m, policy, batching.get(i).copied().unwrap_or(policy.batching))
            })
            .collect();
        Scheduler {
            models: planes,
            rank: RankPlane::new(models.len(), gpu_count, policy.delay),
            messages: 0,
            grants: 0,
            evictions: 0,
        }
    }

    pub fn model(&self, id: ModelId) -> Option<&ModelPlane> {
        self.models.get(id.index())
    }

    pub fn models(&self) -> &[ModelPlane] {
        &self.models
    }

    pub fn rank(&self) -> &RankPlane {
        &self.rank
    }

    /// Messages exchanged between planes so far.
    pub fn message_count(&self) -> u64 {
        self.messages
    }

    pub fn grant_count(&self) -> u64 {
        self.grants
    }

    pub fn eviction_count(&self) -> u64 {
        self.evictions
    }

    pub fn on_request(&mut self, r: Request, now: Time, fx: &mut Effects) -> Result<(), SchedError> {
        let plane = self.models.get_mut(r.model.index()).ok_or(SchedError::UnknownModel(r.model))?;
        let mut out = Vec::with_capacity(1);
        plane.on_new_request(r, now, fx, &mut out)?;
        self.pump(out.into_iter().map(Msg::ToRank).collect(), now, fx)
    }

    pub fn on_timer(&mut self, timer: TimerRequest, now: Time, fx: &mut Effects) -> Result<(), SchedError> {
        let mut queue = VecDeque::new();
        match timer.kind {
            TimerKind::Drop(m) => {
                let plane = self.models.get_mut(m.index()).ok_or(SchedError::UnknownModel(m))?;
                let mut out = Vec::with_capacity(1);
                plane.on_drop_timer(timer.generation, now, fx, &mut out);
                queue.extend(out.into_iter().map(Msg::ToRank));
            }
            TimerKind::Model(m) => {
                if let Some(g) = self.rank.on_model_timer(m, timer.generation, now, &mut fx.timers)? {
                    queue.push_back(Msg::Grant(g));
                }
            }
            TimerKind::Gpu(g) => {
                let mut evicted = Vec::new();
                let grant = self.rank.on_gpu_timer(g, timer.generation, now, &mut fx.timers, &mut evicted)?;
                queue.extend(evicted.into_iter().map(|(model, floor)| Msg::Evicted { model, floor }));
                queue.extend(grant.map(Msg::Grant));
            }
        }
        self.pump(queue, now, fx)
    }

    fn pump(&mut self, mut queue: VecDeque<Msg>, now: Time, fx: &mut Effects) -> Result<(), SchedError> {
        let mut out = Vec::with_capacity(2);
        while let Some(msg) = queue.pop_front() {
            self.messages += 1;
            match msg {
                Msg::ToRank(ToRank::InformCandidate { model, candidate }) => {
                    self.rank.inform_candidate(model, candidate, now, &mut fx.timers)?;
                }
                Msg::ToRank(ToRank::InformGpu { gpu, free_at }) => {
                    self.rank.inform_gpu(gpu, free_at, now, &mut fx.timers)?;
                }
                Msg::Grant(g) => {
                    self.grants += 1;
                    let plane = self.models.get_mut(g.model.index()).ok_or(SchedError::UnknownModel(g.model))?;
                    plane.on_grant(g.gpu, g.gpu_free_at, now, fx, &mut out);
                    queue.extend(out.drain(..).map(Msg::ToRank));
                }
                Msg::Evicted { model, floor } => {
                    self.evictions += 1;
                    let plane = self.models.get_mut(model.index()).ok_or(SchedError::UnknownModel(model))?;
                    plane.on_evicted(floor, now, fx, &mut out);
                    queue.extend(out.drain(..).map(Msg::ToRank));
                }
            }
        }
        Ok(())
    }

    /// Cross-plane consistency: the rank plane's view of each candidate must
    /// match the owning model plane, and every candidate must be feasible.
    pub fn check_invariants(&self, now: Time) -> Result<(), String> {
        self.rank.check_consistency()?;
        for plane in &self.models {
            let id = plane.id();
            if let Some(c) = plane.candidate() {
                if c.size as usize > plane.queue().len() {
                    return Err(format!("model {id}: candidate larger than queue"));
                }
                if c.exec_at > c.latest {
                    return Err(format!("model {id}: exec_at after latest"));
                }
                if c.size > plane.profile().max_batch() {
                    return Err(format!("model {id}: candidate exceeds max batch"));
                }
            }
            let known = self.rank.pending(id).or(self.rank.registered(id));
            if known.is_some() && known != plane.candidate() {
                return Err(format!("model {id}: rank plane holds a stale candidate"));
            }
        }
        let _ = now;
        Ok(())
    }

    pub fn gpu_count(&self) -> usize {
        self.rank.gpu_count()
    }

    pub fn gpu_free_at(&self, gpu: GpuId) -> Option<Time> {
        self.rank.gpu_free_at(gpu)
    }
}
