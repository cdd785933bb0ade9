use std::collections::BTreeSet;

use crate::ids::{GpuId, ModelId};
use crate::time::{Dur, Time};

use super::policy::DispatchDelay;
use super::{BatchCandidate, Grant, SchedError, TimerKind, TimerRequest};

/// Where a GPU stands from the rank plane's point of view.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GpuSlot {
    /// Free now (its free time is in the past), indexed for matching.
    Idle { since: Time },
    /// Busy until the given instant, indexed for matching.
    Busy { until: Time },
    /// Granted to a model plane that has not yet reported back.
    Outstanding,
}

/// Global matchmaking state.
///
/// Every handler touches each ordered index a constant number of times
/// (amortized; evictions are paid for by the registration that inserted
/// them), so handlers cost `O(log M + log G)`.
#[derive(Debug, Clone)]
pub struct RankPlane {
    delay: DispatchDelay,
    gpu_free: Vec<Time>,
    free_index: BTreeSet<(Time, GpuId)>,
    /// Candidates whose model timer is armed.
    pending: Vec<Option<BatchCandidate>>,
    model_timer_generation: Vec<u64>,
    /// Candidates that found no GPU at their `exec_at` and wait for one.
    registered: Vec<Option<BatchCandidate>>,
    by_latest: BTreeSet<(Time, ModelId)>,
    by_delay: BTreeSet<(Dur, ModelId)>,
    gpu_timer_generation: u64,
    gpu_timer: Option<GpuId>,
    index_ops: u64,
}

impl RankPlane {
    pub fn new(model_count: usize, gpu_count: usize, delay: DispatchDelay) -> Self {
        let gpu_free = vec![Time::ZERO; gpu_count];
        let free_index = (0..gpu_count).map(|g| (Time::ZERO, GpuId(g as u32))).collect();
        RankPlane {
            delay,
            gpu_free,
            free_index,
            pending: vec![None; model_count],
            model_timer_generation: vec![0; model_count],
            registered: vec![None; model_count],
            by_latest: BTreeSet::new(),
            by_delay: BTreeSet::new(),
            gpu_timer_generation: 0,
            gpu_timer: None,
            index_ops: 0,
        }
    }

    /// Cumulative ordered-index operations, for complexity accounting.
    pub fn index_ops(&self) -> u64 {
        self.index_ops
    }

    pub fn gpu_count(&self) -> usize {
        self.gpu_free.len()
    }

    pub fn gpu_free_at(&self, gpu: GpuId) -> Option<Time> {
        self.gpu_free.get(gpu.index()).copied()
    }

    pub fn slot(&self, gpu: GpuId, now: Time) -> Option<GpuSlot> {
        let free = *self.gpu_free.get(gpu.index())?;
        Some(if free == Time::INF {
            GpuSlot::Outstanding
        } else if free <= now {
            GpuSlot::Idle { since: free }
        } else {
            GpuSlot::Busy { until: free }
        })
    }

    pub fn registered(&self, model: ModelId) -> Option<BatchCandidate> {
        self.registered.get(model.index()).copied().flatten()
    }

    pub fn pending(&self, model: ModelId) -> Option<BatchCandidate> {
        self.pending.get(model.index()).copied().flatten()
    }

    pub fn registered_count(&self) -> usize {
        self.by_latest.len()
    }

    fn check_model(&self, model: ModelId) -> Result<(), SchedError> {
        if model.index() < self.pending.len() {
            Ok(())
        } else {
            Err(SchedError::UnknownModel(model))
        }
    }

    fn earliest_gpu(&mut self) -> Option<(Time, GpuId)> {
        self.index_ops += 1;
        self.free_index.first().copied().filter(|(t, _)| *t != Time::INF)
    }

    fn set_gpu_free(&mut self, gpu: GpuId, free_at: Time) {
        let old = self.gpu_free[gpu.index()];
        self.free_index.remove(&(old, gpu));
        self.free_index.insert((free_at, gpu));
        self.index_ops += 2;
        self.gpu_free[gpu.index()] = free_at;
    }

    fn register(&mut self, model: ModelId, c: BatchCandidate) {
        self.unregister(model);
        self.registered[model.index()] = Some(c);
        self.by_latest.insert((c.latest, model));
        self.by_delay.insert((self.delay.of(c.size), model));
        self.index_ops += 2;
    }

    fn unregister(&mut self, model: ModelId) -> Option<BatchCandidate> {
        let c = self.registered[model.index()].take()?;
        self.by_latest.remove(&(c.latest, model));
        self.by_delay.remove(&(self.delay.of(c.size), model));
        self.index_ops += 2;
        Some(c)
    }

    /// A model plane replaces its candidate. Any earlier registration and
    /// model timer for the model are cancelled.
    pub fn inform_candidate(
        &mut self,
        model: ModelId,
        candidate: Option<BatchCandidate>,
        now: Time,
        timers: &mut Vec<TimerRequest>,
    ) -> Result<(), SchedError> {
        self.check_model(model)?;
        self.unregister(model);
        let m = model.index();
        self.model_timer_generation[m] += 1;
        self.pending[m] = candidate;
        if let Some(c) = candidate {
            timers.push(TimerRequest {
                at: (c.exec_at - self.delay.of(c.size)).max(now),
                kind: TimerKind::Model(model),
                generation: self.model_timer_generation[m],
            });
        }
        Ok(())
    }

    /// A model plane reports when a granted GPU becomes free again.
    pub fn inform_gpu(&mut self, gpu: GpuId, free_at: Time, now: Time, timers: &mut Vec<TimerRequest>) -> Result<(), SchedError> {
        if gpu.index() >= self.gpu_free.len() {
            return Err(SchedError::UnknownGpu(gpu));
        }
        self.set_gpu_free(gpu, free_at);
        self.set_gpu_timer(now, timers);
        Ok(())
    }

    /// Fires at `exec_at - delay(size)`: grant the earliest-free GPU if it is
    /// free by `exec_at` (ties by smallest id), else park the candidate.
    pub fn on_model_timer(
        &mut self,
        model: ModelId,
        generation: u64,
        now: Time,
        timers: &mut Vec<TimerRequest>,
    ) -> Result<Option<Grant>, SchedError> {
        self.check_model(model)?;
        let m = model.index();
        if generation != self.model_timer_generation[m] {
            return Ok(None);
        }
        let Some(c) = self.pending[m].take() else {
            return Ok(None);
        };
        if let Some((free_at, gpu)) = self.earliest_gpu() {
            if free_at <= c.exec_at {
                self.set_gpu_free(gpu, Time::INF);
                return Ok(Some(Grant {
                    model,
                    gpu,
                    gpu_free_at: free_at,
                }));
            }
        }
        self.register(model, c);
        self.set_gpu_timer(now, timers);
        Ok(None)
    }

    /// Re-arms the single GPU timer for the earliest-free GPU, early enough
    /// to cover the largest dispatch delay among registered candidates.
    fn set_gpu_timer(&mut self, now: Time, timers: &mut Vec<TimerRequest>) {
        self.gpu_timer_generation += 1;
        self.gpu_timer = None;
        if self.by_delay.is_empty() {
            return;
        }
        let Some((free_at, gpu)) = self.earliest_gpu() else {
            return;
        };
        self.index_ops += 1;
        let (max_delay, _) = *self.by_delay.last().unwrap();
        self.gpu_timer = Some(gpu);
        timers.push(TimerRequest {
            at: (free_at - max_delay).max(now),
            kind: TimerKind::Gpu(gpu),
            generation: self.gpu_timer_generation,
        });
    }

    /// Fires ahead of a GPU's free time: evict candidates that can no longer
    /// use it and grant the most urgent remaining one (min `latest`, ties by
    /// smallest model id). Evicted models are reported with the GPU's free
    /// time so they can refit a smaller batch.
    pub fn on_gpu_timer(
        &mut self,
        gpu: GpuId,
        generation: u64,
        now: Time,
        timers: &mut Vec<TimerRequest>,
        evicted: &mut Vec<(ModelId, Time)>,
    ) -> Result<Option<Grant>, SchedError> {
        if gpu.index() >= self.gpu_free.len() {
            return Err(SchedError::UnknownGpu(gpu));
        }
        if generation != self.gpu_timer_generation || self.gpu_timer != Some(gpu) {
            return Ok(None);
        }
        let free_at = self.gpu_free[gpu.index()];
        if free_at == Time::INF {
            return Ok(None);
        }
        let mut grant = None;
        loop {
            self.index_ops += 1;
            let Some(&(latest, model)) = self.by_latest.first() else {
                break;
            };
            if latest < free_at {
                self.unregister(model);
                evicted.push((model, free_at));
                continue;
            }
            self.unregister(model);
            self.set_gpu_free(gpu, Time::INF);
            grant = Some(Grant {
                model,
                gpu,
                gpu_free_at: free_at,
            });
            break;
        }
        self.set_gpu_timer(now, timers);
        Ok(grant)
    }

    /// Consistency of the ordered indices with the per-entity state.
    pub fn check_consistency(&self) -> Result<(), String> {
        if self.free_index.len() != self.gpu_free.len() {
            return Err(format!(
                "free index has {} entries for {} GPUs",
                self.free_index.len(),
                self.gpu_free.len()
            ));
        }
        for (g, t) in self.gpu_free.iter().enumerate() {
            if !self.free_index.contains(&(*t, GpuId(g as u32))) {
                return Err(format!("GPU {g} missing from free index"));
            }
        }
        let registered: Vec<_> = self.registered.iter().enumerate().filter_map(|(m, c)| c.map(|c| (m, c))).collect();
        if registered.len() != self.by_latest.len() || registered.len() != self.by_delay.len() {
            return Err("candidate indices out of sync".into());
        }
        for (m, c) in registered {
            let model = ModelId(m as u32);
            if !self.by_latest.contains(&(c.latest, model)) {
                return Err(format!("model {m} missing from latest index"));
            }
            if self.pending[m].is_some() {
                return Err(format!("model {m} both pending and registered"));
            }
        }
        Ok(())
    }
}
