//! Deadline-aware batch scheduling.
//!
//! The scheduler is split into two planes that only talk through ordered
//! messages:
//!
//! * a [`ModelPlane`] per model owns that model's request queue and its
//!   single pending [`BatchCandidate`];
//! * one [`RankPlane`] owns the global indices (GPU free times, registered
//!   candidates ordered by `latest` and by dispatch delay) and performs
//!   model/GPU matchmaking when timers fire.
//!
//! Neither plane creates threads or reads a clock. [`Scheduler`] multiplexes
//! all planes on one thread for the virtual-time simulator; the wall-clock
//! benchmark in `metrics::bench` runs them on separate workers.

mod driver;
mod model_plane;
mod policy;
mod rank_plane;

pub use driver::Scheduler;
pub use model_plane::{get_batch, BatchSelection, ModelPlane};
pub use policy::{BatchPolicy, DispatchDelay, DispatchRule, LeadIn, PolicyConfig, PolicyKind};
pub use rank_plane::{GpuSlot, RankPlane};

use serde::Serialize;
use thiserror::Error;

use crate::ids::{GpuId, ModelId, RequestId};
use crate::time::Time;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchedError {
    #[error("request {request:?} for model {model:?} is not newer than {last:?}")]
    DuplicateRequest {
        model: ModelId,
        request: RequestId,
        last: RequestId,
    },
    #[error("unknown model {0:?}")]
    UnknownModel(ModelId),
    #[error("unknown GPU {0:?}")]
    UnknownGpu(GpuId),
    #[error("request {request:?} delivered to model plane {plane:?} but targets {target:?}")]
    MisroutedRequest {
        request: RequestId,
        plane: ModelId,
        target: ModelId,
    },
}

/// One inference task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Request {
    pub id: RequestId,
    pub model: ModelId,
    pub arrival: Time,
    pub deadline: Time,
}

/// A model's pending batch: the first `size` requests of its queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BatchCandidate {
    pub size: u32,
    pub exec_at: Time,
    pub latest: Time,
    pub head_deadline: Time,
}

/// A finalized batch sent to a GPU.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExecutionOrder {
    pub model: ModelId,
    pub gpu: GpuId,
    pub requests: Vec<Request>,
    /// When the decision was made (the grant was handled).
    pub dispatched_at: Time,
    /// Planned start, i.e. the candidate's `exec_at`.
    pub start: Time,
    /// `start + l(size)`.
    pub finish: Time,
    /// The candidate had to shrink or drop its head to fit the granted GPU.
    pub shrunk: bool,
}

impl ExecutionOrder {
    pub fn size(&self) -> u32 {
        self.requests.len() as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DropRecord {
    pub request: Request,
    pub at: Time,
    /// Dropped while refitting a batch to a granted GPU rather than because
    /// the request could no longer run alone.
    pub forced: bool,
}

/// Model plane -> rank plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToRank {
    InformCandidate {
        model: ModelId,
        candidate: Option<BatchCandidate>,
    },
    InformGpu {
        gpu: GpuId,
        free_at: Time,
    },
}

/// Rank plane -> model plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grant {
    pub model: ModelId,
    pub gpu: GpuId,
    pub gpu_free_at: Time,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum TimerKind {
    Drop(ModelId),
    Model(ModelId),
    Gpu(GpuId),
}

/// A one-shot timer. A newer request with the same kind supersedes older
/// ones; stale firings are recognized by `generation` and ignored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimerRequest {
    pub at: Time,
    pub kind: TimerKind,
    pub generation: u64,
}

/// Side effects produced by the planes for whoever drives them.
#[derive(Debug, Default)]
pub struct Effects {
    pub orders: Vec<ExecutionOrder>,
    pub drops: Vec<DropRecord>,
    pub timers: Vec<TimerRequest>,
}

impl Effects {
    pub fn clear(&mut self) {
        self.orders.clear();
        self.drops.clear();
        self.timers.clear();
    }

    pub fn is_empty(&self) -> bool {
        self.orders.is_empty() && self.drops.is_empty() && self.timers.is_empty()
    }
}
