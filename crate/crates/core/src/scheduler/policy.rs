use serde::{Deserialize, Serialize};

use crate::time::{Dur, Time};

/// How a candidate's earliest dispatch moment is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyKind {
    /// Dispatch no earlier than `frontrun = d - l(b+1)`.
    Deferred,
    /// Dispatch as soon as a GPU is free.
    Eager,
    /// Dispatch no earlier than `head arrival + k`.
    Timeout { k: Dur },
    /// Timeout expressed as a fraction of each model's SLO.
    TimeoutSloFraction { fraction: f64 },
}

/// The per-model rule after resolving SLO-relative timeouts. Eager is
/// represented as `Timeout(0)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DispatchRule {
    Deferred,
    Timeout(Dur),
}

impl PolicyKind {
    pub fn resolve(self, slo: Dur) -> DispatchRule {
        match self {
            PolicyKind::Deferred => DispatchRule::Deferred,
            PolicyKind::Eager => DispatchRule::Timeout(Dur::ZERO),
            PolicyKind::Timeout { k } => DispatchRule::Timeout(k),
            PolicyKind::TimeoutSloFraction { fraction } => {
                DispatchRule::Timeout(Dur((slo.nanos() as f64 * fraction).round() as i64))
            }
        }
    }

    pub fn label(self) -> String {
        match self {
            PolicyKind::Deferred => "deferred".into(),
            PolicyKind::Eager => "eager".into(),
            PolicyKind::Timeout { k } => format!("timeout({}ms)", k.as_ms()),
            PolicyKind::TimeoutSloFraction { fraction } => {
                format!("timeout({:.0}%slo)", fraction * 100.0)
            }
        }
    }
}

/// `deferred`, `eager`, `timeout:<ms>` or `timeout-slo:<fraction>`.
impl std::str::FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("invalid policy `{s}` (expected deferred, eager, timeout:<ms> or timeout-slo:<fraction>)");
        match s.split_once(':') {
            None if s == "deferred" => Ok(PolicyKind::Deferred),
            None if s == "eager" => Ok(PolicyKind::Eager),
            Some(("timeout", v)) => match v.parse::<f64>() {
                Ok(ms) if ms.is_finite() && ms >= 0.0 => Ok(PolicyKind::Timeout { k: Dur::from_ms(ms) }),
                _ => Err(bad()),
            },
            Some(("timeout-slo", v)) => match v.parse::<f64>() {
                Ok(f) if (0.0..=1.0).contains(&f) => Ok(PolicyKind::TimeoutSloFraction { fraction: f }),
                _ => Err(bad()),
            },
            _ => Err(bad()),
        }
    }
}

/// Planning estimate of the time between a dispatch decision and the GPU
/// being able to start: `ctrl + per_request * b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DispatchDelay {
    pub ctrl: Dur,
    pub per_request: Dur,
}

impl DispatchDelay {
    pub const ZERO: DispatchDelay = DispatchDelay {
        ctrl: Dur::ZERO,
        per_request: Dur::ZERO,
    };

    #[inline]
    pub fn of(&self, b: u32) -> Dur {
        self.ctrl + self.per_request * b as i64
    }
}

/// How the batch is gathered from the head of a model's queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchPolicy {
    /// Longest feasible prefix; heads are dropped only when a batch of one
    /// can no longer make the deadline.
    #[default]
    SlidingWindow,
    /// Additionally drops the head while it cannot afford a batch of
    /// `min(target, queued)`.
    DropHead { target: u32 },
}

/// A policy that applies before a switch-over instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeadIn {
    pub kind: PolicyKind,
    pub until: Time,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    pub delay: DispatchDelay,
    pub batching: BatchPolicy,
    pub lead_in: Option<LeadIn>,
}

impl PolicyConfig {
    pub fn new(kind: PolicyKind) -> Self {
        PolicyConfig {
            kind,
            delay: DispatchDelay::ZERO,
            batching: BatchPolicy::SlidingWindow,
            lead_in: None,
        }
    }

    pub fn deferred() -> Self {
        Self::new(PolicyKind::Deferred)
    }

    pub fn eager() -> Self {
        Self::new(PolicyKind::Eager)
    }

    pub fn timeout(k: Dur) -> Self {
        Self::new(PolicyKind::Timeout { k })
    }

    pub fn with_delay(mut self, delay: DispatchDelay) -> Self {
        self.delay = delay;
        self
    }

    pub fn with_batching(mut self, batching: BatchPolicy) -> Self {
        self.batching = batching;
        self
    }
}
