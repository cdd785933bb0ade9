//! Dispatch-path latency between the scheduler and a GPU.
//!
//! The scheduler plans with a fixed bound (`policy.d_ctrl_us`, or the bound
//! derived here when that key is absent). The simulator delays each
//! execution order by a sampled amount, which may exceed the bound.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::time::Dur;

use super::workload::uniform_between;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NetworkSpec {
    /// Orders arrive exactly after the planned delay.
    #[default]
    Constant,
    Uniform { lo_us: f64, hi_us: f64 },
    /// Control-path latency histogram; `bins` are `[upper_us, weight]`
    /// with increasing upper edges. Samples are uniform within a bin.
    Histogram {
        bins: Vec<(f64, f64)>,
        #[serde(default = "default_percentile")]
        planning_percentile: f64,
    },
}

fn default_percentile() -> f64 {
    0.99
}

impl NetworkSpec {
    pub fn check(&self) -> Result<(), Vec<String>> {
        let mut errors = Vec::new();
        match self {
            NetworkSpec::Constant => {}
            NetworkSpec::Uniform { lo_us, hi_us } => {
                if !(*lo_us >= 0.0 && hi_us >= lo_us) {
                    errors.push("network: uniform needs 0 <= lo_us <= hi_us".into());
                }
            }
            NetworkSpec::Histogram {
                bins,
                planning_percentile,
            } => {
                if bins.is_empty() {
                    errors.push("network: histogram needs at least one bin".into());
                }
                if bins.iter().any(|(u, w)| !(*u >= 0.0) || !(*w >= 0.0)) {
                    errors.push("network: histogram bins must be non-negative".into());
                }
                if bins.windows(2).any(|w| w[1].0 <= w[0].0) {
                    errors.push("network: histogram upper edges must increase".into());
                }
                if bins.iter().map(|b| b.1).sum::<f64>() <= 0.0 {
                    errors.push("network: histogram weights must have a positive sum".into());
                }
                if !(0.0..=1.0).contains(planning_percentile) {
                    errors.push("network: planning_percentile must be in [0, 1]".into());
                }
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }

    /// Control-path bound the scheduler should plan with.
    pub fn planning_ctrl(&self) -> Dur {
        match self {
            NetworkSpec::Constant => Dur::ZERO,
            NetworkSpec::Uniform { hi_us, .. } => Dur::from_us(*hi_us),
            NetworkSpec::Histogram {
                bins,
                planning_percentile,
            } => {
                let total: f64 = bins.iter().map(|b| b.1).sum();
                let mut acc = 0.0;
                for (upper, w) in bins {
                    acc += w;
                    if acc / total >= *planning_percentile - 1e-12 {
                        return Dur::from_us(*upper);
                    }
                }
                Dur::from_us(bins.last().map_or(0.0, |b| b.0))
            }
        }
    }

    /// A control-path delay sample, or `None` for the planned value.
    pub fn sample_ctrl(&self, rng: &mut ChaCha8Rng) -> Option<Dur> {
        match self {
            NetworkSpec::Constant => None,
            NetworkSpec::Uniform { lo_us, hi_us } => Some(Dur(uniform_between(
                rng,
                Dur::from_us(*lo_us).nanos(),
                Dur::from_us(*hi_us).nanos(),
            ))),
            NetworkSpec::Histogram { bins, .. } => {
                let total: f64 = bins.iter().map(|b| b.1).sum();
                let mut x = rng.random::<f64>() * total;
                let mut lower = 0.0;
                for (upper, w) in bins {
                    if x <= *w {
                        let lo = Dur::from_us(lower).nanos();
                        let hi = Dur::from_us(*upper).nanos();
                        return Some(Dur(uniform_between(rng, lo, hi)));
                    }
                    x -= w;
                    lower = *upper;
                }
                Some(Dur::from_us(lower))
            }
        }
    }
}
