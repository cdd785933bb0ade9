use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::{ModelLoad, PartitionProblem};

/// Parameters of a synthetic instance.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceShape {
    pub models: usize,
    pub subclusters: usize,
    pub mean_rate_rps: f64,
    pub static_mb: (f64, f64),
    pub dynamic_mb: (f64, f64),
    /// Caps as a multiple of the per-sub-cluster averages (memory cap also
    /// leaves room for the largest dynamic footprint); `None` leaves the
    /// instance uncapped.
    pub cap_slack: Option<f64>,
}

impl InstanceShape {
    pub fn new(models: usize, subclusters: usize) -> Self {
        InstanceShape {
            models,
            subclusters,
            mean_rate_rps: 100.0,
            static_mb: (20.0, 600.0),
            dynamic_mb: (10.0, 300.0),
            cap_slack: Some(1.5),
        }
    }
}

/// Independent exponential request rates with uniformly drawn memory
/// footprints.
pub fn exponential_instance(shape: &InstanceShape, seed: u64) -> PartitionProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let exp = Exp::new(1.0 / shape.mean_rate_rps).expect("positive mean rate");
    let models = (0..shape.models)
        .map(|i| ModelLoad {
            name: format!("model{i:04}"),
            rate_rps: exp.sample(&mut rng),
            static_mem_mb: rng.random_range(shape.static_mb.0..=shape.static_mb.1),
            dynamic_mem_mb: rng.random_range(shape.dynamic_mb.0..=shape.dynamic_mb.1),
        })
        .collect();
    let mut p = PartitionProblem::new(models, shape.subclusters);
    if let Some(slack) = shape.cap_slack {
        let dmax = p.models.iter().map(|m| m.dynamic_mem_mb).fold(0.0, f64::max);
        p.r_max = slack * p.mean_rate();
        p.s_max = slack * p.mean_static() + dmax;
    }
    p
}
