//! Assigning models to GPU sub-clusters so that request rate and model
//! memory are spread evenly, subject to per-sub-cluster rate and memory caps
//! and an optional bound on how much the assignment may change.
//!
//! [`evaluate`] scores an assignment, [`solve`] searches for a good one
//! under a time budget, [`random_solver`] is the uniform-sampling baseline
//! and [`exhaustive`] enumerates every assignment of a small instance.

mod generate;
mod io;
mod solver;

pub use generate::{exponential_instance, InstanceShape};
pub use io::{parse_problem, read_problem, write_assignment, write_problem};
pub use solver::{exhaustive, random_solver, solve, SolveOptions, Solution};

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelLoad {
    pub name: String,
    pub rate_rps: f64,
    pub static_mem_mb: f64,
    pub dynamic_mem_mb: f64,
}

/// The assignment currently deployed and what it costs to change it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurrentAssignment {
    pub assignment: Vec<usize>,
    /// `cost[i][j]`: loading or unloading model `i` on sub-cluster `j`.
    pub cost: Vec<Vec<f64>>,
    pub c_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionProblem {
    pub models: Vec<ModelLoad>,
    pub subclusters: usize,
    /// Per-sub-cluster rate cap; infinite when unconstrained.
    pub r_max: f64,
    /// Per-sub-cluster memory cap; infinite when unconstrained.
    pub s_max: f64,
    /// Weight of the memory term in the objective.
    pub w: f64,
    pub current: Option<CurrentAssignment>,
}

#[derive(Debug, thiserror::Error)]
pub enum PartitionError {
    #[error("invalid problem:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("no feasible assignment found (best infeasibility {score:.6})")]
    Infeasible { score: f64, best: Box<Solution> },
    #[error("instance too large to enumerate: {0} assignments")]
    TooLarge(f64),
}

impl PartitionProblem {
    /// Problem with no caps, no current assignment and the default weight.
    pub fn new(models: Vec<ModelLoad>, subclusters: usize) -> Self {
        let mut p = PartitionProblem {
            models,
            subclusters,
            r_max: f64::INFINITY,
            s_max: f64::INFINITY,
            w: 1.0,
            current: None,
        };
        p.w = p.default_weight();
        p
    }

    /// `R̄ / S̄`, which puts both objective terms in rate units. Falls back
    /// to 1 when either average is zero.
    pub fn default_weight(&self) -> f64 {
        let (r, s) = (self.mean_rate(), self.mean_static());
        if r > 0.0 && s > 0.0 {
            r / s
        } else {
            1.0
        }
    }

    pub fn mean_rate(&self) -> f64 {
        self.models.iter().map(|m| m.rate_rps).sum::<f64>() / self.subclusters.max(1) as f64
    }

    pub fn mean_static(&self) -> f64 {
        self.models.iter().map(|m| m.static_mem_mb).sum::<f64>() / self.subclusters.max(1) as f64
    }

    pub fn validate(&self) -> Result<(), PartitionError> {
        let mut errors = Vec::new();
        if self.subclusters == 0 {
            errors.push("subclusters must be at least 1".to_string());
        }
        for (i, m) in self.models.iter().enumerate() {
            for (what, v) in [("rate_rps", m.rate_rps), ("static_mem_mb", m.static_mem_mb), ("dynamic_mem_mb", m.dynamic_mem_mb)] {
                if !(v.is_finite() && v >= 0.0) {
                    errors.push(format!("model {i} (`{}`): {what} must be finite and non-negative, got {v}", m.name));
                }
            }
        }
        for (what, v) in [("r_max", self.r_max), ("s_max", self.s_max)] {
            if v.is_nan() || v < 0.0 {
                errors.push(format!("{what} must be non-negative, got {v}"));
            }
        }
        if !(self.w.is_finite() && self.w >= 0.0) {
            errors.push(format!("w must be finite and non-negative, got {}", self.w));
        }
        if let Some(c) = &self.current {
            if c.assignment.len() != self.models.len() {
                errors.push(format!("current assignment has {} entries for {} models", c.assignment.len(), self.models.len()));
            }
            if let Some(j) = c.assignment.iter().find(|j| **j >= self.subclusters) {
                errors.push(format!("current assignment uses sub-cluster {j} of {}", self.subclusters));
            }
            if c.cost.len() != self.models.len() || c.cost.iter().any(|row| row.len() != self.subclusters) {
                errors.push("change cost matrix must be models x subclusters".into());
            }
            if c.cost.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
                errors.push("change costs must be finite and non-negative".into());
            }
            if c.c_max.is_nan() || c.c_max < 0.0 {
                errors.push(format!("c_max must be non-negative, got {}", c.c_max));
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(PartitionError::Invalid(errors))
        }
    }

    fn check_assignment(&self, assignment: &[usize]) {
        assert_eq!(assignment.len(), self.models.len(), "assignment length");
        assert!(assignment.iter().all(|j| *j < self.subclusters), "sub-cluster out of range");
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    /// Sub-cluster rate within `r_max`.
    Rate,
    /// Static memory plus the largest dynamic memory within `s_max`.
    Memory,
    /// Total change cost against the current assignment within `c_max`.
    ChangeCost,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub constraint: Constraint,
    /// `None` for the cluster-wide change-cost bound.
    pub subcluster: Option<usize>,
    pub value: f64,
    pub limit: f64,
}

impl Violation {
    /// Excess relative to the limit, used to rank infeasible assignments.
    pub fn severity(&self) -> f64 {
        let excess = self.value - self.limit;
        if self.limit > 0.0 {
            excess / self.limit
        } else {
            excess
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub delta_r: f64,
    pub delta_s: f64,
    pub objective: f64,
    pub rate_sums: Vec<f64>,
    pub static_sums: Vec<f64>,
    /// Static memory plus the largest dynamic memory, per sub-cluster.
    pub memory_need: Vec<f64>,
    pub change_cost: f64,
    pub violations: Vec<Violation>,
}

impl Evaluation {
    pub fn feasible(&self) -> bool {
        self.violations.is_empty()
    }

    /// Sum of violation severities; zero when feasible.
    pub fn infeasibility(&self) -> f64 {
        self.violations.iter().map(Violation::severity).sum()
    }
}

/// Cost of moving from `current` to `assignment`: each model that changes
/// sub-cluster pays to unload from the old and load on the new one.
pub fn change_cost(current: &CurrentAssignment, assignment: &[usize]) -> f64 {
    assignment
        .iter()
        .zip(&current.assignment)
        .enumerate()
        .filter(|(_, (a, b))| a != b)
        .map(|(i, (a, b))| current.cost[i][*a] + current.cost[i][*b])
        .sum()
}

/// Scores `assignment` (model index → sub-cluster) and lists every
/// violated constraint.
pub fn evaluate(problem: &PartitionProblem, assignment: &[usize]) -> Evaluation {
    problem.check_assignment(assignment);
    let l = problem.subclusters;
    let mut rate_sums = vec![0.0; l];
    let mut static_sums = vec![0.0; l];
    let mut max_dynamic = vec![0.0f64; l];
    for (m, &j) in problem.models.iter().zip(assignment) {
        rate_sums[j] += m.rate_rps;
        static_sums[j] += m.static_mem_mb;
        max_dynamic[j] = max_dynamic[j].max(m.dynamic_mem_mb);
    }
    let (r_bar, s_bar) = (problem.mean_rate(), problem.mean_static());
    let delta_r = rate_sums.iter().map(|r| (r - r_bar).abs()).fold(0.0, f64::max);
    let delta_s = static_sums.iter().map(|s| (s - s_bar).abs()).fold(0.0, f64::max);
    let memory_need: Vec<f64> = static_sums.iter().zip(&max_dynamic).map(|(s, d)| s + d).collect();

    let mut violations = Vec::new();
    for j in 0..l {
        if rate_sums[j] > problem.r_max {
            violations.push(Violation {
                constraint: Constraint::Rate,
                subcluster: Some(j),
                value: rate_sums[j],
                limit: problem.r_max,
            });
        }
        if memory_need[j] > problem.s_max {
            violations.push(Violation {
                constraint: Constraint::Memory,
                subcluster: Some(j),
                value: memory_need[j],
                limit: problem.s_max,
            });
        }
    }
    let mut cost = 0.0;
    if let Some(current) = &problem.current {
        cost = change_cost(current, assignment);
        if cost > current.c_max {
            violations.push(Violation {
                constraint: Constraint::ChangeCost,
                subcluster: None,
                value: cost,
                limit: current.c_max,
            });
        }
    }
    Evaluation {
        delta_r,
        delta_s,
        objective: delta_r + problem.w * delta_s,
        rate_sums,
        static_sums,
        memory_need,
        change_cost: cost,
        violations,
    }
}

/// `(max - min) / avg` of the per-sub-cluster rate sums and static-memory
/// sums. `None` for a quantity whose average is zero.
pub fn imbalance_factor(problem: &PartitionProblem, assignment: &[usize]) -> (Option<f64>, Option<f64>) {
    let e = evaluate(problem, assignment);
    (spread(&e.rate_sums), spread(&e.static_sums))
}

fn spread(sums: &[f64]) -> Option<f64> {
    let avg = sums.iter().sum::<f64>() / sums.len() as f64;
    if avg <= 0.0 {
        return None;
    }
    let max = sums.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = sums.iter().copied().fold(f64::INFINITY, f64::min);
    Some((max - min) / avg)
}
