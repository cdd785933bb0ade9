//! Scenario files.
//!
//! A scenario is a TOML document; all durations are milliseconds except the
//! top-level `duration_s`, `warmup_s`, `cooldown_s` and the network fields,
//! which carry their unit in the key name.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ids::ModelId;
use crate::metrics::analytic::staggered_batch;
use crate::profile::{LatencyProfile, ModelSpec};
use crate::scheduler::{BatchPolicy, DispatchDelay, LeadIn, PolicyConfig, PolicyKind};
use crate::time::{Dur, Time};
use crate::zoo;

use super::network::NetworkSpec;
use super::workload::{ArrivalProcess, Popularity, WorkloadSpec};

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub name: Option<String>,
    pub alpha_ms: Option<f64>,
    pub beta_ms: Option<f64>,
    /// Measured latencies for batch sizes 1, 2, ...
    pub table_ms: Option<Vec<f64>>,
    pub slo_ms: Option<f64>,
    /// Take the profile (and default SLO) from a zoo; `name = "*"` takes
    /// every model of the zoo.
    pub zoo: Option<String>,
    pub max_batch: Option<u32>,
    /// Number of identical copies; copies are suffixed `-0`, `-1`, ...
    pub count: Option<u32>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct LeadInEntry {
    pub kind: String,
    pub timeout_ms: Option<f64>,
    pub until_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(untagged)]
pub enum DropHeadTarget {
    Fixed(u32),
    Named(String),
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyEntry {
    pub kind: String,
    pub timeout_ms: Option<f64>,
    pub timeout_slo_fraction: Option<f64>,
    #[serde(default)]
    pub d_ctrl_us: Option<f64>,
    #[serde(default)]
    pub d_data_us_per_req: Option<f64>,
    /// Enables head dropping in favour of batches of this size, or of the
    /// staggered batch size for each model's share of the GPUs (`"auto"`).
    pub drop_head_target: Option<DropHeadTarget>,
    pub lead_in: Option<LeadInEntry>,
}

impl Default for PolicyEntry {
    fn default() -> Self {
        PolicyEntry {
            kind: "deferred".into(),
            timeout_ms: None,
            timeout_slo_fraction: None,
            d_ctrl_us: None,
            d_data_us_per_req: None,
            drop_head_target: None,
            lead_in: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ArrivalEntry {
    Poisson,
    Gamma {
        shape: f64,
    },
    /// Fixed gap per model. Request `i` (1-based) arrives at
    /// `offset + (i - 1) * gap`; indices in `skip` are omitted.
    Uniform {
        gap_ms: f64,
        #[serde(default)]
        offset_ms: f64,
        #[serde(default)]
        skip: Vec<u64>,
    },
    /// CSV `arrival_ns,model_name`, relative to the scenario file.
    Replay {
        path: PathBuf,
    },
    /// Poisson with a total rate that changes at segment starts.
    Piecewise {
        /// `[start_s, rate_rps]` pairs, starts increasing from 0.
        segments: Vec<(f64, f64)>,
    },
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(untagged)]
pub enum PopularityEntry {
    Named(String),
    Zipf { zipf: f64 },
    Weights { weights: Vec<f64> },
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadEntry {
    /// Total offered rate over all models, requests per second.
    pub rate_rps: Option<f64>,
    pub arrival: ArrivalEntry,
    pub popularity: Option<PopularityEntry>,
}

/// The on-disk form of a scenario, before validation.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: Option<String>,
    pub models: Vec<ModelEntry>,
    pub gpus: u32,
    #[serde(default)]
    pub policy: PolicyEntry,
    pub workload: WorkloadEntry,
    pub network: Option<NetworkSpec>,
    pub duration_s: f64,
    pub warmup_s: Option<f64>,
    pub cooldown_s: Option<f64>,
    pub seed: Option<u64>,
}

/// A validated experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub name: String,
    pub models: Vec<ModelSpec>,
    pub gpus: usize,
    pub policy: PolicyConfig,
    /// Per-model batch gathering; empty means `policy.batching` for all.
    pub model_batching: Vec<BatchPolicy>,
    /// Derive `model_batching` from each model's staggered batch size.
    pub auto_drop_head: bool,
    pub workload: WorkloadSpec,
    pub network: NetworkSpec,
    pub duration: Dur,
    pub warmup: Dur,
    pub cooldown: Dur,
    pub seed: u64,
}

/// Every problem found while validating a scenario.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationErrors(pub Vec<String>);

impl fmt::Display for ValidationErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "  - {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ValidationErrors {}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid scenario {name}:\n{errors}")]
    Invalid { name: String, errors: ValidationErrors },
}

impl Scenario {
    pub fn from_path(path: &Path) -> Result<Scenario, ScenarioError> {
        Self::from_path_with_seed(path, None)
    }

    /// Like `from_path`; `seed`, when given, replaces the file's seed before
    /// validation.
    pub fn from_path_with_seed(path: &Path, seed: Option<u64>) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let default_name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scenario");
        Self::from_toml_with_seed(&text, default_name, base, seed).map_err(|e| match e {
            ScenarioError::Parse { message, .. } => ScenarioError::Parse {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })
    }

    /// Parses and validates; relative replay paths resolve against `base`.
    pub fn from_toml(text: &str, default_name: &str, base: &Path) -> Result<Scenario, ScenarioError> {
        Self::from_toml_with_seed(text, default_name, base, None)
    }

    pub fn from_toml_with_seed(text: &str, default_name: &str, base: &Path, seed: Option<u64>) -> Result<Scenario, ScenarioError> {
        let mut file: ScenarioFile = toml::from_str(text).map_err(|e| ScenarioError::Parse {
            path: default_name.to_string(),
            message: e.to_string(),
        })?;
        if seed.is_some() {
            file.seed = seed;
        }
        file.resolve(default_name, base)
    }

    /// Start and end of the measurement window.
    pub fn window(&self) -> (Time, Time) {
        (Time::ZERO + self.warmup, Time::ZERO + self.duration - self.cooldown)
    }

    pub fn model_index(&self, name: &str) -> Option<ModelId> {
        self.models.iter().find(|m| m.name == name).map(|m| m.id)
    }

    /// Same scenario with a different total offered rate.
    pub fn with_rate(&self, rate_rps: f64) -> Scenario {
        let mut s = self.clone();
        s.workload.rate_rps = rate_rps;
        s
    }

    pub fn with_policy_kind(&self, kind: PolicyKind) -> Scenario {
        let mut s = self.clone();
        s.policy.kind = kind;
        s
    }

    pub fn with_seed(&self, seed: u64) -> Scenario {
        let mut s = self.clone();
        s.seed = seed;
        s
    }

    /// Recomputes automatic drop-head targets after models, GPUs or
    /// popularity changed. No-op unless `auto_drop_head` is set.
    pub fn refresh_batching(&mut self) {
        if !self.auto_drop_head {
            return;
        }
        let shares = self.workload.popularity.shares(self.models.len());
        self.model_batching = self
            .models
            .iter()
            .zip(shares)
            .map(|(m, share)| BatchPolicy::DropHead {
                target: staggered_batch(&m.profile, m.slo, self.gpus as f64 * share).max(1),
            })
            .collect();
    }

    /// Re-checks invariants that builders may have broken.
    pub fn validate(&self) -> Result<(), ValidationErrors> {
        let mut errors = Vec::new();
        check_common(self, &mut errors);
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ValidationErrors(errors))
        }
    }
}

fn check_common(s: &Scenario, errors: &mut Vec<String>) {
    if s.gpus == 0 {
        errors.push("gpus must be at least 1".into());
    }
    if s.models.is_empty() {
        errors.push("at least one model is required".into());
    }
    if s.duration <= Dur::ZERO {
        errors.push("duration_s must be positive".into());
    }
    if s.warmup < Dur::ZERO || s.cooldown < Dur::ZERO {
        errors.push("warmup_s and cooldown_s must be non-negative".into());
    }
    if s.warmup + s.cooldown >= s.duration {
        errors.push("duration_s must exceed warmup_s + cooldown_s".into());
    }
    for m in &s.models {
        if !m.is_feasible() {
            errors.push(format!(
                "model {}: slo {} ms does not exceed l(1) = {} ms",
                m.name,
                m.slo.as_ms(),
                m.profile.latency(1).as_ms()
            ));
        }
    }
    if let Err(e) = s.workload.check(s.models.len()) {
        errors.extend(e);
    }
    if let Err(e) = s.network.check() {
        errors.extend(e);
    }
}

fn ms(v: f64) -> Dur {
    Dur::from_ms(v)
}

impl ScenarioFile {
    pub fn resolve(self, default_name: &str, base: &Path) -> Result<Scenario, ScenarioError> {
        let name = self.name.clone().unwrap_or_else(|| default_name.to_string());
        let mut errors = Vec::new();

        let models = resolve_models(&self.models, &mut errors);
        let policy = resolve_policy(&self.policy, &mut errors);
        let network = self.network.clone().unwrap_or_default();
        let mut policy = policy.unwrap_or_else(PolicyConfig::deferred);
        if self.policy.d_ctrl_us.is_none() {
            policy.delay.ctrl = network.planning_ctrl();
        }
        let workload = resolve_workload(&self.workload, &models, base, &mut errors);
        let mut auto_drop_head = false;
        match &self.policy.drop_head_target {
            None => {}
            Some(DropHeadTarget::Fixed(0)) => errors.push("policy: drop_head_target must be at least 1".into()),
            Some(DropHeadTarget::Fixed(target)) => policy.batching = BatchPolicy::DropHead { target: *target },
            Some(DropHeadTarget::Named(n)) if n == "auto" => auto_drop_head = true,
            Some(DropHeadTarget::Named(n)) => {
                errors.push(format!("policy: drop_head_target must be a positive integer or \"auto\", got `{n}`"))
            }
        }

        let duration = Dur::from_secs(self.duration_s);
        let warmup = self.warmup_s.map(Dur::from_secs).unwrap_or(Dur(duration.nanos() / 10));
        let cooldown = self.cooldown_s.map(Dur::from_secs).unwrap_or(Dur(duration.nanos() / 10));
        if self.seed.is_none() && workload.as_ref().is_some_and(|w| w.is_stochastic()) {
            errors.push("seed is required for stochastic workloads".into());
        }
        let mut scenario = Scenario {
            name: name.clone(),
            models,
            gpus: self.gpus as usize,
            policy,
            model_batching: Vec::new(),
            auto_drop_head,
            workload: workload.unwrap_or_else(|| WorkloadSpec::new(ArrivalProcess::Poisson, Popularity::Uniform, 0.0)),
            network,
            duration,
            warmup,
            cooldown,
            seed: self.seed.unwrap_or(0),
        };
        check_common(&scenario, &mut errors);
        if errors.is_empty() {
            scenario.refresh_batching();
            Ok(scenario)
        } else {
            Err(ScenarioError::Invalid {
                name,
                errors: ValidationErrors(errors),
            })
        }
    }
}

fn resolve_models(entries: &[ModelEntry], errors: &mut Vec<String>) -> Vec<ModelSpec> {
    let mut out: Vec<ModelSpec> = Vec::new();
    let push = |name: String, profile: LatencyProfile, slo: Dur, out: &mut Vec<ModelSpec>| {
        let id = ModelId(out.len() as u32);
        out.push(ModelSpec::new(id, name, profile, slo));
    };
    for (i, e) in entries.iter().enumerate() {
        let label = e.name.clone().unwrap_or_else(|| format!("models[{i}]"));
        let mut base: Vec<(String, LatencyProfile, Option<f64>)> = Vec::new();
        if let Some(zoo_name) = &e.zoo {
            if e.alpha_ms.is_some() || e.beta_ms.is_some() || e.table_ms.is_some() {
                errors.push(format!("{label}: zoo models cannot also set alpha_ms/beta_ms/table_ms"));
                continue;
            }
            let entries = match zoo::load_zoo(zoo_name) {
                Ok(z) => z,
                Err(err) => {
                    errors.push(format!("{label}: {err}"));
                    continue;
                }
            };
            let picked: Vec<_> = match e.name.as_deref() {
                Some("*") => entries.iter().collect(),
                Some(n) => match zoo::find(&entries, zoo_name, n) {
                    Ok(z) => vec![z],
                    Err(err) => {
                        errors.push(format!("{label}: {err}"));
                        continue;
                    }
                },
                None => {
                    errors.push(format!("{label}: zoo models need a name (or \"*\")"));
                    continue;
                }
            };
            for z in picked {
                match z.profile() {
                    Ok(p) => base.push((z.name.clone(), p, Some(z.slo_ms))),
                    Err(err) => errors.push(format!("{}: {err}", z.name)),
                }
            }
        } else {
            let profile = match (&e.table_ms, e.alpha_ms, e.beta_ms) {
                (Some(t), None, None) => {
                    let points: Vec<_> = t.iter().enumerate().map(|(i, v)| (i as u32 + 1, ms(*v))).collect();
                    LatencyProfile::from_points(&points)
                }
                (None, Some(a), Some(b)) => LatencyProfile::linear_ms(a, b),
                _ => {
                    errors.push(format!("{label}: give either alpha_ms and beta_ms, or table_ms"));
                    continue;
                }
            };
            match profile {
                Ok(p) => base.push((label.clone(), p, None)),
                Err(err) => {
                    errors.push(format!("{label}: {err}"));
                    continue;
                }
            }
        }
        for (name, mut profile, zoo_slo) in base {
            if let Some(mb) = e.max_batch {
                match profile.clone().with_max_batch(mb) {
                    Ok(p) => profile = p,
                    Err(err) => {
                        errors.push(format!("{name}: {err}"));
                        continue;
                    }
                }
            }
            let Some(slo_ms) = e.slo_ms.or(zoo_slo) else {
                errors.push(format!("{name}: slo_ms is required"));
                continue;
            };
            if !(slo_ms > 0.0) {
                errors.push(format!("{name}: slo_ms must be positive"));
                continue;
            }
            match e.count {
                None => push(name, profile, ms(slo_ms), &mut out),
                Some(0) => errors.push(format!("{name}: count must be at least 1")),
                Some(n) => {
                    for k in 0..n {
                        push(format!("{name}-{k}"), profile.clone(), ms(slo_ms), &mut out);
                    }
                }
            }
        }
    }
    let mut names: Vec<&str> = out.iter().map(|m| m.name.as_str()).collect();
    names.sort_unstable();
    for w in names.windows(2) {
        if w[0] == w[1] {
            errors.push(format!("duplicate model name {}", w[0]));
        }
    }
    out
}

fn parse_kind(kind: &str, timeout_ms: Option<f64>, fraction: Option<f64>, errors: &mut Vec<String>) -> Option<PolicyKind> {
    match kind {
        "deferred" => Some(PolicyKind::Deferred),
        "eager" => Some(PolicyKind::Eager),
        "timeout" => match (timeout_ms, fraction) {
            (Some(k), None) if k >= 0.0 => Some(PolicyKind::Timeout { k: ms(k) }),
            (None, Some(f)) if (0.0..=1.0).contains(&f) => Some(PolicyKind::TimeoutSloFraction { fraction: f }),
            _ => {
                errors.push("policy: timeout needs exactly one of timeout_ms >= 0 or timeout_slo_fraction in [0, 1]".into());
                None
            }
        },
        other => {
            errors.push(format!("policy: unknown kind `{other}` (deferred, eager, timeout)"));
            None
        }
    }
}

fn resolve_policy(p: &PolicyEntry, errors: &mut Vec<String>) -> Option<PolicyConfig> {
    let kind = parse_kind(&p.kind, p.timeout_ms, p.timeout_slo_fraction, errors)?;
    let ctrl = p.d_ctrl_us.unwrap_or(0.0);
    let data = p.d_data_us_per_req.unwrap_or(0.0);
    if ctrl < 0.0 || data < 0.0 {
        errors.push("policy: d_ctrl_us and d_data_us_per_req must be non-negative".into());
    }
    let mut cfg = PolicyConfig::new(kind).with_delay(DispatchDelay {
        ctrl: Dur::from_us(ctrl),
        per_request: Dur::from_us(data),
    });
    if let Some(l) = &p.lead_in {
        let lead_kind = parse_kind(&l.kind, l.timeout_ms, None, errors)?;
        cfg.lead_in = Some(LeadIn {
            kind: lead_kind,
            until: Time::from_ms(l.until_ms),
        });
    }
    Some(cfg)
}

fn resolve_workload(w: &WorkloadEntry, models: &[ModelSpec], base: &Path, errors: &mut Vec<String>) -> Option<WorkloadSpec> {
    let arrival = match &w.arrival {
        ArrivalEntry::Poisson => ArrivalProcess::Poisson,
        ArrivalEntry::Gamma { shape } => ArrivalProcess::Gamma { shape: *shape },
        ArrivalEntry::Uniform { gap_ms, offset_ms, skip } => ArrivalProcess::Uniform {
            gap: ms(*gap_ms),
            offset: ms(*offset_ms),
            skip: skip.clone(),
        },
        ArrivalEntry::Replay { path } => {
            let full = if path.is_absolute() { path.clone() } else { base.join(path) };
            match super::workload::read_replay(&full, models) {
                Ok(entries) => ArrivalProcess::Replay { entries },
                Err(e) => {
                    errors.push(e.to_string());
                    return None;
                }
            }
        }
        ArrivalEntry::Piecewise { segments } => ArrivalProcess::Piecewise {
            segments: segments.iter().map(|(s, r)| (Time::from_secs(*s), *r)).collect(),
        },
    };
    let popularity = match &w.popularity {
        None => Popularity::Uniform,
        Some(PopularityEntry::Named(n)) if n == "uniform" => Popularity::Uniform,
        Some(PopularityEntry::Named(n)) => {
            errors.push(format!("workload: unknown popularity `{n}` (uniform, {{zipf = s}}, {{weights = [..]}})"));
            return None;
        }
        Some(PopularityEntry::Zipf { zipf }) => Popularity::Zipf { shape: *zipf },
        Some(PopularityEntry::Weights { weights }) => Popularity::Weights(weights.clone()),
    };
    let needs_rate = matches!(arrival, ArrivalProcess::Poisson | ArrivalProcess::Gamma { .. });
    let rate = match (w.rate_rps, needs_rate) {
        (Some(r), _) => r,
        (None, true) => {
            errors.push("workload: rate_rps is required for poisson and gamma arrivals".into());
            return None;
        }
        (None, false) => 0.0,
    };
    Some(WorkloadSpec::new(arrival, popularity, rate))
}
