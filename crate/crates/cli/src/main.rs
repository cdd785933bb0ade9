//! `batchsym`: run scenarios, goodput searches, sweeps, partitioning and
//! the scheduler benchmark from the command line.

mod output;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use batchsym::metrics::analytic::{analytical_solution, Mode};
use batchsym::metrics::stats::write_latency_csv;
use batchsym::metrics::sweep::{assemble, expand, run_point, write_sweep_csv, Dimension};
use batchsym::metrics::{goodput_search, scale_bench_table, GoodputConfig, RunStats};
use batchsym::profile::LatencyProfile;
use batchsym::scheduler::PolicyKind;
use batchsym::sim::{bundled, run_with, RunOptions, Scenario, ScenarioError, SimError};
use batchsym::time::Dur;
use batchsym::zoo;
use batchsym_partition::{imbalance_factor, random_solver, read_problem, solve, write_assignment, PartitionError, SolveOptions};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use output::{write_atomic, write_to};

#[derive(Parser)]
#[command(name = "batchsym", version, about = "Deadline-aware batch scheduling simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its results to a directory.
    Simulate(SimulateArgs),
    /// Search the highest rate at which every model meets its p99 SLO.
    Goodput(GoodputArgs),
    /// Goodput or load sweep over one dimension, one CSV row per point.
    Sweep(SweepArgs),
    /// Run one scenario and write its dispatch/drop trace.
    Trace(TraceArgs),
    /// Split models across sub-clusters.
    Partition(PartitionArgs),
    /// Wall-clock throughput of the scheduler over worker and GPU counts.
    ScaleBench(BenchArgs),
    /// Closed-form batch sizes and throughput for one model.
    Analytic(AnalyticArgs),
    /// List the bundled scenarios.
    Scenarios,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Bundled scenario name or path to a scenario file.
    #[arg(long)]
    scenario: String,
    /// Seed for stochastic workloads; required unless the scenario sets one.
    #[arg(long)]
    seed: Option<u64>,
    /// deferred, eager, timeout:<ms> or timeout-slo:<fraction>.
    #[arg(long)]
    policy: Option<PolicyKind>,
    /// Total offered rate in requests per second.
    #[arg(long)]
    rate: Option<f64>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Check scheduler invariants after every event (slow).
    #[arg(long)]
    check_invariants: bool,
}

#[derive(Args)]
struct GoodputArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Latency quantile that must meet the SLO.
    #[arg(long = "p99", value_name = "QUANTILE", default_value_t = 0.99, num_args = 0..=1, default_missing_value = "0.99")]
    quantile: f64,
    /// CSV summary (`-` for stdout); the JSON report always goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    dimension: Dimension,
    /// Comma-separated grid values.
    #[arg(long, value_delimiter = ',', required = true)]
    grid: Vec<f64>,
    /// Capacity for offered_load sweeps; searched when absent.
    #[arg(long)]
    capacity: Option<f64>,
    #[arg(long = "p99", value_name = "QUANTILE", default_value_t = 0.99)]
    quantile: f64,
    /// Output CSV (`-` or absent for stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TraceArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Output CSV (`-` or absent for stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    Random,
}

#[derive(Args)]
struct PartitionArgs {
    #[arg(long)]
    problem: PathBuf,
    /// Time budget in seconds.
    #[arg(long)]
    budget: f64,
    #[arg(long)]
    seed: u64,
    /// Use the random-assignment baseline instead of the solver.
    #[arg(long)]
    baseline: Option<Baseline>,
    /// Stop after this many restarts or samples.
    #[arg(long)]
    max_restarts: Option<u64>,
    /// Assignment CSV; the JSON report goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    workers: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "64")]
    gpus: Vec<usize>,
    #[arg(long, default_value_t = 64)]
    models: usize,
    /// Seconds per configuration.
    #[arg(long, default_value_t = 2.0)]
    duration: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyticArgs {
    /// Model name in the zoo.
    #[arg(long, requires = "zoo", conflicts_with_all = ["alpha", "beta"])]
    model: Option<String>,
    /// `1080ti`, `a100` or a zoo CSV path.
    #[arg(long)]
    zoo: Option<String>,
    #[arg(long, requires = "beta")]
    alpha: Option<f64>,
    #[arg(long, requires = "alpha")]
    beta: Option<f64>,
    /// SLO in ms; defaults to the zoo's.
    #[arg(long)]
    slo: Option<f64>,
    #[arg(long)]
    gpus: u32,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Invalid(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<PartitionError> for CliError {
    fn from(e: PartitionError) -> Self {
        match e {
            PartitionError::Infeasible { .. } => CliError::Runtime(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

fn load_scenario(a: &ScenarioArgs) -> Result<Scenario, CliError> {
    if bundled::source(&a.scenario).is_none() && !Path::new(&a.scenario).exists() {
        let names: Vec<_> = bundled::names().collect();
        return Err(CliError::Usage(format!(
            "scenario `{}` is neither a file nor a bundled name ({})",
            a.scenario,
            names.join(", ")
        )));
    }
    let mut s = bundled::load_any_with_seed(&a.scenario, a.seed)?;
    if let Some(kind) = a.policy {
        s = s.with_policy_kind(kind);
    }
    if let Some(rate) = a.rate {
        if !(rate.is_finite() && rate >= 0.0) {
            return Err(CliError::Usage(format!("--rate must be non-negative, got {rate}")));
        }
        s = s.with_rate(rate);
    }
    s.validate().map_err(|e| CliError::Usage(format!("invalid scenario {}:\n{e}", s.name)))?;
    Ok(s)
}

fn json_line(value: &serde_json::Value) -> Result<(), CliError> {
    write_to(None, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)
    })?;
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    let s = load_scenario(&a.scenario)?;
    let opts = RunOptions {
        check_invariants: a.check_invariants,
        abort_after_bad: None,
    };
    let result = run_with(&s, None, &opts)?;
    let stats = RunStats::from_result(&result);
    fs::create_dir_all(&a.out)?;
    let summary = serde_json::json!({
        "stats": stats,
        "counters": result.counters,
        "window_ns": [result.window.0.nanos(), result.window.1.nanos()],
        "end_time_ns": result.end_time.nanos(),
    });
    write_atomic(&a.out.join("summary.json"), |w| {
        serde_json::to_writer_pretty(&mut *w, &summary)?;
        writeln!(w)
    })?;
    write_atomic(&a.out.join("requests.csv"), |w| result.write_requests_csv(w).map_err(io::Error::from))?;
    write_atomic(&a.out.join("trace.csv"), |w| result.write_trace_csv(w).map_err(io::Error::from))?;
    write_atomic(&a.out.join("latency.csv"), |w| write_latency_csv(&result, w).map_err(io::Error::from))?;
    write_atomic(&a.out.join("batch_hist.csv"), |w| stats.write_batch_hist_csv(w).map_err(io::Error::from))?;
    write_atomic(&a.out.join("utilization.csv"), |w| stats.write_utilization_csv(w).map_err(io::Error::from))?;
    eprintln!(
        "{}: {} arrivals, goodput {:.1} r/s, bad rate {:.4}, mean idle {:.3}, median batch {}",
        s.name,
        stats.arrivals,
        stats.goodput_rps,
        stats.bad_rate,
        stats.mean_idle_fraction,
        stats.median_batch.map_or("-".into(), |b| b.to_string())
    );
    Ok(())
}

fn check_quantile(q: f64) -> Result<(), CliError> {
    if q > 0.0 && q <= 1.0 {
        Ok(())
    } else {
        Err(CliError::Usage(format!("--p99 quantile must be in (0, 1], got {q}")))
    }
}

fn goodput(a: GoodputArgs) -> Result<(), CliError> {
    check_quantile(a.quantile)?;
    let s = load_scenario(&a.scenario)?;
    let cfg = GoodputConfig {
        quantile: a.quantile,
        ..GoodputConfig::default()
    };
    let g = goodput_search(&s, &cfg)?;
    let stats = if g.rate_rps > 0.0 {
        Some(RunStats::from_result(&run_with(&s.with_rate(g.rate_rps), None, &RunOptions::default())?))
    } else {
        None
    };
    if let Some(out) = &a.out {
        write_to(Some(out), |w| {
            writeln!(w, "scenario,policy,seed,goodput_rps,bad_rate,idle_fraction,median_batch")?;
            writeln!(
                w,
                "{},{},{},{:.3},{:.6},{:.6},{}",
                s.name,
                s.policy.kind.label(),
                s.seed,
                g.rate_rps,
                stats.as_ref().map_or(0.0, |st| st.bad_rate),
                stats.as_ref().map_or(1.0, |st| st.mean_idle_fraction),
                stats.as_ref().and_then(|st| st.median_batch).map_or(String::new(), |b| b.to_string())
            )
        })?;
    }
    json_line(&serde_json::json!({ "scenario": s.name, "policy": s.policy.kind.label(), "seed": s.seed, "search": g }))
}

fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("BATCHSYM_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| CliError::Usage(format!("BATCHSYM_THREADS must be a positive integer, got `{v}`")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| CliError::Runtime(e.to_string()))
}

fn sweep(a: SweepArgs) -> Result<(), CliError> {
    check_quantile(a.quantile)?;
    let s = load_scenario(&a.scenario)?;
    let cfg = GoodputConfig {
        quantile: a.quantile,
        ..GoodputConfig::default()
    };
    let capacity = match (a.dimension, a.capacity) {
        (Dimension::OfferedLoad, None) => Some(goodput_search(&s, &cfg)?.rate_rps),
        (_, c) => c,
    };
    let points = expand(&s, a.dimension, &a.grid, capacity).map_err(|e| CliError::Usage(e.to_string()))?;
    let pool = thread_pool()?;
    let rows = pool
        .install(|| points.par_iter().map(|p| run_point(p, a.dimension, &cfg)).collect::<Result<Vec<_>, _>>())
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let rows = assemble(rows, capacity);
    write_to(a.out.as_deref(), |w| write_sweep_csv(&rows, w).map_err(io::Error::from))?;
    Ok(())
}

fn trace(a: TraceArgs) -> Result<(), CliError> {
    let s = load_scenario(&a.scenario)?;
    let result = run_with(&s, None, &RunOptions::default())?;
    write_to(a.out.as_deref(), |w| result.write_trace_csv(w).map_err(io::Error::from))?;
    Ok(())
}

fn partition(a: PartitionArgs) -> Result<(), CliError> {
    if !(a.budget.is_finite() && a.budget > 0.0) {
        return Err(CliError::Usage(format!("--budget must be positive, got {}", a.budget)));
    }
    let p = read_problem(&a.problem)?;
    let opts = SolveOptions {
        budget: Duration::from_secs_f64(a.budget),
        seed: a.seed,
        max_restarts: a.max_restarts,
    };
    let (solver, result) = match a.baseline {
        Some(Baseline::Random) => ("random", random_solver(&p, &opts)),
        None => ("local_search", solve(&p, &opts)),
    };
    let (solution, feasible) = match result {
        Ok(s) => (s, true),
        Err(PartitionError::Infeasible { best, .. }) => (*best, false),
        Err(e) => return Err(e.into()),
    };
    if let Some(out) = &a.out {
        write_atomic(out, |w| write_assignment(&p, &solution.assignment, w).map_err(io::Error::from))?;
    }
    let (rate_if, mem_if) = imbalance_factor(&p, &solution.assignment);
    json_line(&serde_json::json!({
        "solver": solver,
        "feasible": feasible,
        "objective": solution.evaluation.objective,
        "delta_r": solution.evaluation.delta_r,
        "delta_s": solution.evaluation.delta_s,
        "w": p.w,
        "rate_imbalance": rate_if,
        "memory_imbalance": mem_if,
        "change_cost": solution.evaluation.change_cost,
        "violations": solution.evaluation.violations,
        "restarts": solution.restarts,
        "evaluations": solution.evaluations,
    }))?;
    if feasible {
        Ok(())
    } else {
        Err(CliError::Runtime("no feasible assignment found within the budget".into()))
    }
}

fn scale_bench(a: BenchArgs) -> Result<(), CliError> {
    if !(a.duration.is_finite() && a.duration > 0.0) {
        return Err(CliError::Usage(format!("--duration must be positive, got {}", a.duration)));
    }
    let points = scale_bench_table(&a.workers, &a.gpus, a.models, Duration::from_secs_f64(a.duration));
    write_to(a.out.as_deref(), |w| {
        writeln!(w, "workers,gpus,models,requests,grants,elapsed_s,decisions_per_sec,ns_per_decision")?;
        for p in &points {
            writeln!(
                w,
                "{},{},{},{},{},{:.6},{:.1},{:.1}",
                p.workers, p.gpus, p.models, p.requests, p.grants, p.elapsed_s, p.decisions_per_sec, p.ns_per_decision
            )?;
        }
        Ok(())
    })?;
    Ok(())
}

fn analytic(a: AnalyticArgs) -> Result<(), CliError> {
    let (name, profile, zoo_slo) = match (&a.model, a.alpha, a.beta) {
        (Some(model), _, _) => {
            let zoo_name = a.zoo.as_deref().unwrap_or_default();
            let entries = zoo::load_zoo(zoo_name).map_err(|e| CliError::Usage(e.to_string()))?;
            let e = zoo::find(&entries, zoo_name, model).map_err(|e| CliError::Usage(e.to_string()))?;
            (e.name.clone(), e.profile().map_err(|e| CliError::Usage(e.to_string()))?, Some(e.slo_ms))
        }
        (None, Some(alpha), Some(beta)) => (
            "model".to_string(),
            LatencyProfile::linear_ms(alpha, beta).map_err(|e| CliError::Usage(e.to_string()))?,
            None,
        ),
        _ => return Err(CliError::Usage("give --model with --zoo, or --alpha and --beta".into())),
    };
    let slo_ms = a
        .slo
        .or(zoo_slo)
        .ok_or_else(|| CliError::Usage("--slo is required without a zoo entry".into()))?;
    if !(slo_ms.is_finite() && slo_ms > 0.0) {
        return Err(CliError::Usage(format!("--slo must be positive, got {slo_ms}")));
    }
    let slo = Dur::from_ms(slo_ms);
    let mut rows = Vec::new();
    for mode in [Mode::NoCoordination, Mode::Staggered] {
        match analytical_solution(&profile, slo, a.gpus, mode) {
            Ok(sol) => rows.push(format!("{name},{},{},{slo_ms},{},{:.1}", mode.as_str(), a.gpus, sol.batch, sol.throughput_rps)),
            Err(e) => {
                eprintln!("{}: {e}", mode.as_str());
                rows.push(format!("{name},{},{},{slo_ms},,", mode.as_str(), a.gpus));
            }
        }
    }
    let write = |w: &mut dyn Write| -> io::Result<()> {
        writeln!(w, "model,mode,gpus,slo_ms,batch,throughput_rps")?;
        for r in &rows {
            writeln!(w, "{r}")?;
        }
        Ok(())
    };
    match &a.out {
        Some(out) => {
            write_to(Some(out), write)?;
            write_to(None, |w| rows.iter().try_for_each(|r| writeln!(w, "{r}")))?;
        }
        None => write_to(None, write)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Goodput(a) => goodput(a),
        Command::Sweep(a) => sweep(a),
        Command::Trace(a) => trace(a),
        Command::Partition(a) => partition(a),
        Command::ScaleBench(a) => scale_bench(a),
        Command::Analytic(a) => analytic(a),
        Command::Scenarios => write_to(None, |w| bundled::names().try_for_each(|n| writeln!(w, "{n}"))).map_err(CliError::from),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
