//! Run statistics, analytic capacity models, goodput search, flat-top
//! checks, autoscaling advice, and the scheduler throughput benchmark.

pub mod analytic;
pub mod bench;
pub mod flattop;
pub mod goodput;
pub mod stats;
pub mod sweep;

pub use analytic::{analytical_solution, batching_ceiling_rps, Mode, StaggeredSolution};
pub use bench::{scale_bench, scale_bench_table, BenchConfig, BenchPoint};
pub use flattop::{autoscale_advice, flat_top_check, FlatTopPoint, FlatTopReport, Thresholds};
pub use goodput::{goodput_search, GoodputConfig, GoodputResult, Probe};
pub use stats::{write_latency_csv, ModelStats, RunStats};
pub use sweep::{sweep, Dimension, SweepError, SweepPoint, SweepRow};
