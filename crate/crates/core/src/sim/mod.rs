//! Deterministic discrete-event simulation of a GPU cluster driven by the
//! scheduler. GPUs are emulated by holding them busy for `l(b)`.

pub mod bundled;
mod engine;
pub mod network;
mod result;
pub mod scenario;
pub mod workload;

pub use engine::{run, run_with, RunOptions, SimError};
pub use network::NetworkSpec;
pub use result::{DropEvent, EngineCounters, ModelInfo, OrderRecord, Outcome, RequestRecord, RunResult};
pub use scenario::{Scenario, ScenarioError, ScenarioFile, ValidationErrors};
pub use workload::{generate_arrivals, ArrivalProcess, Popularity, WorkloadSpec};
