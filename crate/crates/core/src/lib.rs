//! Deadline-aware batch scheduling for DNN inference on a GPU cluster, with
//! a discrete-event simulator, analytic capacity models and goodput search.

pub mod ids;
pub mod metrics;
pub mod profile;
pub mod scheduler;
pub mod sim;
pub mod time;
pub mod zoo;
