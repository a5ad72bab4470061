//! Benchmark harness for the reconciliation toolkit: deterministic scenario
//! generation, cross-backend runs with ground-truth validation, and report
//! emission. The `bench` binary is a thin wrapper over these modules.

pub mod report;
pub mod runner;
pub mod scenario;

pub use report::{emit, to_csv, to_json, ReportFormat};
pub use runner::{bench_params, run, run_cells, Backend, RunMetrics};
pub use scenario::{generate, Family, Scenario, ScenarioSpec, SplitMix64};
