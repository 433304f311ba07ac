//! Benchmark harness: analytic solutions, error metrics, run configuration and the
//! convergence sweeps behind the `gpmrt` command.

pub mod config;
pub mod exact;
pub mod experiments;
pub mod metrics;
pub mod params;
pub mod tables;
