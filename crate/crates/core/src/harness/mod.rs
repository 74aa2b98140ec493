//! Experiment harness: configuration, training loops, metrics, and run
//! manifests. The library stays silent about files; everything here returns
//! strings and structs, and the command-line binary decides where they land.

pub mod config;
pub mod manifest;
pub mod metrics;
pub mod runner;

pub use config::{load_config, parse_config, AuxKind, EnvKind, ExperimentConfig, MethodKind, RegChoice};
pub use manifest::{build_id, RunManifest};
pub use metrics::{to_csv, Clock, MetricsRow, CSV_HEADER};
pub use runner::{build_env, evaluate, run, RunResult};
