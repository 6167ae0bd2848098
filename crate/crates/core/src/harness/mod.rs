//! Experiment plumbing: configuration, noise injection and δ-sweeps.

pub mod config;
pub mod noise;
pub mod sweep;

pub use config::{load_config, parse_config, ExperimentConfig, Method, ProfileName};
pub use noise::{coefficient_noise, inject_noise};
pub use sweep::{run_sweep, sweep_csv, ConstantsSource, Experiment, SweepRow, SWEEP_HEADER};
