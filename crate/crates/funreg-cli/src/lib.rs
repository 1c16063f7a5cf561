//! Library side of the funreg command-line harness: configuration,
//! tuning rules, sweep orchestration, and file formats.

pub mod config;
pub mod csvio;
pub mod dataset;
pub mod selftest;
pub mod sweep;
pub mod tuning;

pub use config::{ExperimentConfig, SweepConfig, TuningConsts, TuningOverrides};
pub use sweep::{run_rate_sweep, RatePoint, RatesTable};
