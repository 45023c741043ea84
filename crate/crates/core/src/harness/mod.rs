//! Experiment orchestration, baselines and oracles.

pub mod baselines;
pub mod cdf;
pub mod config;
pub mod experiment;
pub mod oracle;

pub use baselines::{baseline_nn_wmmse, baseline_random_sched, baseline_svd_mmse_tdma, random_schedule, tdma_schedule};
pub use cdf::{empirical_cdf, write_cdf_csv, write_rates_csv, CdfPoint, RateRecord};
pub use config::{Algorithm, CsiConfig, ExperimentConfig, GraphSpec, InstanceSpec, RateUnits};
pub use experiment::{manifest, run_experiment, run_single, seed_dir, write_run, Manifest, RunOutput};
pub use oracle::{brute_force_schedule, brute_force_sumrate};
