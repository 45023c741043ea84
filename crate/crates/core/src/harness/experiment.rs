//! Algorithm dispatch and artifact emission.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::baselines::{baseline_nn_wmmse, baseline_random_sched, baseline_svd_mmse_tdma};
use super::cdf::{write_cdf_csv, write_rates_csv};
use super::config::{Algorithm, ExperimentConfig};
use crate::assignment::{solve_joint_assignment, write_assignment_csv};
use crate::backhaul::{solve_nmaxmin, write_flows_csv};
use crate::clustering::{solve_sparse_wmmse, write_clusters_csv};
use crate::error::{Error, Result};
use crate::net_model::partial_csi_table;
use crate::report::{write_records, SolveReport};
use crate::scheduler::{solve_joint_scheduling, write_schedule_csv};
use crate::stochastic::{run_baseline, run_stochastic, trace_records, BaselineKind};
use crate::wmmse::{home_links, solve_best_of, Link, SolveOptions};

/// Identifies the inputs of one run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub config_hash: String,
}

/// Result of one seed: the report plus algorithm-specific CSV files.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub seed: u64,
    pub report: SolveReport,
    /// `(file name, contents)`.
    pub files: Vec<(String, Vec<u8>)>,
}

fn csv_file(name: &str, write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<(String, Vec<u8>)> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok((name.to_string(), buf))
}

/// Runs the configured algorithm for one seed without touching the disk.
pub fn run_single(config: &ExperimentConfig, seed: u64) -> Result<RunOutput> {
    let stop = config.stop;
    let utility = &config.utility;
    let mut files = Vec::new();
    let report = if config.algorithm == Algorithm::Nmaxmin {
        let graph = config.graph(seed)?;
        let sol = solve_nmaxmin(&graph, &config.nmaxmin)?;
        files.push(csv_file("flows.csv", |b| write_flows_csv(&sol.flows, b))?);
        files.push(csv_file("outer.csv", |b| write_records(&sol.trace, b))?);
        sol.report
    } else {
        let inst = config.instance(seed)?;
        match config.algorithm {
            Algorithm::Wmmse => {
                let opts = SolveOptions { stop, utility: *utility, seed, ..Default::default() };
                solve_best_of(&inst, home_links(&inst), config.inits, &opts)?.report
            }
            Algorithm::JointSched => {
                let (state, report) = solve_joint_scheduling(&inst, utility, config.slots, stop, seed)?;
                let links: Vec<Link> = home_links(&inst);
                files.push(csv_file("schedule.csv", |b| write_schedule_csv(&links, &state.alpha, b))?);
                report
            }
            Algorithm::JointAssign => {
                let (state, report) = solve_joint_assignment(&inst, utility, &config.assignment, seed)?;
                files.push(csv_file("assignment.csv", |b| write_assignment_csv(&state, b))?);
                report
            }
            Algorithm::SparseWmmse => {
                let (sol, report) = solve_sparse_wmmse(&inst, &config.cluster, utility, stop, seed)?;
                files.push(csv_file("clusters.csv", |b| write_clusters_csv(&sol, b))?);
                report
            }
            Algorithm::NnWmmse => baseline_nn_wmmse(&inst, utility, stop, seed)?,
            Algorithm::SvdMmseTdma => baseline_svd_mmse_tdma(&inst, config.slots, config.streams)?,
            Algorithm::RandomSched => {
                let (alpha, report) = baseline_random_sched(&inst, utility, config.slots, config.users_per_slot, stop, seed)?;
                files.push(csv_file("schedule.csv", |b| write_schedule_csv(&home_links(&inst), &alpha, b))?);
                report
            }
            Algorithm::StochasticWmmse | Algorithm::OneSampleWmmse | Algorithm::MeanWmmse | Algorithm::ProjectedSgd => {
                let snr_db = config
                    .csi
                    .snr_db
                    .or(config.layout_snr_db())
                    .ok_or_else(|| Error::Config("csi.snr_db is required for instance files".into()))?;
                let snr = 10f64.powf(snr_db / 10.0);
                let table = partial_csi_table(&inst, config.csi.eta_db, config.csi.gamma, snr, seed)?;
                let run = match config.algorithm {
                    Algorithm::StochasticWmmse => run_stochastic(&inst, &table, &config.stochastic, seed)?,
                    Algorithm::OneSampleWmmse => run_baseline(&inst, &table, BaselineKind::OneSample, &config.stochastic, seed)?,
                    Algorithm::MeanWmmse => run_baseline(&inst, &table, BaselineKind::Mean, &config.stochastic, seed)?,
                    _ => run_baseline(&inst, &table, BaselineKind::Sgd, &config.stochastic, seed)?,
                };
                files.push(csv_file("expected_trace.csv", |b| write_records(&trace_records(&run.report), b))?);
                run.report
            }
            Algorithm::Nmaxmin => unreachable!(),
        }
    };
    if report.user_rates.iter().any(|r| !r.is_finite()) {
        return Err(Error::Numeric("non-finite user rate".into()));
    }
    let scaled: Vec<f64> = report.user_rates.iter().map(|r| r * config.units.scale()).collect();
    files.insert(0, csv_file("trace.csv", |b| report.write_csv(b))?);
    files.insert(1, csv_file("rates.csv", |b| write_rates_csv(&scaled, b))?);
    files.insert(2, csv_file("cdf.csv", |b| write_cdf_csv(&scaled, b))?);
    Ok(RunOutput { seed, report, files })
}

pub fn manifest(config: &ExperimentConfig, seed: u64) -> Result<Manifest> {
    Ok(Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        algorithm: config.algorithm,
        seed,
        config_hash: config.hash()?,
    })
}

/// Writes one run's files and its manifest into `dir`.
pub fn write_run(config: &ExperimentConfig, out: &RunOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, data) in &out.files {
        std::fs::write(dir.join(name), data)?;
    }
    let m = toml::to_string(&manifest(config, out.seed)?).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(dir.join("manifest.toml"), m)?;
    Ok(())
}

/// Runs every seed (in parallel) and writes `<output>/seed-<n>/` per seed
/// plus the canonical `config.toml`. Returns the runs in seed-list order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<RunOutput>> {
    config.validate()?;
    let runs: Vec<RunOutput> = config
        .seeds
        .par_iter()
        .map(|&s| run_single(config, s))
        .collect::<Result<_>>()?;
    std::fs::create_dir_all(&config.output)?;
    std::fs::write(config.output.join("config.toml"), config.to_toml()?)?;
    for r in &runs {
        write_run(config, r, &seed_dir(&config.output, r.seed))?;
    }
    Ok(runs)
}

pub fn seed_dir(output: &Path, seed: u64) -> PathBuf {
    output.join(format!("seed-{seed}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::InstanceSpec;
    use crate::net_model::DropLayout;

    fn siso_config() -> ExperimentConfig {
        ExperimentConfig {
            instance: Some(InstanceSpec::Drop(DropLayout {
                num_bs: 2,
                num_users: 2,
                tx_antennas: 1,
                rx_antennas: 1,
                ..Default::default()
            })),
            ..Default::default()
        }
    }

    #[test]
    fn wmmse_trace_objective_is_monotone() {
        let out = run_single(&siso_config(), 3).unwrap();
        let obj: Vec<f64> = out.report.iterations.iter().map(|r| r.objective).collect();
        assert!(obj.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        let names: Vec<&str> = out.files.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["trace.csv", "rates.csv", "cdf.csv"]);
    }

    #[test]
    fn sweep_writes_one_directory_per_seed() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig { seeds: vec![4, 7], output: dir.path().to_path_buf(), ..siso_config() };
        run_experiment(&cfg).unwrap();
        let m4: Manifest = toml::from_str(&std::fs::read_to_string(seed_dir(dir.path(), 4).join("manifest.toml")).unwrap()).unwrap();
        let m7: Manifest = toml::from_str(&std::fs::read_to_string(seed_dir(dir.path(), 7).join("manifest.toml")).unwrap()).unwrap();
        assert_eq!((m4.seed, m7.seed), (4, 7));
        assert_eq!(Manifest { seed: 4, ..m7 }, m4);
        let back = ExperimentConfig::load(&dir.path().join("config.toml")).unwrap();
        assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
    }

    #[test]
    fn bits_scale_rates() {
        let nats = run_single(&siso_config(), 1).unwrap();
        let cfg = ExperimentConfig { units: super::super::config::RateUnits::Bits, ..siso_config() };
        let bits = run_single(&cfg, 1).unwrap();
        let read = |o: &RunOutput| -> Vec<f64> {
            let rows: Vec<super::super::cdf::RateRecord> = crate::report::read_records(o.files[1].1.as_slice()).unwrap();
            rows.iter().map(|r| r.rate).collect()
        };
        for (a, b) in read(&nats).iter().zip(read(&bits)) {
            assert!((a / std::f64::consts::LN_2 - b).abs() < 1e-12);
        }
    }
}
