use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use xlayer::harness::{
    brute_force_sumrate, run_experiment, run_single, seed_dir, write_cdf_csv, write_run, Algorithm, ExperimentConfig,
    GraphSpec, InstanceSpec, RateRecord,
};
use xlayer::net_model::load_instance;
use xlayer::report::read_records;
use xlayer::{Error, Result};

/// Cross-layer resource allocation simulator.
#[derive(Parser)]
#[command(name = "xlayer", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one algorithm for one seed.
    Solve(SolveArgs),
    /// Run every seed of a configuration, one sub-directory per seed.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated seeds replacing the configured list.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Empirical CDF of a per-user rate CSV (`user,rate`).
    Cdf {
        rates: PathBuf,
        /// Output file (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid-search optimum of a 2-user SISO instance.
    Oracle {
        instance: PathBuf,
        #[arg(long, default_value_t = 200)]
        grid: usize,
    },
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// wmmse, joint-sched, joint-assign, sparse-wmmse, nmaxmin,
    /// stochastic-wmmse, or a baseline (nn-wmmse, svd-mmse-tdma,
    /// random-sched, one-sample-wmmse, mean-wmmse, projected-sgd).
    #[arg(long)]
    algo: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Instance file (TOML).
    #[arg(long)]
    instance: Option<PathBuf>,
    /// Backhaul graph file.
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long)]
    slots: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Iteration cap (stochastic iterations for the stochastic algorithms).
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    eval_samples: Option<usize>,
}

fn solve_config(a: &SolveArgs) -> Result<(ExperimentConfig, u64)> {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(name) = &a.algo {
        cfg.algorithm = Algorithm::parse(name)?;
    }
    if let Some(p) = &a.instance {
        cfg.instance = Some(InstanceSpec::File { path: p.clone() });
    }
    if let Some(p) = &a.graph {
        cfg.graph = Some(GraphSpec::File { path: p.clone() });
    }
    if let Some(t) = a.slots {
        cfg.slots = t;
    }
    if let Some(l) = a.lambda {
        cfg.cluster.lambda = l;
    }
    if let Some(n) = a.iters {
        cfg.stop.max_iters = n;
        cfg.stochastic.iterations = n;
    }
    if let Some(k) = a.eval_samples {
        cfg.stochastic.eval_samples = k;
    }
    let seed = a.seed.unwrap_or(cfg.seeds[0]);
    cfg.seeds = vec![seed];
    cfg.output = a.out.clone();
    cfg.validate()?;
    Ok((cfg, seed))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Solve(a) => {
            let (cfg, seed) = solve_config(&a)?;
            let out = run_single(&cfg, seed)?;
            write_run(&cfg, &out, &cfg.output)?;
            let r = &out.report;
            println!(
                "{} seed {seed}: {} iterations, converged {}, sum rate {:.6}, min rate {:.6} nats ({:.2}s)",
                cfg.algorithm.name(),
                r.iterations.len(),
                r.converged,
                r.final_sum_rate(),
                r.final_min_rate(),
                r.wall_time_s
            );
        }
        Command::Sweep { config, out, seeds } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(o) = out {
                cfg.output = o;
            }
            if let Some(s) = seeds {
                cfg.seeds = s;
            }
            for r in run_experiment(&cfg)? {
                println!(
                    "{}: sum rate {:.6}, min rate {:.6} nats",
                    seed_dir(&cfg.output, r.seed).display(),
                    r.report.final_sum_rate(),
                    r.report.final_min_rate()
                );
            }
        }
        Command::Cdf { rates, out } => {
            let file = std::fs::File::open(&rates)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", rates.display())))?;
            let rows: Vec<RateRecord> = read_records(file)?;
            let r: Vec<f64> = rows.iter().map(|x| x.rate).collect();
            match out {
                Some(p) => write_cdf_csv(&r, std::fs::File::create(p)?)?,
                None => write_cdf_csv(&r, std::io::stdout().lock())?,
            }
        }
        Command::Oracle { instance, grid } => {
            let inst = load_instance(&instance)?;
            println!("{}", brute_force_sumrate(&inst, grid)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
