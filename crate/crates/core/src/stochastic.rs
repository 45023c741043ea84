//! Stochastic WMMSE for expected sum rate under partial CSI, and the
//! baselines it is compared against.
//!
//! Every iteration draws a fresh channel realization, computes MMSE
//! receivers and weights on it, and adds the resulting quadratic terms to
//! running accumulators:
//!
//! ```text
//!   A_q <- theta A_q + sum_i H_{q,i}^H U_i W_i U_i^H H_{q,i}
//!   B_l <- theta B_l + H_{q,l}^H U_l W_l
//!   V   <- argmin tr(V^H A V) - 2 Re tr(V^H B)  s.t. ||V_q||^2 <= P_q
//! ```

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c64, CMat};
use crate::net_model::{sample_channels, DistributionTable, NetworkInstance};
use crate::report::{IterationRecord, SolveReport};
use crate::rng::{derive_seed, tag};
use crate::utility::UtilityConfig;
use crate::wmmse::{home_links, solve, Link, PrecoderSet, Problem, SolveOptions, StopRule};

/// Seed tag of the SGD step-size validation run.
const VALIDATION: u64 = 0x5641_4c49;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StochasticConfig {
    pub iterations: usize,
    /// Forgetting factor applied to the accumulators before each update.
    pub theta: f64,
    /// Monte-Carlo samples of the expected-rate evaluation.
    pub eval_samples: usize,
    /// Evaluate the expected rate every this many iterations (0: only at
    /// the end).
    pub eval_every: usize,
    pub streams: usize,
    /// Candidate SGD step constants `c` (step `c / sqrt(t)`).
    pub sgd_steps: Vec<f64>,
    /// Evaluation samples used to pick the SGD step.
    pub validation_samples: usize,
}

impl Default for StochasticConfig {
    fn default() -> Self {
        StochasticConfig {
            iterations: 100,
            theta: 1.0,
            eval_samples: 200,
            eval_every: 0,
            streams: 1,
            sgd_steps: vec![0.01, 0.1, 1.0],
            validation_samples: 50,
        }
    }
}

impl StochasticConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(Error::Config(format!("forgetting factor must lie in (0, 1], got {}", self.theta)));
        }
        if self.iterations == 0 || self.eval_samples == 0 || self.streams == 0 {
            return Err(Error::Config("iterations, eval_samples and streams must be positive".into()));
        }
        if self.sgd_steps.is_empty() || self.sgd_steps.iter().any(|&c| !(c > 0.0)) {
            return Err(Error::Config("SGD step constants must be positive".into()));
        }
        Ok(())
    }
}

/// Running sums of the precoder subproblem terms.
#[derive(Debug, Clone)]
pub struct Accumulators {
    /// Per `(q, f, t)`, Hermitian PSD.
    pub a: Vec<CMat>,
    /// Per link, laid out like the precoders.
    pub b: PrecoderSet,
    pub theta: f64,
}

impl Accumulators {
    pub fn zeros(problem: &Problem<'_>, theta: f64) -> Self {
        let d = problem.dims();
        let m = d.tx_antennas;
        Accumulators { a: vec![CMat::zeros(m, m); d.num_bs * d.resources()], b: problem.zero_precoders(), theta }
    }

    /// `acc <- theta * acc + sample`.
    pub fn add(&mut self, a: &[CMat], b: &PrecoderSet) {
        let th = c64(self.theta, 0.0);
        for (acc, x) in self.a.iter_mut().zip(a) {
            *acc = &*acc * th + x;
        }
        for (acc, x) in self.b.blocks.iter_mut().zip(&b.blocks) {
            for (m, y) in acc.iter_mut().zip(x) {
                *m = &*m * th + y;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct StochasticState {
    pub precoders: PrecoderSet,
    pub acc: Accumulators,
    pub iteration: usize,
}

/// One iteration on a fresh sample; `problem` must carry the sampled
/// channels.
pub fn stochastic_wmmse_step(problem: &Problem<'_>, state: &mut StochasticState) -> Result<()> {
    let u = problem.receivers(&state.precoders)?;
    let e = problem.mse_matrices(&state.precoders, &u);
    let w = problem.weights_from(&e)?;
    let (a, b) = problem.quadratic_terms(&u, &w)?;
    state.acc.add(&a, &b);
    state.precoders = problem.precoders_from_terms(&state.acc.a, &state.acc.b)?;
    state.iteration += 1;
    Ok(())
}

fn problem<'a>(instance: &'a NetworkInstance, channels: &'a [CMat], links: &[Link], streams: usize) -> Result<Problem<'a>> {
    let mut p = Problem::with_channels(instance, channels, links.to_vec())?;
    p.set_streams(streams)?;
    Ok(p)
}

/// Channels of iteration `k` (1-based) of a run seeded with `seed`.
fn iteration_sample(instance: &NetworkInstance, table: &DistributionTable, seed: u64, k: usize) -> Result<Vec<CMat>> {
    sample_channels(instance.dims(), table, derive_seed(seed, &[k as u64]))
}

/// Monte-Carlo mean per-user rate of `v` with MMSE receivers adapted to
/// each sample. Samples are seeded by `(seed, k)`, so every algorithm
/// evaluated with the same seed sees the same realizations.
pub fn expected_user_rates(
    instance: &NetworkInstance,
    table: &DistributionTable,
    streams: usize,
    v: &PrecoderSet,
    samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let links = home_links(instance);
    let per_sample: Vec<Result<Vec<f64>>> = (0..samples)
        .into_par_iter()
        .map(|k| {
            let h = sample_channels(instance.dims(), table, derive_seed(seed, &[tag::EVAL, k as u64]))?;
            problem(instance, &h, &links, streams)?.user_rates(v)
        })
        .collect();
    let mut mean = vec![0.0; instance.num_users()];
    for r in per_sample {
        for (m, x) in mean.iter_mut().zip(r?) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= samples.max(1) as f64;
    }
    Ok(mean)
}

/// Outcome of a stochastic or baseline run.
#[derive(Debug, Clone)]
pub struct StochasticRun {
    pub precoders: PrecoderSet,
    /// Expected-rate trace; `objective` and `sum_rate` hold the Monte-Carlo
    /// expected sum rate.
    pub report: SolveReport,
}

impl StochasticRun {
    pub fn expected_sum_rate(&self) -> f64 {
        self.report.final_sum_rate()
    }
}

/// One row of the expected-rate trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub mc_expected_sum_rate: f64,
}

pub fn trace_records(report: &SolveReport) -> Vec<TraceRecord> {
    report
        .iterations
        .iter()
        .map(|r| TraceRecord { iteration: r.iteration, mc_expected_sum_rate: r.sum_rate })
        .collect()
}

struct Evaluator<'a> {
    instance: &'a NetworkInstance,
    table: &'a DistributionTable,
    config: &'a StochasticConfig,
    seed: u64,
    records: Vec<IterationRecord>,
    last: Vec<f64>,
}

impl Evaluator<'_> {
    fn record(&mut self, iteration: usize, v: &PrecoderSet, probe: &Problem<'_>) -> Result<()> {
        let rates = expected_user_rates(self.instance, self.table, self.config.streams, v, self.config.eval_samples, self.seed)?;
        let sum: f64 = rates.iter().sum();
        self.records.push(IterationRecord {
            iteration,
            objective: sum,
            sum_rate: sum,
            min_rate: rates.iter().copied().fold(f64::INFINITY, f64::min),
            max_power_violation: probe.max_power_violation(v).max(0.0),
        });
        self.last = rates;
        Ok(())
    }

    fn due(&self, k: usize) -> bool {
        k == self.config.iterations || (self.config.eval_every > 0 && k % self.config.eval_every == 0)
    }

    fn finish(self, precoders: PrecoderSet, start: std::time::Instant, converged: bool) -> StochasticRun {
        StochasticRun {
            precoders,
            report: SolveReport {
                iterations: self.records,
                user_rates: self.last,
                converged,
                wall_time_s: start.elapsed().as_secs_f64(),
            },
        }
    }
}

/// Stochastic WMMSE from full-power random precoders.
pub fn run_stochastic(instance: &NetworkInstance, table: &DistributionTable, config: &StochasticConfig, seed: u64) -> Result<StochasticRun> {
    config.validate()?;
    let start = std::time::Instant::now();
    let links = home_links(instance);
    let mean = table.mean_channels();
    let probe = problem(instance, &mean, &links, config.streams)?;
    let mut state = StochasticState {
        precoders: probe.random_precoders(seed),
        acc: Accumulators::zeros(&probe, config.theta),
        iteration: 0,
    };
    let mut eval = Evaluator { instance, table, config, seed, records: Vec::new(), last: Vec::new() };
    for k in 1..=config.iterations {
        let h = iteration_sample(instance, table, seed, k)?;
        stochastic_wmmse_step(&problem(instance, &h, &links, config.streams)?, &mut state)?;
        if eval.due(k) {
            eval.record(k, &state.precoders, &probe)?;
        }
    }
    Ok(eval.finish(state.precoders, start, true))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    /// WMMSE on one channel realization.
    OneSample,
    /// WMMSE on the mean channels.
    Mean,
    /// Projected stochastic gradient ascent with step `c / sqrt(t)`.
    Sgd,
}

/// Runs a baseline and evaluates it with the same Monte-Carlo protocol.
pub fn run_baseline(
    instance: &NetworkInstance,
    table: &DistributionTable,
    kind: BaselineKind,
    config: &StochasticConfig,
    seed: u64,
) -> Result<StochasticRun> {
    config.validate()?;
    let start = std::time::Instant::now();
    let links = home_links(instance);
    let mean = table.mean_channels();
    let probe = problem(instance, &mean, &links, config.streams)?;
    let mut eval = Evaluator { instance, table, config, seed, records: Vec::new(), last: Vec::new() };
    let (v, converged) = match kind {
        BaselineKind::OneSample | BaselineKind::Mean => {
            let h = match kind {
                BaselineKind::OneSample => iteration_sample(instance, table, seed, 1)?,
                _ => mean.clone(),
            };
            let mut p = problem(instance, &h, &links, config.streams)?;
            let opts = SolveOptions {
                stop: StopRule { max_iters: config.iterations, ..StopRule::default() },
                utility: UtilityConfig::sum_rate(),
                seed,
                ..SolveOptions::default()
            };
            let sol = solve(&mut p, Some(probe.random_precoders(seed)), &opts)?;
            (sol.precoders, sol.report.converged)
        }
        BaselineKind::Sgd => {
            let c = tune_sgd_step(instance, table, config, seed)?;
            let v = sgd(instance, table, &links, config, c, seed, Some(&mut eval), &probe)?;
            (v, true)
        }
    };
    if kind != BaselineKind::Sgd {
        eval.record(config.iterations, &v, &probe)?;
    }
    Ok(eval.finish(v, start, converged))
}

#[allow(clippy::too_many_arguments)]
fn sgd(
    instance: &NetworkInstance,
    table: &DistributionTable,
    links: &[Link],
    config: &StochasticConfig,
    c: f64,
    seed: u64,
    mut eval: Option<&mut Evaluator<'_>>,
    probe: &Problem<'_>,
) -> Result<PrecoderSet> {
    let mut v = probe.random_precoders(seed);
    for k in 1..=config.iterations {
        let h = iteration_sample(instance, table, seed, k)?;
        let p = problem(instance, &h, links, config.streams)?;
        let g = p.rate_gradient(&v)?;
        let step = c64(c / (k as f64).sqrt(), 0.0);
        for (vb, gb) in v.blocks.iter_mut().zip(&g.blocks) {
            for (m, x) in vb.iter_mut().zip(gb) {
                *m += x * step;
            }
        }
        probe.project_power(&mut v);
        if let Some(ev) = eval.as_deref_mut() {
            if ev.due(k) {
                ev.record(k, &v, probe)?;
            }
        }
    }
    Ok(v)
}

/// Picks the SGD step constant with the best expected sum rate on an
/// independent validation run.
pub fn tune_sgd_step(instance: &NetworkInstance, table: &DistributionTable, config: &StochasticConfig, seed: u64) -> Result<f64> {
    let links = home_links(instance);
    let mean = table.mean_channels();
    let probe = problem(instance, &mean, &links, config.streams)?;
    let vseed = derive_seed(seed, &[VALIDATION]);
    let mut best = (f64::NEG_INFINITY, config.sgd_steps[0]);
    for &c in &config.sgd_steps {
        let v = sgd(instance, table, &links, config, c, vseed, None, &probe)?;
        let r: f64 = expected_user_rates(instance, table, config.streams, &v, config.validation_samples, vseed)?.iter().sum();
        if r > best.0 {
            best = (r, c);
        }
    }
    Ok(best.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{frob, HermitianEigen};
    use crate::net_model::{partial_csi_table, DropLayout, HexLayout};

    fn small() -> NetworkInstance {
        DropLayout { num_bs: 3, num_users: 3, ..Default::default() }.generate(4).unwrap()
    }

    #[test]
    fn first_step_is_one_wmmse_iteration() {
        let inst = small();
        let table = DistributionTable::deterministic(&inst);
        let links = home_links(&inst);
        let h = iteration_sample(&inst, &table, 1, 1).unwrap();
        let p = problem(&inst, &h, &links, 1).unwrap();
        let v0 = p.random_precoders(1);
        let mut st = StochasticState { precoders: v0.clone(), acc: Accumulators::zeros(&p, 1.0), iteration: 0 };
        stochastic_wmmse_step(&p, &mut st).unwrap();
        let u = p.receivers(&v0).unwrap();
        let w = p.weights_from(&p.mse_matrices(&v0, &u)).unwrap();
        let direct = p.precoders(&v0, &u, &w, 0.0).unwrap();
        for (a, b) in st.precoders.blocks.iter().flatten().zip(direct.blocks.iter().flatten()) {
            assert!(frob(&(a - b)) < 1e-10);
        }
    }

    #[test]
    fn accumulators_sum_samples_and_stay_psd() {
        let inst = small();
        let table = partial_csi_table(&inst, 6.0, 1.0, 31.6, 2).unwrap();
        let links = home_links(&inst);
        let mean = table.mean_channels();
        let probe = problem(&inst, &mean, &links, 1).unwrap();
        let mut st = StochasticState { precoders: probe.random_precoders(3), acc: Accumulators::zeros(&probe, 1.0), iteration: 0 };
        let mut sum = vec![CMat::zeros(2, 2); st.acc.a.len()];
        for k in 1..=5 {
            let h = iteration_sample(&inst, &table, 3, k).unwrap();
            let p = problem(&inst, &h, &links, 1).unwrap();
            let u = p.receivers(&st.precoders).unwrap();
            let w = p.weights_from(&p.mse_matrices(&st.precoders, &u)).unwrap();
            let (a, _) = p.quadratic_terms(&u, &w).unwrap();
            for (s, x) in sum.iter_mut().zip(&a) {
                *s += x;
            }
            stochastic_wmmse_step(&p, &mut st).unwrap();
            assert!(p.max_power_violation(&st.precoders) <= 1e-9);
        }
        for (acc, s) in st.acc.a.iter().zip(&sum) {
            assert!(frob(&(acc - s)) <= 1e-12 * frob(s).max(1.0));
            assert!(HermitianEigen::new(acc).min() >= -1e-10);
        }
    }

    #[test]
    fn deterministic_distribution_reaches_stationarity() {
        let inst = small();
        let table = DistributionTable::deterministic(&inst);
        // with theta = 1 the iterate moves by O(1/k) per step, so the
        // stationarity check uses forgetting
        let cfg = StochasticConfig { iterations: 1500, theta: 0.5, eval_samples: 1, ..Default::default() };
        let run = run_stochastic(&inst, &table, &cfg, 5).unwrap();
        let p = Problem::new(&inst, home_links(&inst)).unwrap();
        let g = p.projected_gradient_norm(&run.precoders).unwrap();
        assert!(g < 1e-3, "gradient norm {g}");
    }

    #[test]
    fn zero_variance_without_memory_matches_wmmse() {
        let inst = small();
        let table = DistributionTable::deterministic(&inst);
        let cfg = StochasticConfig { iterations: 15, theta: 1e-300, eval_samples: 1, eval_every: 1, ..Default::default() };
        let run = run_stochastic(&inst, &table, &cfg, 6).unwrap();
        let mut p = Problem::new(&inst, home_links(&inst)).unwrap();
        let init = p.random_precoders(6);
        let sol = solve(&mut p, Some(init), &SolveOptions { stop: StopRule::fixed(15), ..Default::default() }).unwrap();
        for (a, b) in run.report.iterations.iter().zip(&sol.report.iterations) {
            assert!((a.sum_rate - b.sum_rate).abs() < 1e-9, "{} vs {}", a.sum_rate, b.sum_rate);
        }
    }

    #[test]
    fn baselines_are_power_feasible() {
        let inst = HexLayout { cells: 1, sectors_per_cell: 3, users_per_sector: 1, tx_antennas: 2, rx_antennas: 2, ..Default::default() }
            .generate(1)
            .unwrap();
        let table = partial_csi_table(&inst, 6.0, 1.0, 31.6, 1).unwrap();
        let cfg = StochasticConfig { iterations: 20, eval_samples: 10, validation_samples: 5, ..Default::default() };
        let p = Problem::new(&inst, home_links(&inst)).unwrap();
        for kind in [BaselineKind::OneSample, BaselineKind::Mean, BaselineKind::Sgd] {
            let run = run_baseline(&inst, &table, kind, &cfg, 1).unwrap();
            assert!(p.max_power_violation(&run.precoders) <= 1e-9, "{kind:?}");
            assert!(run.expected_sum_rate() > 0.0);
        }
    }

    #[test]
    fn mean_channels_drop_unestimated_links() {
        let inst = HexLayout { cells: 7, sectors_per_cell: 1, users_per_sector: 1, ..Default::default() }.generate(2).unwrap();
        let table = partial_csi_table(&inst, 6.0, 1.0, 31.6, 2).unwrap();
        let mean = table.mean_channels();
        let d = inst.dims();
        for q in 0..d.num_bs {
            for i in 0..d.num_users {
                let e = table.entry(q, i, 0, 0);
                assert_eq!(frob(&mean[d.channel_index(q, i, 0, 0)]) == 0.0, !e.is_estimated());
            }
        }
    }

    #[test]
    fn bad_config_is_rejected() {
        let cfg = StochasticConfig { theta: 0.0, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
