//! Reference schemes the joint algorithms are compared against.

use nalgebra::SVD;
use rand::seq::index::sample;

use crate::assignment::strongest_assignment;
use crate::error::{Error, Result};
use crate::linalg::{c64, CMat};
use crate::net_model::NetworkInstance;
use crate::report::{IterationRecord, SolveReport};
use crate::rng::{derive_seed, stream_rng, tag};
use crate::scheduler::schedule_mask;
use crate::utility::UtilityConfig;
use crate::wmmse::{self, home_links, Link, PrecoderSet, Problem, SolveOptions, StopRule};

/// WMMSE with every user served by the BS of strongest long-term gain.
pub fn baseline_nn_wmmse(instance: &NetworkInstance, utility: &UtilityConfig, stop: StopRule, seed: u64) -> Result<SolveReport> {
    let links = strongest_assignment(instance).into_iter().enumerate().map(|(i, q)| Link::new(i, q)).collect();
    let opts = SolveOptions { stop, utility: *utility, seed, ..Default::default() };
    Ok(wmmse::solve_wmmse(instance, links, None, &opts)?.report)
}

/// Round-robin TDMA: in slot `t` BS `q` serves its `(t mod n_q)`-th home
/// user. Returns `alpha[i][t]`.
pub fn tdma_schedule(instance: &NetworkInstance, slots: usize) -> Vec<Vec<bool>> {
    let mut alpha = vec![vec![false; slots]; instance.num_users()];
    for q in 0..instance.num_bs() {
        let users: Vec<usize> = (0..instance.num_users()).filter(|&i| instance.home_bs(i) == q).collect();
        if users.is_empty() {
            continue;
        }
        for t in 0..slots {
            alpha[users[t % users.len()]][t] = true;
        }
    }
    alpha
}

/// SVD-MMSE-TDMA over `slots` replicated slots: the scheduled user of each
/// BS gets the `streams` dominant right singular vectors of its direct
/// channel, with the budget split equally over streams and tones; rates are
/// evaluated at MMSE receivers.
pub fn baseline_svd_mmse_tdma(instance: &NetworkInstance, slots: usize, streams: usize) -> Result<SolveReport> {
    let start = std::time::Instant::now();
    let inst = instance.replicate_slots(slots)?;
    let mut problem = Problem::new(&inst, home_links(&inst))?;
    problem.set_streams(streams)?;
    let d = inst.dims();
    let alpha = tdma_schedule(&inst, slots);
    let mut v = problem.zero_precoders();
    for (i, row) in alpha.iter().enumerate() {
        let q = inst.home_bs(i);
        let amp = (inst.power_budget(q) / (d.tones * streams) as f64).sqrt();
        for (t, &on) in row.iter().enumerate() {
            if !on {
                continue;
            }
            for f in 0..d.tones {
                let svd = SVD::new(inst.channel(q, i, f, t).clone(), false, true);
                let vt = svd.v_t.ok_or_else(|| Error::Numeric("SVD did not converge".into()))?;
                let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
                order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
                let mut block = CMat::zeros(d.tx_antennas, streams);
                for (s, &k) in order.iter().take(streams).enumerate() {
                    for m in 0..d.tx_antennas {
                        block[(m, s)] = vt[(k, m)].conj() * c64(amp, 0.0);
                    }
                }
                v.blocks[i][f * d.slots + t] = block;
            }
        }
    }
    single_point_report(&problem, &v, start)
}

fn single_point_report(problem: &Problem<'_>, v: &PrecoderSet, start: std::time::Instant) -> Result<SolveReport> {
    let rates = problem.user_rates(v)?;
    let sum: f64 = rates.iter().sum();
    Ok(SolveReport {
        iterations: vec![IterationRecord {
            iteration: 1,
            objective: sum,
            sum_rate: sum,
            min_rate: rates.iter().copied().fold(f64::INFINITY, f64::min),
            max_power_violation: problem.max_power_violation(v).max(0.0),
        }],
        user_rates: rates,
        converged: true,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Uniformly random schedule: in every slot each BS activates
/// `per_slot` of its home users (all when fewer), drawn without
/// replacement.
pub fn random_schedule(instance: &NetworkInstance, slots: usize, per_slot: usize, seed: u64) -> Vec<Vec<bool>> {
    let mut alpha = vec![vec![false; slots]; instance.num_users()];
    for q in 0..instance.num_bs() {
        let users: Vec<usize> = (0..instance.num_users()).filter(|&i| instance.home_bs(i) == q).collect();
        for t in 0..slots {
            let mut rng = stream_rng(derive_seed(seed, &[tag::SCHEDULE, q as u64]), t as u64);
            for k in sample(&mut rng, users.len(), per_slot.min(users.len())) {
                alpha[users[k]][t] = true;
            }
        }
    }
    alpha
}

/// Random scheduling followed by WMMSE restricted to the scheduled
/// `(user, slot)` pairs. `per_slot = None` uses `ceil(n_q / slots)` users
/// per BS and slot.
pub fn baseline_random_sched(
    instance: &NetworkInstance,
    utility: &UtilityConfig,
    slots: usize,
    per_slot: Option<usize>,
    stop: StopRule,
    seed: u64,
) -> Result<(Vec<Vec<bool>>, SolveReport)> {
    let inst = instance.replicate_slots(slots)?;
    let k = per_slot.unwrap_or_else(|| {
        let most = (0..inst.num_bs())
            .map(|q| (0..inst.num_users()).filter(|&i| inst.home_bs(i) == q).count())
            .max()
            .unwrap_or(0);
        most.div_ceil(slots)
    });
    let alpha = random_schedule(&inst, slots, k, seed);
    let mut problem = Problem::new(&inst, home_links(&inst))?;
    let mask = schedule_mask(&problem, &alpha);
    problem.set_active(Some(mask))?;
    let opts = SolveOptions { stop, utility: *utility, seed, ..Default::default() };
    let sol = wmmse::solve(&mut problem, None, &opts)?;
    Ok((alpha, sol.report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::log_det_hpd;
    use crate::net_model::DropLayout;

    fn drop(num_bs: usize, num_users: usize, m: usize, n: usize) -> DropLayout {
        DropLayout { num_bs, num_users, tx_antennas: m, rx_antennas: n, ..Default::default() }
    }

    #[test]
    fn nn_wmmse_single_user_is_wmmse() {
        let inst = drop(3, 1, 2, 2).generate(4).unwrap();
        let stop = StopRule::fixed(30);
        let nn = baseline_nn_wmmse(&inst, &UtilityConfig::sum_rate(), stop, 9).unwrap();
        let opts = SolveOptions { stop, seed: 9, ..Default::default() };
        let direct = wmmse::solve_wmmse(&inst, home_links(&inst), None, &opts).unwrap();
        assert_eq!(nn.user_rates, direct.report.user_rates);
    }

    #[test]
    fn svd_tdma_single_user_is_equal_power_svd_rate() {
        let inst = drop(1, 1, 3, 2).generate(11).unwrap();
        let r = baseline_svd_mmse_tdma(&inst, 1, 2).unwrap();
        let h = inst.channel(0, 0, 0, 0);
        let snr = inst.power_budget(0) / (2.0 * inst.noise_power(0));
        let g = CMat::identity(2, 2) + h * h.adjoint() * c64(snr, 0.0);
        let expected = log_det_hpd(&g).unwrap();
        assert!((r.user_rates[0] - expected).abs() < 1e-10 * expected.max(1.0), "{} vs {expected}", r.user_rates[0]);
        assert!(r.iterations[0].max_power_violation < 1e-12);
    }

    #[test]
    fn tdma_serves_one_user_per_bs_and_slot() {
        let inst = drop(2, 6, 1, 1).generate(2).unwrap();
        let alpha = tdma_schedule(&inst, 4);
        for q in 0..2 {
            for t in 0..4 {
                let n = (0..6).filter(|&i| inst.home_bs(i) == q && alpha[i][t]).count();
                let has_users = (0..6).any(|i| inst.home_bs(i) == q);
                assert_eq!(n, has_users as usize);
            }
        }
    }

    #[test]
    fn random_sched_with_every_slot_is_plain_wmmse() {
        let inst = drop(2, 4, 2, 1).generate(5).unwrap();
        let stop = StopRule::fixed(20);
        let u = UtilityConfig::proportional_fair();
        let (alpha, r) = baseline_random_sched(&inst, &u, 2, Some(usize::MAX), stop, 3).unwrap();
        assert!(alpha.iter().flatten().all(|a| *a));
        let rep = inst.replicate_slots(2).unwrap();
        let opts = SolveOptions { stop, utility: u, seed: 3, ..Default::default() };
        let direct = wmmse::solve_wmmse(&rep, home_links(&rep), None, &opts).unwrap();
        assert_eq!(r.user_rates, direct.report.user_rates);
    }

    #[test]
    fn random_schedule_respects_count() {
        let inst = drop(2, 8, 1, 1).generate(1).unwrap();
        let alpha = random_schedule(&inst, 3, 2, 7);
        for q in 0..2 {
            let n_q = (0..8).filter(|&i| inst.home_bs(i) == q).count();
            for t in 0..3 {
                let n = (0..8).filter(|&i| inst.home_bs(i) == q && alpha[i][t]).count();
                assert_eq!(n, 2.min(n_q));
            }
        }
        assert_eq!(alpha, random_schedule(&inst, 3, 2, 7));
    }
}
