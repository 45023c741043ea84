//! Joint user scheduling over time slots and beamforming.
//!
//! Every user starts active in every slot. Each iteration reweights the
//! links by the utility gradient at the current user rates (a user's rate is
//! its sum over slots), then runs one WMMSE receiver/weight/precoder pass.
//! At the end a user is scheduled in slot `t` iff its precoder there is
//! non-negligible.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::frob_sq;
use crate::net_model::NetworkInstance;
use crate::report::{write_records, SolveReport};
use crate::utility::UtilityConfig;
use crate::wmmse::{self, home_links, PrecoderSet, Problem, SolveOptions, StopRule};

/// Default extraction threshold relative to `sqrt(P)`.
pub const EPSILON_SCALE: f64 = 1e-4;

/// Output of [`solve_joint_scheduling`].
#[derive(Debug, Clone)]
pub struct ScheduleState {
    /// `alpha[l][t]` for link `l` (one per user on the home association).
    pub alpha: Vec<Vec<bool>>,
    /// Precoders after zeroing unscheduled blocks.
    pub precoders: PrecoderSet,
    /// Per-user rates before extraction.
    pub raw_rates: Vec<f64>,
    /// Per-user rates after extraction.
    pub rates: Vec<f64>,
}

/// Scheduling indicators: `alpha[l][t] = ||V_l[t]||_F > epsilon_l`, with the
/// norm over tones and serving BSs. `epsilon` has one entry per link.
pub fn extract_schedule(problem: &Problem<'_>, v: &PrecoderSet, epsilon: &[f64]) -> Result<Vec<Vec<bool>>> {
    if epsilon.len() != problem.links().len() || epsilon.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::Config("one positive threshold per link is required".into()));
    }
    let d = problem.dims();
    Ok((0..problem.links().len())
        .map(|l| {
            (0..d.slots)
                .map(|t| slot_norm(problem, v, l, t) > epsilon[l])
                .collect()
        })
        .collect())
}

/// `||V_l[t]||_F` over tones and serving BSs.
pub fn slot_norm(problem: &Problem<'_>, v: &PrecoderSet, l: usize, t: usize) -> f64 {
    let d = problem.dims();
    let mut s = 0.0;
    for &q in &problem.links()[l].bss {
        for f in 0..d.tones {
            if let Some(b) = problem.block(v, l, q, f, t) {
                s += frob_sq(b);
            }
        }
    }
    s.sqrt()
}

/// Default per-link thresholds `1e-4 * sqrt(P_q)` of the first serving BS.
pub fn default_epsilon(problem: &Problem<'_>) -> Vec<f64> {
    problem
        .links()
        .iter()
        .map(|l| EPSILON_SCALE * problem.instance().power_budget(l.bss[0]).sqrt())
        .collect()
}

/// Zeroes every block of an unscheduled `(link, slot)`.
pub fn apply_schedule(problem: &Problem<'_>, v: &PrecoderSet, alpha: &[Vec<bool>]) -> PrecoderSet {
    let d = problem.dims();
    let mut out = v.clone();
    for (l, link) in problem.links().iter().enumerate() {
        for b in 0..link.bss.len() {
            for f in 0..d.tones {
                for t in 0..d.slots {
                    if !alpha[l][t] {
                        out.blocks[l][(b * d.tones + f) * d.slots + t].fill(crate::linalg::c64(0.0, 0.0));
                    }
                }
            }
        }
    }
    out
}

/// Activity mask for [`Problem::set_active`] from a schedule (all tones).
pub fn schedule_mask(problem: &Problem<'_>, alpha: &[Vec<bool>]) -> Vec<bool> {
    let d = problem.dims();
    let mut mask = Vec::with_capacity(problem.links().len() * d.resources());
    for row in alpha.iter().take(problem.links().len()) {
        for _ in 0..d.tones {
            for &a in row.iter().take(d.slots) {
                mask.push(a);
            }
        }
    }
    mask
}

/// Joint scheduling over `slots` slots on the home association.
///
/// A single-slot instance is replicated into `slots` identical slots.
pub fn solve_joint_scheduling(
    instance: &NetworkInstance,
    utility: &UtilityConfig,
    slots: usize,
    stop: StopRule,
    seed: u64,
) -> Result<(ScheduleState, SolveReport)> {
    let inst = instance.replicate_slots(slots)?;
    let mut problem = Problem::new(&inst, home_links(&inst))?;
    let opts = SolveOptions { stop, utility: *utility, seed, ..Default::default() };
    let sol = wmmse::solve(&mut problem, None, &opts)?;
    let eps = default_epsilon(&problem);
    let alpha = extract_schedule(&problem, &sol.precoders, &eps)?;
    let precoders = apply_schedule(&problem, &sol.precoders, &alpha);
    let rates = problem.user_rates(&precoders)?;
    let mut report = sol.report;
    let raw_rates = std::mem::replace(&mut report.user_rates, rates.clone());
    Ok((ScheduleState { alpha, precoders, raw_rates, rates }, report))
}

/// One row of a schedule dump.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleRecord {
    pub user: usize,
    pub slot: usize,
    pub alpha: u8,
}

/// Writes `(user, slot, alpha)` rows.
pub fn write_schedule_csv<W: Write>(problem_links: &[wmmse::Link], alpha: &[Vec<bool>], out: W) -> Result<()> {
    let rows: Vec<ScheduleRecord> = alpha
        .iter()
        .enumerate()
        .flat_map(|(l, row)| {
            let user = problem_links[l].user;
            row.iter().enumerate().map(move |(t, &a)| ScheduleRecord { user, slot: t, alpha: a as u8 })
        })
        .collect();
    write_records(&rows, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c64, CMat};
    use crate::net_model::{Dims, InstanceParts};

    fn two_user(cross: f64, power: f64) -> NetworkInstance {
        let g = [[1.0, cross], [cross, 1.0]];
        let channels = (0..4).map(|k| CMat::from_element(1, 1, c64(g[k / 2][k % 2], 0.0))).collect();
        NetworkInstance::new(InstanceParts {
            dims: Dims { num_bs: 2, num_users: 2, tx_antennas: 1, rx_antennas: 1, tones: 1, slots: 1 },
            channels,
            noise_power: vec![1.0; 2],
            power_budget: vec![power; 2],
            link_gain: vec![],
            home_bs: vec![],
            bs_positions: vec![],
            user_positions: vec![],
        })
        .unwrap()
    }

    #[test]
    fn zero_precoders_schedule_nobody() {
        let inst = two_user(0.5, 1.0).replicate_slots(2).unwrap();
        let p = Problem::new(&inst, home_links(&inst)).unwrap();
        let alpha = extract_schedule(&p, &p.zero_precoders(), &default_epsilon(&p)).unwrap();
        assert!(alpha.iter().flatten().all(|a| !a));
    }

    #[test]
    fn threshold_is_strict() {
        let inst = two_user(0.5, 1.0);
        let p = Problem::new(&inst, home_links(&inst)).unwrap();
        let mut v = p.zero_precoders();
        v.blocks[0][0] = CMat::from_element(1, 1, c64(1e-4, 0.0));
        let alpha = extract_schedule(&p, &v, &[1e-4, 1e-4]).unwrap();
        assert!(!alpha[0][0]);
        let alpha = extract_schedule(&p, &v, &[0.99e-4, 1e-4]).unwrap();
        assert!(alpha[0][0]);
    }

    #[test]
    fn active_count_nonincreasing_in_threshold() {
        let inst = two_user(0.7, 1.0).replicate_slots(3).unwrap();
        let p = Problem::new(&inst, home_links(&inst)).unwrap();
        let v = p.random_precoders(5);
        let mut prev = usize::MAX;
        for k in 0..40 {
            let eps = 1e-3 * 1.3f64.powi(k);
            let n = extract_schedule(&p, &v, &[eps, eps]).unwrap().iter().flatten().filter(|a| **a).count();
            assert!(n <= prev);
            prev = n;
        }
        assert_eq!(prev, 0);
    }

    #[test]
    fn schedule_csv_has_header() {
        let links = vec![wmmse::Link::new(0, 0)];
        let mut buf = Vec::new();
        write_schedule_csv(&links, &[vec![true, false]], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "user,slot,alpha\n0,0,1\n0,1,0\n");
    }
}
