//! Joint BS assignment and beamforming.
//!
//! The binary association `z[i][q]` is relaxed to `{z >= 0, sum_q z <= 1}`.
//! Each user gets one virtual link per candidate BS and its relaxed rate is
//! `R_i = sum_q z[i][q] R_iq`. Epochs alternate a WMMSE phase on the virtual
//! links (link weights `U'(R_i) z[i][q]`) with one projected-gradient step on
//! `z`. The result is rounded to the per-user argmax and refined by WMMSE on
//! the hard association.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net_model::NetworkInstance;
use crate::report::{write_records, IterationRecord, SolveReport};
use crate::utility::UtilityConfig;
use crate::wmmse::{self, Link, PrecoderSet, Problem, SolveOptions, StopRule};

/// Armijo backtracking parameters.
const INITIAL_STEP: f64 = 1.0;
const SHRINK: f64 = 0.5;
const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;

/// Euclidean projection onto `{z >= 0, sum z <= 1}`.
pub fn project_simplex_cap(raw: &[f64]) -> Vec<f64> {
    let clipped: Vec<f64> = raw.iter().map(|&x| x.max(0.0)).collect();
    if clipped.iter().sum::<f64>() <= 1.0 {
        return clipped;
    }
    // projection onto the unit simplex by the sorting rule
    let mut sorted = raw.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, &x) in sorted.iter().enumerate() {
        cum += x;
        let cand = (cum - 1.0) / (k + 1) as f64;
        if x - cand > 0.0 {
            theta = cand;
        }
    }
    raw.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Per-user argmax with the lowest index winning ties.
pub fn round_assignment(z: &[Vec<f64>], candidates: &[Vec<usize>]) -> Vec<usize> {
    z.iter()
        .zip(candidates)
        .map(|(row, qs)| {
            let mut best = 0;
            for k in 1..row.len() {
                if row[k] > row[best] || (row[k] == row[best] && qs[k] < qs[best]) {
                    best = k;
                }
            }
            qs[best]
        })
        .collect()
}

/// Configuration of [`solve_joint_assignment`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssignmentConfig {
    /// Candidate BSs per user; every BS when empty.
    pub candidates: Vec<Vec<usize>>,
    /// Maximum number of (WMMSE phase, z step) epochs.
    pub epochs: usize,
    /// WMMSE iterations per epoch.
    pub inner_iters: usize,
    /// Stop when no entry of `z` moves by more than this in an epoch.
    pub z_tolerance: f64,
    /// Rule for the final WMMSE on the hard association.
    pub refine: StopRule,
}

impl Default for AssignmentConfig {
    fn default() -> Self {
        AssignmentConfig {
            candidates: Vec::new(),
            epochs: 30,
            inner_iters: 20,
            z_tolerance: 1e-6,
            refine: StopRule::default(),
        }
    }
}

/// Output of [`solve_joint_assignment`].
#[derive(Debug, Clone)]
pub struct AssociationState {
    pub candidates: Vec<Vec<usize>>,
    /// Relaxed `z[i][k]` for candidate `candidates[i][k]`.
    pub z_relaxed: Vec<Vec<f64>>,
    /// Hard association (BS per user).
    pub assignment: Vec<usize>,
    /// Precoders on the hard association (one link per user).
    pub precoders: PrecoderSet,
    /// Whether the line search failed to find an ascent step at some epoch.
    pub line_search_failed: bool,
}

fn relaxed_rates(z: &[Vec<f64>], link_rates: &[f64], offsets: &[usize]) -> Vec<f64> {
    z.iter()
        .enumerate()
        .map(|(i, row)| row.iter().enumerate().map(|(k, &zk)| zk * link_rates[offsets[i] + k]).sum())
        .collect()
}

/// Joint assignment with utility `utility`.
pub fn solve_joint_assignment(
    instance: &NetworkInstance,
    utility: &UtilityConfig,
    config: &AssignmentConfig,
    seed: u64,
) -> Result<(AssociationState, SolveReport)> {
    utility.validate()?;
    let start = std::time::Instant::now();
    let (nq, ni) = (instance.num_bs(), instance.num_users());
    let candidates = if config.candidates.is_empty() {
        vec![(0..nq).collect::<Vec<_>>(); ni]
    } else {
        config.candidates.clone()
    };
    if candidates.len() != ni || candidates.iter().any(|c| c.is_empty() || c.iter().any(|&q| q >= nq)) {
        return Err(Error::Config("candidate sets must be nonempty and valid, one per user".into()));
    }
    let mut offsets = Vec::with_capacity(ni);
    let mut links = Vec::new();
    for (i, qs) in candidates.iter().enumerate() {
        offsets.push(links.len());
        for &q in qs {
            links.push(Link::new(i, q));
        }
    }
    let mut z: Vec<Vec<f64>> = candidates.iter().map(|qs| vec![1.0 / qs.len() as f64; qs.len()]).collect();

    let mut problem = Problem::new(instance, links)?;
    let mut v = problem.random_precoders(seed);
    let mut records = Vec::new();
    let mut line_search_failed = false;
    let mut iteration = 0;

    for _epoch in 0..config.epochs {
        // WMMSE phase on the virtual links
        for _ in 0..config.inner_iters {
            let lr = problem.link_rates(&v)?;
            let r = relaxed_rates(&z, &lr, &offsets);
            let g = utility.rate_gradient(&r)?;
            let c: Vec<f64> = problem.links().iter().enumerate().map(|(l, link)| {
                let i = link.user;
                g[i] * z[i][l - offsets[i]]
            }).collect();
            problem.set_weights(c)?;
            let u = problem.receivers(&v)?;
            let e = problem.mse_matrices(&v, &u);
            let w = problem.weights_from(&e)?;
            v = problem.precoders(&v, &u, &w, 0.0)?;
            iteration += 1;
            let lr = problem.link_rates(&v)?;
            let r = relaxed_rates(&z, &lr, &offsets);
            records.push(IterationRecord {
                iteration,
                objective: utility.evaluate(&r)?,
                sum_rate: r.iter().sum(),
                min_rate: r.iter().copied().fold(f64::INFINITY, f64::min),
                max_power_violation: problem.max_power_violation(&v).max(0.0),
            });
        }

        // one projected-gradient ascent step on z with V fixed
        let lr = problem.link_rates(&v)?;
        let value = |z: &[Vec<f64>]| utility.evaluate(&relaxed_rates(z, &lr, &offsets));
        let r = relaxed_rates(&z, &lr, &offsets);
        let g = utility.rate_gradient(&r)?;
        let grad: Vec<Vec<f64>> = z
            .iter()
            .enumerate()
            .map(|(i, row)| (0..row.len()).map(|k| g[i] * lr[offsets[i] + k]).collect())
            .collect();
        let f0 = value(&z)?;
        let mut step = INITIAL_STEP;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let cand: Vec<Vec<f64>> = z
                .iter()
                .zip(&grad)
                .map(|(row, gr)| {
                    let raw: Vec<f64> = row.iter().zip(gr).map(|(a, b)| a + step * b).collect();
                    project_simplex_cap(&raw)
                })
                .collect();
            let ascent: f64 = cand
                .iter()
                .zip(&z)
                .zip(&grad)
                .map(|((c, o), gr)| c.iter().zip(o).zip(gr).map(|((a, b), g)| g * (a - b)).sum::<f64>())
                .sum();
            if value(&cand)? >= f0 + ARMIJO * ascent {
                accepted = Some(cand);
                break;
            }
            step *= SHRINK;
        }
        let Some(next) = accepted else {
            line_search_failed = true;
            break;
        };
        let moved = next
            .iter()
            .zip(&z)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max);
        z = next;
        if moved <= config.z_tolerance {
            break;
        }
    }

    let assignment = round_assignment(&z, &candidates);
    let hard = instance.with_home_bs(assignment.clone())?;
    let opts = SolveOptions { stop: config.refine, utility: *utility, seed, ..Default::default() };
    let sol = wmmse::solve_wmmse(&hard, wmmse::home_links(&hard), None, &opts)?;
    let mut report = sol.report;
    let offset = iteration;
    records.extend(report.iterations.iter().map(|r| IterationRecord { iteration: r.iteration + offset, ..*r }));
    report.iterations = records;
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok((
        AssociationState {
            candidates,
            z_relaxed: z,
            assignment,
            precoders: sol.precoders,
            line_search_failed,
        },
        report,
    ))
}

/// Greedy strongest-long-term-gain association.
pub fn strongest_assignment(instance: &NetworkInstance) -> Vec<usize> {
    (0..instance.num_users())
        .map(|i| {
            let mut best = 0;
            for q in 1..instance.num_bs() {
                if instance.link_gain(q, i) > instance.link_gain(best, i) {
                    best = q;
                }
            }
            best
        })
        .collect()
}

/// One row of an assignment dump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssignmentRecord {
    pub user: usize,
    pub bs: usize,
    pub z_relaxed: f64,
    pub z_final: u8,
}

/// Writes `(user, bs, z_relaxed, z_final)` rows.
pub fn write_assignment_csv<W: Write>(state: &AssociationState, out: W) -> Result<()> {
    let mut rows = Vec::new();
    for (i, qs) in state.candidates.iter().enumerate() {
        for (k, &q) in qs.iter().enumerate() {
            rows.push(AssignmentRecord {
                user: i,
                bs: q,
                z_relaxed: state.z_relaxed[i][k],
                z_final: (state.assignment[i] == q) as u8,
            });
        }
    }
    write_records(&rows, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn projection_examples() {
        assert_eq!(project_simplex_cap(&[0.2, 0.3]), vec![0.2, 0.3]);
        let p = project_simplex_cap(&[1.0, 1.0]);
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
        assert_eq!(project_simplex_cap(&[-1.0, 0.4]), vec![0.0, 0.4]);
    }

    #[test]
    fn rounding_breaks_ties_to_lowest_index() {
        assert_eq!(round_assignment(&[vec![0.5, 0.5], vec![0.2, 0.7]], &[vec![0, 1], vec![0, 1]]), vec![0, 1]);
    }

    fn brute_projection(raw: &[f64]) -> Vec<f64> {
        // KKT oracle: bisection on the shift theta >= 0
        let s = |th: f64| raw.iter().map(|&x| (x - th).max(0.0)).sum::<f64>();
        if s(0.0) <= 1.0 {
            return raw.iter().map(|&x| x.max(0.0)).collect();
        }
        let (mut lo, mut hi) = (0.0, raw.iter().copied().fold(0.0, f64::max));
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if s(mid) > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        raw.iter().map(|&x| (x - hi).max(0.0)).collect()
    }

    proptest! {
        #[test]
        fn projection_is_feasible_idempotent_and_optimal(raw in prop::collection::vec(-3.0f64..3.0, 1..8)) {
            let p = project_simplex_cap(&raw);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            prop_assert!(p.iter().sum::<f64>() <= 1.0 + 1e-12);
            let pp = project_simplex_cap(&p);
            for (a, b) in p.iter().zip(&pp) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            let o = brute_projection(&raw);
            for (a, b) in p.iter().zip(&o) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
