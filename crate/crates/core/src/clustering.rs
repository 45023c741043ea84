//! Sparse WMMSE for CoMP clustering.
//!
//! Every user may be served jointly by the BSs in its candidate set. A
//! group-LASSO penalty `lambda * sum ||V_i^q||_F` on the per-(user, BS)
//! precoder blocks drives most blocks to zero; the BSs left with a nonzero
//! block form the user's cluster.
//!
//! The penalized precoder step is solved exactly per BS: with the other BSs
//! fixed, the blocks of one BS decouple given the power multiplier, and
//! each block reduces to a scalar equation in its own shift (a group soft
//! threshold when the quadratic is isotropic).

use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net_model::NetworkInstance;
use crate::report::{write_records, SolveReport};
use crate::utility::UtilityConfig;
use crate::wmmse::{self, block_norm, cluster_links, PrecoderSet, Problem, SolveOptions, StopRule};

/// Cluster membership threshold relative to `sqrt(P)`.
pub const EPSILON_SCALE: f64 = 1e-4;

/// Minimizer of `(a/2)||v||^2 - Re<b, v> + lambda ||v||`:
/// `v = max(0, 1 - lambda/||b||) b / a`.
pub fn group_soft_threshold(b: &[Complex64], lambda: f64, a: f64) -> Vec<Complex64> {
    let n = b.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if n <= lambda || n == 0.0 {
        return vec![Complex64::new(0.0, 0.0); b.len()];
    }
    let s = (1.0 - lambda / n) / a;
    b.iter().map(|z| z * s).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub lambda: f64,
    /// Candidate BSs per user; every BS when empty.
    pub candidate_sets: Vec<Vec<usize>>,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig { lambda: 0.0, candidate_sets: Vec::new() }
    }
}

impl ClusterConfig {
    pub fn candidates(&self, instance: &NetworkInstance) -> Result<Vec<Vec<usize>>> {
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be nonnegative, got {}", self.lambda)));
        }
        if self.candidate_sets.is_empty() {
            return Ok(vec![(0..instance.num_bs()).collect(); instance.num_users()]);
        }
        if self.candidate_sets.len() != instance.num_users()
            || self
                .candidate_sets
                .iter()
                .any(|c| c.is_empty() || c.iter().any(|&q| q >= instance.num_bs()))
        {
            return Err(Error::Config("candidate sets must be nonempty and valid, one per user".into()));
        }
        Ok(self.candidate_sets.clone())
    }
}

/// Output of [`solve_sparse_wmmse`].
#[derive(Debug, Clone)]
pub struct ClusterSolution {
    pub candidates: Vec<Vec<usize>>,
    pub precoders: PrecoderSet,
    /// `norms[i][k]`: Frobenius norm of user `i`'s block at `candidates[i][k]`.
    pub norms: Vec<Vec<f64>>,
    /// Cluster of each user.
    pub clusters: Vec<Vec<usize>>,
    /// Penalized objective of the final iteration.
    pub objective: f64,
}

impl ClusterSolution {
    pub fn mean_cluster_size(&self) -> f64 {
        self.clusters.iter().map(Vec::len).sum::<usize>() as f64 / self.clusters.len() as f64
    }
}

/// Clusters `{q : ||V_i^q|| > 1e-4 sqrt(P_q)}`.
pub fn extract_clusters(problem: &Problem<'_>, v: &PrecoderSet) -> (Vec<Vec<f64>>, Vec<Vec<usize>>) {
    let mut norms = Vec::new();
    let mut clusters = Vec::new();
    for (l, link) in problem.links().iter().enumerate() {
        let n: Vec<f64> = (0..link.bss.len()).map(|b| block_norm(problem, v, l, b)).collect();
        let c = link
            .bss
            .iter()
            .zip(&n)
            .filter(|(q, x)| **x > EPSILON_SCALE * problem.instance().power_budget(**q).sqrt())
            .map(|(q, _)| *q)
            .collect();
        norms.push(n);
        clusters.push(c);
    }
    (norms, clusters)
}

fn initial_weights(problem: &mut Problem<'_>, utility: &UtilityConfig, v: &PrecoderSet) -> Result<()> {
    if !utility.is_sum_rate() {
        let g = utility.rate_gradient(&problem.user_rates(v)?)?;
        let c = problem.links().iter().map(|l| g[l.user]).collect();
        problem.set_weights(c)?;
    }
    Ok(())
}

/// Penalty weight above which the first precoder update of
/// [`solve_sparse_wmmse`] (same seed) zeroes every block; the all-zero
/// point is then a fixed point.
pub fn zero_threshold(instance: &NetworkInstance, config: &ClusterConfig, utility: &UtilityConfig, seed: u64) -> Result<f64> {
    let candidates = config.candidates(instance)?;
    let mut problem = Problem::new(instance, cluster_links(&candidates))?;
    let v = problem.random_precoders(seed);
    initial_weights(&mut problem, utility, &v)?;
    let u = problem.receivers(&v)?;
    let e = problem.mse_matrices(&v, &u);
    let w = problem.weights_from(&e)?;
    Ok(problem.zero_threshold(&v, &u, &w))
}

/// Sparse WMMSE with joint transmission from each user's candidate set.
pub fn solve_sparse_wmmse(
    instance: &NetworkInstance,
    config: &ClusterConfig,
    utility: &UtilityConfig,
    stop: StopRule,
    seed: u64,
) -> Result<(ClusterSolution, SolveReport)> {
    let candidates = config.candidates(instance)?;
    let mut problem = Problem::new(instance, cluster_links(&candidates))?;
    let opts = SolveOptions { stop, utility: *utility, lambda: config.lambda, seed, ..Default::default() };
    let sol = wmmse::solve(&mut problem, None, &opts)?;
    let (norms, clusters) = extract_clusters(&problem, &sol.precoders);
    let objective = sol.report.last().map_or(f64::NAN, |r| r.objective);
    Ok((
        ClusterSolution { candidates, precoders: sol.precoders, norms, clusters, objective },
        sol.report,
    ))
}

/// One row of a cluster dump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterRecord {
    pub user: usize,
    pub bs: usize,
    pub frob_norm: f64,
    pub in_cluster: u8,
}

/// Writes `(user, bs, frob_norm, in_cluster)` rows.
pub fn write_clusters_csv<W: Write>(sol: &ClusterSolution, out: W) -> Result<()> {
    let mut rows = Vec::new();
    for (i, qs) in sol.candidates.iter().enumerate() {
        for (k, &q) in qs.iter().enumerate() {
            rows.push(ClusterRecord {
                user: i,
                bs: q,
                frob_norm: sol.norms[i][k],
                in_cluster: sol.clusters[i].contains(&q) as u8,
            });
        }
    }
    write_records(&rows, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::c64;
    use proptest::prelude::*;

    #[test]
    fn soft_threshold_examples() {
        let b = [c64(0.3, -0.2), c64(1.0, 0.5)];
        assert_eq!(group_soft_threshold(&b, 0.0, 1.0), b.to_vec());
        assert!(group_soft_threshold(&b, 5.0, 1.0).iter().all(|z| *z == c64(0.0, 0.0)));
        let v = group_soft_threshold(&[c64(2.0, 0.0), c64(0.0, 0.0)], 1.0, 1.0);
        assert_eq!(v, vec![c64(1.0, 0.0), c64(0.0, 0.0)]);
    }

    proptest! {
        #[test]
        fn soft_threshold_beats_perturbations(
            re in prop::collection::vec(-2.0f64..2.0, 3),
            im in prop::collection::vec(-2.0f64..2.0, 3),
            lambda in 0.0f64..3.0,
            a in 0.1f64..4.0,
            dir in prop::collection::vec(-1.0f64..1.0, 6),
            scale in 1e-4f64..1.0,
        ) {
            let b: Vec<Complex64> = re.iter().zip(&im).map(|(x, y)| c64(*x, *y)).collect();
            let obj = |v: &[Complex64]| {
                let n2: f64 = v.iter().map(|z| z.norm_sqr()).sum();
                let inner: f64 = b.iter().zip(v).map(|(bb, vv)| (bb.conj() * vv).re).sum();
                0.5 * a * n2 - inner + lambda * n2.sqrt()
            };
            let v = group_soft_threshold(&b, lambda, a);
            let p: Vec<Complex64> = v.iter().enumerate().map(|(k, z)| z + c64(dir[2 * k], dir[2 * k + 1]) * scale).collect();
            prop_assert!(obj(&v) <= obj(&p) + 1e-12);
        }
    }
}
