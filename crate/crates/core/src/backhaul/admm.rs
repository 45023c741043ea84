//! Consensus ADMM over constraint groups.
//!
//! Solves `min c^T z` subject to `z` in every group set `G_g` (each group
//! touches a subset of the variables) and simple lower bounds on `z`. Each
//! group keeps a local copy `x_g` of its variables:
//!
//! ```text
//!   L = c^T z + sum_g (rho/2) ||x_g - z[idx_g] + y_g||^2
//!   x_g  <- P_{G_g}(z[idx_g] - y_g)                  (parallel over groups)
//!   z_j  <- max(lb_j, mean_g(x_g + y_g)_j - c_j / (rho n_j))
//!   y_g  <- y_g + x_g - z[idx_g]
//! ```
//!
//! with scaled duals `y` and residual balancing of `rho`.

use rayon::prelude::*;

/// Constraint set of one group, in the group's local coordinates.
#[derive(Debug, Clone)]
pub enum GroupSet {
    /// `a^T x = b`.
    Hyperplane { a: Vec<f64>, b: f64 },
    /// `a^T x <= b`.
    Halfspace { a: Vec<f64>, b: f64 },
    /// Transmit powers of one BS: for each tone `(v positions, p position)`
    /// with `sum v^2 <= p`, and `sum_f p_f <= budget`.
    PowerCone { tones: Vec<(Vec<usize>, usize)>, budget: f64 },
}

#[derive(Debug, Clone)]
pub struct Group {
    pub vars: Vec<usize>,
    pub set: GroupSet,
}

/// Problem data.
#[derive(Debug, Clone)]
pub struct ConsensusProblem {
    pub num_vars: usize,
    pub cost: Vec<f64>,
    /// Lower bound per variable (`f64::NEG_INFINITY` for free).
    pub lower: Vec<f64>,
    pub groups: Vec<Group>,
}

/// Iterate, duals and penalty; reusable as a warm start when only the group
/// coefficients change.
#[derive(Debug, Clone)]
pub struct AdmmState {
    pub z: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub rho: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct AdmmSettings {
    pub max_iters: usize,
    /// Exit when both RMS residuals fall below this.
    pub tolerance: f64,
    pub rho: f64,
    /// Residual ratio that triggers a penalty change.
    pub balance_ratio: f64,
    /// Residual balancing is checked every this many iterations.
    pub balance_every: usize,
}

impl Default for AdmmSettings {
    fn default() -> Self {
        AdmmSettings { max_iters: 2000, tolerance: 1e-4, rho: 1.0, balance_ratio: 10.0, balance_every: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmmOutcome {
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub converged: bool,
}

impl ConsensusProblem {
    pub fn initial_state(&self, z: Vec<f64>, rho: f64) -> AdmmState {
        let x = self.groups.iter().map(|g| g.vars.iter().map(|&j| z[j]).collect()).collect();
        let y = self.groups.iter().map(|g| vec![0.0; g.vars.len()]).collect();
        AdmmState { z, x, y, rho }
    }

    fn counts(&self) -> Vec<usize> {
        let mut n = vec![0usize; self.num_vars];
        for g in &self.groups {
            for &j in &g.vars {
                n[j] += 1;
            }
        }
        n
    }

    /// Runs ADMM from `state` (which must match this problem's groups).
    pub fn solve(&self, state: &mut AdmmState, settings: &AdmmSettings) -> AdmmOutcome {
        let counts = self.counts();
        let copies: usize = counts.iter().sum::<usize>().max(1);
        let mut outcome = AdmmOutcome { iterations: 0, primal_residual: f64::INFINITY, dual_residual: f64::INFINITY, converged: false };
        for it in 1..=settings.max_iters {
            let z = &state.z;
            state.x = self
                .groups
                .par_iter()
                .zip(state.y.par_iter())
                .map(|(g, y)| {
                    let v: Vec<f64> = g.vars.iter().zip(y).map(|(&j, yy)| z[j] - yy).collect();
                    project(&g.set, v)
                })
                .collect();

            let mut acc = vec![0.0; self.num_vars];
            for ((g, x), y) in self.groups.iter().zip(&state.x).zip(&state.y) {
                for (k, &j) in g.vars.iter().enumerate() {
                    acc[j] += x[k] + y[k];
                }
            }
            let z_prev = std::mem::take(&mut state.z);
            state.z = (0..self.num_vars)
                .map(|j| {
                    if counts[j] == 0 {
                        return z_prev[j];
                    }
                    let n = counts[j] as f64;
                    (acc[j] / n - self.cost[j] / (state.rho * n)).max(self.lower[j])
                })
                .collect();

            let mut r2 = 0.0;
            for ((g, x), y) in self.groups.iter().zip(&state.x).zip(state.y.iter_mut()) {
                for (k, &j) in g.vars.iter().enumerate() {
                    let d = x[k] - state.z[j];
                    y[k] += d;
                    r2 += d * d;
                }
            }
            let s2: f64 = (0..self.num_vars).map(|j| counts[j] as f64 * (state.z[j] - z_prev[j]).powi(2)).sum();
            let r = (r2 / copies as f64).sqrt();
            let s = state.rho * (s2 / copies as f64).sqrt();
            outcome = AdmmOutcome { iterations: it, primal_residual: r, dual_residual: s, converged: false };
            if r < settings.tolerance && s < settings.tolerance {
                outcome.converged = true;
                break;
            }
            if it % settings.balance_every == 0 {
                let scale = if r > settings.balance_ratio * s {
                    2.0
                } else if s > settings.balance_ratio * r {
                    0.5
                } else {
                    1.0
                };
                if scale != 1.0 {
                    state.rho *= scale;
                    for y in &mut state.y {
                        for v in y.iter_mut() {
                            *v /= scale;
                        }
                    }
                }
            }
        }
        outcome
    }
}

/// Euclidean projection of `v` onto a group set.
pub fn project(set: &GroupSet, mut v: Vec<f64>) -> Vec<f64> {
    match set {
        GroupSet::Hyperplane { a, b } => {
            let viol = dot(a, &v) - b;
            let n2 = dot(a, a);
            if n2 > 0.0 {
                axpy(&mut v, -viol / n2, a);
            }
            v
        }
        GroupSet::Halfspace { a, b } => {
            let viol = dot(a, &v) - b;
            let n2 = dot(a, a);
            if viol > 0.0 && n2 > 0.0 {
                axpy(&mut v, -viol / n2, a);
            }
            v
        }
        GroupSet::PowerCone { tones, budget } => {
            project_power_cone(tones, *budget, &mut v);
            v
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(v: &mut [f64], s: f64, a: &[f64]) {
    for (x, y) in v.iter_mut().zip(a) {
        *x += s * y;
    }
}

/// Projection of `(a, b)` onto `{(v, p) : ||v||^2 <= p}`; returns the
/// multiplier `theta` with `v = a / (1 + 2 theta)`, `p = b + theta`.
fn paraboloid_theta(a_norm_sq: f64, b: f64) -> f64 {
    if a_norm_sq <= b {
        return 0.0;
    }
    // g(theta) = a2 / (1 + 2 theta)^2 - b - theta, strictly decreasing
    let g = |th: f64| a_norm_sq / (1.0 + 2.0 * th).powi(2) - b - th;
    let mut lo = 0.0f64.max(-b);
    let mut hi = lo.max(1.0);
    while g(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-16 * hi.max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

fn project_power_cone(tones: &[(Vec<usize>, usize)], budget: f64, v: &mut [f64]) {
    // With multiplier kappa on sum_f p_f <= budget each tone is an
    // independent paraboloid projection of (v_f, p_f - kappa).
    let norms: Vec<f64> = tones.iter().map(|(vs, _)| vs.iter().map(|&k| v[k] * v[k]).sum()).collect();
    let p0: Vec<f64> = tones.iter().map(|(_, p)| v[*p]).collect();
    let total = |kappa: f64| -> f64 {
        norms.iter().zip(&p0).map(|(&n, &p)| p - kappa + paraboloid_theta(n, p - kappa)).sum()
    };
    let mut kappa = 0.0;
    if total(0.0) > budget {
        let (mut lo, mut hi) = (0.0, 1.0);
        while total(hi) > budget {
            lo = hi;
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if total(mid) > budget {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-16 * hi.max(1.0) {
                break;
            }
        }
        kappa = hi;
    }
    for ((vs, p), (&n, &pp)) in tones.iter().zip(norms.iter().zip(&p0)) {
        let th = paraboloid_theta(n, pp - kappa);
        for &k in vs {
            v[k] /= 1.0 + 2.0 * th;
        }
        v[*p] = pp - kappa + th;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hyperplane_and_halfspace() {
        let h = GroupSet::Hyperplane { a: vec![1.0, 1.0], b: 1.0 };
        assert_eq!(project(&h, vec![1.0, 1.0]), vec![0.5, 0.5]);
        let s = GroupSet::Halfspace { a: vec![1.0, 1.0], b: 3.0 };
        assert_eq!(project(&s, vec![1.0, 1.0]), vec![1.0, 1.0]);
    }

    #[test]
    fn power_cone_projection_is_feasible_and_optimal() {
        let set = GroupSet::PowerCone { tones: vec![(vec![0, 1], 2), (vec![3], 4)], budget: 1.0 };
        let pts = [vec![2.0, -1.0, 0.3, 1.5, 0.0], vec![0.1, 0.1, 0.5, 0.1, 0.2], vec![0.0, 3.0, -2.0, 0.0, 5.0]];
        for x in pts {
            let p = project(&set, x.clone());
            let feas = |p: &[f64]| p[0] * p[0] + p[1] * p[1] <= p[2] + 1e-9 && p[3] * p[3] <= p[4] + 1e-9 && p[2] + p[4] <= 1.0 + 1e-9;
            assert!(feas(&p), "{p:?}");
            let d0: f64 = p.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum();
            // no feasible perturbation is closer
            let mut seed = 1u64;
            for _ in 0..2000 {
                let q: Vec<f64> = p
                    .iter()
                    .map(|a| {
                        seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                        a + ((seed >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 0.05
                    })
                    .collect();
                if feas(&q) {
                    let d: f64 = q.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum();
                    assert!(d >= d0 - 1e-9);
                }
            }
        }
    }

    #[test]
    fn small_lp() {
        // max t s.t. t <= 1 (two copies of t), t <= 2
        let p = ConsensusProblem {
            num_vars: 1,
            cost: vec![-1.0],
            lower: vec![0.0],
            groups: vec![
                Group { vars: vec![0], set: GroupSet::Halfspace { a: vec![1.0], b: 1.0 } },
                Group { vars: vec![0], set: GroupSet::Halfspace { a: vec![1.0], b: 2.0 } },
            ],
        };
        let mut st = p.initial_state(vec![0.0], 1.0);
        let out = p.solve(&mut st, &AdmmSettings { tolerance: 1e-9, max_iters: 10_000, ..Default::default() });
        assert!(out.converged);
        assert!((st.z[0] - 1.0).abs() < 1e-6, "{}", st.z[0]);
    }
}
