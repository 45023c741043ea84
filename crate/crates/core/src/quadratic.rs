//! Power-constrained quadratic subproblem shared by every precoder update.
//!
//! For one power group (a BS in one slot) the precoder update minimizes
//!
//! ```text
//!   sum_b [ sum_f tr(V_bf^H A_f V_bf) - 2 Re tr(V_bf^H B_bf) ] + lambda * sum_b ||V_b||_F
//!   subject to sum_b ||V_b||_F^2 <= budget
//! ```
//!
//! where `b` ranges over penalty blocks (one per served link) and `f` over
//! tones. With a multiplier `mu` for the power constraint each block
//! decouples; its minimizer is `V_bf = (A_f + nu I)^{-1} B_bf` for the unique
//! `nu >= mu` that satisfies `2 (nu - mu) ||V_b|| = lambda` (or `V_b = 0` when
//! `2 ||B_b|| <= lambda`). Transmit power is strictly decreasing in `mu`, so
//! `mu` is found by bisection.

use num_complex::Complex64;

use crate::clustering::group_soft_threshold;
use crate::error::{Error, Result};
use crate::linalg::{c64, frob_sq, CMat, HermitianEigen};

/// Relative tolerance on the power constraint at which bisection stops.
pub const POWER_TOLERANCE: f64 = 1e-10;
const MAX_BISECTION: usize = 500;

/// One tone of one block: `tr(V^H A V) - 2 Re tr(V^H B)` held in the
/// eigenbasis of `A`.
#[derive(Debug, Clone)]
pub struct QuadraticTerm {
    values: Vec<f64>,
    vectors: CMat,
    coeffs: CMat,
}

impl QuadraticTerm {
    pub fn new(a: &CMat, b: &CMat) -> Self {
        let eig = HermitianEigen::new(a);
        let vmax = eig.max().max(0.0);
        let values: Vec<f64> = eig.values.iter().map(|&v| v.max(0.0)).collect();
        let mut coeffs = eig.vectors.adjoint() * b;
        // Components along numerically null directions of A that are pure
        // round-off are dropped (pseudo-inverse behaviour at mu = 0).
        let total = frob_sq(&coeffs);
        for (k, &v) in values.iter().enumerate() {
            if v <= 1e-12 * vmax {
                let row: f64 = coeffs.row(k).iter().map(|z| z.norm_sqr()).sum();
                if row <= 1e-20 * total {
                    coeffs.row_mut(k).fill(c64(0.0, 0.0));
                }
            }
        }
        QuadraticTerm {
            values,
            vectors: eig.vectors,
            coeffs,
        }
    }

    fn coeff_norm_sq(&self) -> f64 {
        frob_sq(&self.coeffs)
    }

    /// `||(A + nu I)^{-1} B||_F^2`.
    fn norm_sq_at(&self, nu: f64) -> f64 {
        let mut s = 0.0;
        for (k, &v) in self.values.iter().enumerate() {
            let row: f64 = self.coeffs.row(k).iter().map(|z| z.norm_sqr()).sum();
            if row == 0.0 {
                continue;
            }
            let d = v + nu;
            if d <= 0.0 {
                return f64::INFINITY;
            }
            s += row / (d * d);
        }
        s
    }

    fn solution_at(&self, nu: f64) -> CMat {
        let mut scaled = self.coeffs.clone();
        for (k, &v) in self.values.iter().enumerate() {
            let d = v + nu;
            let f = if d > 0.0 { 1.0 / d } else { 0.0 };
            scaled.row_mut(k).scale_mut(f);
        }
        &self.vectors * scaled
    }

    fn scaled_solution(&self, factor: f64) -> CMat {
        &self.vectors * (&self.coeffs * c64(factor, 0.0))
    }

    fn zero_solution(&self) -> CMat {
        CMat::zeros(self.vectors.nrows(), self.coeffs.ncols())
    }
}

/// Terms sharing one group-LASSO penalty.
#[derive(Debug, Clone, Default)]
pub struct QuadraticBlock {
    pub terms: Vec<QuadraticTerm>,
}

impl QuadraticBlock {
    pub fn new(terms: Vec<QuadraticTerm>) -> Self {
        QuadraticBlock { terms }
    }

    fn b_norm(&self) -> f64 {
        self.terms.iter().map(QuadraticTerm::coeff_norm_sq).sum::<f64>().sqrt()
    }

    fn norm_sq_at(&self, nu: f64) -> f64 {
        self.terms.iter().map(|t| t.norm_sq_at(nu)).sum()
    }

    /// Common eigenvalue when every term has `A = alpha I`.
    fn isotropic_curvature(&self) -> Option<f64> {
        let first = *self.terms.first()?.values.first()?;
        let scale = first.abs().max(1e-300);
        self.terms
            .iter()
            .flat_map(|t| t.values.iter())
            .all(|&v| (v - first).abs() <= 1e-12 * scale)
            .then_some(first)
    }

    /// Multiplier `nu >= mu` of the block at power multiplier `mu`, or `None`
    /// when the block is thresholded to zero.
    fn effective_shift(&self, mu: f64, lambda: f64) -> Option<f64> {
        if lambda <= 0.0 {
            return Some(mu);
        }
        let bn = self.b_norm();
        if 2.0 * bn <= lambda {
            return None;
        }
        let h = |nu: f64| 2.0 * (nu - mu) * self.norm_sq_at(nu).sqrt() - lambda;
        let mut lo = mu;
        let mut step = (lambda / (2.0 * bn)).max(1e-12) * (1.0 + mu);
        let mut hi = mu + step;
        let mut guard = 0;
        while h(hi) < 0.0 {
            lo = hi;
            step *= 2.0;
            hi = mu + step;
            guard += 1;
            if guard > 200 {
                break;
            }
        }
        for _ in 0..MAX_BISECTION {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if h(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi.abs().max(1e-300) {
                break;
            }
        }
        Some(0.5 * (lo + hi))
    }

    fn power_at(&self, mu: f64, lambda: f64) -> f64 {
        match self.effective_shift(mu, lambda) {
            Some(nu) => self.norm_sq_at(nu),
            None => 0.0,
        }
    }

    fn solution_at(&self, mu: f64, lambda: f64) -> Vec<CMat> {
        if lambda > 0.0 {
            if let Some(alpha) = self.isotropic_curvature() {
                return self.isotropic_solution(alpha + mu, lambda);
            }
        }
        match self.effective_shift(mu, lambda) {
            Some(nu) => self.terms.iter().map(|t| t.solution_at(nu)).collect(),
            None => self.terms.iter().map(QuadraticTerm::zero_solution).collect(),
        }
    }

    fn isotropic_solution(&self, curvature: f64, lambda: f64) -> Vec<CMat> {
        // tr(V^H (aI) V) - 2Re<B,V> + lambda||V|| is twice the soft-threshold
        // objective with curvature a and penalty lambda / 2.
        let flat: Vec<Complex64> = self.terms.iter().flat_map(|t| t.coeffs.iter().copied()).collect();
        let bn = self.b_norm();
        if bn == 0.0 || curvature <= 0.0 {
            return self.terms.iter().map(QuadraticTerm::zero_solution).collect();
        }
        let v = group_soft_threshold(&flat, lambda / 2.0, curvature);
        // soft thresholding only rescales b, so recover the factor
        let factor = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt() / bn;
        self.terms.iter().map(|t| t.scaled_solution(factor)).collect()
    }
}

/// Solution of one power group.
#[derive(Debug, Clone)]
pub struct QuadraticSolution {
    /// `blocks[b][f]` is the minimizer for term `f` of block `b`.
    pub blocks: Vec<Vec<CMat>>,
    /// Power multiplier.
    pub mu: f64,
    pub power: f64,
}

/// Solves the power-constrained (optionally group-penalized) quadratic.
pub fn solve_power_constrained(blocks: &[QuadraticBlock], budget: f64, lambda: f64) -> Result<QuadraticSolution> {
    if budget <= 0.0 {
        return Err(Error::Domain(format!("power budget must be positive, got {budget}")));
    }
    let power = |mu: f64| blocks.iter().map(|b| b.power_at(mu, lambda)).sum::<f64>();
    let finish = |mu: f64| {
        let sol: Vec<Vec<CMat>> = blocks.iter().map(|b| b.solution_at(mu, lambda)).collect();
        let p = sol.iter().flatten().map(frob_sq).sum();
        QuadraticSolution { blocks: sol, mu, power: p }
    };

    let p0 = power(0.0);
    if p0 <= budget {
        return Ok(finish(0.0));
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut doublings = 0;
    while power(hi) > budget {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > 2000 || !hi.is_finite() {
            return Err(Error::Numeric("power bisection failed to bracket the multiplier".into()));
        }
    }
    for _ in 0..MAX_BISECTION {
        let mid = 0.5 * (lo + hi);
        let p = power(mid);
        if (p - budget).abs() <= POWER_TOLERANCE * budget {
            return Ok(finish(mid));
        }
        if p > budget {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    Ok(finish(hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{frob, scalar};

    fn term(a: f64, b: f64) -> QuadraticTerm {
        QuadraticTerm::new(&scalar(c64(a, 0.0)), &scalar(c64(b, 0.0)))
    }

    #[test]
    fn unconstrained_feasible_gives_zero_multiplier() {
        let sol = solve_power_constrained(&[QuadraticBlock::new(vec![term(2.0, 1.0)])], 10.0, 0.0).unwrap();
        assert_eq!(sol.mu, 0.0);
        assert!((sol.blocks[0][0][(0, 0)].re - 0.5).abs() < 1e-14);
    }

    #[test]
    fn scalar_bisection_hits_budget() {
        // (0.5 + mu)^{-1} * 1 with |v|^2 = 1 -> mu = 0.5, v = 1
        let sol = solve_power_constrained(&[QuadraticBlock::new(vec![term(0.5, 1.0)])], 1.0, 0.0).unwrap();
        assert!((sol.mu - 0.5).abs() < 1e-8);
        assert!((sol.blocks[0][0][(0, 0)].re - 1.0).abs() < 1e-9);
    }

    #[test]
    fn penalty_zeroes_weak_block() {
        let blocks = vec![
            QuadraticBlock::new(vec![term(1.0, 0.4)]),
            QuadraticBlock::new(vec![term(1.0, 3.0)]),
        ];
        let sol = solve_power_constrained(&blocks, 100.0, 1.0).unwrap();
        assert_eq!(frob(&sol.blocks[0][0]), 0.0);
        // isotropic: v = (1 - 0.5/3) * 3 / 1 = 2.5
        assert!((sol.blocks[1][0][(0, 0)].re - 2.5).abs() < 1e-12);
    }

    #[test]
    fn anisotropic_penalty_matches_stationarity() {
        let a = CMat::from_row_slice(2, 2, &[c64(3.0, 0.0), c64(0.5, 0.2), c64(0.5, -0.2), c64(1.0, 0.0)]);
        let b = CMat::from_row_slice(2, 1, &[c64(2.0, 1.0), c64(-1.0, 0.5)]);
        let lambda = 0.7;
        let sol = solve_power_constrained(&[QuadraticBlock::new(vec![QuadraticTerm::new(&a, &b)])], 100.0, lambda).unwrap();
        let v = &sol.blocks[0][0];
        // gradient 2(Av - b) + lambda v/||v|| = 0
        let g = (&a * v - &b) * c64(2.0, 0.0) + v * c64(lambda / frob(v), 0.0);
        assert!(frob(&g) < 1e-9, "residual {}", frob(&g));
    }
}
