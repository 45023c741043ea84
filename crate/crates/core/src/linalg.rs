//! Small dense complex linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Dense complex matrix used for channels, precoders, receivers and weights.
pub type CMat = DMatrix<Complex64>;

/// Condition number above which a ridge is added before inverting.
pub const RIDGE_CONDITION: f64 = 1e14;
/// Relative ridge added to ill-conditioned Hermitian matrices.
pub const RIDGE_SCALE: f64 = 1e-12;

pub fn c64(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn zeros(rows: usize, cols: usize) -> CMat {
    CMat::zeros(rows, cols)
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn scalar(z: Complex64) -> CMat {
    CMat::from_element(1, 1, z)
}

/// Squared Frobenius norm.
pub fn frob_sq(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

pub fn frob(m: &CMat) -> f64 {
    frob_sq(m).sqrt()
}

/// Real part of the trace.
pub fn re_trace(m: &CMat) -> f64 {
    (0..m.nrows().min(m.ncols())).map(|k| m[(k, k)].re).sum()
}

/// `(m + m^H) / 2`.
pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()) * c64(0.5, 0.0)
}

/// Eigendecomposition of a Hermitian matrix with real eigenvalues.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: CMat,
}

impl HermitianEigen {
    pub fn new(m: &CMat) -> Self {
        let eig = SymmetricEigen::new(hermitian_part(m));
        HermitianEigen {
            values: eig.eigenvalues.iter().copied().collect(),
            vectors: eig.eigenvectors,
        }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Adds `RIDGE_SCALE * lambda_max * I` when the Hermitian PSD matrix is
/// worse conditioned than `RIDGE_CONDITION`.
pub fn ridge_if_needed(m: &CMat) -> CMat {
    let eig = HermitianEigen::new(m);
    let max = eig.max();
    let min = eig.min();
    if max > 0.0 && min < max / RIDGE_CONDITION {
        m + identity(m.nrows()) * c64(RIDGE_SCALE * max, 0.0)
    } else {
        m.clone()
    }
}

/// Solves `m x = rhs` for Hermitian positive definite `m`.
pub fn solve_hpd(m: &CMat, rhs: &CMat) -> Result<CMat> {
    let h = hermitian_part(m);
    if let Some(ch) = h.clone().cholesky() {
        return Ok(ch.solve(rhs));
    }
    ridge_if_needed(&h)
        .cholesky()
        .map(|ch| ch.solve(rhs))
        .ok_or_else(|| Error::Numeric("matrix is not positive definite".into()))
}

/// Inverse of a Hermitian positive definite matrix.
pub fn inverse_hpd(m: &CMat) -> Result<CMat> {
    solve_hpd(m, &identity(m.nrows()))
}

/// `log det m` for Hermitian positive definite `m`.
pub fn log_det_hpd(m: &CMat) -> Result<f64> {
    let ch = hermitian_part(m)
        .cholesky()
        .ok_or_else(|| Error::Numeric("log det of a non positive definite matrix".into()))?;
    let l = ch.l();
    Ok(2.0 * (0..l.nrows()).map(|k| l[(k, k)].re.ln()).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_det_of_diagonal() {
        let m = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![c64(2.0, 0.0), c64(3.0, 0.0)]));
        assert!((log_det_hpd(&m).unwrap() - 6f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn eigen_reconstructs_hermitian() {
        let a = CMat::from_row_slice(2, 2, &[c64(2.0, 0.0), c64(0.5, 1.0), c64(0.5, -1.0), c64(1.0, 0.0)]);
        let e = HermitianEigen::new(&a);
        let d = CMat::from_diagonal(&nalgebra::DVector::from_iterator(
            2,
            e.values.iter().map(|&v| c64(v, 0.0)),
        ));
        let back = &e.vectors * d * e.vectors.adjoint();
        assert!(frob(&(back - a)) < 1e-12);
    }

    #[test]
    fn solve_hpd_inverts() {
        let a = CMat::from_row_slice(2, 2, &[c64(4.0, 0.0), c64(1.0, 1.0), c64(1.0, -1.0), c64(3.0, 0.0)]);
        let inv = inverse_hpd(&a).unwrap();
        assert!(frob(&(&a * inv - identity(2))) < 1e-12);
    }
}
