//! Small dense linear-algebra helpers shared by the charting and tracking code.

use nalgebra::{DMatrix, DVector, Matrix2, SymmetricEigen};
use num_complex::Complex64;

pub type CMatrix = DMatrix<Complex64>;

/// Largest eigenvalue of a Hermitian positive semidefinite matrix by power
/// iteration. Stops when the Rayleigh quotient changes by less than `rel_tol`
/// (relative) or after `max_iter` iterations.
pub fn power_iteration(a: &CMatrix, rel_tol: f64, max_iter: usize) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    // Deterministic start vector with no special alignment to the DFT basis.
    let mut v = DVector::<Complex64>::from_fn(n, |i, _| {
        Complex64::new(1.0 + 0.37 * (i as f64).sin(), 0.21 * (i as f64 * 1.7).cos())
    });
    let nrm = v.norm();
    v /= Complex64::from(nrm);
    let mut lambda = 0.0;
    for _ in 0..max_iter {
        let w = a * &v;
        let next = v.dotc(&w).re;
        let wn = w.norm();
        if wn == 0.0 {
            return 0.0;
        }
        v = w / Complex64::from(wn);
        if lambda > 0.0 && ((next - lambda) / next).abs() < rel_tol {
            return next;
        }
        lambda = next;
    }
    lambda
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(a: &CMatrix) -> Vec<f64> {
    let eig = SymmetricEigen::new(a.clone());
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|x, y| x.total_cmp(y));
    vals
}

/// Spectral condition number of a Hermitian PSD matrix; infinite when singular.
pub fn hermitian_condition(a: &CMatrix) -> f64 {
    let vals = hermitian_eigenvalues(a);
    match (vals.first(), vals.last()) {
        (Some(&lo), Some(&hi)) if lo > 0.0 => hi / lo,
        (Some(_), Some(_)) => f64::INFINITY,
        _ => 1.0,
    }
}

/// Matrix product that also accumulates the number of scalar complex
/// multiplications performed (`rows(a) * cols(a) * cols(b)`).
pub fn counted_mul(a: &CMatrix, b: &CMatrix, ops: &mut u64) -> CMatrix {
    *ops += (a.nrows() * a.ncols() * b.ncols()) as u64;
    a * b
}

pub fn frobenius_sq(a: &CMatrix) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

/// Real part of the Frobenius inner product `<a, b> = sum conj(a) * b`.
pub fn inner_re(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

pub fn symmetrize(p: &DMatrix<f64>) -> DMatrix<f64> {
    (p + p.transpose()) * 0.5
}

pub fn max_eigenvalue_2x2(p: &Matrix2<f64>) -> f64 {
    let a = p[(0, 0)];
    let d = p[(1, 1)];
    let b = 0.5 * (p[(0, 1)] + p[(1, 0)]);
    let mean = 0.5 * (a + d);
    let r = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    mean + r
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn power_iteration_matches_eigendecomposition() {
        let b = CMatrix::from_fn(6, 4, |i, j| {
            Complex64::new((i * 3 + j) as f64 * 0.1, (i as f64 - j as f64) * 0.2)
        });
        let a = b.adjoint() * &b;
        let exact = *hermitian_eigenvalues(&a).last().unwrap();
        let est = power_iteration(&a, 1e-12, 10_000);
        assert_relative_eq!(est, exact, max_relative = 1e-6);
    }

    #[test]
    fn condition_of_identity_is_one() {
        let a = CMatrix::identity(5, 5) * Complex64::from(3.0);
        assert_relative_eq!(hermitian_condition(&a), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn singular_matrix_has_huge_condition() {
        let v = CMatrix::from_element(3, 1, Complex64::new(1.0, 0.0));
        let a = &v * v.adjoint();
        assert!(hermitian_condition(&a) > 1e12);
    }

    #[test]
    fn counted_mul_counts_scalar_products() {
        let a = CMatrix::zeros(3, 4);
        let b = CMatrix::zeros(4, 5);
        let mut ops = 0;
        let _ = counted_mul(&a, &b, &mut ops);
        assert_eq!(ops, 60);
    }

    #[test]
    fn max_eigenvalue_2x2_matches_closed_form() {
        let p = Matrix2::new(2.0, 0.5, 0.5, 1.0);
        let eig = p.symmetric_eigen();
        let exact = eig.eigenvalues.max();
        assert_relative_eq!(max_eigenvalue_2x2(&p), exact, epsilon = 1e-12);
    }
}
