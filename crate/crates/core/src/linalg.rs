//! Small dense helpers shared by the estimators.

use nalgebra::{DMatrix, DVector};

/// Inverse of a symmetric positive definite matrix via Cholesky.
///
/// The input is symmetrized first and the output is symmetrized exactly.
pub fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let sym = symmetrize(m);
    let chol = sym.cholesky()?;
    Some(symmetrize(&chol.inverse()))
}

/// `(A + A') / 2`, exactly symmetric bitwise.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        out[(i, i)] = m[(i, i)];
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Largest absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// `max |A - A'|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Symmetric eigenvalues in ascending order.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    let eig = nalgebra::SymmetricEigen::new(symmetrize(m));
    let mut v: alloc::vec::Vec<f64> = eig.eigenvalues.iter().copied().collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
    DVector::from_vec(v)
}

/// 2-norm condition number of a symmetric PSD matrix; infinite when singular.
pub fn sym_condition(m: &DMatrix<f64>) -> f64 {
    let ev = sym_eigenvalues(m);
    let lo = ev[0];
    let hi = ev[ev.len() - 1];
    if lo <= 0.0 || !lo.is_finite() {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// `x' A y`.
pub fn quad_form(x: &DVector<f64>, a: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    x.dot(&(a * y))
}

/// Neumaier compensated summation.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Indicator vector with ones on `indices`.
pub fn indicator(p: usize, indices: &[usize]) -> DVector<f64> {
    let mut v = DVector::zeros(p);
    for &i in indices {
        v[i] = 1.0;
    }
    v
}

pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}
