#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Well-conditioned symmetric positive definite matrix.
pub fn random_pd(rng: &mut ChaCha8Rng, p: usize) -> DMatrix<f64> {
    let a = normal_matrix(rng, p, p);
    let s = &a * a.transpose() / p as f64 + DMatrix::identity(p, p) * 0.5;
    (&s + s.transpose()) * 0.5
}

/// Mean vector with a clearly positive `1'Θμ`.
pub fn random_mean(rng: &mut ChaCha8Rng, p: usize) -> DVector<f64> {
    DVector::from_fn(p, |_, _| 0.5 + 0.3 * rng.sample::<f64, _>(StandardNormal))
}

pub fn indicator(p: usize, set: &[usize]) -> DVector<f64> {
    let mut v = DVector::zeros(p);
    for &i in set {
        v[i] = 1.0;
    }
    v
}

/// `min ½x'Hx - c'x  s.t.  Ax = b` through the bordered KKT system.
/// Returns the minimizer and the multipliers (sign: `Hx - c + A'ν = 0`).
pub fn equality_qp(
    h: &DMatrix<f64>,
    c: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let (p, m) = (h.nrows(), a.nrows());
    let mut kkt = DMatrix::zeros(p + m, p + m);
    kkt.view_mut((0, 0), (p, p)).copy_from(h);
    kkt.view_mut((0, p), (p, m)).copy_from(&a.transpose());
    kkt.view_mut((p, 0), (m, p)).copy_from(a);
    let mut rhs = DVector::zeros(p + m);
    rhs.rows_mut(0, p).copy_from(c);
    rhs.rows_mut(p, m).copy_from(b);
    let sol = kkt.full_piv_lu().solve(&rhs).expect("KKT system is singular");
    (sol.rows(0, p).into_owned(), sol.rows(p, m).into_owned())
}

fn rows(vs: &[&DVector<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(vs.len(), vs[0].len(), |i, j| vs[i][j])
}

/// `max μ'x - (ξ/2) x'Σx` subject to `1'x = total` and optionally `1_R'x = bound`.
pub fn mean_variance_qp(
    sigma: &DMatrix<f64>,
    mu: &DVector<f64>,
    xi: f64,
    total: f64,
    restricted: Option<(&[usize], f64)>,
) -> DVector<f64> {
    let p = mu.len();
    let ones = DVector::from_element(p, 1.0);
    let h = sigma * xi;
    match restricted {
        None => equality_qp(&h, mu, &rows(&[&ones]), &DVector::from_element(1, total)).0,
        Some((set, bound)) => {
            let r = indicator(p, set);
            equality_qp(&h, mu, &rows(&[&ones, &r]), &DVector::from_vec(vec![total, bound])).0
        }
    }
}

/// Same objective with `1'x = 0` and the cap `1_R'x <= cap`, by active-set
/// enumeration. Returns the minimizer and whether the cap is active.
pub fn capped_qp(sigma: &DMatrix<f64>, mu: &DVector<f64>, xi: f64, set: &[usize], cap: f64) -> (DVector<f64>, bool) {
    let p = mu.len();
    let free = mean_variance_qp(sigma, mu, xi, 0.0, None);
    if indicator(p, set).dot(&free) <= cap {
        return (free, false);
    }
    let ones = DVector::from_element(p, 1.0);
    let r = indicator(p, set);
    let (x, nu) = equality_qp(
        &(sigma * xi),
        mu,
        &rows(&[&ones, &r]),
        &DVector::from_vec(vec![0.0, cap]),
    );
    // the cap multiplier must push against the constraint
    assert!(
        nu[1] >= -1e-9,
        "active-set oracle found a negative multiplier {}",
        nu[1]
    );
    (x, true)
}

pub fn max_abs_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}
