//! Lasso by cyclic coordinate descent with covariance updates.
//!
//! The objective is `(1/n)||y - X b||^2 + 2 λ ||b||_1`, whose stationarity
//! conditions read `(1/n) X_k'(y - X b) = λ sign(b_k)` on the support and
//! `|(1/n) X_k'(y - X b)| <= λ` elsewhere.
//!
//! Problems are posed on a Gram matrix `G` of the stacked columns `[X y]`: one
//! column of `G` (the *target*) plays the role of `X'y` and is excluded from the
//! coordinates. Nodewise regression reuses one Gram matrix for all `p` targets.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{CrownError, Result};

/// Active-set sweeps between attempts to solve the support system directly.
const POLISH_EVERY: usize = 10;
/// Sign-repair rounds per polishing attempt.
const POLISH_ROUNDS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoSettings {
    /// Converged when a full sweep changes no coefficient by more than this.
    pub tol: f64,
    /// Hard cap on coordinate sweeps (full and active-set sweeps both count).
    pub max_sweeps: usize,
}

impl Default for LassoSettings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_sweeps: 10_000,
        }
    }
}

/// A lasso problem expressed through a Gram matrix.
#[derive(Debug, Clone, Copy)]
pub struct GramProblem<'a> {
    gram: &'a DMatrix<f64>,
    target: usize,
    inv_n: f64,
}

impl<'a> GramProblem<'a> {
    /// `gram` is the unscaled cross-product of `n` observations.
    pub fn new(gram: &'a DMatrix<f64>, target: usize, n: usize) -> Self {
        debug_assert!(gram.is_square() && target < gram.nrows() && n > 0);
        Self {
            gram,
            target,
            inv_n: 1.0 / n as f64,
        }
    }

    pub fn dim(&self) -> usize {
        self.gram.nrows()
    }

    pub fn target(&self) -> usize {
        self.target
    }

    /// Smallest penalty for which the zero vector is optimal.
    pub fn lambda_max(&self) -> f64 {
        (0..self.dim())
            .filter(|&k| k != self.target)
            .map(|k| (self.gram[(k, self.target)] * self.inv_n).abs())
            .fold(0.0, f64::max)
    }

    /// Fresh solver state at `b = 0`.
    pub fn start(&self) -> LassoState {
        let p = self.dim();
        let corr = (0..p).map(|k| self.gram[(k, self.target)] * self.inv_n).collect();
        LassoState {
            beta: vec![0.0; p],
            corr,
        }
    }

    /// Runs coordinate descent from `state` (warm start) at penalty `lambda`.
    /// Returns the number of sweeps used.
    pub fn solve(&self, lambda: f64, state: &mut LassoState, settings: &LassoSettings) -> Result<usize> {
        let p = self.dim();
        let mut sweeps = 0usize;
        let mut active: Vec<usize> = Vec::with_capacity(p);
        loop {
            let change = self.sweep(lambda, state, (0..p).filter(|&k| k != self.target));
            sweeps += 1;
            if change < settings.tol {
                return Ok(sweeps);
            }
            if sweeps >= settings.max_sweeps {
                return Err(CrownError::NonConvergence {
                    sweeps,
                    last_change: change,
                });
            }
            active.clear();
            active.extend((0..p).filter(|&k| k != self.target && state.beta[k] != 0.0));
            // Inner sweeps keep the correlations current on the active set only.
            let mut inner = 0usize;
            loop {
                let change = self.sweep_active(lambda, state, &active);
                sweeps += 1;
                inner += 1;
                if change < settings.tol {
                    self.refresh(state, &active);
                    break;
                }
                if sweeps >= settings.max_sweeps {
                    self.refresh(state, &active);
                    return Err(CrownError::NonConvergence {
                        sweeps,
                        last_change: change,
                    });
                }
                if inner.is_multiple_of(POLISH_EVERY) && self.polish(lambda, state, &active) {
                    break;
                }
            }
        }
    }

    /// Recomputes every correlation from the Gram matrix for a solution supported on `active`.
    fn refresh(&self, state: &mut LassoState, active: &[usize]) {
        for (c, g) in state.corr.iter_mut().zip(self.gram.column(self.target).iter()) {
            *c = *g;
        }
        for &l in active {
            let b = state.beta[l];
            if b != 0.0 {
                for (c, g) in state.corr.iter_mut().zip(self.gram.column(l).iter()) {
                    *c -= g * b;
                }
            }
        }
        for c in state.corr.iter_mut() {
            *c *= self.inv_n;
        }
    }

    fn sweep_active(&self, lambda: f64, state: &mut LassoState, active: &[usize]) -> f64 {
        let mut max_change = 0.0_f64;
        for &k in active {
            let gkk = self.gram[(k, k)] * self.inv_n;
            if gkk <= 0.0 {
                continue;
            }
            let old = state.beta[k];
            let new = soft_threshold(state.corr[k] + gkk * old, lambda) / gkk;
            let delta = new - old;
            if delta != 0.0 {
                state.beta[k] = new;
                let col = self.gram.column(k);
                let scale = delta * self.inv_n;
                for &i in active {
                    state.corr[i] -= col[i] * scale;
                }
                max_change = max_change.max(delta.abs());
            }
        }
        max_change
    }

    /// Solves the stationarity equations on the current support with the
    /// current signs, dropping coordinates whose sign does not hold and
    /// solving again. Accepted only if no inactive coordinate then violates
    /// its bound; the caller's next full sweep confirms convergence.
    fn polish(&self, lambda: f64, state: &mut LassoState, active: &[usize]) -> bool {
        let mut support: Vec<usize> = active.to_vec();
        let mut sol = DVector::zeros(0);
        for _ in 0..POLISH_ROUNDS {
            let a = support.len();
            if a == 0 {
                return false;
            }
            let sub = DMatrix::from_fn(a, a, |r, c| self.gram[(support[r], support[c])] * self.inv_n);
            let rhs = DVector::from_fn(a, |r, _| {
                let k = support[r];
                self.gram[(k, self.target)] * self.inv_n - lambda * state.beta[k].signum()
            });
            let Some(chol) = sub.cholesky() else {
                return false;
            };
            sol = chol.solve(&rhs);
            if sol.iter().any(|v| !v.is_finite()) {
                return false;
            }
            let keep: Vec<bool> = sol
                .iter()
                .zip(&support)
                .map(|(v, &k)| *v != 0.0 && v.signum() == state.beta[k].signum())
                .collect();
            if keep.iter().all(|&b| b) {
                break;
            }
            support = support.iter().zip(&keep).filter(|(_, &b)| b).map(|(&k, _)| k).collect();
            sol = DVector::zeros(0);
        }
        if sol.len() != support.len() || support.is_empty() {
            return false;
        }
        let p = self.dim();
        let mut corr = vec![0.0; p];
        for (k, c) in corr.iter_mut().enumerate() {
            let mut g = self.gram[(k, self.target)];
            for (v, &l) in sol.iter().zip(&support) {
                g -= self.gram[(k, l)] * v;
            }
            *c = g * self.inv_n;
        }
        let mut in_support = vec![false; p];
        for &k in &support {
            in_support[k] = true;
        }
        let bound = lambda * (1.0 + 1e-12);
        if (0..p).any(|k| k != self.target && !in_support[k] && corr[k].abs() > bound) {
            return false;
        }
        for b in state.beta.iter_mut() {
            *b = 0.0;
        }
        for (v, &k) in sol.iter().zip(&support) {
            state.beta[k] = *v;
        }
        state.corr = corr;
        true
    }

    fn sweep<I: Iterator<Item = usize>>(&self, lambda: f64, state: &mut LassoState, coords: I) -> f64 {
        let mut max_change = 0.0_f64;
        for k in coords {
            let gkk = self.gram[(k, k)] * self.inv_n;
            if gkk <= 0.0 {
                continue;
            }
            let old = state.beta[k];
            let z = state.corr[k] + gkk * old;
            let new = soft_threshold(z, lambda) / gkk;
            let delta = new - old;
            if delta != 0.0 {
                state.beta[k] = new;
                let col = self.gram.column(k);
                let scale = delta * self.inv_n;
                for (c, g) in state.corr.iter_mut().zip(col.iter()) {
                    *c -= g * scale;
                }
                max_change = max_change.max(delta.abs());
            }
        }
        max_change
    }

    /// Largest violation of the stationarity conditions, recomputed from the Gram matrix.
    pub fn kkt_violation(&self, beta: &[f64], lambda: f64) -> f64 {
        let p = self.dim();
        let mut worst = 0.0_f64;
        for k in (0..p).filter(|&k| k != self.target) {
            let mut g = self.gram[(k, self.target)];
            for l in (0..p).filter(|&l| l != self.target && beta[l] != 0.0) {
                g -= self.gram[(k, l)] * beta[l];
            }
            g *= self.inv_n;
            worst = worst.max(kkt_term(g, beta[k], lambda));
        }
        worst
    }
}

/// Coefficients (indexed like the Gram rows, target slot unused) and the
/// running correlations `(1/n)(X'y - X'X b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LassoState {
    pub beta: Vec<f64>,
    pub corr: Vec<f64>,
}

impl LassoState {
    /// Coefficients with the target slot removed.
    pub fn coefficients(&self, target: usize) -> DVector<f64> {
        DVector::from_iterator(
            self.beta.len() - 1,
            self.beta
                .iter()
                .enumerate()
                .filter(|(k, _)| *k != target)
                .map(|(_, b)| *b),
        )
    }
}

#[inline]
pub fn soft_threshold(z: f64, lambda: f64) -> f64 {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

fn kkt_term(grad: f64, beta: f64, lambda: f64) -> f64 {
    if beta > 0.0 {
        (grad - lambda).abs()
    } else if beta < 0.0 {
        (grad + lambda).abs()
    } else {
        (grad.abs() - lambda).max(0.0)
    }
}

fn stacked_gram(design: &DMatrix<f64>, response: &DVector<f64>) -> DMatrix<f64> {
    let q = design.ncols();
    let mut stacked = DMatrix::zeros(design.nrows(), q + 1);
    stacked.columns_mut(0, q).copy_from(design);
    stacked.column_mut(q).copy_from(response);
    stacked.transpose() * &stacked
}

/// Solves the lasso for a `T x q` design and `T`-vector response.
pub fn lasso_solve(
    design: &DMatrix<f64>,
    response: &DVector<f64>,
    lambda: f64,
    settings: &LassoSettings,
) -> Result<DVector<f64>> {
    if design.nrows() != response.len() {
        return Err(CrownError::DimensionMismatch {
            context: "lasso response",
            expected: design.nrows(),
            actual: response.len(),
        });
    }
    if !(lambda >= 0.0) {
        return Err(CrownError::InvalidConstraint(alloc::format!(
            "lasso penalty must be nonnegative, got {lambda}"
        )));
    }
    let q = design.ncols();
    let gram = stacked_gram(design, response);
    let problem = GramProblem::new(&gram, q, design.nrows());
    let mut state = problem.start();
    problem.solve(lambda, &mut state, settings)?;
    Ok(state.coefficients(q))
}

/// Largest violation of the lasso stationarity conditions for `beta`.
pub fn kkt_violation(design: &DMatrix<f64>, response: &DVector<f64>, beta: &DVector<f64>, lambda: f64) -> f64 {
    let n = design.nrows() as f64;
    let resid = response - design * beta;
    let grad = design.transpose() * resid / n;
    grad.iter()
        .zip(beta.iter())
        .map(|(g, b)| kkt_term(*g, *b, lambda))
        .fold(0.0, f64::max)
}
