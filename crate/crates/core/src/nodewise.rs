//! Residual-based nodewise regression and the error precision matrix.
//!
//! Each asset's factor-model residual series is regressed by lasso on the
//! residuals of every other asset. The coefficients `γ_j` and the fitted
//! residual variance `τ_j²` give row `j` of the error precision matrix:
//! `Ω_j = (1 at j, -γ_j elsewhere) / τ_j²`.
//!
//! The penalty is chosen per asset, either fixed or by K-fold cross-validation
//! over a geometric grid from `λ_max` down to `λ_max * min_ratio`, with
//! contiguous time-block folds and ties broken toward the larger penalty.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{CrownError, Result};
use crate::lasso::{GramProblem, LassoSettings, LassoState};
use crate::linalg;

/// `τ²` values below this are clamped up to it.
pub const TAU_SQ_FLOOR: f64 = 1e-10;
/// `τ²` values below this (negative) are treated as a failed regression.
pub const TAU_SQ_NEGATIVE_LIMIT: f64 = -1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvSettings {
    pub folds: usize,
    pub grid_len: usize,
    pub min_ratio: f64,
    /// Grid points past the running minimum after which the scan stops;
    /// `grid_len` or more scans the whole grid.
    pub patience: usize,
}

impl Default for CvSettings {
    fn default() -> Self {
        Self {
            folds: 10,
            grid_len: 50,
            min_ratio: 1e-3,
            patience: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaRule {
    CrossValidation(CvSettings),
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionRule {
    CrossValidation,
    FixedLambda,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodewiseConfig {
    pub lambda: LambdaRule,
    pub lasso: LassoSettings,
}

impl Default for NodewiseConfig {
    fn default() -> Self {
        Self {
            lambda: LambdaRule::CrossValidation(CvSettings::default()),
            lasso: LassoSettings::default(),
        }
    }
}

impl NodewiseConfig {
    pub fn fixed(lambda: f64) -> Self {
        Self {
            lambda: LambdaRule::Fixed(lambda),
            ..Self::default()
        }
    }

    pub fn selection_rule(&self) -> SelectionRule {
        match self.lambda {
            LambdaRule::CrossValidation(_) => SelectionRule::CrossValidation,
            LambdaRule::Fixed(_) => SelectionRule::FixedLambda,
        }
    }
}

#[derive(Debug, Clone)]
struct Fold {
    start: usize,
    end: usize,
    train: DMatrix<f64>,
}

/// Cross-products of the residual panel shared by all `p` regressions.
#[derive(Debug, Clone)]
pub struct ResidualGrams {
    residuals: DMatrix<f64>,
    full: DMatrix<f64>,
    folds: Vec<Fold>,
}

impl ResidualGrams {
    /// `residuals` is `p x T`. `folds == 0` skips the cross-validation grams.
    pub fn new(residuals: &DMatrix<f64>, folds: usize) -> Self {
        let t = residuals.ncols();
        let full = residuals * residuals.transpose();
        let folds = fold_bounds(t, folds)
            .into_iter()
            .map(|(start, end)| {
                let block = residuals.columns(start, end - start);
                let test = block * block.transpose();
                Fold {
                    start,
                    end,
                    train: &full - test,
                }
            })
            .collect();
        Self {
            residuals: residuals.clone(),
            full,
            folds,
        }
    }

    pub fn for_config(residuals: &DMatrix<f64>, config: &NodewiseConfig) -> Self {
        let folds = match config.lambda {
            LambdaRule::CrossValidation(cv) => cv.folds.min(residuals.ncols()),
            LambdaRule::Fixed(_) => 0,
        };
        Self::new(residuals, folds)
    }

    pub fn n_assets(&self) -> usize {
        self.residuals.nrows()
    }

    pub fn n_periods(&self) -> usize {
        self.residuals.ncols()
    }
}

/// Contiguous `[start, end)` blocks covering `0..t`.
pub fn fold_bounds(t: usize, folds: usize) -> Vec<(usize, usize)> {
    (0..folds)
        .map(|i| (i * t / folds, (i + 1) * t / folds))
        .filter(|(a, b)| b > a)
        .collect()
}

/// Geometric grid from `lambda_max` down to `lambda_max * min_ratio`.
pub fn lambda_grid(lambda_max: f64, len: usize, min_ratio: f64) -> Vec<f64> {
    if len <= 1 {
        return alloc::vec![lambda_max];
    }
    let step = libm::log(min_ratio) / (len - 1) as f64;
    (0..len).map(|i| lambda_max * libm::exp(step * i as f64)).collect()
}

/// One asset's regression.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFit {
    pub gamma: DVector<f64>,
    pub tau_sq: f64,
    pub lambda: f64,
    pub floored: bool,
}

/// Fits the regression for asset `j`.
pub fn fit_node(grams: &ResidualGrams, j: usize, config: &NodewiseConfig) -> Result<NodeFit> {
    let t = grams.n_periods();
    let p = grams.n_assets();
    let diag = grams.full[(j, j)] / t as f64;
    if !(diag > 1e-24) {
        return Err(CrownError::DegenerateResidual {
            asset: j,
            reason: "residual series is numerically zero",
        });
    }
    let full = GramProblem::new(&grams.full, j, t);
    let lambda_max = full.lambda_max();

    let (state, lambda) = match config.lambda {
        LambdaRule::Fixed(lambda) => {
            let mut st = full.start();
            if lambda < lambda_max {
                full.solve(lambda, &mut st, &config.lasso)?;
            }
            (st, lambda)
        }
        LambdaRule::CrossValidation(cv) => {
            if lambda_max == 0.0 {
                (full.start(), 0.0)
            } else {
                let grid = lambda_grid(lambda_max, cv.grid_len, cv.min_ratio);
                let best = select_by_cv(grams, j, &grid, &cv, &config.lasso);
                let mut st = full.start();
                for &lambda in &grid[..=best] {
                    full.solve(lambda, &mut st, &config.lasso)?;
                }
                (st, grid[best])
            }
        }
    };

    let mut explained = 0.0;
    for k in (0..p).filter(|&k| k != j) {
        explained += state.beta[k] * grams.full[(k, j)];
    }
    let mut tau_sq = (grams.full[(j, j)] - explained) / t as f64;
    let mut floored = false;
    if tau_sq < TAU_SQ_NEGATIVE_LIMIT {
        return Err(CrownError::DegenerateResidual {
            asset: j,
            reason: "negative residual variance after nodewise fit",
        });
    }
    if tau_sq < TAU_SQ_FLOOR {
        log::warn!("nodewise asset {j}: tau^2 = {tau_sq:e} clamped to {TAU_SQ_FLOOR:e}");
        tau_sq = TAU_SQ_FLOOR;
        floored = true;
    }
    Ok(NodeFit {
        gamma: state.coefficients(j),
        tau_sq,
        lambda,
        floored,
    })
}

/// Index into `grid` with the smallest pooled held-out squared error.
///
/// Folds advance together along the grid so the scan can stop once the pooled
/// loss has stayed above its minimum for `cv.patience` consecutive penalties;
/// skipped penalties are never selected.
fn select_by_cv(grams: &ResidualGrams, j: usize, grid: &[f64], cv: &CvSettings, settings: &LassoSettings) -> usize {
    let p = grams.n_assets();
    let u = &grams.residuals;
    let problems: Vec<GramProblem> = grams
        .folds
        .iter()
        .map(|fold| GramProblem::new(&fold.train, j, grams.n_periods() - (fold.end - fold.start)))
        .collect();
    let mut states: Vec<Option<LassoState>> = problems.iter().map(|pr| Some(pr.start())).collect();
    let mut active: Vec<usize> = Vec::with_capacity(p);
    let mut best = 0;
    let mut best_loss = f64::INFINITY;
    for (i, &lambda) in grid.iter().enumerate() {
        let mut loss = 0.0;
        for ((fold, problem), slot) in grams.folds.iter().zip(&problems).zip(states.iter_mut()) {
            let Some(state) = slot else {
                loss = f64::INFINITY;
                continue;
            };
            if problem.solve(lambda, state, settings).is_err() {
                // this fold cannot score smaller penalties
                *slot = None;
                loss = f64::INFINITY;
                continue;
            }
            active.clear();
            active.extend((0..p).filter(|&k| k != j && state.beta[k] != 0.0));
            for t in fold.start..fold.end {
                let col = u.column(t);
                let mut r = col[j];
                for &k in &active {
                    r -= state.beta[k] * col[k];
                }
                loss += r * r;
            }
        }
        if loss < best_loss {
            best = i;
            best_loss = loss;
        } else if loss == f64::INFINITY || i - best >= cv.patience {
            break;
        }
    }
    best
}

/// All `p` nodewise regressions.
#[derive(Debug, Clone, PartialEq)]
pub struct NodewiseFit {
    pub gammas: Vec<DVector<f64>>,
    pub taus_sq: DVector<f64>,
    pub lambdas: DVector<f64>,
    pub selection_rule: SelectionRule,
    /// Assets whose `τ²` hit the floor.
    pub floored: Vec<usize>,
}

impl NodewiseFit {
    pub fn from_nodes(nodes: Vec<NodeFit>, selection_rule: SelectionRule) -> Self {
        let p = nodes.len();
        let taus_sq = DVector::from_iterator(p, nodes.iter().map(|n| n.tau_sq));
        let lambdas = DVector::from_iterator(p, nodes.iter().map(|n| n.lambda));
        let floored = nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.floored)
            .map(|(j, _)| j)
            .collect();
        let gammas = nodes.into_iter().map(|n| n.gamma).collect();
        Self {
            gammas,
            taus_sq,
            lambdas,
            selection_rule,
            floored,
        }
    }

    pub fn n_assets(&self) -> usize {
        self.gammas.len()
    }
}

/// Rejects panels too small for nodewise regression.
pub fn check_residual_panel(residuals: &DMatrix<f64>) -> Result<()> {
    let p = residuals.nrows();
    let t = residuals.ncols();
    if p < 2 || t < 3 {
        return Err(CrownError::InvalidPanel(alloc::format!(
            "nodewise regression needs p >= 2 and T >= 3, got p = {p}, T = {t}"
        )));
    }
    Ok(())
}

/// Runs every nodewise regression sequentially on a `p x T` residual panel.
pub fn nodewise_fit(residuals: &DMatrix<f64>, config: &NodewiseConfig) -> Result<NodewiseFit> {
    check_residual_panel(residuals)?;
    let p = residuals.nrows();
    let grams = ResidualGrams::for_config(residuals, config);
    let nodes = (0..p)
        .map(|j| fit_node(&grams, j, config))
        .collect::<Result<Vec<_>>>()?;
    Ok(NodewiseFit::from_nodes(nodes, config.selection_rule()))
}

/// Error precision estimate and its symmetrization.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorPrecision {
    pub omega: DMatrix<f64>,
    pub omega_sym: DMatrix<f64>,
}

impl ErrorPrecision {
    /// Wraps a known precision matrix (e.g. an exact `Σ_u^{-1}`).
    pub fn from_matrix(omega: DMatrix<f64>) -> Self {
        let omega_sym = linalg::symmetrize(&omega);
        Self { omega, omega_sym }
    }
}

/// Stacks the rows `(1, -γ_j') / τ_j²` into `Ω̂`.
pub fn assemble_omega(fit: &NodewiseFit) -> ErrorPrecision {
    let p = fit.n_assets();
    let mut omega = DMatrix::zeros(p, p);
    for j in 0..p {
        let inv_tau = 1.0 / fit.taus_sq[j];
        let gamma = &fit.gammas[j];
        omega[(j, j)] = inv_tau;
        for (pos, k) in (0..p).filter(|&k| k != j).enumerate() {
            omega[(j, k)] = -gamma[pos] * inv_tau;
        }
    }
    ErrorPrecision::from_matrix(omega)
}
