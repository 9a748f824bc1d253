//! Observed-factor regression: loadings, residuals, sample mean and factor covariance.

use nalgebra::{DMatrix, DVector};

use crate::error::{CrownError, Result};
use crate::linalg;
use crate::panel::{FactorPanel, ReturnPanel};

/// Condition number of `XX'` beyond which the loadings are rejected.
pub const MAX_GRAM_CONDITION: f64 = 1e12;

/// Output of one factor-model estimation window.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModelFit {
    /// `p x K` OLS loadings.
    pub loadings: DMatrix<f64>,
    /// `p x T` residuals `y - B X`.
    pub residuals: DMatrix<f64>,
    /// Row means of the returns.
    pub mean: DVector<f64>,
    /// `T^-1 XX' - T^-2 X 1 1' X'`.
    pub factor_cov: DMatrix<f64>,
}

impl FactorModelFit {
    /// Sample covariance of the OLS residuals, `U U' / T` (no de-meaning).
    pub fn residual_cov(&self) -> DMatrix<f64> {
        let t = self.residuals.ncols() as f64;
        &self.residuals * self.residuals.transpose() / t
    }

    /// Plug-in return covariance `B Σ_f B' + Σ_u`.
    pub fn sigma_y_hat(&self) -> DMatrix<f64> {
        let common = &self.loadings * &self.factor_cov * self.loadings.transpose();
        linalg::symmetrize(&(common + self.residual_cov()))
    }
}

/// Fits the factor model on labelled panels.
pub fn fit_factor_model(returns: &ReturnPanel, factors: &FactorPanel) -> Result<FactorModelFit> {
    if factors.n_periods() != returns.n_periods() {
        return Err(CrownError::DimensionMismatch {
            context: "factor periods",
            expected: returns.n_periods(),
            actual: factors.n_periods(),
        });
    }
    let k = factors.n_factors();
    let bound = returns.n_assets().min(returns.n_periods());
    if k >= bound {
        return Err(CrownError::InvalidPanel(alloc::format!(
            "need K < min(p, T); K = {k}, min(p, T) = {bound}"
        )));
    }
    fit_factor_model_matrix(returns.values(), factors.values())
}

/// Fits the factor model on raw `p x T` returns and `K x T` factors.
pub fn fit_factor_model_matrix(y: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<FactorModelFit> {
    let t = y.ncols();
    if x.ncols() != t {
        return Err(CrownError::DimensionMismatch {
            context: "factor periods",
            expected: t,
            actual: x.ncols(),
        });
    }
    let tf = t as f64;
    let gram = x * x.transpose();
    let condition = linalg::sym_condition(&gram);
    if !(condition < MAX_GRAM_CONDITION) {
        return Err(CrownError::SingularFactorGram { condition });
    }
    let chol = linalg::symmetrize(&gram)
        .cholesky()
        .ok_or(CrownError::SingularFactorGram { condition })?;

    // B' = (XX')^-1 X y'
    let xy = x * y.transpose();
    let loadings = chol.solve(&xy).transpose();
    let residuals = y - &loadings * x;

    let ones = DVector::from_element(t, 1.0);
    let mean = y * &ones / tf;
    let x_sum = x * &ones;
    let factor_cov = linalg::symmetrize(&(&gram / tf - &x_sum * x_sum.transpose() / (tf * tf)));

    Ok(FactorModelFit {
        loadings,
        residuals,
        mean,
        factor_cov,
    })
}
