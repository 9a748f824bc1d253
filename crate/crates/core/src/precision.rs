//! Return precision matrix from the error precision and the factor structure.

use nalgebra::DMatrix;

use crate::error::{CrownError, Result};
use crate::linalg;
use crate::nodewise::ErrorPrecision;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrecisionSource {
    CrownEstimate,
    DirectInverse,
}

/// `Θ`, the inverse return covariance (estimated `Θ̂` is generally not symmetric).
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPrecision {
    pub theta: DMatrix<f64>,
    pub source: PrecisionSource,
}

impl ReturnPrecision {
    pub fn dim(&self) -> usize {
        self.theta.nrows()
    }

    /// `max |Θ - Θ'|`, reported as a diagnostic.
    pub fn asymmetry(&self) -> f64 {
        linalg::asymmetry(&self.theta)
    }
}

/// Sherman-Morrison-Woodbury assembly
/// `Θ̂ = Ω̂ - Ω̂ B [Σ_f^{-1} + B' Ω̂_sym B]^{-1} B' Ω̂`.
///
/// The symmetrized `Ω̂_sym` is used only inside the bracket.
pub fn assemble_theta(
    omega: &ErrorPrecision,
    loadings: &DMatrix<f64>,
    factor_cov: &DMatrix<f64>,
) -> Result<ReturnPrecision> {
    let p = omega.omega.nrows();
    if loadings.nrows() != p {
        return Err(CrownError::DimensionMismatch {
            context: "loadings rows",
            expected: p,
            actual: loadings.nrows(),
        });
    }
    let k = loadings.ncols();
    if factor_cov.nrows() != k || factor_cov.ncols() != k {
        return Err(CrownError::DimensionMismatch {
            context: "factor covariance",
            expected: k,
            actual: factor_cov.nrows(),
        });
    }
    let sf_inv = linalg::spd_inverse(factor_cov).ok_or(CrownError::SingularFactorCov)?;
    let bracket = sf_inv + loadings.transpose() * &omega.omega_sym * loadings;
    let chol = linalg::symmetrize(&bracket)
        .cholesky()
        .ok_or(CrownError::SingularBracket)?;

    let omega_b = &omega.omega * loadings; // p x K
    let bt_omega = loadings.transpose() * &omega.omega; // K x p
    let correction = &omega_b * chol.solve(&bt_omega);
    let theta = &omega.omega - correction;
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(CrownError::SingularBracket);
    }
    Ok(ReturnPrecision {
        theta,
        source: PrecisionSource::CrownEstimate,
    })
}

/// `Θ = Σ_y^{-1}` for a population covariance, exactly symmetric.
pub fn invert_population(sigma_y: &DMatrix<f64>) -> Result<ReturnPrecision> {
    let theta = linalg::spd_inverse(sigma_y).ok_or(CrownError::NotPositiveDefinite)?;
    Ok(ReturnPrecision {
        theta,
        source: PrecisionSource::DirectInverse,
    })
}

/// `B Σ_f B' + Σ_u`, symmetrized.
pub fn population_sigma_y(loadings: &DMatrix<f64>, factor_cov: &DMatrix<f64>, sigma_u: &DMatrix<f64>) -> DMatrix<f64> {
    linalg::symmetrize(&(loadings * factor_cov * loadings.transpose() + sigma_u))
}
