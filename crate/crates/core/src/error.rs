use alloc::string::String;

/// Errors raised by the estimation and portfolio routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CrownError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("invalid panel: {0}")]
    InvalidPanel(String),
    #[error("factor gram matrix XX' is numerically singular (condition number {condition:e})")]
    SingularFactorGram { condition: f64 },
    #[error("coordinate descent did not converge within {sweeps} sweeps (last change {last_change:e})")]
    NonConvergence { sweeps: usize, last_change: f64 },
    #[error("residual series of asset {asset} is degenerate: {reason}")]
    DegenerateResidual { asset: usize, reason: &'static str },
    #[error("factor covariance matrix is not invertible")]
    SingularFactorCov,
    #[error("Woodbury bracket matrix is not invertible")]
    SingularBracket,
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("denominator {name} is numerically zero ({value:e})")]
    DegenerateDenominator { name: &'static str, value: f64 },
    #[error("restricted and unrestricted minimum-variance sums coincide (w_k - w_a = {0:e})")]
    DegenerateSpread(f64),
    #[error("MSR and GMV portfolios coincide; quadratic form {0:e}")]
    DegenerateDirection(f64),
    #[error("floor set covers every asset; complement is empty")]
    EmptyComplement,
    #[error("invalid constraint: {0}")]
    InvalidConstraint(String),
    #[error("risk tolerance must be resolved before forming weights")]
    KappaUnresolved,
    #[error("quadratic form is negative ({0:e}); covariance input is not PSD")]
    NegativeQuadraticForm(f64),
    #[error("portfolio variance {0:e} is too small to form a Sharpe ratio")]
    ZeroRisk(f64),
    #[error("oracle portfolio has zero risk")]
    ZeroOracleRisk,
    #[error("oracle portfolio has zero Sharpe ratio")]
    ZeroOracleSR,
    #[error("series alignment error: {0}")]
    AlignmentError(String),
    #[error("series too short for the Sharpe ratio test: {len} < {min}")]
    SeriesTooShort { len: usize, min: usize },
}

pub type Result<T> = core::result::Result<T, CrownError>;
