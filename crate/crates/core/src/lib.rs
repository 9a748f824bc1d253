//! Constrained high-dimensional portfolio weights.
//!
//! Returns follow an observed-factor model. The inverse covariance of returns is
//! estimated from the factor loadings and a nodewise-lasso precision of the
//! residuals, and then plugged into closed-form weights for tracking-error,
//! weight and short-sale constraints.
//!
//! The crate is `no_std` with `alloc`; enable the `std` feature for `std::error::Error`.

#![cfg_attr(not(any(feature = "std", test)), no_std)]
// `!(x >= 0.0)` rejects NaN along with negatives
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod error;
pub mod factor_model;
pub mod lasso;
pub mod linalg;
pub mod metrics;
pub mod nodewise;
pub mod panel;
pub mod portfolio;
pub mod precision;

pub use error::{CrownError, Result};
pub use factor_model::{fit_factor_model, fit_factor_model_matrix, FactorModelFit};
pub use nodewise::{nodewise_fit, CvSettings, ErrorPrecision, LambdaRule, NodewiseConfig, NodewiseFit};
pub use panel::{FactorPanel, ReturnPanel};
pub use portfolio::{portfolio_weights, ConstraintSpec, PortfolioWeights, Regime, RiskTolerance};
pub use precision::{assemble_theta, ReturnPrecision};
