//! One estimation window: factor regression, nodewise regressions, precision assembly.

use crown_core::factor_model::{fit_factor_model_matrix, FactorModelFit};
use crown_core::nodewise::{
    assemble_omega, check_residual_panel, fit_node, ErrorPrecision, NodewiseConfig, NodewiseFit, ResidualGrams,
};
use crown_core::precision::{assemble_theta, ReturnPrecision};
use crown_core::Result;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

/// Everything estimated from one `p x T` return window and its `K x T` factors.
#[derive(Debug, Clone)]
pub struct CrownEstimate {
    pub fit: FactorModelFit,
    pub nodewise: NodewiseFit,
    pub omega: ErrorPrecision,
    pub theta: ReturnPrecision,
}

impl CrownEstimate {
    pub fn mean(&self) -> &DVector<f64> {
        &self.fit.mean
    }

    pub fn sigma_y_hat(&self) -> DMatrix<f64> {
        self.fit.sigma_y_hat()
    }
}

/// Nodewise regressions with the assets spread over the rayon pool.
/// The output does not depend on the number of threads.
pub fn nodewise_parallel(residuals: &DMatrix<f64>, config: &NodewiseConfig) -> Result<NodewiseFit> {
    check_residual_panel(residuals)?;
    let grams = ResidualGrams::for_config(residuals, config);
    let nodes = (0..residuals.nrows())
        .into_par_iter()
        .map(|j| fit_node(&grams, j, config))
        .collect::<Result<Vec<_>>>()?;
    Ok(NodewiseFit::from_nodes(nodes, config.selection_rule()))
}

pub fn estimate_window(y: &DMatrix<f64>, x: &DMatrix<f64>, config: &NodewiseConfig) -> Result<CrownEstimate> {
    let fit = fit_factor_model_matrix(y, x)?;
    let nodewise = nodewise_parallel(&fit.residuals, config)?;
    let omega = assemble_omega(&nodewise);
    let theta = assemble_theta(&omega, &fit.loadings, &fit.factor_cov)?;
    Ok(CrownEstimate {
        fit,
        nodewise,
        omega,
        theta,
    })
}
