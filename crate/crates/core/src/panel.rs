//! Labelled return and factor panels.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{CrownError, Result};

/// `p x T` matrix of excess returns, one row per asset.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    assets: Vec<String>,
    dates: Vec<String>,
    values: DMatrix<f64>,
}

impl ReturnPanel {
    pub fn new(assets: Vec<String>, dates: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        check_labels("returns", &assets, &dates, &values)?;
        if values.nrows() < 2 {
            return Err(CrownError::InvalidPanel(format!(
                "need at least 2 assets, got {}",
                values.nrows()
            )));
        }
        if values.ncols() < 2 {
            return Err(CrownError::InvalidPanel(format!(
                "need at least 2 periods, got {}",
                values.ncols()
            )));
        }
        Ok(Self { assets, dates, values })
    }

    /// Panel with generated labels `a0..`, `t0..`.
    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        let assets = (0..values.nrows()).map(|i| format!("a{i}")).collect();
        let dates = (0..values.ncols()).map(|t| format!("t{t}")).collect();
        Self::new(assets, dates, values)
    }

    pub fn assets(&self) -> &[String] {
        &self.assets
    }

    pub fn dates(&self) -> &[String] {
        &self.dates
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n_assets(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_periods(&self) -> usize {
        self.values.ncols()
    }
}

/// `K x T` matrix of observed factor realizations.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPanel {
    names: Vec<String>,
    values: DMatrix<f64>,
}

impl FactorPanel {
    pub fn new(names: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        if names.len() != values.nrows() {
            return Err(CrownError::DimensionMismatch {
                context: "factor names",
                expected: values.nrows(),
                actual: names.len(),
            });
        }
        if values.nrows() < 1 {
            return Err(CrownError::InvalidPanel("need at least one factor".into()));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(CrownError::InvalidPanel(format!(
                "non-finite factor value at flat index {bad}"
            )));
        }
        Ok(Self { names, values })
    }

    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        let names = (0..values.nrows()).map(|k| format!("f{k}")).collect();
        Self::new(names, values)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n_factors(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_periods(&self) -> usize {
        self.values.ncols()
    }
}

fn check_labels(what: &'static str, rows: &[String], cols: &[String], values: &DMatrix<f64>) -> Result<()> {
    if rows.len() != values.nrows() {
        return Err(CrownError::DimensionMismatch {
            context: what,
            expected: values.nrows(),
            actual: rows.len(),
        });
    }
    if cols.len() != values.ncols() {
        return Err(CrownError::DimensionMismatch {
            context: what,
            expected: values.ncols(),
            actual: cols.len(),
        });
    }
    for j in 0..values.ncols() {
        for i in 0..values.nrows() {
            if !values[(i, j)].is_finite() {
                return Err(CrownError::InvalidPanel(format!(
                    "non-finite {what} value for {} at {}",
                    rows[i], cols[j]
                )));
            }
        }
    }
    Ok(())
}
