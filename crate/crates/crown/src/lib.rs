//! Simulation, rolling-window backtest and file formats around `crown-core`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backtest;
pub mod cli;
pub mod error;
pub mod estimate;
pub mod io;
pub mod simulation;

pub use error::{Error, Result};
