//! Rolling-window out-of-sample evaluation.
//!
//! Each window of `T_I` periods is estimated on its own; the resulting weights
//! earn the next period's returns. Windows roll forward by one period, so a
//! sample of `T` periods yields `T - T_I` out-of-sample returns.

use crown_core::linalg::compensated_sum;
use crown_core::metrics::{
    drift_weights, net_of_cost, series_stats, sr_test, trade_sizes, turnover, BacktestSeries, PortfolioStats, SrTest,
};
use crown_core::portfolio::{estimate_kappa, portfolio_weights, RiskTolerance};
use crown_core::{FactorPanel, ReturnPanel};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::estimate_window;
use crate::simulation::{LambdaChoice, RegimeSetup};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rebalance {
    #[default]
    EveryPeriod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestConfig {
    /// In-sample window length `T_I`.
    #[serde(default = "default_window")]
    pub window: usize,
    pub regime: RegimeSetup,
    /// Proportional trading cost per unit of one-norm turnover.
    #[serde(default = "default_cost")]
    pub cost: f64,
    #[serde(default = "default_te_target")]
    pub te_target_annualized: f64,
    #[serde(default = "default_periods_per_year")]
    pub periods_per_year: f64,
    /// Fixed `κ`; when set the TE target is ignored.
    #[serde(default)]
    pub kappa: Option<f64>,
    #[serde(default)]
    pub rebalance: Rebalance,
    #[serde(default)]
    pub lambda: LambdaChoice,
}

fn default_window() -> usize {
    180
}
fn default_cost() -> f64 {
    0.005
}
fn default_te_target() -> f64 {
    0.05
}
fn default_periods_per_year() -> f64 {
    12.0
}

impl BacktestConfig {
    pub fn new(regime: RegimeSetup) -> Self {
        Self {
            window: default_window(),
            regime,
            cost: default_cost(),
            te_target_annualized: default_te_target(),
            periods_per_year: default_periods_per_year(),
            kappa: None,
            rebalance: Rebalance::EveryPeriod,
            lambda: LambdaChoice::default(),
        }
    }

    /// TE target per period.
    pub fn te_target(&self) -> f64 {
        self.te_target_annualized / self.periods_per_year.sqrt()
    }

    pub fn validate(&self, n_factors: usize, n_periods: usize) -> Result<()> {
        if self.window < n_factors + 2 {
            return Err(Error::Config(format!(
                "window {} must be at least K + 2 = {}",
                self.window,
                n_factors + 2
            )));
        }
        if self.window >= n_periods {
            return Err(Error::Config(format!(
                "window {} must be shorter than the sample ({n_periods} periods)",
                self.window
            )));
        }
        if !(self.cost >= 0.0) {
            return Err(Error::Config(format!("cost must be nonnegative, got {}", self.cost)));
        }
        if !(self.periods_per_year > 0.0) {
            return Err(Error::Config("periods_per_year must be positive".into()));
        }
        if self.kappa.is_none() && !(self.te_target_annualized > 0.0) {
            return Err(Error::Config("TE target must be positive".into()));
        }
        Ok(())
    }
}

/// Per-window outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    /// Last in-sample date.
    pub date: String,
    pub kappa: Option<f64>,
    pub binding: Option<bool>,
    /// Error message when estimation failed and the prior weights were held.
    pub failure: Option<String>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub avr: f64,
    pub te: f64,
    pub risk: f64,
    pub sr: f64,
    pub turnover: f64,
    pub p_value: Option<f64>,
    pub max_weight: f64,
    pub min_weight: f64,
    pub total_short: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRecord {
    pub avg_return: f64,
    pub variance: f64,
    pub risk: f64,
    pub sharpe: f64,
}

impl From<PortfolioStats> for StatsRecord {
    fn from(s: PortfolioStats) -> Self {
        Self {
            avg_return: s.avg_return,
            variance: s.variance,
            risk: s.risk,
            sharpe: s.sharpe,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrTestRecord {
    pub statistic: f64,
    pub p_value: f64,
    pub lag: usize,
}

impl From<SrTest> for SrTestRecord {
    fn from(t: SrTest) -> Self {
        Self {
            statistic: t.statistic,
            p_value: t.p_value,
            lag: t.lag,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub config: BacktestConfig,
    pub assets: Vec<String>,
    /// Dates of the out-of-sample returns.
    pub dates: Vec<String>,
    pub gross_returns: Vec<f64>,
    pub net_returns: Vec<f64>,
    pub benchmark_returns: Vec<f64>,
    /// One-norm trade at the end of each out-of-sample period (0 for the last).
    pub trades: Vec<f64>,
    pub gross: StatsRecord,
    pub net: StatsRecord,
    pub benchmark: StatsRecord,
    /// Standard deviation of net minus benchmark returns.
    pub tracking_error: f64,
    pub turnover: f64,
    /// Net portfolio against the benchmark; absent for short samples.
    pub sr_test: Option<SrTestRecord>,
    pub windows: Vec<WindowRecord>,
    /// Drifted weights just before each rebalance after the first.
    pub drifted_weights: Vec<Vec<f64>>,
    pub failed_windows: usize,
    pub summary: SummaryRow,
}

impl BacktestReport {
    pub fn out_of_sample_len(&self) -> usize {
        self.gross_returns.len()
    }

    pub fn series(&self) -> BacktestSeries {
        let after: Vec<DVector<f64>> = self
            .windows
            .iter()
            .map(|w| DVector::from_vec(w.weights.clone()))
            .collect();
        let before: Vec<DVector<f64>> = self
            .drifted_weights
            .iter()
            .map(|w| DVector::from_vec(w.clone()))
            .collect();
        BacktestSeries {
            gross_returns: self.gross_returns.clone(),
            net_returns: self.net_returns.clone(),
            weights_before: before,
            weights_after: after,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Header plus one summary row: AVR, TE, Risk, SR, TO, p-val, Max Weight, Min Weight, Total Short.
    pub fn summary_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "AVR",
            "TE",
            "Risk",
            "SR",
            "TO",
            "p-val",
            "Max Weight",
            "Min Weight",
            "Total Short",
        ])?;
        let s = &self.summary;
        let f = |x: f64| format!("{x:.4}");
        w.write_record([
            f(s.avr),
            f(s.te),
            f(s.risk),
            f(s.sr),
            f(s.turnover),
            s.p_value.map(f).unwrap_or_else(|| "NA".into()),
            f(s.max_weight),
            f(s.min_weight),
            f(s.total_short),
        ])?;
        let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

struct WindowWeights {
    weights: crown_core::Result<DVector<f64>>,
    kappa: Option<f64>,
    binding: Option<bool>,
}

fn window_weights(
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    benchmark: &DVector<f64>,
    config: &BacktestConfig,
) -> WindowWeights {
    let result = (|| {
        let est = estimate_window(y, x, &config.lambda.to_config())?;
        let kappa = match config.kappa {
            Some(k) => k,
            None => estimate_kappa(&est.theta, est.mean(), &est.sigma_y_hat(), config.te_target())?,
        };
        let spec = config.regime.to_spec(benchmark, RiskTolerance::Given(kappa));
        let w = portfolio_weights(&est.theta, est.mean(), &spec)?;
        Ok((w, kappa))
    })();
    match result {
        Ok((w, kappa)) => WindowWeights {
            weights: Ok(w.weights),
            kappa: Some(kappa),
            binding: w.binding,
        },
        Err(e) => WindowWeights {
            weights: Err(e),
            kappa: None,
            binding: None,
        },
    }
}

/// Runs the rolling-window protocol. `benchmark` holds per-period weights
/// (`p x T`); windows are estimated in parallel and assembled in order.
pub fn run_backtest(
    returns: &ReturnPanel,
    factors: &FactorPanel,
    benchmark: &DMatrix<f64>,
    config: &BacktestConfig,
) -> Result<BacktestReport> {
    let (p, t) = (returns.n_assets(), returns.n_periods());
    if factors.n_periods() != t {
        return Err(Error::DateMisalignment(format!(
            "{} factor periods for {t} return periods",
            factors.n_periods()
        )));
    }
    if benchmark.shape() != (p, t) {
        return Err(Error::Config(format!(
            "benchmark is {:?}, expected ({p}, {t})",
            benchmark.shape()
        )));
    }
    config.validate(factors.n_factors(), t)?;
    let window = config.window;
    let n_oos = t - window;
    let y_all = returns.values();
    let x_all = factors.values();

    // Window ending at period s (0-based) covers [s - window + 1, s].
    let raw: Vec<WindowWeights> = (0..n_oos)
        .into_par_iter()
        .map(|i| {
            let start = i;
            let y = y_all.columns(start, window).into_owned();
            let x = x_all.columns(start, window).into_owned();
            let m = benchmark.column(start + window - 1).into_owned();
            window_weights(&y, &x, &m, config)
        })
        .collect();

    let mut windows = Vec::with_capacity(n_oos);
    let mut held: Vec<DVector<f64>> = Vec::with_capacity(n_oos);
    for (i, ww) in raw.into_iter().enumerate() {
        let s = i + window - 1;
        let (w, failure) = match ww.weights {
            Ok(w) => (w, None),
            Err(e) => {
                let fallback = held.last().cloned().unwrap_or_else(|| benchmark.column(s).into_owned());
                log::warn!("window ending {}: {e}; holding prior weights", returns.dates()[s]);
                (fallback, Some(e.to_string()))
            }
        };
        windows.push(WindowRecord {
            date: returns.dates()[s].clone(),
            kappa: ww.kappa,
            binding: ww.binding,
            failure,
            weights: w.iter().copied().collect(),
        });
        held.push(w);
    }
    let failed_windows = windows.iter().filter(|w| w.failure.is_some()).count();

    let realized: Vec<DVector<f64>> = (0..n_oos).map(|i| y_all.column(window + i).into_owned()).collect();
    let gross: Vec<f64> = held
        .iter()
        .zip(&realized)
        .map(|(w, y)| compensated_sum(w.iter().zip(y.iter()).map(|(a, b)| a * b)))
        .collect();
    let bench_returns: Vec<f64> = (0..n_oos)
        .map(|i| {
            let m = benchmark.column(window + i - 1);
            compensated_sum(m.iter().zip(realized[i].iter()).map(|(a, b)| a * b))
        })
        .collect();

    // Rebalance after period i replaces the drifted weights with the next window's.
    let drifted: Vec<DVector<f64>> = held[..n_oos - 1]
        .iter()
        .zip(&realized)
        .map(|(w, y)| drift_weights(w, y))
        .collect::<crown_core::Result<_>>()?;
    let mut trades = trade_sizes(&held[1..], &drifted)?;
    let to = turnover(&held[1..], &drifted)?;
    trades.push(0.0);
    let net = net_of_cost(&gross, &trades, config.cost)?;

    let gross_stats = series_stats(&gross)?;
    let net_stats = series_stats(&net)?;
    let bench_stats = series_stats(&bench_returns)?;
    let active: Vec<f64> = net.iter().zip(&bench_returns).map(|(a, b)| a - b).collect();
    let te = series_stats(&active)?.risk;
    let test = sr_test(&net, &bench_returns).ok().map(SrTestRecord::from);

    let n = n_oos as f64;
    let max_weight = compensated_sum(held.iter().map(|w| w.max())) / n;
    let min_weight = compensated_sum(held.iter().map(|w| w.min())) / n;
    let total_short = compensated_sum(held.iter().map(|w| w.iter().map(|v| (-v).max(0.0)).sum::<f64>())) / n;

    let summary = SummaryRow {
        avr: net_stats.avg_return,
        te,
        risk: net_stats.risk,
        sr: net_stats.sharpe,
        turnover: to,
        p_value: test.as_ref().map(|t| t.p_value),
        max_weight,
        min_weight,
        total_short,
    };
    Ok(BacktestReport {
        config: config.clone(),
        assets: returns.assets().to_vec(),
        dates: returns.dates()[window..].to_vec(),
        gross_returns: gross,
        net_returns: net,
        benchmark_returns: bench_returns,
        trades,
        gross: gross_stats.into(),
        net: net_stats.into(),
        benchmark: bench_stats.into(),
        tracking_error: te,
        turnover: to,
        sr_test: test,
        windows,
        drifted_weights: drifted.iter().map(|w| w.iter().copied().collect()).collect(),
        failed_windows,
        summary,
    })
}
