//! In-sample and out-of-sample portfolio statistics.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{CrownError, Result};
use crate::linalg::{self, compensated_sum};

/// Quadratic forms below this are treated as evidence of a non-PSD input.
pub const NEGATIVE_FORM_TOL: f64 = -1e-10;
/// Variances at or below this are treated as zero risk.
pub const ZERO_VARIANCE_TOL: f64 = 1e-14;
/// Shortest series accepted by [`sr_test`].
pub const SR_TEST_MIN_LEN: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PortfolioStats {
    /// Tracking error against a benchmark, when one was supplied.
    pub te: Option<f64>,
    pub risk: f64,
    pub variance: f64,
    pub avg_return: f64,
    pub sharpe: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimationErrors {
    pub weight_er: f64,
    pub risk_er: f64,
    pub sr_er: f64,
}

/// Realized out-of-sample path of a rebalanced portfolio.
#[derive(Debug, Clone, PartialEq)]
pub struct BacktestSeries {
    pub gross_returns: Vec<f64>,
    pub net_returns: Vec<f64>,
    /// Drifted weights just before each rebalance.
    pub weights_before: Vec<DVector<f64>>,
    /// Weights chosen at each rebalance.
    pub weights_after: Vec<DVector<f64>>,
}

fn checked_form(d: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    if sigma.nrows() != d.len() || sigma.ncols() != d.len() {
        return Err(CrownError::DimensionMismatch {
            context: "covariance",
            expected: d.len(),
            actual: sigma.nrows(),
        });
    }
    let q = linalg::quad_form(d, sigma, d);
    if q < NEGATIVE_FORM_TOL || q.is_nan() {
        return Err(CrownError::NegativeQuadraticForm(q));
    }
    Ok(q.max(0.0))
}

/// `sqrt((w - m)' Σ (w - m))`.
pub fn tracking_error(w: &DVector<f64>, m: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    if w.len() != m.len() {
        return Err(CrownError::DimensionMismatch {
            context: "benchmark",
            expected: w.len(),
            actual: m.len(),
        });
    }
    Ok(linalg::sqrt(checked_form(&(w - m), sigma)?))
}

/// Variance, risk and Sharpe ratio of `w` under `(μ, Σ)`.
pub fn portfolio_stats(w: &DVector<f64>, mu: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<PortfolioStats> {
    if mu.len() != w.len() {
        return Err(CrownError::DimensionMismatch {
            context: "mean",
            expected: w.len(),
            actual: mu.len(),
        });
    }
    let variance = checked_form(w, sigma)?;
    if variance <= ZERO_VARIANCE_TOL {
        return Err(CrownError::ZeroRisk(variance));
    }
    let risk = linalg::sqrt(variance);
    let avg_return = w.dot(mu);
    Ok(PortfolioStats {
        te: None,
        risk,
        variance,
        avg_return,
        sharpe: avg_return / risk,
    })
}

/// [`portfolio_stats`] plus the tracking error against `m`.
pub fn portfolio_stats_vs(
    w: &DVector<f64>,
    m: &DVector<f64>,
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
) -> Result<PortfolioStats> {
    let mut stats = portfolio_stats(w, mu, sigma)?;
    stats.te = Some(tracking_error(w, m, sigma)?);
    Ok(stats)
}

/// Errors of `w_hat` relative to the oracle `w_star` under population `(μ, Σ)`.
pub fn estimation_errors(
    w_hat: &DVector<f64>,
    w_star: &DVector<f64>,
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
) -> Result<EstimationErrors> {
    if w_hat.len() != w_star.len() || mu.len() != w_star.len() {
        return Err(CrownError::DimensionMismatch {
            context: "oracle weights",
            expected: w_star.len(),
            actual: w_hat.len(),
        });
    }
    let weight_er = compensated_sum(w_hat.iter().zip(w_star.iter()).map(|(a, b)| (a - b).abs()));

    let var_star = checked_form(w_star, sigma)?;
    if var_star <= ZERO_VARIANCE_TOL {
        return Err(CrownError::ZeroOracleRisk);
    }
    let var_hat = checked_form(w_hat, sigma)?;
    let risk_er = (var_hat / var_star - 1.0).abs();

    let sr_star = w_star.dot(mu) / linalg::sqrt(var_star);
    if sr_star == 0.0 || !sr_star.is_finite() {
        return Err(CrownError::ZeroOracleSR);
    }
    if var_hat <= ZERO_VARIANCE_TOL {
        return Err(CrownError::ZeroRisk(var_hat));
    }
    let sr_hat = w_hat.dot(mu) / linalg::sqrt(var_hat);
    let ratio = sr_hat / sr_star;
    Ok(EstimationErrors {
        weight_er,
        risk_er,
        sr_er: (ratio * ratio - 1.0).abs(),
    })
}

/// Mean, `1/(n-1)` variance, risk and Sharpe ratio of a return series.
pub fn series_stats(series: &[f64]) -> Result<PortfolioStats> {
    let n = series.len();
    if n < 2 {
        return Err(CrownError::AlignmentError(format!(
            "need at least 2 out-of-sample periods, got {n}"
        )));
    }
    let mean = compensated_sum(series.iter().copied()) / n as f64;
    let variance = compensated_sum(series.iter().map(|r| (r - mean) * (r - mean))) / (n - 1) as f64;
    let risk = linalg::sqrt(variance);
    let sharpe = if variance > ZERO_VARIANCE_TOL { mean / risk } else { 0.0 };
    Ok(PortfolioStats {
        te: None,
        risk,
        variance,
        avg_return: mean,
        sharpe,
    })
}

/// Realized returns `ŵ_t' y_{t+1}` and their summary statistics.
///
/// `weights[i]` is applied to `realized[i]`; callers do the one-period shift.
pub fn oos_evaluate(weights: &[DVector<f64>], realized: &[DVector<f64>]) -> Result<(Vec<f64>, PortfolioStats)> {
    if weights.len() != realized.len() {
        return Err(CrownError::AlignmentError(format!(
            "{} weight vectors for {} return vectors",
            weights.len(),
            realized.len()
        )));
    }
    let mut gross = Vec::with_capacity(weights.len());
    for (w, y) in weights.iter().zip(realized) {
        if w.len() != y.len() {
            return Err(CrownError::AlignmentError(format!(
                "weight length {} vs return length {}",
                w.len(),
                y.len()
            )));
        }
        gross.push(compensated_sum(w.iter().zip(y.iter()).map(|(a, b)| a * b)));
    }
    let stats = series_stats(&gross)?;
    Ok((gross, stats))
}

/// Weights after one period of returns `r`: `w_i (1 + r_i) / Σ_j w_j (1 + r_j)`.
pub fn drift_weights(w: &DVector<f64>, r: &DVector<f64>) -> Result<DVector<f64>> {
    if w.len() != r.len() {
        return Err(CrownError::AlignmentError(format!(
            "weight length {} vs return length {}",
            w.len(),
            r.len()
        )));
    }
    let grown = w.zip_map(r, |a, b| a * (1.0 + b));
    let total = compensated_sum(grown.iter().copied());
    if total.abs() <= 1e-12 || !total.is_finite() {
        return Err(CrownError::DegenerateDenominator {
            name: "drifted portfolio value",
            value: total,
        });
    }
    Ok(grown / total)
}

/// `||a - b||_1` for each aligned pair.
pub fn trade_sizes(desired: &[DVector<f64>], drifted: &[DVector<f64>]) -> Result<Vec<f64>> {
    if desired.len() != drifted.len() {
        return Err(CrownError::AlignmentError(format!(
            "{} rebalances vs {} drifted weight vectors",
            desired.len(),
            drifted.len()
        )));
    }
    desired
        .iter()
        .zip(drifted)
        .map(|(a, b)| {
            if a.len() != b.len() {
                return Err(CrownError::AlignmentError(format!(
                    "weight lengths {} and {}",
                    a.len(),
                    b.len()
                )));
            }
            Ok(compensated_sum(a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs())))
        })
        .collect()
}

/// Average one-norm trade per rebalance; `desired[l]` replaces `drifted[l]`.
pub fn turnover(desired: &[DVector<f64>], drifted: &[DVector<f64>]) -> Result<f64> {
    let trades = trade_sizes(desired, drifted)?;
    if trades.is_empty() {
        return Ok(0.0);
    }
    Ok(compensated_sum(trades.iter().copied()) / trades.len() as f64)
}

/// `(1 - c * trade_t)(1 + y_t) - 1`; periods without trading (or `c = 0`)
/// pass through unchanged.
pub fn net_of_cost(gross: &[f64], trades: &[f64], c: f64) -> Result<Vec<f64>> {
    if gross.len() != trades.len() {
        return Err(CrownError::AlignmentError(format!(
            "{} returns vs {} trade sizes",
            gross.len(),
            trades.len()
        )));
    }
    if !(c >= 0.0) {
        return Err(CrownError::InvalidConstraint(format!(
            "cost rate must be nonnegative, got {c}"
        )));
    }
    if c == 0.0 {
        return Ok(gross.to_vec());
    }
    Ok(gross
        .iter()
        .zip(trades)
        .map(|(&y, &trade)| {
            let cost = c * trade;
            if cost == 0.0 {
                y
            } else {
                (1.0 - cost) * (1.0 + y) - 1.0
            }
        })
        .collect())
}

/// Result of the one-sided Sharpe-ratio difference test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SrTest {
    pub sharpe_a: f64,
    pub sharpe_b: f64,
    pub statistic: f64,
    pub p_value: f64,
    pub lag: usize,
}

/// Standard normal upper tail `1 - Φ(x)`.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x / core::f64::consts::SQRT_2)
}

/// Tests `SR_a <= SR_b` against `SR_a > SR_b` with the delta method on the
/// moments `(a, b, a², b²)` and a Bartlett-kernel HAC covariance with lag
/// `floor(T^(1/3))`.
pub fn sr_test(a: &[f64], b: &[f64]) -> Result<SrTest> {
    if a.len() != b.len() {
        return Err(CrownError::AlignmentError(format!(
            "series lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < SR_TEST_MIN_LEN {
        return Err(CrownError::SeriesTooShort {
            len: n,
            min: SR_TEST_MIN_LEN,
        });
    }
    let nf = n as f64;
    let mean_a = compensated_sum(a.iter().copied()) / nf;
    let mean_b = compensated_sum(b.iter().copied()) / nf;
    let sq_a = compensated_sum(a.iter().map(|x| x * x)) / nf;
    let sq_b = compensated_sum(b.iter().map(|x| x * x)) / nf;
    let var_a = sq_a - mean_a * mean_a;
    let var_b = sq_b - mean_b * mean_b;
    if var_a <= ZERO_VARIANCE_TOL {
        return Err(CrownError::ZeroRisk(var_a));
    }
    if var_b <= ZERO_VARIANCE_TOL {
        return Err(CrownError::ZeroRisk(var_b));
    }
    let sd_a = linalg::sqrt(var_a);
    let sd_b = linalg::sqrt(var_b);
    let sharpe_a = mean_a / sd_a;
    let sharpe_b = mean_b / sd_b;
    let lag = libm::floor(libm::cbrt(nf) + 1e-9) as usize;
    let diff = sharpe_a - sharpe_b;
    if diff == 0.0 {
        return Ok(SrTest {
            sharpe_a,
            sharpe_b,
            statistic: 0.0,
            p_value: 0.5,
            lag,
        });
    }

    let grad = [
        sq_a / (var_a * sd_a),
        -sq_b / (var_b * sd_b),
        -mean_a / (2.0 * var_a * sd_a),
        mean_b / (2.0 * var_b * sd_b),
    ];
    // Project each moment deviation on the gradient, then apply the kernel to
    // the resulting scalar series.
    let scores: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            grad[0] * (x - mean_a) + grad[1] * (y - mean_b) + grad[2] * (x * x - sq_a) + grad[3] * (y * y - sq_b)
        })
        .collect();
    let autocov = |j: usize| compensated_sum((j..n).map(|t| scores[t] * scores[t - j])) / nf;
    let mut long_run = autocov(0);
    for j in 1..=lag {
        let weight = 1.0 - j as f64 / (lag as f64 + 1.0);
        long_run += 2.0 * weight * autocov(j);
    }
    if !(long_run > 0.0) {
        return Err(CrownError::DegenerateDenominator {
            name: "Sharpe difference variance",
            value: long_run,
        });
    }
    let statistic = diff / linalg::sqrt(long_run / nf);
    Ok(SrTest {
        sharpe_a,
        sharpe_b,
        statistic,
        p_value: normal_sf(statistic),
        lag,
    })
}
