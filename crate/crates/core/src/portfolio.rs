//! Closed-form optimal weights for every constraint regime.
//!
//! All estimated formulas use the transposed precision `Θ̂'` (the estimate is
//! not symmetric); for a population `Θ` the transpose is a no-op. The building
//! blocks are
//!
//! * `w_MSR = Θ'μ / 1'Θ'μ` and `a = w_GMV = Θ'1 / 1'Θ'1`,
//! * `k = Θ'1_R / 1'Θ'1_R`, the restricted minimum-variance portfolio,
//! * `w_k = 1_R'k`, `w_a = 1_R'a`, `w_u = 1_R'(w_MSR - a)`,
//! * `l = (k - a) / (w_k - w_a)`, which satisfies `1'l = 0` and `1_R'l = 1`.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{CrownError, Result};
use crate::linalg::{self, indicator};
use crate::precision::ReturnPrecision;

/// Denominators smaller than this in magnitude are rejected.
pub const DENOMINATOR_TOL: f64 = 1e-12;
/// `w_k - w_a` smaller than this in magnitude is rejected.
pub const SPREAD_TOL: f64 = 1e-12;
/// Quadratic forms at or below this are treated as a zero direction.
pub const DIRECTION_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Regime {
    #[cfg_attr(feature = "serde", serde(rename = "te"))]
    TrackingError,
    #[cfg_attr(feature = "serde", serde(rename = "te-eq"))]
    TePlusEqualityWeight,
    #[cfg_attr(feature = "serde", serde(rename = "te-ineq"))]
    TePlusInequalityWeight,
    #[cfg_attr(feature = "serde", serde(rename = "weight"))]
    WeightOnly,
    #[cfg_attr(feature = "serde", serde(rename = "unconstrained"))]
    Unconstrained,
    #[cfg_attr(feature = "serde", serde(rename = "short-sale"))]
    ShortSaleGroup,
}

impl Regime {
    pub const ALL: [Regime; 6] = [
        Regime::TrackingError,
        Regime::TePlusEqualityWeight,
        Regime::TePlusInequalityWeight,
        Regime::WeightOnly,
        Regime::Unconstrained,
        Regime::ShortSaleGroup,
    ];

    /// Whether the regime needs a restricted index set.
    pub fn uses_restrictions(self) -> bool {
        matches!(
            self,
            Regime::TePlusEqualityWeight | Regime::TePlusInequalityWeight | Regime::WeightOnly | Regime::ShortSaleGroup
        )
    }

    /// Whether the regime tracks a benchmark.
    pub fn uses_benchmark(self) -> bool {
        matches!(
            self,
            Regime::TrackingError
                | Regime::TePlusEqualityWeight
                | Regime::TePlusInequalityWeight
                | Regime::ShortSaleGroup
        )
    }

    /// Short command-line name.
    pub fn key(self) -> &'static str {
        match self {
            Regime::TrackingError => "te",
            Regime::TePlusEqualityWeight => "te-eq",
            Regime::TePlusInequalityWeight => "te-ineq",
            Regime::WeightOnly => "weight",
            Regime::Unconstrained => "unconstrained",
            Regime::ShortSaleGroup => "short-sale",
        }
    }

    pub fn from_key(key: &str) -> Option<Regime> {
        Regime::ALL.into_iter().find(|r| r.key() == key)
    }
}

/// Risk tolerance `κ`: given by the investor or backed out of a target TE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RiskTolerance {
    Given(f64),
    TargetTe(f64),
}

/// Constraint regime and its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSpec {
    pub regime: Regime,
    /// Zero-based restricted asset indices `R`.
    pub restricted: Vec<usize>,
    /// Bound on `1_R' w_d` (equality or cap).
    pub omega: f64,
    /// Bound on `1_R' w` in the weight-only regime.
    pub w_x: f64,
    /// Floor on `1_R' w` in the short-sale regime.
    pub floor: f64,
    /// Benchmark `m`.
    pub benchmark: DVector<f64>,
    /// Restricted benchmark `m_R`; defaults to `m`.
    pub restricted_benchmark: Option<DVector<f64>>,
    pub kappa: RiskTolerance,
    /// Variance-tied tolerance for the weight-only and unconstrained regimes; defaults to `κ`.
    pub kappa_w: Option<f64>,
}

impl ConstraintSpec {
    pub fn new(regime: Regime, benchmark: DVector<f64>, kappa: RiskTolerance) -> Self {
        Self {
            regime,
            restricted: Vec::new(),
            omega: 0.0,
            w_x: 0.0,
            floor: 0.0,
            benchmark,
            restricted_benchmark: None,
            kappa,
            kappa_w: None,
        }
    }

    /// Equal-weight benchmark `1/p`.
    pub fn equal_weight(regime: Regime, p: usize, kappa: RiskTolerance) -> Self {
        Self::new(regime, DVector::from_element(p, 1.0 / p as f64), kappa)
    }

    pub fn with_restricted(mut self, restricted: Vec<usize>) -> Self {
        self.restricted = restricted;
        self
    }

    pub fn with_omega(mut self, omega: f64) -> Self {
        self.omega = omega;
        self
    }

    pub fn with_w_x(mut self, w_x: f64) -> Self {
        self.w_x = w_x;
        self
    }

    pub fn with_floor(mut self, floor: f64) -> Self {
        self.floor = floor;
        self
    }

    pub fn with_kappa_w(mut self, kappa_w: f64) -> Self {
        self.kappa_w = Some(kappa_w);
        self
    }

    pub fn n_assets(&self) -> usize {
        self.benchmark.len()
    }

    pub fn restricted_benchmark(&self) -> &DVector<f64> {
        self.restricted_benchmark.as_ref().unwrap_or(&self.benchmark)
    }

    /// Resolved `κ`, failing if only a TE target was given.
    pub fn kappa_value(&self) -> Result<f64> {
        match self.kappa {
            RiskTolerance::Given(k) => Ok(k),
            RiskTolerance::TargetTe(_) => Err(CrownError::KappaUnresolved),
        }
    }

    pub fn kappa_w_value(&self) -> Result<f64> {
        match self.kappa_w {
            Some(k) => Ok(k),
            None => self.kappa_value(),
        }
    }

    /// Replaces a TE target by the implied `κ̂`; an explicit `κ` is kept as is.
    pub fn resolve_kappa(
        &self,
        theta: &ReturnPrecision,
        mu: &DVector<f64>,
        sigma_y_hat: &DMatrix<f64>,
    ) -> Result<ConstraintSpec> {
        match self.kappa {
            RiskTolerance::Given(_) => Ok(self.clone()),
            RiskTolerance::TargetTe(te) => {
                let kappa = estimate_kappa(theta, mu, sigma_y_hat, te)?;
                let mut out = self.clone();
                out.kappa = RiskTolerance::Given(kappa);
                Ok(out)
            }
        }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if self.benchmark.len() != p {
            return Err(CrownError::DimensionMismatch {
                context: "benchmark",
                expected: p,
                actual: self.benchmark.len(),
            });
        }
        if let Some(m_r) = &self.restricted_benchmark {
            if m_r.len() != p {
                return Err(CrownError::DimensionMismatch {
                    context: "restricted benchmark",
                    expected: p,
                    actual: m_r.len(),
                });
            }
        }
        let mut seen = alloc::vec![false; p];
        for &i in &self.restricted {
            if i >= p {
                return Err(CrownError::InvalidConstraint(format!(
                    "restricted index {i} out of range for {p} assets"
                )));
            }
            if seen[i] {
                return Err(CrownError::InvalidConstraint(format!(
                    "restricted index {i} listed twice"
                )));
            }
            seen[i] = true;
        }
        if self.regime.uses_restrictions() && (self.restricted.is_empty() || self.restricted.len() >= p) {
            return Err(CrownError::InvalidConstraint(format!(
                "need 1 <= |R| < p, got |R| = {} with p = {p}",
                self.restricted.len()
            )));
        }
        if self.regime.uses_benchmark() {
            let sum = self.benchmark.sum();
            if (sum - 1.0).abs() > 1e-8 {
                return Err(CrownError::InvalidConstraint(format!(
                    "benchmark weights sum to {sum}, expected 1"
                )));
            }
        }
        if self.regime == Regime::TePlusInequalityWeight && !(self.omega >= 0.0) {
            return Err(CrownError::InvalidConstraint(format!(
                "inequality bound must be nonnegative, got {}",
                self.omega
            )));
        }
        let check_kappa = |k: f64, name: &str| {
            if !(k >= 0.0 && k.is_finite()) {
                Err(CrownError::InvalidConstraint(format!(
                    "{name} must be finite and nonnegative, got {k}"
                )))
            } else {
                Ok(())
            }
        };
        match self.kappa {
            RiskTolerance::Given(k) => check_kappa(k, "kappa")?,
            RiskTolerance::TargetTe(te) => {
                if !(te > 0.0 && te.is_finite()) {
                    return Err(CrownError::InvalidConstraint(format!(
                        "target TE must be positive, got {te}"
                    )));
                }
            }
        }
        if let Some(k) = self.kappa_w {
            check_kappa(k, "kappa_w")?;
        }
        Ok(())
    }
}

/// Restricted-portfolio building blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct RestrictedBlocks {
    pub k_hat: DVector<f64>,
    pub a_hat: DVector<f64>,
    pub l_hat: DVector<f64>,
    pub w_k: f64,
    pub w_a: f64,
    pub w_u: f64,
}

/// Weights plus the diagnostics of how they were formed.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioWeights {
    pub weights: DVector<f64>,
    pub regime_used: Regime,
    /// Inequality regimes only: whether the weight cap was binding.
    pub binding: Option<bool>,
    /// Set when `κ ŵ_u == ω` exactly; the constrained solution is returned.
    pub boundary_tie: bool,
    pub blocks: Option<RestrictedBlocks>,
    pub kappa_used: f64,
}

fn check_denominator(name: &'static str, value: f64) -> Result<f64> {
    if value.abs() <= DENOMINATOR_TOL || !value.is_finite() {
        Err(CrownError::DegenerateDenominator { name, value })
    } else {
        Ok(value)
    }
}

fn check_inputs(theta: &ReturnPrecision, mu: &DVector<f64>) -> Result<usize> {
    let p = theta.dim();
    if theta.theta.ncols() != p || mu.len() != p {
        return Err(CrownError::DimensionMismatch {
            context: "precision / mean",
            expected: p,
            actual: mu.len(),
        });
    }
    Ok(p)
}

/// `Θ'μ / 1'Θ'μ` and `Θ'1 / 1'Θ'1`.
pub fn msr_and_gmv(theta: &ReturnPrecision, mu: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
    let p = check_inputs(theta, mu)?;
    let ones = DVector::from_element(p, 1.0);
    let th_mu = theta.theta.tr_mul(mu);
    let th_one = theta.theta.tr_mul(&ones);
    let s_mu = check_denominator("1'Θ'μ", th_mu.sum())?;
    let s_one = check_denominator("1'Θ'1", th_one.sum())?;
    Ok((th_mu / s_mu, th_one / s_one))
}

fn dot_indicator(v: &DVector<f64>, restricted: &[usize]) -> f64 {
    restricted.iter().map(|&i| v[i]).sum()
}

/// Tracking-error weights `ŵ = κ(w_MSR - w_GMV) + m`.
pub fn te_weights(theta: &ReturnPrecision, mu: &DVector<f64>, spec: &ConstraintSpec) -> Result<PortfolioWeights> {
    let p = check_inputs(theta, mu)?;
    let kappa = spec.kappa_value()?;
    if spec.benchmark.len() != p {
        return Err(CrownError::DimensionMismatch {
            context: "benchmark",
            expected: p,
            actual: spec.benchmark.len(),
        });
    }
    let (msr, gmv) = msr_and_gmv(theta, mu)?;
    let active = (msr - gmv) * kappa;
    Ok(PortfolioWeights {
        weights: active + &spec.benchmark,
        regime_used: Regime::TrackingError,
        binding: None,
        boundary_tie: false,
        blocks: None,
        kappa_used: kappa,
    })
}

/// `k̂, â, l̂, ŵ_k, ŵ_a, ŵ_u` for the restricted set `R`.
pub fn restricted_blocks(theta: &ReturnPrecision, mu: &DVector<f64>, restricted: &[usize]) -> Result<RestrictedBlocks> {
    let p = check_inputs(theta, mu)?;
    if restricted.is_empty() || restricted.len() >= p || restricted.iter().any(|&i| i >= p) {
        return Err(CrownError::InvalidConstraint(format!(
            "need 1 <= |R| < p with valid indices, got |R| = {} with p = {p}",
            restricted.len()
        )));
    }
    let ones = DVector::from_element(p, 1.0);
    let one_r = indicator(p, restricted);
    let th_mu = theta.theta.tr_mul(mu);
    let th_one = theta.theta.tr_mul(&ones);
    let th_r = theta.theta.tr_mul(&one_r);

    let s_r = check_denominator("1'Θ'1_R", th_r.sum())?;
    let s_one = check_denominator("1'Θ'1", th_one.sum())?;
    check_denominator("1_R'Θ'1", dot_indicator(&th_one, restricted))?;
    let s_mu = check_denominator("1'Θ'μ", th_mu.sum())?;

    let k_hat = th_r / s_r;
    let a_hat = th_one / s_one;
    let msr = th_mu / s_mu;
    let w_k = dot_indicator(&k_hat, restricted);
    let w_a = dot_indicator(&a_hat, restricted);
    let w_u = dot_indicator(&msr, restricted) - w_a;
    let spread = w_k - w_a;
    if spread.abs() <= SPREAD_TOL || !spread.is_finite() {
        return Err(CrownError::DegenerateSpread(spread));
    }
    let l_hat = (&k_hat - &a_hat) / spread;
    Ok(RestrictedBlocks {
        k_hat,
        a_hat,
        l_hat,
        w_k,
        w_a,
        w_u,
    })
}

/// Joint TE and equality weight constraint: `ŵ_R = (ω - κŵ_u) l̂ + ŵ_d + m_R`.
pub fn joint_te_equality_weights(
    theta: &ReturnPrecision,
    mu: &DVector<f64>,
    spec: &ConstraintSpec,
) -> Result<PortfolioWeights> {
    let kappa = spec.kappa_value()?;
    let blocks = restricted_blocks(theta, mu, &spec.restricted)?;
    let (msr, gmv) = msr_and_gmv(theta, mu)?;
    let active = (msr - gmv) * kappa;
    let w_cp = &blocks.l_hat * (spec.omega - kappa * blocks.w_u) + active;
    Ok(PortfolioWeights {
        weights: w_cp + spec.restricted_benchmark(),
        regime_used: Regime::TePlusEqualityWeight,
        binding: None,
        boundary_tie: false,
        blocks: Some(blocks),
        kappa_used: kappa,
    })
}

/// Inequality cap `1_R'w_d <= ω`: TE solution when `κŵ_u < ω`, otherwise the
/// joint equality solution (ties are treated as binding and flagged).
pub fn te_inequality_weights(
    theta: &ReturnPrecision,
    mu: &DVector<f64>,
    spec: &ConstraintSpec,
) -> Result<PortfolioWeights> {
    if !(spec.omega >= 0.0) {
        return Err(CrownError::InvalidConstraint(format!(
            "inequality bound must be nonnegative, got {}",
            spec.omega
        )));
    }
    let kappa = spec.kappa_value()?;
    let blocks = restricted_blocks(theta, mu, &spec.restricted)?;
    let signal = kappa * blocks.w_u;
    let mut out = if signal < spec.omega {
        let mut w = te_weights(theta, mu, spec)?;
        w.binding = Some(false);
        w.blocks = Some(blocks);
        w
    } else {
        let mut w = joint_te_equality_weights(theta, mu, spec)?;
        w.binding = Some(true);
        w.boundary_tie = signal == spec.omega;
        if w.boundary_tie {
            log::warn!(
                "inequality regime at the boundary: kappa * w_u == omega == {}",
                spec.omega
            );
        }
        w
    };
    out.regime_used = Regime::TePlusInequalityWeight;
    Ok(out)
}

/// Weight-only constraint (`1'w = 1`, `1_R'w = w_x`, variance penalty).
pub fn weight_only_weights(
    theta: &ReturnPrecision,
    mu: &DVector<f64>,
    spec: &ConstraintSpec,
) -> Result<PortfolioWeights> {
    let p = check_inputs(theta, mu)?;
    let kappa_w = spec.kappa_w_value()?;
    let restricted = &spec.restricted;
    let blocks = restricted_blocks(theta, mu, restricted)?;
    let ones = DVector::from_element(p, 1.0);
    let th_mu = theta.theta.tr_mul(mu);
    let th_one = theta.theta.tr_mul(&ones);
    let th_r = theta.theta.tr_mul(&indicator(p, restricted));
    let b1 = check_denominator("B1 = 1'Θ'μ", th_mu.sum())?;
    let b2 = check_denominator("B2 = 1'Θ'1", th_one.sum())?;
    let b3 = check_denominator("B3 = 1_R'Θ'1", dot_indicator(&th_one, restricted))?;
    let b4 = dot_indicator(&th_r, restricted);
    check_denominator("B4 B2 - B3^2", b4 * b2 - b3 * b3)?;

    let msr = th_mu / b1;
    let tilt = (msr - &blocks.a_hat) * kappa_w + &blocks.l_hat * (spec.w_x - kappa_w * blocks.w_u);
    let base = &blocks.a_hat - &blocks.l_hat * (b3 / b2);
    Ok(PortfolioWeights {
        weights: tilt + base,
        regime_used: Regime::WeightOnly,
        binding: None,
        boundary_tie: false,
        blocks: Some(blocks),
        kappa_used: kappa_w,
    })
}

/// Fully invested, otherwise unconstrained: `κ_w(w_MSR - a) + a`.
pub fn unconstrained_weights(theta: &ReturnPrecision, mu: &DVector<f64>, kappa_w: f64) -> Result<PortfolioWeights> {
    let (msr, gmv) = msr_and_gmv(theta, mu)?;
    let weights = (msr - &gmv) * kappa_w + gmv;
    Ok(PortfolioWeights {
        weights,
        regime_used: Regime::Unconstrained,
        binding: None,
        boundary_tie: false,
        blocks: None,
        kappa_used: kappa_w,
    })
}

/// Turns a floor `1_R'w >= floor` into a cap on the complement:
/// returns `R^c` and the cap `1 - floor`.
pub fn short_sale_transform(r_floor: &[usize], p: usize, floor: f64) -> Result<(Vec<usize>, f64)> {
    if r_floor.is_empty() {
        return Err(CrownError::InvalidConstraint("floor set must not be empty".into()));
    }
    if let Some(&bad) = r_floor.iter().find(|&&i| i >= p) {
        return Err(CrownError::InvalidConstraint(format!(
            "floor index {bad} out of range for {p} assets"
        )));
    }
    let mut inside = alloc::vec![false; p];
    for &i in r_floor {
        inside[i] = true;
    }
    let complement: Vec<usize> = (0..p).filter(|&i| !inside[i]).collect();
    if complement.is_empty() {
        return Err(CrownError::EmptyComplement);
    }
    Ok((complement, 1.0 - floor))
}

/// Floor on a group of assets, realized as an inequality cap on the complement.
pub fn short_sale_weights(
    theta: &ReturnPrecision,
    mu: &DVector<f64>,
    spec: &ConstraintSpec,
) -> Result<PortfolioWeights> {
    let (complement, cap) = short_sale_transform(&spec.restricted, theta.dim(), spec.floor)?;
    let mut capped = spec.clone();
    capped.regime = Regime::TePlusInequalityWeight;
    capped.restricted = complement;
    capped.omega = cap;
    let mut out = te_inequality_weights(theta, mu, &capped)?;
    out.regime_used = Regime::ShortSaleGroup;
    Ok(out)
}

/// Dispatches on `spec.regime`.
pub fn portfolio_weights(
    theta: &ReturnPrecision,
    mu: &DVector<f64>,
    spec: &ConstraintSpec,
) -> Result<PortfolioWeights> {
    spec.validate(theta.dim())?;
    match spec.regime {
        Regime::TrackingError => te_weights(theta, mu, spec),
        Regime::TePlusEqualityWeight => joint_te_equality_weights(theta, mu, spec),
        Regime::TePlusInequalityWeight => te_inequality_weights(theta, mu, spec),
        Regime::WeightOnly => weight_only_weights(theta, mu, spec),
        Regime::Unconstrained => unconstrained_weights(theta, mu, spec.kappa_w_value()?),
        Regime::ShortSaleGroup => short_sale_weights(theta, mu, spec),
    }
}

/// `κ̂ = TE / sqrt((ŵ_MSR - ŵ_GMV)' Σ̂_y (ŵ_MSR - ŵ_GMV))`.
pub fn estimate_kappa(
    theta: &ReturnPrecision,
    mu: &DVector<f64>,
    sigma_y_hat: &DMatrix<f64>,
    target_te: f64,
) -> Result<f64> {
    let p = check_inputs(theta, mu)?;
    if sigma_y_hat.nrows() != p || sigma_y_hat.ncols() != p {
        return Err(CrownError::DimensionMismatch {
            context: "sigma_y",
            expected: p,
            actual: sigma_y_hat.nrows(),
        });
    }
    if !(target_te > 0.0) {
        return Err(CrownError::InvalidConstraint(format!(
            "target TE must be positive, got {target_te}"
        )));
    }
    let (msr, gmv) = msr_and_gmv(theta, mu)?;
    let d = msr - gmv;
    let q = linalg::quad_form(&d, sigma_y_hat, &d);
    if !(q > DIRECTION_TOL) {
        return Err(CrownError::DegenerateDirection(q));
    }
    Ok(target_te / linalg::sqrt(q))
}
