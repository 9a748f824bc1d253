//! Calibrated three-factor return generator and Monte Carlo scoring against
//! population-optimal portfolios.

use std::collections::BTreeMap;

use crown_core::linalg::compensated_sum;
use crown_core::metrics::{estimation_errors, portfolio_stats, tracking_error};
use crown_core::nodewise::{CvSettings, LambdaRule, NodewiseConfig};
use crown_core::portfolio::{
    estimate_kappa, portfolio_weights, unconstrained_weights, ConstraintSpec, PortfolioWeights, Regime, RiskTolerance,
};
use crown_core::precision::{invert_population, population_sigma_y, ReturnPrecision};
use crown_core::{CrownError, FactorPanel, ReturnPanel};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::estimate_window;

/// Idiosyncratic error covariance design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorDesign {
    /// `rho^|i-j|`.
    Toeplitz { rho: f64 },
    /// `1 / (1 + |i-j|)^tau`.
    Dense { tau: f64 },
}

impl ErrorDesign {
    pub fn covariance(&self, p: usize) -> DMatrix<f64> {
        DMatrix::from_fn(p, p, |i, j| {
            let lag = i.abs_diff(j) as f64;
            match *self {
                ErrorDesign::Toeplitz { rho } => rho.powf(lag),
                ErrorDesign::Dense { tau } => (1.0 + lag).powf(-tau),
            }
        })
    }
}

/// How `c_f` enters the factor recursion.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarForm {
    /// `f_t = c_f + Π f_{t-1} + e_t`, so `E f = (I - Π)^-1 c_f`.
    Intercept,
    /// `f_t - c_f = Π (f_{t-1} - c_f) + e_t`, so `E f = c_f`.
    #[default]
    Mean,
}

/// Parameters of the factor return generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub mu_b: [f64; 3],
    pub sigma_b: [[f64; 3]; 3],
    pub c_f: [f64; 3],
    pub pi_f: [[f64; 3]; 3],
    pub sigma_f: [[f64; 3]; 3],
    pub error_design: ErrorDesign,
    #[serde(default)]
    pub var_form: VarForm,
    pub p: usize,
    pub t: usize,
    pub seed: u64,
}

/// Calibrated parameters at `p = 80`, `T = 100`, Toeplitz errors with `rho = 0.25`.
pub fn default_dgp() -> DgpSpec {
    DgpSpec {
        mu_b: [1.0166, 0.5799, 0.2937],
        sigma_b: [
            [0.0089, 0.0013, 0.0046],
            [0.0013, 0.2188, -0.0134],
            [0.0046, -0.0134, 0.1491],
        ],
        c_f: [0.0445, 0.0060, 0.0021],
        pi_f: [
            [-0.1204, 0.1555, -0.0324],
            [-0.0074, -0.0378, 0.00318],
            [-0.0027, 0.0031, 0.01669],
        ],
        sigma_f: [
            [1.5016, 0.1338, 0.1682],
            [0.1338, 0.3667, -0.0310],
            [0.1682, -0.0310, 0.6017],
        ],
        error_design: ErrorDesign::Toeplitz { rho: 0.25 },
        var_form: VarForm::Mean,
        p: 80,
        t: 100,
        seed: 0,
    }
}

fn mat3(rows: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| rows[i][j])
}

impl DgpSpec {
    pub fn with_size(mut self, p: usize, t: usize) -> Self {
        self.p = p;
        self.t = t;
        self
    }

    pub fn sigma_f(&self) -> Matrix3<f64> {
        mat3(&self.sigma_f)
    }

    pub fn pi_f(&self) -> Matrix3<f64> {
        mat3(&self.pi_f)
    }

    /// `Σ_f - Π Σ_f Π'`, the innovation covariance that keeps `Σ_f` stationary.
    pub fn innovation_cov(&self) -> Matrix3<f64> {
        let pi = self.pi_f();
        let s = self.sigma_f() - pi * self.sigma_f() * pi.transpose();
        (s + s.transpose()) * 0.5
    }

    pub fn spectral_radius(&self) -> f64 {
        self.pi_f()
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    /// Stationary factor mean: `(I - Π)^-1 c_f`, or `c_f` itself in mean form.
    pub fn factor_mean(&self) -> Result<Vector3<f64>> {
        if self.var_form == VarForm::Mean {
            return Ok(Vector3::from(self.c_f));
        }
        let a = Matrix3::identity() - self.pi_f();
        let c = Vector3::from(self.c_f);
        a.lu().solve(&c).ok_or(Error::NonStationary(self.spectral_radius()))
    }

    pub fn validate(&self) -> Result<()> {
        let radius = self.spectral_radius();
        if !(radius < 1.0) {
            return Err(Error::NonStationary(radius));
        }
        let smallest = self.innovation_cov().symmetric_eigenvalues().min();
        if smallest < 0.0 {
            return Err(Error::InnovationCovariance(smallest));
        }
        if self.p < 2 || self.t < 2 {
            return Err(Error::Config(format!(
                "need p >= 2 and T >= 2, got p = {}, T = {}",
                self.p, self.t
            )));
        }
        if mat3(&self.sigma_b).cholesky().is_none() || self.sigma_f().cholesky().is_none() {
            return Err(Error::Config(
                "loading and factor covariances must be positive definite".into(),
            ));
        }
        Ok(())
    }
}

/// Population quantities for one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationMoments {
    pub mu: DVector<f64>,
    pub sigma_y: DMatrix<f64>,
    pub loadings: DMatrix<f64>,
    pub sigma_u: DMatrix<f64>,
}

/// Draws reused across replications of the same design.
#[derive(Debug, Clone)]
pub struct Sampler {
    spec: DgpSpec,
    sigma_u: DMatrix<f64>,
    chol_u: DMatrix<f64>,
    chol_b: Matrix3<f64>,
    chol_e: Matrix3<f64>,
    chol_f: Matrix3<f64>,
    factor_mean: Vector3<f64>,
}

/// Lower Cholesky factor of a PSD 3x3 matrix, tolerating an exactly singular input.
fn chol3(m: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    if let Some(c) = m.cholesky() {
        return Ok(c.l());
    }
    let eig = m.symmetric_eigen();
    if eig.eigenvalues.min() < -1e-12 {
        return Err(Error::InnovationCovariance(eig.eigenvalues.min()));
    }
    let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(eig.eigenvectors * Matrix3::from_diagonal(&root))
}

impl Sampler {
    pub fn new(spec: &DgpSpec) -> Result<Self> {
        spec.validate()?;
        let sigma_u = spec.error_design.covariance(spec.p);
        let chol_u = sigma_u
            .clone()
            .cholesky()
            .ok_or(Error::Config(
                "idiosyncratic covariance is not positive definite".into(),
            ))?
            .l();
        Ok(Self {
            chol_u,
            sigma_u,
            chol_b: chol3(&mat3(&spec.sigma_b))?,
            chol_e: chol3(&spec.innovation_cov())?,
            chol_f: chol3(&spec.sigma_f())?,
            factor_mean: spec.factor_mean()?,
            spec: spec.clone(),
        })
    }

    pub fn spec(&self) -> &DgpSpec {
        &self.spec
    }

    pub fn sigma_u(&self) -> &DMatrix<f64> {
        &self.sigma_u
    }

    /// Generator for replication `rep`: the master seed picks the key, the
    /// replication picks the stream.
    pub fn rng(&self, rep: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
        rng.set_stream(rep);
        rng
    }

    fn normal3(rng: &mut ChaCha8Rng) -> Vector3<f64> {
        Vector3::from_fn(|_, _| StandardNormal.sample(rng))
    }

    /// Loadings, factor path and returns for replication `rep`.
    pub fn draw(&self, rep: u64) -> (DMatrix<f64>, DMatrix<f64>, PopulationMoments) {
        let (p, t) = (self.spec.p, self.spec.t);
        let mut rng = self.rng(rep);
        let mu_b = Vector3::from(self.spec.mu_b);

        let mut loadings = DMatrix::zeros(p, 3);
        for j in 0..p {
            let b = mu_b + self.chol_b * Self::normal3(&mut rng);
            loadings.row_mut(j).copy_from(&b.transpose());
        }

        // intercept of the recursion in either form
        let pi = self.spec.pi_f();
        let c = self.factor_mean - pi * self.factor_mean;
        let mut factors = DMatrix::zeros(3, t);
        let mut prev = self.factor_mean + self.chol_f * Self::normal3(&mut rng);
        for s in 0..t {
            let f = c + pi * prev + self.chol_e * Self::normal3(&mut rng);
            factors.column_mut(s).copy_from(&f);
            prev = f;
        }

        let z = DMatrix::from_fn(p, t, |_, _| StandardNormal.sample(&mut rng));
        let returns = &loadings * &factors + &self.chol_u * z;

        let sigma_f = DMatrix::from_fn(3, 3, |i, j| self.spec.sigma_f[i][j]);
        let mean_f = DVector::from_column_slice(self.factor_mean.as_slice());
        let moments = PopulationMoments {
            mu: &loadings * mean_f,
            sigma_y: population_sigma_y(&loadings, &sigma_f, &self.sigma_u),
            loadings,
            sigma_u: self.sigma_u.clone(),
        };
        (returns, factors, moments)
    }
}

/// One panel from `spec` (replication stream 0).
pub fn simulate_panel(spec: &DgpSpec) -> Result<(ReturnPanel, FactorPanel, PopulationMoments)> {
    let (y, x, moments) = Sampler::new(spec)?.draw(0);
    Ok((ReturnPanel::from_matrix(y)?, FactorPanel::from_matrix(x)?, moments))
}

/// Closed-form weights at the population mean and covariance.
/// A TE target is turned into `κ` with the population covariance.
pub fn oracle_weights(moments: &PopulationMoments, spec: &ConstraintSpec) -> crown_core::Result<PortfolioWeights> {
    let theta = invert_population(&moments.sigma_y)?;
    let resolved = spec.resolve_kappa(&theta, &moments.mu, &moments.sigma_y)?;
    portfolio_weights(&theta, &moments.mu, &resolved)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Crown,
    Oracle,
    Index,
    Ncon,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Crown => "CROWN",
            Method::Oracle => "Oracle",
            Method::Index => "Index",
            Method::Ncon => "NCON",
        }
    }
}

/// Constraint parameters for one regime; benchmark and `κ` are filled in per replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSetup {
    pub regime: Regime,
    #[serde(default)]
    pub restricted: Vec<usize>,
    /// Defaults to `w_x - 1_R'm`.
    #[serde(default)]
    pub omega: Option<f64>,
    #[serde(default = "default_w_x")]
    pub w_x: f64,
    #[serde(default)]
    pub floor: f64,
    #[serde(default)]
    pub kappa_w: Option<f64>,
}

fn default_w_x() -> f64 {
    0.2
}

impl RegimeSetup {
    /// Default parameters: the first `min(10, p/2)` assets restricted, `w_x = 0.2`.
    pub fn standard(regime: Regime, p: usize) -> Self {
        let restricted = if regime.uses_restrictions() {
            (0..10.min(p / 2).max(1)).collect()
        } else {
            Vec::new()
        };
        Self {
            regime,
            restricted,
            omega: None,
            w_x: default_w_x(),
            floor: 0.0,
            kappa_w: None,
        }
    }

    pub fn to_spec(&self, benchmark: &DVector<f64>, kappa: RiskTolerance) -> ConstraintSpec {
        let omega = self
            .omega
            .unwrap_or_else(|| self.w_x - self.restricted.iter().map(|&i| benchmark[i]).sum::<f64>());
        let mut spec = ConstraintSpec::new(self.regime, benchmark.clone(), kappa)
            .with_restricted(self.restricted.clone())
            .with_omega(omega)
            .with_w_x(self.w_x)
            .with_floor(self.floor);
        spec.kappa_w = self.kappa_w;
        spec
    }
}

/// Penalty selection as written in a config file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaChoice {
    CrossValidation {
        #[serde(default = "default_folds")]
        folds: usize,
        #[serde(default = "default_grid_len")]
        grid_len: usize,
        #[serde(default = "default_min_ratio")]
        min_ratio: f64,
        #[serde(default = "default_patience")]
        patience: usize,
    },
    Fixed(f64),
}

fn default_folds() -> usize {
    10
}
fn default_grid_len() -> usize {
    50
}
fn default_min_ratio() -> f64 {
    1e-3
}
fn default_patience() -> usize {
    CvSettings::default().patience
}

impl Default for LambdaChoice {
    fn default() -> Self {
        LambdaChoice::CrossValidation {
            folds: default_folds(),
            grid_len: default_grid_len(),
            min_ratio: default_min_ratio(),
            patience: default_patience(),
        }
    }
}

impl LambdaChoice {
    pub fn to_config(self) -> NodewiseConfig {
        match self {
            LambdaChoice::CrossValidation {
                folds,
                grid_len,
                min_ratio,
                patience,
            } => NodewiseConfig {
                lambda: LambdaRule::CrossValidation(CvSettings {
                    folds,
                    grid_len,
                    min_ratio,
                    patience,
                }),
                ..NodewiseConfig::default()
            },
            LambdaChoice::Fixed(lambda) => NodewiseConfig::fixed(lambda),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub dgp: DgpSpec,
    pub te_levels: Vec<f64>,
    pub regimes: Vec<RegimeSetup>,
    pub reps: usize,
    pub methods: Vec<Method>,
    #[serde(default)]
    pub lambda: LambdaChoice,
    /// `κ_w` for the unconstrained comparison portfolio.
    #[serde(default = "default_ncon_kappa_w")]
    pub ncon_kappa_w: f64,
    /// Fraction of failed replications above which a cell is not reported.
    #[serde(default = "default_max_failure_rate")]
    pub max_failure_rate: f64,
    /// Where CROWN takes its risk tolerance from.
    #[serde(default)]
    pub crown_kappa: KappaSource,
}

/// Source of `κ` for the estimated portfolio at a given TE target.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KappaSource {
    /// Inverted from the estimated moments, as an investor would.
    #[default]
    Estimated,
    /// The population value shared with the oracle.
    Population,
}

fn default_ncon_kappa_w() -> f64 {
    1.0
}
fn default_max_failure_rate() -> f64 {
    0.05
}

impl MonteCarloConfig {
    /// TE regime at the given size and TE levels, all four methods.
    pub fn tracking_error(p: usize, t: usize, te_levels: Vec<f64>, reps: usize, seed: u64) -> Self {
        let mut dgp = default_dgp().with_size(p, t);
        dgp.seed = seed;
        Self {
            dgp,
            te_levels,
            regimes: vec![RegimeSetup::standard(Regime::TrackingError, p)],
            reps,
            methods: vec![Method::Crown, Method::Oracle, Method::Index, Method::Ncon],
            lambda: LambdaChoice::default(),
            ncon_kappa_w: default_ncon_kappa_w(),
            max_failure_rate: default_max_failure_rate(),
            crown_kappa: KappaSource::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dgp.validate()?;
        if self.reps == 0 {
            return Err(Error::Config("reps must be at least 1".into()));
        }
        if self.te_levels.is_empty() || self.te_levels.iter().any(|te| !(*te > 0.0)) {
            return Err(Error::Config(
                "TE levels must be a nonempty list of positive numbers".into(),
            ));
        }
        if self.regimes.is_empty() || self.methods.is_empty() {
            return Err(Error::Config("need at least one regime and one method".into()));
        }
        let m = equal_weight(self.dgp.p);
        for setup in &self.regimes {
            setup.to_spec(&m, RiskTolerance::Given(1.0)).validate(self.dgp.p)?;
        }
        Ok(())
    }
}

fn equal_weight(p: usize) -> DVector<f64> {
    DVector::from_element(p, 1.0 / p as f64)
}

/// Scores of one portfolio in one replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellScore {
    pub te: f64,
    pub weight_er: f64,
    pub risk_er: f64,
    pub sr_er: f64,
    pub sr: f64,
    pub ret: f64,
    pub risk: f64,
}

/// Diagnostics of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub rep: u64,
    /// `(regime key, TE level, method) -> score`, or the error message.
    pub scores: Vec<(String, f64, Method, std::result::Result<CellScore, String>)>,
    /// Population `κ` per TE level.
    pub kappa: Vec<f64>,
    /// `κ̂` from the estimated moments per TE level, when estimation succeeded.
    pub kappa_hat: Vec<Option<f64>>,
}

fn score(
    w: &DVector<f64>,
    oracle: &DVector<f64>,
    benchmark: &DVector<f64>,
    moments: &PopulationMoments,
) -> crown_core::Result<CellScore> {
    let stats = portfolio_stats(w, &moments.mu, &moments.sigma_y)?;
    let errors = estimation_errors(w, oracle, &moments.mu, &moments.sigma_y)?;
    Ok(CellScore {
        te: tracking_error(w, benchmark, &moments.sigma_y)?,
        weight_er: errors.weight_er,
        risk_er: errors.risk_er,
        sr_er: errors.sr_er,
        sr: stats.sharpe,
        ret: stats.avg_return,
        risk: stats.risk,
    })
}

/// Runs replication `rep` end to end.
pub fn run_replication(config: &MonteCarloConfig, sampler: &Sampler, rep: u64) -> ReplicationRecord {
    let (y, x, moments) = sampler.draw(rep);
    let p = config.dgp.p;
    let m = equal_weight(p);
    let estimate = estimate_window(&y, &x, &config.lambda.to_config());
    if let Err(e) = &estimate {
        log::warn!("replication {rep}: estimation failed: {e}");
    }
    let theta_pop = invert_population(&moments.sigma_y);

    let mut scores = Vec::new();
    let mut kappas = Vec::new();
    let mut kappa_hats = Vec::new();
    for &te in &config.te_levels {
        let kappa = theta_pop
            .as_ref()
            .map_err(|e| e.clone())
            .and_then(|theta| estimate_kappa(theta, &moments.mu, &moments.sigma_y, te));
        kappas.push(*kappa.as_ref().unwrap_or(&f64::NAN));
        let kappa_hat = match &estimate {
            Ok(est) => estimate_kappa(&est.theta, est.mean(), &est.sigma_y_hat(), te),
            Err(e) => Err(e.clone()),
        };
        kappa_hats.push(kappa_hat.as_ref().ok().copied());
        let crown_kappa = match config.crown_kappa {
            KappaSource::Estimated => &kappa_hat,
            KappaSource::Population => &kappa,
        };
        for setup in &config.regimes {
            let spec = kappa.clone().map(|k| setup.to_spec(&m, RiskTolerance::Given(k)));
            let crown_spec = crown_kappa.clone().map(|k| setup.to_spec(&m, RiskTolerance::Given(k)));
            let oracle = match (&theta_pop, &spec) {
                (Ok(theta), Ok(spec)) => portfolio_weights(theta, &moments.mu, spec),
                (Err(e), _) | (_, Err(e)) => Err(e.clone()),
            };
            for &method in &config.methods {
                let weights: crown_core::Result<DVector<f64>> = match method {
                    Method::Oracle => oracle.as_ref().map(|w| w.weights.clone()).map_err(|e| e.clone()),
                    Method::Index => Ok(m.clone()),
                    Method::Crown => match (&estimate, &crown_spec) {
                        (Ok(est), Ok(spec)) => portfolio_weights(&est.theta, est.mean(), spec).map(|w| w.weights),
                        (Err(e), _) | (_, Err(e)) => Err(e.clone()),
                    },
                    Method::Ncon => match &estimate {
                        Ok(est) => {
                            unconstrained_weights(&est.theta, est.mean(), config.ncon_kappa_w).map(|w| w.weights)
                        }
                        Err(e) => Err(e.clone()),
                    },
                };
                let result = match (&weights, &oracle) {
                    (Ok(w), Ok(o)) => score(w, &o.weights, &m, &moments),
                    (Err(e), _) | (_, Err(e)) => Err(e.clone()),
                };
                scores.push((
                    setup.regime.key().to_string(),
                    te,
                    method,
                    result.map_err(|e: CrownError| e.to_string()),
                ));
            }
        }
    }
    ReplicationRecord {
        rep,
        scores,
        kappa: kappas,
        kappa_hat: kappa_hats,
    }
}

/// Averages of one (regime, TE level, method) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub regime: String,
    pub te_target: f64,
    pub method: Method,
    pub reps_ok: usize,
    pub reps_failed: usize,
    /// Set when too many replications failed; averages are then omitted.
    pub aborted: bool,
    pub te: Option<f64>,
    pub weight_er: Option<f64>,
    pub risk_er: Option<f64>,
    pub sr_er: Option<f64>,
    pub sr: Option<f64>,
    pub ret: Option<f64>,
    pub risk: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub config: MonteCarloConfig,
    pub reps: usize,
    pub seed: u64,
    pub cells: Vec<CellSummary>,
    pub replications: Vec<ReplicationRecord>,
}

type CellKey = (usize, usize, usize);

fn summarize(config: &MonteCarloConfig, records: &[ReplicationRecord]) -> Vec<CellSummary> {
    // Cells keyed by position so the output order follows the config.
    let mut buckets: BTreeMap<CellKey, (Vec<CellScore>, usize)> = BTreeMap::new();
    for record in records {
        let mut idx = 0;
        for (ti, _) in config.te_levels.iter().enumerate() {
            for (ri, _) in config.regimes.iter().enumerate() {
                for (mi, _) in config.methods.iter().enumerate() {
                    let entry = buckets.entry((ri, ti, mi)).or_default();
                    match &record.scores[idx].3 {
                        Ok(s) => entry.0.push(*s),
                        Err(_) => entry.1 += 1,
                    }
                    idx += 1;
                }
            }
        }
    }
    buckets
        .into_iter()
        .map(|((ri, ti, mi), (ok, failed))| {
            let total = ok.len() + failed;
            let aborted = ok.is_empty() || failed as f64 > config.max_failure_rate * total as f64;
            if failed > 0 {
                log::warn!(
                    "{} / TE {} / {}: {failed} of {total} replications failed",
                    config.regimes[ri].regime.key(),
                    config.te_levels[ti],
                    config.methods[mi].label()
                );
            }
            let avg = |f: fn(&CellScore) -> f64| {
                if aborted {
                    None
                } else {
                    Some(compensated_sum(ok.iter().map(f)) / ok.len() as f64)
                }
            };
            CellSummary {
                regime: config.regimes[ri].regime.key().to_string(),
                te_target: config.te_levels[ti],
                method: config.methods[mi],
                reps_ok: ok.len(),
                reps_failed: failed,
                aborted,
                te: avg(|s| s.te),
                weight_er: avg(|s| s.weight_er),
                risk_er: avg(|s| s.risk_er),
                sr_er: avg(|s| s.sr_er),
                sr: avg(|s| s.sr),
                ret: avg(|s| s.ret),
                risk: avg(|s| s.risk),
            }
        })
        .collect()
}

/// Runs every replication (in parallel) and averages per cell.
pub fn run_monte_carlo(config: &MonteCarloConfig) -> Result<MonteCarloReport> {
    config.validate()?;
    let sampler = Sampler::new(&config.dgp)?;
    let records: Vec<ReplicationRecord> = (0..config.reps as u64)
        .into_par_iter()
        .map(|rep| {
            log::debug!("replication {rep} started");
            run_replication(config, &sampler, rep)
        })
        .collect();
    let cells = summarize(config, &records);
    Ok(MonteCarloReport {
        config: config.clone(),
        reps: config.reps,
        seed: config.dgp.seed,
        cells,
        replications: records,
    })
}

impl MonteCarloReport {
    pub fn cell(&self, regime: Regime, te: f64, method: Method) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.regime == regime.key() && c.te_target == te && c.method == method)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per cell: regime, TE target, method, TE, Weight-ER, Risk-ER, SR-ER, SR, Return, Risk.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "Regime",
            "TE target",
            "Method",
            "TE",
            "Weight-ER",
            "Risk-ER",
            "SR-ER",
            "SR",
            "Return",
            "Risk",
            "Reps",
            "Failed",
        ])?;
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "NA".into());
        for c in &self.cells {
            w.write_record([
                c.regime.clone(),
                format!("{}", c.te_target),
                c.method.label().to_string(),
                fmt(c.te),
                fmt(c.weight_er),
                fmt(c.risk_er),
                fmt(c.sr_er),
                fmt(c.sr),
                fmt(c.ret),
                fmt(c.risk),
                c.reps_ok.to_string(),
                c.reps_failed.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Smallest absolute entry of `Σ_u^-1` for a design.
pub fn min_abs_precision_entry(design: ErrorDesign, p: usize) -> Option<f64> {
    let sigma = design.covariance(p);
    let theta: ReturnPrecision = invert_population(&sigma).ok()?;
    Some(theta.theta.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min))
}
