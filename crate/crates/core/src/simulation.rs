//! Simulation study: the two data-generating cases, correct and
//! misspecified nuisance specifications, and a parallel Monte Carlo engine
//! reporting bias, SD, median SE and coverage per scenario and estimator.
//!
//! Data generation, per row:
//!
//! ```text
//! T ~ Bernoulli(0.5), X ~ N(0, 1)
//! Z ~ Bernoulli(0.5)                      (case 1)
//! Z ~ Bernoulli(expit(X / 2))             (case 2)
//! U_t = t + TN(0, 1, (-1, 1)), eps_t ~ N(0, 1)          for t = 0, 1
//! D_t ~ Bernoulli((Z + 1) U_t / 8 + 1/2)
//! Y_t = (1 + X) D_t + 2 + 2 U_t + Z + X + eps_t
//! D = D_T, Y = Y_T
//! ```
//!
//! The average effect of D on Y is E(1 + X) = 1, and so is every target
//! parameter reported here (beta, psi, and both coefficients of the linear
//! working model psi_1 + psi_2 x).

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{cell_table, Dataset, Observation};
use crate::error::{Error, Result};
use crate::estimators::{baseline_estimates, semiparametric_estimate, wald_estimate, SemiparOptions, WorkingModel, Z_95};
use crate::inference::{percentile_bootstrap, BootstrapConfig};
use crate::numeric::{compensated_sum, expit, median, normal_cdf, normal_quantile, sample_sd};
use crate::nuisance::{fit_nuisance, ConditionalMean, NuisanceFit, NuisanceSpecs, Propensity};
use crate::regression::{DesignKind, DesignSpec};
use crate::rng::{derive_seed, stream, StreamRng};

/// Every target parameter of the simulation equals one.
pub const TRUE_EFFECT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Case {
    /// Instrument independent of the covariate.
    Case1,
    /// P(Z = 1 | X) = expit(X / 2).
    Case2,
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Case::Case1 => "case1",
            Case::Case2 => "case2",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DgpCase {
    pub case: Case,
    pub n: usize,
}

impl DgpCase {
    pub fn new(case: Case, n: usize) -> Result<Self> {
        if n < 8 {
            return Err(Error::InvalidConfig("simulated sample size must be at least 8".into()));
        }
        Ok(DgpCase { case, n })
    }
}

/// Inverse-CDF draw from N(0, 1) truncated to (-1, 1).
pub fn sample_truncated_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let lo = normal_cdf(-1.0);
    let hi = normal_cdf(1.0);
    truncated_normal_from_uniform(open_unit(rng), lo, hi)
}

fn truncated_normal_from_uniform(u: f64, cdf_lo: f64, cdf_hi: f64) -> f64 {
    normal_quantile(cdf_lo + u * (cdf_hi - cdf_lo)).clamp(-1.0 + f64::EPSILON, 1.0 - f64::EPSILON)
}

/// Uniform on the open interval (0, 1).
fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    ((rng.random::<u64>() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// P(D_t = 1 | U_t, Z).
pub fn exposure_probability(z: u8, u: f64) -> f64 {
    (z as f64 + 1.0) * u / 8.0 + 0.5
}

/// One simulated unit with both potential time points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentUnit {
    pub t: u8,
    pub x: f64,
    pub z: u8,
    pub u: [f64; 2],
    pub eps: [f64; 2],
    pub p_exposure: [f64; 2],
    pub d: [u8; 2],
    pub y: [f64; 2],
}

impl LatentUnit {
    pub fn observed(&self) -> Observation {
        let t = self.t as usize;
        Observation::new(self.t, self.z, self.d[t], self.y[t], vec![self.x])
    }
}

/// Draws units including both time points' latent variables. The draw
/// order per unit is fixed: T, X, Z, then (U, eps, D) for t = 0 and t = 1.
pub fn generate_latent(dgp: &DgpCase, rng: &mut StreamRng) -> Vec<LatentUnit> {
    let lo = normal_cdf(-1.0);
    let hi = normal_cdf(1.0);
    (0..dgp.n)
        .map(|_| {
            let t = (rng.random::<f64>() < 0.5) as u8;
            let x: f64 = rng.sample(StandardNormal);
            let pz = match dgp.case {
                Case::Case1 => 0.5,
                Case::Case2 => expit(0.5 * x),
            };
            let z = (rng.random::<f64>() < pz) as u8;
            let mut unit = LatentUnit { t, x, z, u: [0.0; 2], eps: [0.0; 2], p_exposure: [0.0; 2], d: [0; 2], y: [0.0; 2] };
            for time in 0..2 {
                let u = time as f64 + truncated_normal_from_uniform(open_unit(rng), lo, hi);
                let eps: f64 = rng.sample(StandardNormal);
                let p = exposure_probability(z, u);
                let d = (rng.random::<f64>() < p) as u8;
                unit.u[time] = u;
                unit.eps[time] = eps;
                unit.p_exposure[time] = p;
                unit.d[time] = d;
                unit.y[time] = (1.0 + x) * d as f64 + 2.0 + 2.0 * u + z as f64 + x + eps;
            }
            unit
        })
        .collect()
}

/// Observed data (t, z, d, y, x) for one replication.
pub fn generate_case_data(dgp: &DgpCase, rng: &mut StreamRng) -> Dataset {
    let rows = generate_latent(dgp, rng).iter().map(LatentUnit::observed).collect();
    Dataset::from_trusted(rows, vec!["x".into()])
}

/// Which nuisance models are correctly specified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Scenario {
    pub pi: bool,
    pub mu_d: bool,
    pub mu_y: bool,
}

impl Scenario {
    pub const fn new(pi: bool, mu_d: bool, mu_y: bool) -> Self {
        Scenario { pi, mu_d, mu_y }
    }

    /// Whether the semiparametric estimator is consistent: the propensity
    /// and exposure models are right, or both conditional means are.
    pub fn is_consistent(&self) -> bool {
        (self.pi && self.mu_d) || (self.mu_d && self.mu_y)
    }

    pub fn specs(&self) -> NuisanceSpecs {
        NuisanceSpecs {
            mu_y: if self.mu_y { CORRECT_MU } else { MISSPECIFIED_MU_Y },
            mu_d: if self.mu_d { CORRECT_MU } else { MISSPECIFIED_MU_D },
            pi: if self.pi { CORRECT_PI } else { MISSPECIFIED_PI },
        }
    }

    /// Scenario rows of the case-1 table; the propensity is always correct there.
    pub fn case1_defaults() -> Vec<Scenario> {
        vec![
            Scenario::new(true, true, true),
            Scenario::new(true, false, true),
            Scenario::new(true, true, false),
            Scenario::new(true, false, false),
        ]
    }

    pub fn case2_defaults() -> Vec<Scenario> {
        vec![
            Scenario::new(true, true, true),
            Scenario::new(false, true, true),
            Scenario::new(true, false, true),
            Scenario::new(true, true, false),
            Scenario::new(false, false, true),
            Scenario::new(false, true, false),
            Scenario::new(true, false, false),
            Scenario::new(false, false, false),
        ]
    }
}

pub const CORRECT_MU: DesignSpec = DesignSpec::new(DesignKind::FullInteractions);
pub const CORRECT_PI: DesignSpec = DesignSpec::new(DesignKind::LogisticPropensity);
pub const MISSPECIFIED_MU_Y: DesignSpec = DesignSpec::exp_half(DesignKind::FullInteractions);
pub const MISSPECIFIED_MU_D: DesignSpec = DesignSpec::new(DesignKind::LogisticMainEffects);
pub const MISSPECIFIED_PI: DesignSpec = DesignSpec::exp_half(DesignKind::LogisticPropensity);

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = [(self.pi, "pi"), (self.mu_d, "mu_D"), (self.mu_y, "mu_Y")]
            .into_iter()
            .filter_map(|(on, name)| on.then_some(name))
            .collect();
        if parts.is_empty() {
            f.write_str("(none)")
        } else {
            write!(f, "({})", parts.join(", "))
        }
    }
}

impl FromStr for Scenario {
    type Err = Error;

    /// Accepts comma-separated model names (`pi`, `mu_d`, `mu_y`),
    /// optionally parenthesized, or `none`.
    fn from_str(s: &str) -> Result<Self> {
        let inner = s.trim().trim_start_matches('(').trim_end_matches(')');
        let mut sc = Scenario::new(false, false, false);
        if inner.trim().eq_ignore_ascii_case("none") || inner.trim().is_empty() {
            return Ok(sc);
        }
        for part in inner.split(',') {
            match part.trim().to_ascii_lowercase().as_str() {
                "pi" => sc.pi = true,
                "mu_d" => sc.mu_d = true,
                "mu_y" => sc.mu_y = true,
                other => return Err(Error::InvalidConfig(format!("unknown nuisance model `{other}` in scenario"))),
            }
        }
        Ok(sc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimEstimator {
    Ols,
    StandardIv,
    Wald,
    SemiparConstant,
    SemiparLinear,
}

impl SimEstimator {
    pub const ALL: [SimEstimator; 5] = [
        SimEstimator::Ols,
        SimEstimator::StandardIv,
        SimEstimator::Wald,
        SimEstimator::SemiparConstant,
        SimEstimator::SemiparLinear,
    ];

    fn is_semiparametric(self) -> bool {
        matches!(self, SimEstimator::SemiparConstant | SimEstimator::SemiparLinear)
    }
}

/// How standard errors of the semiparametric estimators are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SeMethod {
    /// Influence-function sandwich with normal intervals.
    PlugIn,
    /// Percentile bootstrap refitting the nuisance models on each resample.
    Bootstrap { replications: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioGrid {
    pub correct_subsets: Vec<Scenario>,
    pub estimators: Vec<SimEstimator>,
    pub replications: usize,
    pub master_seed: u64,
    pub se_method: SeMethod,
    /// Include the covariate as an exogenous regressor in OLS / standard IV.
    pub baseline_covariates: bool,
    /// Bounds on fitted propensities before division.
    pub pi_clamp: Option<(f64, f64)>,
}

impl ScenarioGrid {
    /// Table layout for `case` with plug-in standard errors.
    pub fn for_case(case: Case, replications: usize, master_seed: u64) -> Self {
        ScenarioGrid {
            correct_subsets: match case {
                Case::Case1 => Scenario::case1_defaults(),
                Case::Case2 => Scenario::case2_defaults(),
            },
            estimators: SimEstimator::ALL.to_vec(),
            replications,
            master_seed,
            se_method: SeMethod::PlugIn,
            baseline_covariates: case == Case::Case2,
            pi_clamp: Some((1e-6, 1.0 - 1e-6)),
        }
    }

    fn validate(&self, dgp: &DgpCase) -> Result<()> {
        if self.replications < 2 {
            return Err(Error::InvalidConfig("Monte Carlo needs at least 2 replications".into()));
        }
        if dgp.case == Case::Case1 && self.correct_subsets.iter().any(|s| !s.pi) {
            return Err(Error::InvalidConfig(
                "case 1 scenarios must keep the propensity model correct".into(),
            ));
        }
        if let SeMethod::Bootstrap { replications } = self.se_method {
            if replications < 2 {
                return Err(Error::InvalidConfig("bootstrap needs at least 2 replications".into()));
            }
        }
        Ok(())
    }
}

/// Estimate with its standard error and interval for one replication.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Draw {
    estimate: f64,
    se: f64,
    ci: [f64; 2],
}

impl Draw {
    fn normal(estimate: f64, se: f64) -> Self {
        Draw { estimate, se, ci: [estimate - Z_95 * se, estimate + Z_95 * se] }
    }
}

/// Key of one output row: scenario (None for scenario-free estimators),
/// estimator, and the component label.
#[derive(Debug, Clone, PartialEq, Eq)]
struct RowKey {
    scenario: Option<Scenario>,
    estimator: SimEstimator,
    component: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloRow {
    pub case: Case,
    /// Scenario label, or `-` for estimators that do not use nuisance models.
    pub scenario: String,
    pub estimator: SimEstimator,
    /// `beta`, `psi`, `psi1`, `psi2`, `ols` or `iv`.
    pub component: String,
    pub bias: f64,
    pub sd: f64,
    pub median_se: f64,
    pub coverage: f64,
    pub successes: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub case: Case,
    pub n: usize,
    pub replications: usize,
    pub master_seed: u64,
    pub rows: Vec<MonteCarloRow>,
}

impl MonteCarloReport {
    /// A run is valid when every row failed on fewer than 1% of replications.
    pub fn is_valid(&self) -> bool {
        self.rows.iter().all(|r| (r.failures as f64) < 0.01 * self.replications as f64)
    }

    pub fn row(&self, scenario: &str, component: &str) -> Option<&MonteCarloRow> {
        self.rows.iter().find(|r| r.scenario == scenario && r.component == component)
    }

    /// CSV with one line per row: case, scenario, estimator, component,
    /// bias, sd, se, cp, successes, failures.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["case", "scenario", "estimator", "component", "bias", "sd", "se", "cp", "successes", "failures"])?;
        for r in &self.rows {
            let estimator = serde_json::to_value(r.estimator)
                .ok()
                .and_then(|v| v.as_str().map(str::to_owned))
                .unwrap_or_default();
            w.write_record([
                r.case.to_string(),
                r.scenario.clone(),
                estimator,
                r.component.clone(),
                format!("{:.6}", r.bias),
                format!("{:.6}", r.sd),
                format!("{:.6}", r.median_se),
                format!("{:.4}", r.coverage),
                r.successes.to_string(),
                r.failures.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn row_keys(grid: &ScenarioGrid) -> Vec<RowKey> {
    let mut keys = Vec::new();
    let has = |e: SimEstimator| grid.estimators.contains(&e);
    for (e, c) in [(SimEstimator::Ols, "ols"), (SimEstimator::StandardIv, "iv"), (SimEstimator::Wald, "beta")] {
        if has(e) {
            keys.push(RowKey { scenario: None, estimator: e, component: c });
        }
    }
    for &s in &grid.correct_subsets {
        if has(SimEstimator::SemiparConstant) {
            keys.push(RowKey { scenario: Some(s), estimator: SimEstimator::SemiparConstant, component: "psi" });
        }
        if has(SimEstimator::SemiparLinear) {
            for c in ["psi1", "psi2"] {
                keys.push(RowKey { scenario: Some(s), estimator: SimEstimator::SemiparLinear, component: c });
            }
        }
    }
    keys
}

/// Nuisance fits for both specifications of each model, fitted once per replication.
struct FitCache {
    mu_y: [Option<Result<ConditionalMean>>; 2],
    mu_d: [Option<Result<ConditionalMean>>; 2],
    pi: [Option<Result<Propensity>>; 2],
}

impl FitCache {
    fn new(data: &Dataset, scenarios: &[Scenario]) -> Self {
        let y: Vec<f64> = data.rows().iter().map(|r| r.y).collect();
        let d: Vec<f64> = data.rows().iter().map(|r| r.d as f64).collect();
        let need = |f: fn(&Scenario) -> bool, correct: bool| scenarios.iter().any(|s| f(s) == correct);
        let idx = |c: bool| if c { 1 } else { 0 };
        let mut cache = FitCache { mu_y: [None, None], mu_d: [None, None], pi: [None, None] };
        for correct in [false, true] {
            if need(|s| s.mu_y, correct) {
                let spec = if correct { CORRECT_MU } else { MISSPECIFIED_MU_Y };
                cache.mu_y[idx(correct)] = Some(ConditionalMean::fit(data, spec, &y));
            }
            if need(|s| s.mu_d, correct) {
                let spec = if correct { CORRECT_MU } else { MISSPECIFIED_MU_D };
                cache.mu_d[idx(correct)] = Some(ConditionalMean::fit(data, spec, &d));
            }
            if need(|s| s.pi, correct) {
                let spec = if correct { CORRECT_PI } else { MISSPECIFIED_PI };
                cache.pi[idx(correct)] = Some(Propensity::fit(data, spec));
            }
        }
        cache
    }

    fn nuisance(&self, s: &Scenario) -> Result<NuisanceFit> {
        fn take<T: Clone>(slot: &Option<Result<T>>) -> Result<T> {
            slot.clone().expect("fit requested for scenario")
        }
        Ok(NuisanceFit {
            mu_y: take(&self.mu_y[s.mu_y as usize])?,
            mu_d: take(&self.mu_d[s.mu_d as usize])?,
            pi: take(&self.pi[s.pi as usize])?,
        })
    }
}

fn semipar_draws(
    data: &Dataset,
    nf: &NuisanceFit,
    wm: &WorkingModel,
    opts: &SemiparOptions,
) -> Result<Vec<Draw>> {
    let est = semiparametric_estimate(data, wm, nf, opts)?;
    Ok(est.psi.iter().zip(&est.se).map(|(&p, &s)| Draw::normal(p, s)).collect())
}

/// Constant and linear working-model draws for one scenario.
type ScenarioDraws = (Scenario, Option<Vec<Draw>>, Option<Vec<Draw>>);

/// All draws of one replication, aligned with `keys`.
fn run_replication(dgp: &DgpCase, grid: &ScenarioGrid, keys: &[RowKey], rep: usize) -> Vec<Option<Draw>> {
    let mut rng = stream(grid.master_seed, rep as u64);
    let data = generate_case_data(dgp, &mut rng);
    let opts = SemiparOptions { pi_clamp: grid.pi_clamp, ..SemiparOptions::default() };
    let has = |e: SimEstimator| grid.estimators.contains(&e);

    let baselines = (has(SimEstimator::Ols) || has(SimEstimator::StandardIv))
        .then(|| baseline_estimates(&data, grid.baseline_covariates).ok())
        .flatten();
    let wald = has(SimEstimator::Wald)
        .then(|| cell_table(&data).and_then(|c| wald_estimate(&c)).ok())
        .flatten();

    let semipar_wanted = grid.estimators.iter().any(|e| e.is_semiparametric());
    let mut per_scenario: Vec<ScenarioDraws> = Vec::new();
    if semipar_wanted {
        let cache = FitCache::new(&data, &grid.correct_subsets);
        for (k, s) in grid.correct_subsets.iter().enumerate() {
            let constant = WorkingModel::constant();
            let linear = WorkingModel::linear(vec![0]);
            let (c, l) = match grid.se_method {
                SeMethod::PlugIn => match cache.nuisance(s) {
                    Ok(nf) => (
                        has(SimEstimator::SemiparConstant).then(|| semipar_draws(&data, &nf, &constant, &opts).ok()).flatten(),
                        has(SimEstimator::SemiparLinear).then(|| semipar_draws(&data, &nf, &linear, &opts).ok()).flatten(),
                    ),
                    Err(_) => (None, None),
                },
                SeMethod::Bootstrap { replications } => {
                    let seed = derive_seed(derive_seed(grid.master_seed, rep as u64), k as u64);
                    bootstrap_draws(&data, &cache, s, &opts, replications, seed)
                }
            };
            per_scenario.push((*s, c, l));
        }
    }

    keys.iter()
        .map(|key| match (key.estimator, key.component) {
            (SimEstimator::Ols, _) => baselines.map(|b| Draw::normal(b.ols_beta, b.ols_se)),
            (SimEstimator::StandardIv, _) => baselines.map(|b| Draw::normal(b.iv_beta, b.iv_se)),
            (SimEstimator::Wald, _) => wald.map(|w| Draw { estimate: w.beta, se: w.se, ci: w.ci95 }),
            (e, comp) => {
                let (_, c, l) = per_scenario.iter().find(|(s, _, _)| Some(*s) == key.scenario)?;
                match (e, comp) {
                    (SimEstimator::SemiparConstant, _) => c.as_ref().map(|v| v[0]),
                    (_, "psi1") => l.as_ref().map(|v| v[0]),
                    _ => l.as_ref().map(|v| v[1]),
                }
            }
        })
        .collect()
}

/// Percentile-bootstrap draws for both working models in one scenario.
fn bootstrap_draws(
    data: &Dataset,
    cache: &FitCache,
    scenario: &Scenario,
    opts: &SemiparOptions,
    replications: usize,
    seed: u64,
) -> (Option<Vec<Draw>>, Option<Vec<Draw>>) {
    let specs = scenario.specs();
    let point = match cache.nuisance(scenario) {
        Ok(nf) => nf,
        Err(_) => return (None, None),
    };
    let statistic = |d: &Dataset| -> Result<Vec<f64>> {
        let nf = fit_nuisance(d, &specs)?;
        let mut v = semiparametric_estimate(d, &WorkingModel::constant(), &nf, opts)?.psi;
        v.extend(semiparametric_estimate(d, &WorkingModel::linear(vec![0]), &nf, opts)?.psi);
        Ok(v)
    };
    let cfg = BootstrapConfig { replications, ..BootstrapConfig::new(seed) };
    let boot = match percentile_bootstrap(data, &statistic, &cfg) {
        Ok(b) => b,
        Err(_) => return (None, None),
    };
    let c = semiparametric_estimate(data, &WorkingModel::constant(), &point, opts).ok();
    let l = semiparametric_estimate(data, &WorkingModel::linear(vec![0]), &point, opts).ok();
    let draw = |j: usize, est: f64| Draw { estimate: est, se: boot.se[j], ci: boot.ci[j] };
    (
        c.map(|c| vec![draw(0, c.psi[0])]),
        l.map(|l| vec![draw(1, l.psi[0]), draw(2, l.psi[1])]),
    )
}

/// Runs `grid.replications` independent replications in parallel and
/// aggregates them in replication order.
pub fn run_monte_carlo(grid: &ScenarioGrid, dgp: &DgpCase) -> Result<MonteCarloReport> {
    grid.validate(dgp)?;
    let keys = row_keys(grid);
    let draws: Vec<Vec<Option<Draw>>> = (0..grid.replications)
        .into_par_iter()
        .map(|rep| run_replication(dgp, grid, &keys, rep))
        .collect();

    let rows = keys
        .iter()
        .enumerate()
        .map(|(k, key)| {
            let ok: Vec<Draw> = draws.iter().filter_map(|d| d[k]).collect();
            let estimates: Vec<f64> = ok.iter().map(|d| d.estimate).collect();
            let ses: Vec<f64> = ok.iter().map(|d| d.se).collect();
            let m = ok.len();
            let (bias, coverage) = if m == 0 {
                (f64::NAN, f64::NAN)
            } else {
                let covered = ok.iter().filter(|d| d.ci[0] <= TRUE_EFFECT && TRUE_EFFECT <= d.ci[1]).count();
                (compensated_sum(estimates.iter().copied()) / m as f64 - TRUE_EFFECT, covered as f64 / m as f64)
            };
            MonteCarloRow {
                case: dgp.case,
                scenario: key.scenario.map_or_else(|| "-".to_owned(), |s| s.to_string()),
                estimator: key.estimator,
                component: key.component.to_owned(),
                bias,
                sd: sample_sd(&estimates),
                median_se: median(&ses),
                coverage,
                successes: m,
                failures: grid.replications - m,
            }
        })
        .collect();
    Ok(MonteCarloReport { case: dgp.case, n: dgp.n, replications: grid.replications, master_seed: grid.master_seed, rows })
}

/// On-disk simulation configuration (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub case: Case,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_replications")]
    pub replications: usize,
    /// Master seed; required before `build`.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Scenario labels such as `"pi, mu_d, mu_y"` or `"none"`.
    #[serde(default)]
    pub scenarios: Option<Vec<String>>,
    #[serde(default)]
    pub estimators: Option<Vec<SimEstimator>>,
    #[serde(default)]
    pub se_method: Option<SeMethod>,
    #[serde(default)]
    pub baseline_covariates: Option<bool>,
    /// Propensity clamp epsilon; predictions are bounded to [eps, 1 - eps].
    #[serde(default)]
    pub pi_clamp: Option<f64>,
    /// Run at n = 100000 with 1000 replications.
    #[serde(default)]
    pub full_scale: bool,
}

fn default_n() -> usize {
    20_000
}

fn default_replications() -> usize {
    500
}

impl SimulationConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn build(&self) -> Result<(ScenarioGrid, DgpCase)> {
        let (n, reps) = if self.full_scale { (100_000, 1000) } else { (self.n, self.replications) };
        let dgp = DgpCase::new(self.case, n)?;
        let seed = self.seed.ok_or_else(|| Error::InvalidConfig("simulation needs an explicit seed".into()))?;
        let mut grid = ScenarioGrid::for_case(self.case, reps, seed);
        if let Some(labels) = &self.scenarios {
            grid.correct_subsets = labels.iter().map(|l| l.parse()).collect::<Result<_>>()?;
        }
        if let Some(e) = &self.estimators {
            grid.estimators = e.clone();
        }
        if let Some(m) = self.se_method {
            grid.se_method = m;
        }
        if let Some(b) = self.baseline_covariates {
            grid.baseline_covariates = b;
        }
        if let Some(eps) = self.pi_clamp {
            if !(0.0..0.5).contains(&eps) {
                return Err(Error::InvalidConfig("pi_clamp must lie in [0, 0.5)".into()));
            }
            grid.pi_clamp = (eps > 0.0).then_some((eps, 1.0 - eps));
        }
        grid.validate(&dgp)?;
        Ok((grid, dgp))
    }
}
