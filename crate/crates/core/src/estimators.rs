//! Point estimators: one-sample Wald ratio, the multiply robust
//! semiparametric estimator, the two-sample Wald ratio, and the OLS and
//! standard-IV comparators.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{cell_sign, CellTable, Dataset};
use crate::error::{Error, Result};
use crate::nuisance::NuisanceFit;
use crate::regression::{design_matrix, fit_linear};

/// Normal critical value for 95% intervals.
pub const Z_95: f64 = 1.96;

/// |delta_D| at or below this is treated as parallel exposure trends.
pub const DEGENERATE_TREND_TOL: f64 = 1e-12;

fn interval(center: f64, se: f64, crit: f64) -> [f64; 2] {
    [center - crit * se, center + crit * se]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaldEstimate {
    pub beta: f64,
    pub delta_y: f64,
    pub delta_d: f64,
    pub se: f64,
    pub ci95: [f64; 2],
}

impl WaldEstimate {
    pub fn ci(&self, crit: f64) -> [f64; 2] {
        interval(self.beta, self.se, crit)
    }
}

pub(crate) fn check_trend(delta_d: f64) -> Result<()> {
    if delta_d.abs() <= DEGENERATE_TREND_TOL || !delta_d.is_finite() {
        Err(Error::DegenerateTrend { delta_d })
    } else {
        Ok(())
    }
}

pub(crate) fn require_two_per_cell(cells: &CellTable) -> Result<()> {
    for c in cells.cells() {
        if c.n_cell < 2 {
            return Err(Error::CellTooSmall { t: c.t, z: c.z, n: c.n_cell });
        }
    }
    Ok(())
}

/// Sum over cells of Var(Y - b_t D | t, z) / n_cell, where `slope(t)` gives b_t.
pub(crate) fn residual_variance_sum(cells: &CellTable, slope: impl Fn(u8) -> f64) -> f64 {
    cells
        .cells()
        .iter()
        .map(|c| {
            let b = slope(c.t);
            let v = c.var_y - 2.0 * b * c.cov_yd + b * b * c.var_d;
            v.max(0.0) / c.n_cell as f64
        })
        .sum()
}

/// Ratio of the outcome and exposure double differences, with the
/// per-cell plug-in variance.
pub fn wald_estimate(cells: &CellTable) -> Result<WaldEstimate> {
    if !cells.cov_available() {
        return Err(Error::InvalidConfig(
            "one-sample Wald needs microdata cell summaries; use the two-sample estimator".into(),
        ));
    }
    let delta_y = cells.delta_y();
    let delta_d = cells.delta_d();
    check_trend(delta_d)?;
    require_two_per_cell(cells)?;
    let beta = delta_y / delta_d;
    let se = (residual_variance_sum(cells, |_| beta) / (delta_d * delta_d)).sqrt();
    Ok(WaldEstimate { beta, delta_y, delta_d, se, ci95: interval(beta, se, Z_95) })
}

/// Ratio estimator from an outcome sample and an independent exposure sample.
pub fn two_sample_estimate(outcome: &CellTable, exposure: &CellTable) -> Result<WaldEstimate> {
    let delta_y = outcome.delta_y();
    let delta_d = exposure.delta_d();
    check_trend(delta_d)?;
    let beta = delta_y / delta_d;
    let sum: f64 = outcome
        .cells()
        .iter()
        .zip(exposure.cells())
        .map(|(o, e)| o.se_mean_y.powi(2) + beta * beta * e.se_mean_d.powi(2))
        .sum();
    let se = sum.sqrt() / delta_d.abs();
    Ok(WaldEstimate { beta, delta_y, delta_d, se, ci95: interval(beta, se, Z_95) })
}

/// Basis V(x) of a linear-in-parameters working model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    /// V = (1).
    Constant,
    /// V = (1, x_j for j in the listed covariate indices).
    Linear(Vec<usize>),
}

pub type WeightClosure = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Weight function w(V) of the projection.
#[derive(Clone, Default)]
pub enum WeightFn {
    #[default]
    Unit,
    Custom(WeightClosure),
}

impl fmt::Debug for WeightFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightFn::Unit => f.write_str("Unit"),
            WeightFn::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl WeightFn {
    fn eval(&self, v: &[f64]) -> f64 {
        match self {
            WeightFn::Unit => 1.0,
            WeightFn::Custom(f) => f(v),
        }
    }
}

/// Working model beta(v; psi) = V' psi, fit by weighted projection.
#[derive(Debug, Clone)]
pub struct WorkingModel {
    pub basis: Basis,
    pub weight: WeightFn,
}

impl WorkingModel {
    pub fn constant() -> Self {
        WorkingModel { basis: Basis::Constant, weight: WeightFn::Unit }
    }

    /// Intercept plus the covariates at `indices`.
    pub fn linear(indices: Vec<usize>) -> Self {
        WorkingModel { basis: Basis::Linear(indices), weight: WeightFn::Unit }
    }

    pub fn with_weight(mut self, w: WeightFn) -> Self {
        self.weight = w;
        self
    }

    pub fn dim(&self) -> usize {
        match &self.basis {
            Basis::Constant => 1,
            Basis::Linear(idx) => 1 + idx.len(),
        }
    }

    pub fn fill_basis(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.push(1.0);
        if let Basis::Linear(idx) = &self.basis {
            out.extend(idx.iter().map(|&j| x[j]));
        }
    }
}

/// Tuning knobs for the semiparametric estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemiparOptions {
    /// Abort when any |delta_D(x_i)| falls below this.
    pub delta_d_floor: f64,
    /// Optional bounds applied to fitted propensities before division.
    pub pi_clamp: Option<(f64, f64)>,
}

impl Default for SemiparOptions {
    fn default() -> Self {
        SemiparOptions { delta_d_floor: 1e-6, pi_clamp: None }
    }
}

#[derive(Debug, Clone)]
pub struct PsiEstimate {
    pub psi: Vec<f64>,
    /// Plug-in sandwich covariance of psi-hat (already divided by n).
    pub covariance: DMatrix<f64>,
    pub se: Vec<f64>,
    /// Rows are the estimating-function values at psi-hat.
    pub per_obs_influence: DMatrix<f64>,
    pub n: usize,
}

impl PsiEstimate {
    pub fn ci(&self, j: usize, crit: f64) -> [f64; 2] {
        interval(self.psi[j], self.se[j], crit)
    }
}

/// Solves the empirical efficient-influence-function equation for a
/// linear working model in closed form.
pub fn semiparametric_estimate(
    data: &Dataset,
    wm: &WorkingModel,
    nuisance: &NuisanceFit,
    opts: &SemiparOptions,
) -> Result<PsiEstimate> {
    if let Basis::Linear(idx) = &wm.basis {
        if let Some(&bad) = idx.iter().find(|&&j| j >= data.p()) {
            return Err(Error::InvalidConfig(format!("working model covariate index {bad} out of range")));
        }
    }
    let n = data.n();
    let k = wm.dim();
    let mut buf = Vec::with_capacity(16);
    let mut target = Vec::with_capacity(n);
    let mut too_small = 0usize;
    for r in data.rows() {
        let x = &r.x;
        let delta_d = nuisance.mu_d.double_difference(x, &mut buf);
        if delta_d.is_nan() || delta_d.abs() < opts.delta_d_floor {
            too_small += 1;
            target.push(0.0);
            continue;
        }
        let ratio = nuisance.mu_y.double_difference(x, &mut buf) / delta_d;
        let mut pi = nuisance.pi.predict_with(r.t, r.z, x, &mut buf);
        if let Some((lo, hi)) = opts.pi_clamp {
            pi = pi.clamp(lo, hi);
        }
        let mu_y = nuisance.mu_y.predict_with(r.t, r.z, x, &mut buf);
        let mu_d = nuisance.mu_d.predict_with(r.t, r.z, x, &mut buf);
        let resid = r.y - mu_y - ratio * (r.d as f64 - mu_d);
        let augmentation = cell_sign(r.t, r.z) / (pi * delta_d) * resid;
        target.push(ratio + augmentation);
    }
    if too_small > 0 {
        return Err(Error::DeltaDNearZero(too_small));
    }

    let rows = data.rows();
    let basis = design_matrix(n, k, |i, out| wm.fill_basis(&rows[i].x, out));
    let weights: Option<Vec<f64>> = match &wm.weight {
        WeightFn::Unit => None,
        w => Some((0..n).map(|i| w.eval(basis.row(i).transpose().as_slice())).collect()),
    };
    let fit = fit_linear(&basis, &target, weights.as_deref())?;
    let psi = fit.coefficients.clone();

    // phi_i = w_i V_i (target_i - V_i' psi)
    let mut influence = DMatrix::zeros(n, k);
    for i in 0..n {
        let v = basis.row(i);
        let w = weights.as_ref().map_or(1.0, |w| w[i]);
        let resid = target[i] - v.dot(&psi.transpose());
        for j in 0..k {
            influence[(i, j)] = w * v[j] * resid;
        }
    }
    // With M = -(1/n) sum w V V', cov(psi-hat) = (sum w V V')^{-1} (sum phi phi') (sum w V V')^{-1}.
    let meat = influence.transpose() * &influence;
    let bread = &fit.xtx_inverse;
    let covariance = bread * meat * bread;
    let covariance = (&covariance + covariance.transpose()) * 0.5;
    let se = (0..k).map(|j| covariance[(j, j)].max(0.0).sqrt()).collect();
    Ok(PsiEstimate { psi: psi.iter().copied().collect(), covariance, se, per_obs_influence: influence, n })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineEstimates {
    pub ols_beta: f64,
    pub ols_se: f64,
    pub iv_beta: f64,
    pub iv_se: f64,
}

/// OLS of y on (1, d[, x]) and two-stage least squares instrumenting d by z.
/// Standard errors are the conventional homoskedastic ones.
pub fn baseline_estimates(data: &Dataset, include_covariates: bool) -> Result<BaselineEstimates> {
    let rows = data.rows();
    let n = data.n();
    let p = if include_covariates { data.p() } else { 0 };
    let k = 2 + p;
    let y: Vec<f64> = rows.iter().map(|r| r.y).collect();
    let d: Vec<f64> = rows.iter().map(|r| r.d as f64).collect();

    let with_lead = |lead: &dyn Fn(usize) -> f64| {
        design_matrix(n, k, |i, out| {
            out.clear();
            out.push(1.0);
            out.push(lead(i));
            out.extend_from_slice(&rows[i].x[..p]);
        })
    };

    let ols = fit_linear(&with_lead(&|i| d[i]), &y, None)?;

    let first = fit_linear(&with_lead(&|i| rows[i].z as f64), &d, None).map_err(|e| match e {
        Error::RankDeficient => Error::WeakFirstStage,
        e => e,
    })?;
    let gamma = first.coefficients[1];
    let d_scale = d.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
    if gamma.abs() <= 1e-10 * d_scale {
        return Err(Error::WeakFirstStage);
    }
    let fitted_first = with_lead(&|i| rows[i].z as f64) * &first.coefficients;
    let second = fit_linear(&with_lead(&|i| fitted_first[i]), &y, None).map_err(|e| match e {
        Error::RankDeficient => Error::WeakFirstStage,
        e => e,
    })?;
    // Residuals use the observed exposure, not its first-stage fit.
    let coef: &DVector<f64> = &second.coefficients;
    let ssr: f64 = (0..n)
        .map(|i| {
            let mut pred = coef[0] + coef[1] * d[i];
            for j in 0..p {
                pred += coef[2 + j] * rows[i].x[j];
            }
            (y[i] - pred).powi(2)
        })
        .sum();
    let sigma2 = if n > k { ssr / (n - k) as f64 } else { 0.0 };
    Ok(BaselineEstimates {
        ols_beta: ols.coefficients[1],
        ols_se: ols.coefficient_se(1),
        iv_beta: coef[1],
        iv_se: (sigma2 * second.xtx_inverse[(1, 1)]).sqrt(),
    })
}
