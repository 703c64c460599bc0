//! Weak-identification diagnostic: estimated concentration parameter of
//! the z*t interaction as an instrument, with the rule-of-10 flag.

use serde::{Deserialize, Serialize};

use crate::data::{cell_table, CellTable, Dataset};
use crate::error::{Error, Result};
use crate::estimators::require_two_per_cell;
use crate::regression::{design_matrix, fit_linear};

/// Below this the design is flagged as weakly identified.
pub const WEAK_ID_THRESHOLD: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeakIdMethod {
    FirstStageF,
    SquaredZ,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeakIdReport {
    pub kappa2_estimate: f64,
    pub method: WeakIdMethod,
    pub delta_d: f64,
    pub weak: bool,
    pub covariates_included: bool,
}

impl WeakIdReport {
    pub fn new(kappa2_estimate: f64, method: WeakIdMethod, delta_d: f64, covariates_included: bool) -> Self {
        WeakIdReport {
            kappa2_estimate,
            method,
            delta_d,
            weak: kappa2_estimate < WEAK_ID_THRESHOLD,
            covariates_included,
        }
    }
}

/// First-stage regressors: (1, z, t, zt[, x]).
fn first_stage_design(data: &Dataset, covariates: bool) -> nalgebra::DMatrix<f64> {
    let p = if covariates { data.p() } else { 0 };
    let rows = data.rows();
    design_matrix(data.n(), 4 + p, |i, out| {
        let r = &rows[i];
        let (t, z) = (r.t as f64, r.z as f64);
        out.clear();
        out.extend_from_slice(&[1.0, z, t, z * t]);
        out.extend_from_slice(&r.x[..p]);
    })
}

fn check_microdata(data: &Dataset, covariates: bool) -> Result<f64> {
    let cells = cell_table(data)?;
    require_two_per_cell(&cells)?;
    let k = 4 + if covariates { data.p() } else { 0 };
    if data.n() <= k {
        return Err(Error::CellTooSmall { t: 0, z: 0, n: data.n() });
    }
    Ok(cells.delta_d())
}

/// Squared t-statistic of the zt coefficient in the first-stage regression
/// of d on (1, z, t, zt[, x]), with the homoskedastic OLS variance.
pub fn weak_id_microdata(data: &Dataset, covariates: bool) -> Result<WeakIdReport> {
    let delta_d = check_microdata(data, covariates)?;
    let x = first_stage_design(data, covariates);
    let d: Vec<f64> = data.rows().iter().map(|r| r.d as f64).collect();
    let fit = fit_linear(&x, &d, None)?;
    let coef = fit.coefficients[3];
    let var = fit.residual_variance * fit.xtx_inverse[(3, 3)];
    let kappa2 = if coef == 0.0 { 0.0 } else { coef * coef / var };
    Ok(WeakIdReport::new(kappa2, WeakIdMethod::FirstStageF, delta_d, covariates && data.p() > 0))
}

/// The same statistic through Frisch-Waugh-Lovell: residualize zt on the
/// other regressors, then regress d on the residual.
pub fn weak_id_microdata_fwl(data: &Dataset, covariates: bool) -> Result<WeakIdReport> {
    let delta_d = check_microdata(data, covariates)?;
    let full = first_stage_design(data, covariates);
    let n = data.n();
    let k = full.ncols();
    let zt: Vec<f64> = full.column(3).iter().copied().collect();
    let others = full.clone().remove_column(3);
    let aux = fit_linear(&others, &zt, None)?;
    let fitted = &others * &aux.coefficients;
    let resid: Vec<f64> = (0..n).map(|i| zt[i] - fitted[i]).collect();
    let rr: f64 = resid.iter().map(|r| r * r).sum();
    if rr <= 0.0 {
        return Err(Error::RankDeficient);
    }
    let d: Vec<f64> = data.rows().iter().map(|r| r.d as f64).collect();
    let gamma = resid.iter().zip(&d).map(|(r, d)| r * d).sum::<f64>() / rr;
    // Full-model residuals: d minus its projection on the other regressors minus gamma * R.
    let d_on_others = fit_linear(&others, &d, None)?;
    let d_fit = &others * &d_on_others.coefficients;
    let ssr: f64 = (0..n).map(|i| (d[i] - d_fit[i] - gamma * resid[i]).powi(2)).sum();
    let s2 = ssr / (n - k) as f64;
    let kappa2 = if gamma == 0.0 { 0.0 } else { gamma * gamma * rr / s2 };
    Ok(WeakIdReport::new(kappa2, WeakIdMethod::FirstStageF, delta_d, covariates && data.p() > 0))
}

/// Squared z-score of the exposure double difference from cell summaries.
pub fn weak_id_summary(exposure: &CellTable) -> Result<WeakIdReport> {
    for c in exposure.cells() {
        if c.se_mean_d.is_nan() || c.se_mean_d <= 0.0 {
            return Err(Error::ZeroSe { t: c.t, z: c.z });
        }
    }
    let delta_d = exposure.delta_d();
    let var: f64 = exposure.cells().iter().map(|c| c.se_mean_d * c.se_mean_d).sum();
    Ok(WeakIdReport::new(delta_d * delta_d / var, WeakIdMethod::SquaredZ, delta_d, false))
}

/// Input to [`weak_id_statistic`].
pub enum WeakIdInput<'a> {
    Microdata(&'a Dataset),
    Summary(&'a CellTable),
}

pub fn weak_id_statistic(input: WeakIdInput<'_>, covariates: bool) -> Result<WeakIdReport> {
    match input {
        WeakIdInput::Microdata(d) => weak_id_microdata(d, covariates),
        WeakIdInput::Summary(c) => weak_id_summary(c),
    }
}
