//! Least-squares and logistic-regression kernels behind every nuisance fit.
//!
//! Linear fits go through a Householder QR of the (optionally weighted)
//! design; the normal equations are never formed. Logistic fits run Newton
//! iterations (IRLS) whose weighted least-squares subproblems reuse the
//! same QR solver.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::expit;

/// Relative size of a QR pivot below which a column counts as collinear.
const RANK_TOL: f64 = 1e-10;

pub const LOGISTIC_MAX_ITER: usize = 100;
pub const LOGISTIC_STEP_TOL: f64 = 1e-10;
pub const LOGISTIC_SCORE_TOL: f64 = 1e-8;
pub const SEPARATION_BOUND: f64 = 1e3;

/// Map applied to the covariates before the design is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CovariateTransform {
    #[default]
    Identity,
    /// x -> exp(x / 2), the covariate misspecification device.
    ExpHalf,
}

impl CovariateTransform {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            CovariateTransform::Identity => x,
            CovariateTransform::ExpHalf => (0.5 * x).exp(),
        }
    }
}

/// Model families available for the nuisance functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    /// Linear in (1, z, t, zt); ignores covariates.
    SaturatedTz,
    /// Linear in all main effects and interactions of t, z and each covariate.
    FullInteractions,
    /// Logistic in (1, t, z, x).
    LogisticMainEffects,
    /// P(Z = z | X, T) P(T = t | X) from two logistic fits.
    LogisticPropensity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub kind: DesignKind,
    #[serde(default)]
    pub transform: CovariateTransform,
}

impl DesignSpec {
    pub const fn new(kind: DesignKind) -> Self {
        DesignSpec { kind, transform: CovariateTransform::Identity }
    }

    pub const fn exp_half(kind: DesignKind) -> Self {
        DesignSpec { kind, transform: CovariateTransform::ExpHalf }
    }

    pub fn is_logistic(&self) -> bool {
        matches!(self.kind, DesignKind::LogisticMainEffects | DesignKind::LogisticPropensity)
    }

    /// Number of design columns for `p` covariates.
    pub fn width(&self, p: usize) -> usize {
        match self.kind {
            DesignKind::SaturatedTz => 4,
            DesignKind::FullInteractions => 4 + 4 * p,
            DesignKind::LogisticMainEffects => 3 + p,
            DesignKind::LogisticPropensity => 2 + p,
        }
    }

    /// Writes the design row for (t, z, x) into `out`.
    ///
    /// For `LogisticPropensity` this is the row of the P(Z | X, T) model,
    /// i.e. (1, t, x); see [`propensity_t_row`] for the time model.
    pub fn fill_row(&self, t: f64, z: f64, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        let tr = self.transform;
        match self.kind {
            DesignKind::SaturatedTz => out.extend_from_slice(&[1.0, z, t, z * t]),
            DesignKind::FullInteractions => {
                out.extend_from_slice(&[1.0, t, z, t * z]);
                for &xj in x {
                    let v = tr.apply(xj);
                    out.extend_from_slice(&[v, t * v, z * v, t * z * v]);
                }
            }
            DesignKind::LogisticMainEffects => {
                out.extend_from_slice(&[1.0, t, z]);
                out.extend(x.iter().map(|&v| tr.apply(v)));
            }
            DesignKind::LogisticPropensity => {
                out.extend_from_slice(&[1.0, t]);
                out.extend(x.iter().map(|&v| tr.apply(v)));
            }
        }
    }

    /// Design row of the P(T | X) half of the propensity model: (1, x).
    pub fn propensity_t_row(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.push(1.0);
        out.extend(x.iter().map(|&v| self.transform.apply(v)));
    }
}

impl fmt::Display for DesignSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.transform == CovariateTransform::ExpHalf {
            write!(f, "exp_half:")?;
        }
        let name = match self.kind {
            DesignKind::SaturatedTz => "saturated_tz",
            DesignKind::FullInteractions => "full_interactions",
            DesignKind::LogisticMainEffects => "logistic_main_effects",
            DesignKind::LogisticPropensity => "logistic_propensity",
        };
        f.write_str(name)
    }
}

impl FromStr for DesignSpec {
    type Err = Error;

    /// Parses `kind` or `exp_half:kind`.
    fn from_str(s: &str) -> Result<Self> {
        let (transform, base) = match s.trim().strip_prefix("exp_half:") {
            Some(rest) => (CovariateTransform::ExpHalf, rest),
            None => (CovariateTransform::Identity, s.trim()),
        };
        let kind = match base {
            "saturated_tz" => DesignKind::SaturatedTz,
            "full_interactions" => DesignKind::FullInteractions,
            "logistic_main_effects" => DesignKind::LogisticMainEffects,
            "logistic_propensity" => DesignKind::LogisticPropensity,
            other => return Err(Error::InvalidConfig(format!("unknown design `{other}`"))),
        };
        Ok(DesignSpec { kind, transform })
    }
}

/// Ordinary or weighted least-squares fit.
#[derive(Debug, Clone)]
pub struct LinearFit {
    pub coefficients: DVector<f64>,
    /// (Weighted) SSR / (n - p).
    pub residual_variance: f64,
    /// (X'WX)^{-1}.
    pub xtx_inverse: DMatrix<f64>,
    pub n: usize,
}

impl LinearFit {
    pub fn predict(&self, row: &[f64]) -> f64 {
        row.iter().zip(self.coefficients.iter()).map(|(a, b)| a * b).sum()
    }

    /// Homoskedastic standard error of coefficient `j`.
    pub fn coefficient_se(&self, j: usize) -> f64 {
        (self.residual_variance * self.xtx_inverse[(j, j)]).sqrt()
    }
}

struct QrSolution {
    coefficients: DVector<f64>,
    r_inverse: DMatrix<f64>,
}

/// Least squares of `b` on `a` via Householder QR, with a rank check.
fn qr_least_squares(a: DMatrix<f64>, b: DVector<f64>) -> Result<QrSolution> {
    let k = a.ncols();
    let col_norms: Vec<f64> = (0..k).map(|j| a.column(j).norm()).collect();
    let qr = a.qr();
    let r = qr.r();
    for j in 0..k {
        if col_norms[j] == 0.0 || r[(j, j)].abs() <= RANK_TOL * col_norms[j] {
            return Err(Error::RankDeficient);
        }
    }
    let mut qtb = b;
    qr.q_tr_mul(&mut qtb);
    let qtb = qtb.rows(0, k).into_owned();
    let coefficients = r
        .solve_upper_triangular(&qtb)
        .ok_or(Error::RankDeficient)?;
    let r_inverse = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or(Error::RankDeficient)?;
    Ok(QrSolution { coefficients, r_inverse })
}

/// Minimizes the (weighted) residual sum of squares of `response` on `design`.
pub fn fit_linear(design: &DMatrix<f64>, response: &[f64], weights: Option<&[f64]>) -> Result<LinearFit> {
    let (n, k) = design.shape();
    if response.len() != n {
        return Err(Error::DimensionMismatch(format!("design has {n} rows, response {}", response.len())));
    }
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::DimensionMismatch(format!("design has {n} rows, weights {}", w.len())));
        }
        if w.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(Error::InvalidConfig("weights must be finite and nonnegative".into()));
        }
    }
    if n < k {
        return Err(Error::RankDeficient);
    }
    let sqrt_w: Option<Vec<f64>> = weights.map(|w| w.iter().map(|v| v.sqrt()).collect());
    let mut a = design.clone();
    let mut b = DVector::from_column_slice(response);
    if let Some(sw) = &sqrt_w {
        for (i, &s) in sw.iter().enumerate() {
            a.row_mut(i).scale_mut(s);
            b[i] *= s;
        }
    }
    let sol = qr_least_squares(a, b)?;
    let fitted = design * &sol.coefficients;
    let ssr: f64 = (0..n)
        .map(|i| {
            let e = response[i] - fitted[i];
            weights.map_or(1.0, |w| w[i]) * e * e
        })
        .sum();
    let residual_variance = if n > k { ssr / (n - k) as f64 } else { 0.0 };
    let xtx_inverse = &sol.r_inverse * sol.r_inverse.transpose();
    Ok(LinearFit { coefficients: sol.coefficients, residual_variance, xtx_inverse, n })
}

/// Maximum-likelihood logistic regression.
#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub coefficients: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl LogisticFit {
    pub fn predict(&self, row: &[f64]) -> f64 {
        expit(row.iter().zip(self.coefficients.iter()).map(|(a, b)| a * b).sum())
    }
}

fn log_likelihood(design: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>) -> f64 {
    let eta = design * beta;
    eta.iter()
        .zip(y)
        .map(|(&e, &yi)| {
            // log(1 + exp(e)) computed stably
            let softplus = if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
            yi * e - softplus
        })
        .sum()
}

/// Newton-Raphson (IRLS) fit of a binary response.
pub fn fit_logistic(design: &DMatrix<f64>, response: &[f64]) -> Result<LogisticFit> {
    let (n, k) = design.shape();
    if response.len() != n {
        return Err(Error::DimensionMismatch(format!("design has {n} rows, response {}", response.len())));
    }
    if response.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidConfig("logistic response must be 0/1".into()));
    }
    if n < k {
        return Err(Error::RankDeficient);
    }
    let positives = response.iter().filter(|&&v| v == 1.0).count();
    if positives == 0 || positives == n {
        return Err(Error::Separation);
    }

    let mut beta = DVector::zeros(k);
    let mut ll = log_likelihood(design, response, &beta);
    for iter in 1..=LOGISTIC_MAX_ITER {
        let eta = design * &beta;
        let mut a = design.clone();
        let mut rhs = DVector::zeros(n);
        let mut score = DVector::<f64>::zeros(k);
        for i in 0..n {
            let p = expit(eta[i]);
            let w = (p * (1.0 - p)).max(1e-300);
            let resid = response[i] - p;
            score.axpy(resid, &design.row(i).transpose(), 1.0);
            let sw = w.sqrt();
            a.row_mut(i).scale_mut(sw);
            rhs[i] = resid / sw;
        }
        if score.amax() <= LOGISTIC_SCORE_TOL * n as f64 && iter > 1 {
            return finish(design, response, beta, iter - 1);
        }
        let step = qr_least_squares(a, rhs)?.coefficients;

        // Step halving keeps the log-likelihood monotone.
        let mut scale = 1.0;
        let mut candidate = &beta + &step;
        let mut cand_ll = log_likelihood(design, response, &candidate);
        while cand_ll < ll - 1e-12 * ll.abs().max(1.0) && scale > 1e-6 {
            scale *= 0.5;
            candidate = &beta + &step * scale;
            cand_ll = log_likelihood(design, response, &candidate);
        }
        let change = (&step * scale).amax();
        beta = candidate;
        ll = cand_ll;
        if beta.amax() > SEPARATION_BOUND || !beta.iter().all(|b| b.is_finite()) {
            return Err(Error::Separation);
        }
        if change <= LOGISTIC_STEP_TOL {
            return finish(design, response, beta, iter);
        }
    }
    Err(Error::NotConverged(LOGISTIC_MAX_ITER))
}

/// Rejects converged fits that reproduce every response: the likelihood
/// has no finite maximizer there and the score merely underflowed.
fn finish(design: &DMatrix<f64>, response: &[f64], beta: DVector<f64>, iterations: usize) -> Result<LogisticFit> {
    let eta = design * &beta;
    if eta.iter().zip(response).all(|(&e, &y)| (y - expit(e)).abs() < 1e-6) {
        return Err(Error::Separation);
    }
    Ok(LogisticFit { coefficients: beta, converged: true, iterations })
}

/// Builds an n x k matrix from row vectors produced by `fill`.
pub fn design_matrix<F>(n: usize, k: usize, mut fill: F) -> DMatrix<f64>
where
    F: FnMut(usize, &mut Vec<f64>),
{
    let mut data = Vec::with_capacity(n * k);
    let mut row = Vec::with_capacity(k);
    for i in 0..n {
        fill(i, &mut row);
        debug_assert_eq!(row.len(), k);
        data.extend_from_slice(&row);
    }
    DMatrix::from_row_slice(n, k, &data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> DMatrix<f64> {
        let k = rows[0].len();
        DMatrix::from_row_slice(rows.len(), k, &rows.concat())
    }

    #[test]
    fn exact_line() {
        let x = mat(&[&[1.0, 0.0], &[1.0, 1.0], &[1.0, 2.0]]);
        let fit = fit_linear(&x, &[0.0, 2.0, 4.0], None).unwrap();
        assert!(fit.coefficients[0].abs() < 1e-12);
        assert!((fit.coefficients[1] - 2.0).abs() < 1e-12);
        assert!(fit.residual_variance.abs() < 1e-20);
    }

    #[test]
    fn duplicate_columns_are_rank_deficient() {
        let x = mat(&[&[1.0, 2.0, 2.0], &[1.0, 3.0, 3.0], &[1.0, 5.0, 5.0], &[1.0, 1.0, 1.0]]);
        let err = fit_linear(&x, &[1.0, 2.0, 3.0, 4.0], None).unwrap_err();
        assert_eq!(err, Error::RankDeficient);
    }

    #[test]
    fn dimension_mismatch() {
        let x = mat(&[&[1.0], &[1.0]]);
        assert!(matches!(fit_linear(&x, &[1.0], None), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn weighted_fit_matches_replicated_rows() {
        // Weight 2 on a row equals duplicating it.
        let x = mat(&[&[1.0, 0.0], &[1.0, 1.0], &[1.0, 2.0], &[1.0, 3.0]]);
        let y = [0.3, 1.9, 4.4, 5.8];
        let w = [1.0, 2.0, 1.0, 3.0];
        let wf = fit_linear(&x, &y, Some(&w)).unwrap();
        let xr = mat(&[
            &[1.0, 0.0],
            &[1.0, 1.0],
            &[1.0, 1.0],
            &[1.0, 2.0],
            &[1.0, 3.0],
            &[1.0, 3.0],
            &[1.0, 3.0],
        ]);
        let yr = [0.3, 1.9, 1.9, 4.4, 5.8, 5.8, 5.8];
        let rf = fit_linear(&xr, &yr, None).unwrap();
        for j in 0..2 {
            assert!((wf.coefficients[j] - rf.coefficients[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn intercept_only_logistic_is_logit_of_mean() {
        let x = DMatrix::from_element(4, 1, 1.0);
        let fit = fit_logistic(&x, &[1.0, 1.0, 1.0, 0.0]).unwrap();
        assert!(fit.converged);
        assert!((fit.coefficients[0] - 3f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn constant_response_is_separation() {
        let x = DMatrix::from_element(5, 1, 1.0);
        assert_eq!(fit_logistic(&x, &[1.0; 5]).unwrap_err(), Error::Separation);
    }

    #[test]
    fn perfectly_separated_data_is_detected() {
        let x = mat(&[&[1.0, -2.0], &[1.0, -1.0], &[1.0, 1.0], &[1.0, 2.0]]);
        assert_eq!(fit_logistic(&x, &[0.0, 0.0, 1.0, 1.0]).unwrap_err(), Error::Separation);
    }

    #[test]
    fn logistic_score_is_zero_and_means_match() {
        let n = 60;
        let x = design_matrix(n, 2, |i, r| {
            r.clear();
            r.extend_from_slice(&[1.0, (i as f64 * 0.37).sin() * 2.0]);
        });
        let y: Vec<f64> = (0..n).map(|i| if (i * 7) % 5 < 2 || i % 11 == 0 { 1.0 } else { 0.0 }).collect();
        let fit = fit_logistic(&x, &y).unwrap();
        let p: Vec<f64> = (0..n).map(|i| fit.predict(x.row(i).transpose().as_slice())).collect();
        let mut score = [0.0; 2];
        for i in 0..n {
            for j in 0..2 {
                score[j] += x[(i, j)] * (y[i] - p[i]);
            }
        }
        assert!(score.iter().all(|s| s.abs() <= 1e-8 * n as f64));
        let mean_p: f64 = p.iter().sum::<f64>() / n as f64;
        let mean_y: f64 = y.iter().sum::<f64>() / n as f64;
        assert!((mean_p - mean_y).abs() < 1e-10);
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn design_spec_names_round_trip() {
        for s in ["saturated_tz", "full_interactions", "exp_half:full_interactions", "logistic_propensity", "exp_half:logistic_propensity", "logistic_main_effects"] {
            assert_eq!(s.parse::<DesignSpec>().unwrap().to_string(), s);
        }
        assert!("quadratic".parse::<DesignSpec>().is_err());
    }

    #[test]
    fn full_interaction_row_layout() {
        let spec = DesignSpec::new(DesignKind::FullInteractions);
        let mut row = Vec::new();
        spec.fill_row(1.0, 1.0, &[2.0], &mut row);
        assert_eq!(row, vec![1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0]);
        let spec = DesignSpec::exp_half(DesignKind::FullInteractions);
        spec.fill_row(0.0, 1.0, &[2.0], &mut row);
        let e = 1f64.exp();
        assert_eq!(row, vec![1.0, 0.0, 1.0, 0.0, e, 0.0, e, 0.0]);
    }
}
