//! Percentile bootstrap (row or unit-block resampling) and the
//! sensitivity analysis for a treatment effect that drifts over time.

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{cell_table, CellTable, Dataset, Observation};
use crate::error::{Error, Result};
use crate::estimators::{
    check_trend, require_two_per_cell, residual_variance_sum, semiparametric_estimate, wald_estimate,
    SemiparOptions, WorkingModel, Z_95,
};
use crate::numeric::{normal_quantile, quantile_sorted, sample_sd};
use crate::nuisance::{fit_nuisance, NuisanceSpecs};
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ResampleUnit {
    #[default]
    Row,
    /// Resample whole units (all rows sharing a `unit_id`).
    UnitIdBlock,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replications: usize,
    pub resample_unit: ResampleUnit,
    pub master_seed: u64,
    pub ci_level: f64,
}

impl BootstrapConfig {
    pub fn new(master_seed: u64) -> Self {
        BootstrapConfig { replications: 200, resample_unit: ResampleUnit::Row, master_seed, ci_level: 0.95 }
    }

    fn validate(&self) -> Result<()> {
        if self.replications < 2 {
            return Err(Error::InvalidConfig("bootstrap needs at least 2 replications".into()));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::InvalidConfig("ci_level must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// A vector-valued statistic of a dataset.
pub trait Statistic: Sync {
    fn evaluate(&self, data: &Dataset) -> Result<Vec<f64>>;
}

impl<F> Statistic for F
where
    F: Fn(&Dataset) -> Result<Vec<f64>> + Sync,
{
    fn evaluate(&self, data: &Dataset) -> Result<Vec<f64>> {
        self(data)
    }
}

/// The estimators that can be bootstrapped by name.
#[derive(Debug, Clone)]
pub enum EstimatorDescriptor {
    Wald,
    Semiparametric { working_model: WorkingModel, specs: NuisanceSpecs, options: SemiparOptions },
}

impl Statistic for EstimatorDescriptor {
    fn evaluate(&self, data: &Dataset) -> Result<Vec<f64>> {
        match self {
            EstimatorDescriptor::Wald => Ok(vec![wald_estimate(&cell_table(data)?)?.beta]),
            EstimatorDescriptor::Semiparametric { working_model, specs, options } => {
                let nf = fit_nuisance(data, specs)?;
                Ok(semiparametric_estimate(data, working_model, &nf, options)?.psi)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    /// Statistic on the original data.
    pub estimate: Vec<f64>,
    pub se: Vec<f64>,
    pub ci: Vec<[f64; 2]>,
    /// Replicate values, in replicate order.
    pub replicates: Vec<Vec<f64>>,
    /// Resamples drawn, including redrawn degenerate ones.
    pub attempts: usize,
}

fn draw_rows<R: Rng>(data: &Dataset, blocks: Option<&[Vec<usize>]>, rng: &mut R) -> Vec<Observation> {
    let rows = data.rows();
    match blocks {
        None => (0..rows.len()).map(|_| rows[rng.random_range(0..rows.len())].clone()).collect(),
        Some(blocks) => {
            let mut out = Vec::with_capacity(rows.len());
            for _ in 0..blocks.len() {
                let b = &blocks[rng.random_range(0..blocks.len())];
                out.extend(b.iter().map(|&i| rows[i].clone()));
            }
            out
        }
    }
}

/// Row indices grouped by unit id, in order of first appearance.
fn unit_blocks(data: &Dataset) -> Result<Vec<Vec<usize>>> {
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    for (i, r) in data.rows().iter().enumerate() {
        let id = r
            .unit_id
            .as_deref()
            .ok_or_else(|| Error::InvalidConfig(format!("row {} has no unit_id for block resampling", i + 1)))?;
        let k = *index.entry(id).or_insert_with(|| {
            blocks.push(Vec::new());
            blocks.len() - 1
        });
        blocks[k].push(i);
    }
    Ok(blocks)
}

/// Percentile bootstrap. Replicate `b` draws from stream `(master_seed, b)`;
/// resamples on which the statistic degenerates are redrawn from the same
/// stream, with at most `10 * replications` draws in total.
pub fn percentile_bootstrap<S: Statistic + ?Sized>(
    data: &Dataset,
    statistic: &S,
    cfg: &BootstrapConfig,
) -> Result<BootstrapResult> {
    cfg.validate()?;
    let estimate = statistic.evaluate(data)?;
    let blocks = match cfg.resample_unit {
        ResampleUnit::Row => None,
        ResampleUnit::UnitIdBlock => Some(unit_blocks(data)?),
    };
    let budget = 10 * cfg.replications;
    let outcomes: Vec<Result<(Vec<f64>, usize)>> = (0..cfg.replications)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(cfg.master_seed, b as u64);
            let mut attempts = 0;
            loop {
                attempts += 1;
                let sample = data.with_rows(draw_rows(data, blocks.as_deref(), &mut rng));
                match statistic.evaluate(&sample) {
                    Ok(v) => return Ok((v, attempts)),
                    Err(e) if e.is_degenerate_resample() && attempts < budget => continue,
                    Err(e) if e.is_degenerate_resample() => {
                        return Err(Error::TooManyDegenerateResamples {
                            attempts: budget,
                            replications: cfg.replications,
                        })
                    }
                    Err(e) => return Err(e),
                }
            }
        })
        .collect();

    let mut replicates = Vec::with_capacity(cfg.replications);
    let mut attempts = 0;
    for o in outcomes {
        let (v, a) = o?;
        attempts += a;
        replicates.push(v);
    }
    if attempts > budget {
        return Err(Error::TooManyDegenerateResamples { attempts, replications: cfg.replications });
    }
    let (se, ci) = summarize_replicates(&replicates, estimate.len(), cfg.ci_level);
    Ok(BootstrapResult { estimate, se, ci, replicates, attempts })
}

/// Per-component SD and percentile interval of replicate vectors.
pub fn summarize_replicates(replicates: &[Vec<f64>], dim: usize, ci_level: f64) -> (Vec<f64>, Vec<[f64; 2]>) {
    let alpha = 1.0 - ci_level;
    (0..dim)
        .map(|j| {
            let mut col: Vec<f64> = replicates.iter().map(|r| r[j]).collect();
            let sd = sample_sd(&col);
            col.sort_by(f64::total_cmp);
            (sd, [quantile_sorted(&col, alpha / 2.0), quantile_sorted(&col, 1.0 - alpha / 2.0)])
        })
        .unzip()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityTarget {
    /// Average effect at the first time point.
    #[default]
    Time0Effect,
    /// Average effect at the second time point.
    Time1Effect,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityConfig {
    pub gamma_lower: f64,
    pub gamma_upper: f64,
    pub grid_points: usize,
    pub target: SensitivityTarget,
    pub ci_level: f64,
}

impl SensitivityConfig {
    pub fn new(gamma_lower: f64, gamma_upper: f64) -> Self {
        SensitivityConfig { gamma_lower, gamma_upper, grid_points: 101, target: SensitivityTarget::Time0Effect, ci_level: 0.95 }
    }

    fn validate(&self) -> Result<()> {
        if !(self.gamma_lower <= 0.0 && 0.0 <= self.gamma_upper) {
            return Err(Error::InvalidConfig("sensitivity bounds must satisfy gamma_lower <= 0 <= gamma_upper".into()));
        }
        if self.grid_points < 2 {
            return Err(Error::InvalidConfig("sensitivity grid needs at least 2 points".into()));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::InvalidConfig("ci_level must lie in (0, 1)".into()));
        }
        Ok(())
    }

    fn critical_value(&self) -> f64 {
        if (self.ci_level - 0.95).abs() < 1e-12 {
            Z_95
        } else {
            normal_quantile(0.5 + self.ci_level / 2.0)
        }
    }

    /// Uniform grid over [gamma_lower, gamma_upper], endpoints included.
    pub fn grid(&self) -> Vec<f64> {
        if self.gamma_lower == self.gamma_upper {
            return vec![self.gamma_lower];
        }
        let m = self.grid_points - 1;
        let width = self.gamma_upper - self.gamma_lower;
        (0..=m)
            .map(|k| if k == m { self.gamma_upper } else { self.gamma_lower + width * k as f64 / m as f64 })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityPoint {
    pub delta: f64,
    pub estimate: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityBand {
    pub grid: Vec<SensitivityPoint>,
    /// Union of the pointwise intervals over the grid.
    pub union_ci: [f64; 2],
}

impl SensitivityBand {
    fn from_points(grid: Vec<SensitivityPoint>) -> Self {
        let lo = grid.iter().map(|p| p.ci_low).fold(f64::INFINITY, f64::min);
        let hi = grid.iter().map(|p| p.ci_high).fold(f64::NEG_INFINITY, f64::max);
        SensitivityBand { grid, union_ci: [lo, hi] }
    }

    /// CSV rows `delta,estimate,ci_low,ci_high`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["delta", "estimate", "ci_low", "ci_high"])?;
        for p in &self.grid {
            w.write_record([p.delta, p.estimate, p.ci_low, p.ci_high].map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Point estimate of the targeted effect at drift `delta`, given the outcome
/// double difference and exposure cell means.
///
/// With a_t = mu_D(t,1) - mu_D(t,0), delta_Y = a_1 beta_1 - a_0 beta_0 and
/// beta_1 = beta_0 + delta, so beta_0 = delta_Y/delta_D - delta a_1/delta_D
/// and beta_1 = delta_Y/delta_D - delta a_0/delta_D.
fn drift_adjusted(delta_y: f64, exposure: &CellTable, target: SensitivityTarget, delta: f64) -> f64 {
    let delta_d = exposure.delta_d();
    let t = match target {
        SensitivityTarget::Time0Effect => 1,
        SensitivityTarget::Time1Effect => 0,
    };
    let contrast = exposure.cell(t, 1).mean_d - exposure.cell(t, 0).mean_d;
    delta_y / delta_d - delta * contrast / delta_d
}

/// Effect at time t implied by the targeted effect and the drift.
fn time_effect(target_effect: f64, target: SensitivityTarget, delta: f64, t: u8) -> f64 {
    match target {
        SensitivityTarget::Time0Effect => target_effect + t as f64 * delta,
        SensitivityTarget::Time1Effect => target_effect - (1 - t) as f64 * delta,
    }
}

/// Sensitivity band from microdata cell summaries.
pub fn sensitivity_one_sample(cells: &CellTable, cfg: &SensitivityConfig) -> Result<SensitivityBand> {
    cfg.validate()?;
    if !cells.cov_available() {
        return Err(Error::InvalidConfig("one-sample sensitivity needs microdata cell summaries".into()));
    }
    let delta_d = cells.delta_d();
    check_trend(delta_d)?;
    require_two_per_cell(cells)?;
    let crit = cfg.critical_value();
    let grid = cfg
        .grid()
        .into_iter()
        .map(|delta| {
            let estimate = drift_adjusted(cells.delta_y(), cells, cfg.target, delta);
            let var = residual_variance_sum(cells, |t| time_effect(estimate, cfg.target, delta, t));
            let se = var.sqrt() / delta_d.abs();
            SensitivityPoint { delta, estimate, se, ci_low: estimate - crit * se, ci_high: estimate + crit * se }
        })
        .collect();
    Ok(SensitivityBand::from_points(grid))
}

/// Sensitivity band from an outcome-sample and an exposure-sample summary.
pub fn sensitivity_two_sample(outcome: &CellTable, exposure: &CellTable, cfg: &SensitivityConfig) -> Result<SensitivityBand> {
    cfg.validate()?;
    let delta_d = exposure.delta_d();
    check_trend(delta_d)?;
    let crit = cfg.critical_value();
    let grid = cfg
        .grid()
        .into_iter()
        .map(|delta| {
            let estimate = drift_adjusted(outcome.delta_y(), exposure, cfg.target, delta);
            let var: f64 = outcome
                .cells()
                .iter()
                .zip(exposure.cells())
                .map(|(o, e)| {
                    let b = time_effect(estimate, cfg.target, delta, e.t);
                    o.se_mean_y.powi(2) + b * b * e.se_mean_d.powi(2)
                })
                .sum();
            let se = var.sqrt() / delta_d.abs();
            SensitivityPoint { delta, estimate, se, ci_low: estimate - crit * se, ci_high: estimate + crit * se }
        })
        .collect();
    Ok(SensitivityBand::from_points(grid))
}

/// Convenience wrapper computing the cell table first.
pub fn sensitivity_microdata(data: &Dataset, cfg: &SensitivityConfig) -> Result<SensitivityBand> {
    sensitivity_one_sample(&cell_table(data)?, cfg)
}
