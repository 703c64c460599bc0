//! Fitted nuisance functions: conditional exposure and outcome means and
//! the joint (T, Z) propensity given covariates.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::regression::{design_matrix, fit_linear, fit_logistic, DesignKind, DesignSpec, LinearFit, LogisticFit};

#[derive(Debug, Clone)]
enum MeanFit {
    Linear(LinearFit),
    Logistic(LogisticFit),
}

/// A fitted model for E(C | T = t, Z = z, X = x).
#[derive(Debug, Clone)]
pub struct ConditionalMean {
    spec: DesignSpec,
    fit: MeanFit,
}

impl ConditionalMean {
    pub fn fit(data: &Dataset, spec: DesignSpec, response: &[f64]) -> Result<Self> {
        let k = spec.width(data.p());
        let rows = data.rows();
        let design = design_matrix(data.n(), k, |i, out| {
            let r = &rows[i];
            spec.fill_row(r.t as f64, r.z as f64, &r.x, out)
        });
        let fit = match spec.kind {
            DesignKind::SaturatedTz | DesignKind::FullInteractions => {
                MeanFit::Linear(fit_linear(&design, response, None)?)
            }
            DesignKind::LogisticMainEffects => MeanFit::Logistic(fit_logistic(&design, response)?),
            DesignKind::LogisticPropensity => {
                return Err(Error::InvalidConfig(
                    "logistic_propensity is only valid for the propensity model".into(),
                ))
            }
        };
        Ok(ConditionalMean { spec, fit })
    }

    pub fn spec(&self) -> DesignSpec {
        self.spec
    }

    pub fn predict_with(&self, t: u8, z: u8, x: &[f64], buf: &mut Vec<f64>) -> f64 {
        self.spec.fill_row(t as f64, z as f64, x, buf);
        match &self.fit {
            MeanFit::Linear(f) => f.predict(buf),
            MeanFit::Logistic(f) => f.predict(buf),
        }
    }

    pub fn predict(&self, t: u8, z: u8, x: &[f64]) -> f64 {
        self.predict_with(t, z, x, &mut Vec::new())
    }

    /// mu(1,1,x) - mu(0,1,x) - mu(1,0,x) + mu(0,0,x).
    pub fn double_difference(&self, x: &[f64], buf: &mut Vec<f64>) -> f64 {
        self.predict_with(1, 1, x, buf) - self.predict_with(0, 1, x, buf) - self.predict_with(1, 0, x, buf)
            + self.predict_with(0, 0, x, buf)
    }
}

/// Factorized propensity P(Z = z | X, T = t) P(T = t | X).
#[derive(Debug, Clone)]
pub struct Propensity {
    spec: DesignSpec,
    z_given_xt: LogisticFit,
    t_given_x: LogisticFit,
}

impl Propensity {
    pub fn fit(data: &Dataset, spec: DesignSpec) -> Result<Self> {
        if spec.kind != DesignKind::LogisticPropensity {
            return Err(Error::InvalidConfig(format!("propensity model must be logistic_propensity, got {spec}")));
        }
        let rows = data.rows();
        let p = data.p();
        let zd = design_matrix(data.n(), spec.width(p), |i, out| {
            let r = &rows[i];
            spec.fill_row(r.t as f64, r.z as f64, &r.x, out)
        });
        let td = design_matrix(data.n(), 1 + p, |i, out| spec.propensity_t_row(&rows[i].x, out));
        let z: Vec<f64> = rows.iter().map(|r| r.z as f64).collect();
        let t: Vec<f64> = rows.iter().map(|r| r.t as f64).collect();
        Ok(Propensity { spec, z_given_xt: fit_logistic(&zd, &z)?, t_given_x: fit_logistic(&td, &t)? })
    }

    pub fn spec(&self) -> DesignSpec {
        self.spec
    }

    pub fn predict_with(&self, t: u8, z: u8, x: &[f64], buf: &mut Vec<f64>) -> f64 {
        self.spec.fill_row(t as f64, z as f64, x, buf);
        let pz1 = self.z_given_xt.predict(buf);
        self.spec.propensity_t_row(x, buf);
        let pt1 = self.t_given_x.predict(buf);
        let pz = if z == 1 { pz1 } else { 1.0 - pz1 };
        let pt = if t == 1 { pt1 } else { 1.0 - pt1 };
        pz * pt
    }

    pub fn predict(&self, t: u8, z: u8, x: &[f64]) -> f64 {
        self.predict_with(t, z, x, &mut Vec::new())
    }
}

/// Model choices for the three nuisance functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NuisanceSpecs {
    pub mu_y: DesignSpec,
    pub mu_d: DesignSpec,
    pub pi: DesignSpec,
}

impl NuisanceSpecs {
    /// Saturated (t, z) means with intercept-only propensities: the
    /// no-covariate specification.
    pub const SATURATED: NuisanceSpecs = NuisanceSpecs {
        mu_y: DesignSpec::new(DesignKind::SaturatedTz),
        mu_d: DesignSpec::new(DesignKind::SaturatedTz),
        pi: DesignSpec::new(DesignKind::LogisticPropensity),
    };

    /// Full-interaction linear means with logistic propensities.
    pub const FULL: NuisanceSpecs = NuisanceSpecs {
        mu_y: DesignSpec::new(DesignKind::FullInteractions),
        mu_d: DesignSpec::new(DesignKind::FullInteractions),
        pi: DesignSpec::new(DesignKind::LogisticPropensity),
    };
}

/// Fitted (mu_D, mu_Y, pi).
#[derive(Debug, Clone)]
pub struct NuisanceFit {
    pub mu_y: ConditionalMean,
    pub mu_d: ConditionalMean,
    pub pi: Propensity,
}

impl NuisanceFit {
    pub fn predict_mu_y(&self, t: u8, z: u8, x: &[f64]) -> f64 {
        self.mu_y.predict(t, z, x)
    }

    pub fn predict_mu_d(&self, t: u8, z: u8, x: &[f64]) -> f64 {
        self.mu_d.predict(t, z, x)
    }

    pub fn predict_pi(&self, t: u8, z: u8, x: &[f64]) -> f64 {
        self.pi.predict(t, z, x)
    }

    pub fn delta_y(&self, x: &[f64]) -> f64 {
        self.mu_y.double_difference(x, &mut Vec::new())
    }

    pub fn delta_d(&self, x: &[f64]) -> f64 {
        self.mu_d.double_difference(x, &mut Vec::new())
    }
}

pub fn fit_nuisance(data: &Dataset, specs: &NuisanceSpecs) -> Result<NuisanceFit> {
    let y: Vec<f64> = data.rows().iter().map(|r| r.y).collect();
    let d: Vec<f64> = data.rows().iter().map(|r| r.d as f64).collect();
    Ok(NuisanceFit {
        mu_y: ConditionalMean::fit(data, specs.mu_y, &y)?,
        mu_d: ConditionalMean::fit(data, specs.mu_d, &d)?,
        pi: Propensity::fit(data, specs.pi)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{cell_table, Observation, CELLS};

    fn d8() -> Dataset {
        let rows = [
            (0, 0, 0, 2.0),
            (0, 0, 1, 2.0),
            (0, 1, 0, 1.0),
            (0, 1, 1, 3.0),
            (1, 0, 0, 3.0),
            (1, 0, 1, 3.0),
            (1, 1, 1, 4.0),
            (1, 1, 1, 6.0),
        ]
        .into_iter()
        .map(|(t, z, d, y)| Observation::new(t, z, d, y, vec![]))
        .collect();
        Dataset::new(rows, vec![]).unwrap()
    }

    #[test]
    fn saturated_fit_reproduces_cell_means() {
        let data = d8();
        let ct = cell_table(&data).unwrap();
        let nf = fit_nuisance(&data, &NuisanceSpecs::SATURATED).unwrap();
        for &(t, z) in &CELLS {
            assert!((nf.predict_mu_y(t, z, &[]) - ct.cell(t, z).mean_y).abs() < 1e-12);
            assert!((nf.predict_mu_d(t, z, &[]) - ct.cell(t, z).mean_d).abs() < 1e-12);
            let share = ct.cell(t, z).n_cell as f64 / ct.n_total() as f64;
            assert!((nf.predict_pi(t, z, &[]) - share).abs() < 1e-10);
        }
        assert!((nf.delta_d(&[]) - ct.delta_d()).abs() < 1e-12);
        assert!((nf.delta_y(&[]) - ct.delta_y()).abs() < 1e-12);
    }

    #[test]
    fn propensity_rejects_other_kinds() {
        let data = d8();
        let bad = NuisanceSpecs { pi: DesignSpec::new(DesignKind::SaturatedTz), ..NuisanceSpecs::SATURATED };
        assert!(matches!(fit_nuisance(&data, &bad), Err(Error::InvalidConfig(_))));
    }
}
