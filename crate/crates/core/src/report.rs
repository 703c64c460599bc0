//! Versioned machine-readable estimation reports.

use serde::{Deserialize, Serialize};

use crate::diagnostics::WeakIdReport;
use crate::error::Error;
use crate::inference::{SensitivityBand, SensitivityConfig, SensitivityTarget};
use crate::simulation::{Case, MonteCarloReport, MonteCarloRow};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarningCode {
    WeakIdentification,
    CovariatesIgnored,
    PropensityClamped,
    ResamplesRedrawn,
    MonteCarloFailures,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Warning {
    pub code: WarningCode,
    pub message: String,
}

impl Warning {
    pub fn new(code: WarningCode, message: impl Into<String>) -> Self {
        Warning { code, message: message.into() }
    }

    pub fn weak_identification() -> Self {
        Warning::new(WarningCode::WeakIdentification, "weak identification (κ² < 10)")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedEstimate {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub ci95: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub schema_version: u32,
    pub method: String,
    pub estimates: Vec<NamedEstimate>,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weak_id: Option<WeakIdReport>,
    pub warnings: Vec<Warning>,
}

impl EstimateReport {
    pub fn new(method: impl Into<String>, n: usize) -> Self {
        EstimateReport {
            schema_version: REPORT_SCHEMA_VERSION,
            method: method.into(),
            estimates: Vec::new(),
            n,
            weak_id: None,
            warnings: Vec::new(),
        }
    }

    pub fn push_estimate(&mut self, name: impl Into<String>, estimate: f64, se: f64, ci95: [f64; 2]) {
        self.estimates.push(NamedEstimate { name: name.into(), estimate, se, ci95 });
    }

    /// Attaches the diagnostic and raises the weak-identification warning when flagged.
    pub fn with_weak_id(mut self, report: WeakIdReport) -> Self {
        if report.weak {
            self.warnings.push(Warning::weak_identification());
        }
        self.weak_id = Some(report);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub schema_version: u32,
    /// `one_sample` or `two_sample`.
    pub method: String,
    pub target: SensitivityTarget,
    pub gamma_lower: f64,
    pub gamma_upper: f64,
    pub grid_points: usize,
    /// Estimate, SE and interval at zero drift.
    pub unadjusted: NamedEstimate,
    pub union_ci: [f64; 2],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weak_id: Option<WeakIdReport>,
    pub warnings: Vec<Warning>,
}

impl SensitivityReport {
    pub fn new(method: impl Into<String>, cfg: &SensitivityConfig, band: &SensitivityBand, unadjusted: NamedEstimate) -> Self {
        SensitivityReport {
            schema_version: REPORT_SCHEMA_VERSION,
            method: method.into(),
            target: cfg.target,
            gamma_lower: cfg.gamma_lower,
            gamma_upper: cfg.gamma_upper,
            grid_points: band.grid.len(),
            unadjusted,
            union_ci: band.union_ci,
            weak_id: None,
            warnings: Vec::new(),
        }
    }

    pub fn with_weak_id(mut self, report: WeakIdReport) -> Self {
        if report.weak {
            self.warnings.push(Warning::weak_identification());
        }
        self.weak_id = Some(report);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub schema_version: u32,
    pub case: Case,
    pub n: usize,
    pub replications: usize,
    pub master_seed: u64,
    /// Fewer than 1% failed replications in every row.
    pub valid: bool,
    pub rows: Vec<MonteCarloRow>,
    pub warnings: Vec<Warning>,
}

impl From<&MonteCarloReport> for SimulationReport {
    fn from(r: &MonteCarloReport) -> Self {
        let mut warnings = Vec::new();
        for row in r.rows.iter().filter(|row| row.failures > 0) {
            warnings.push(Warning::new(
                WarningCode::MonteCarloFailures,
                format!("{} {}: {} of {} replications failed", row.scenario, row.component, row.failures, r.replications),
            ));
        }
        SimulationReport {
            schema_version: REPORT_SCHEMA_VERSION,
            case: r.case,
            n: r.n,
            replications: r.replications,
            master_seed: r.master_seed,
            valid: r.is_valid(),
            rows: r.rows.clone(),
            warnings,
        }
    }
}

/// Error object written on failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub schema_version: u32,
    pub error: String,
    pub message: String,
}

impl From<&Error> for ErrorReport {
    fn from(e: &Error) -> Self {
        ErrorReport { schema_version: REPORT_SCHEMA_VERSION, error: e.kind().to_owned(), message: e.to_string() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::WeakIdMethod;

    #[test]
    fn weak_report_carries_warning() {
        let weak = WeakIdReport::new(3.0, WeakIdMethod::SquaredZ, 0.1, false);
        let r = EstimateReport::new("wald", 10).with_weak_id(weak);
        assert_eq!(r.warnings, vec![Warning::weak_identification()]);
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["warnings"][0]["code"], "weak_identification");
        assert_eq!(json["weak_id"]["weak"], true);

        let strong = WeakIdReport::new(30.0, WeakIdMethod::SquaredZ, 0.1, false);
        assert!(EstimateReport::new("wald", 10).with_weak_id(strong).warnings.is_empty());
    }

    #[test]
    fn error_report_uses_kind() {
        let r = ErrorReport::from(&Error::RankDeficient);
        assert_eq!(r.error, Error::RankDeficient.kind());
    }
}
