//! Instrumented difference-in-differences.
//!
//! A binary instrument Z (e.g. an encouragement) whose effect on a binary
//! exposure D changes over time T identifies the effect of D on an outcome Y
//! through the ratio of two difference-in-differences. This crate provides
//! the Wald, semiparametric and two-sample estimators, the weak-identification
//! diagnostic, sensitivity bands, the bootstrap, and the simulation harness.
//!
//! ```
//! use idid::{cell_table, wald_estimate, Dataset, Observation};
//!
//! let rows = [
//!     (0, 0, 0, 2.0), (0, 0, 1, 2.0), (0, 1, 0, 1.0), (0, 1, 1, 3.0),
//!     (1, 0, 0, 3.0), (1, 0, 1, 3.0), (1, 1, 1, 4.0), (1, 1, 1, 6.0),
//! ]
//! .into_iter()
//! .map(|(t, z, d, y)| Observation::new(t, z, d, y, vec![]))
//! .collect();
//! let data = Dataset::new(rows, vec![]).unwrap();
//! let est = wald_estimate(&cell_table(&data).unwrap()).unwrap();
//! assert!((est.beta - 4.0).abs() < 1e-12);
//! ```

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod nuisance;
pub mod numeric;
pub mod regression;
pub mod report;
pub mod rng;
pub mod simulation;

pub use data::{
    cell_table, load_dataset, load_summary, read_dataset, read_summary, write_summary, CellSummary, CellTable, Dataset,
    Observation, Schema, SummaryRole,
};
pub use diagnostics::{
    weak_id_microdata, weak_id_statistic, weak_id_summary, WeakIdInput, WeakIdMethod, WeakIdReport, WEAK_ID_THRESHOLD,
};
pub use error::{Error, Result};
pub use estimators::{
    baseline_estimates, semiparametric_estimate, two_sample_estimate, wald_estimate, BaselineEstimates, Basis,
    PsiEstimate, SemiparOptions, WaldEstimate, WeightFn, WorkingModel,
};
pub use inference::{
    percentile_bootstrap, sensitivity_microdata, sensitivity_one_sample, sensitivity_two_sample, BootstrapConfig,
    BootstrapResult, EstimatorDescriptor, ResampleUnit, SensitivityBand, SensitivityConfig, SensitivityPoint,
    SensitivityTarget, Statistic,
};
pub use nuisance::{fit_nuisance, ConditionalMean, NuisanceFit, NuisanceSpecs, Propensity};
pub use regression::{CovariateTransform, DesignKind, DesignSpec};
pub use report::{
    EstimateReport, ErrorReport, NamedEstimate, SensitivityReport, SimulationReport, Warning, WarningCode,
};
pub use simulation::{
    generate_case_data, run_monte_carlo, Case, DgpCase, MonteCarloReport, MonteCarloRow, Scenario, ScenarioGrid,
    SeMethod, SimEstimator, SimulationConfig,
};
