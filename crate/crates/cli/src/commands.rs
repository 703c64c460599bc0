use std::io::Write;

use idid::{
    cell_table, load_dataset, load_summary, percentile_bootstrap, run_monte_carlo, semiparametric_estimate,
    sensitivity_one_sample, sensitivity_two_sample, two_sample_estimate, wald_estimate, weak_id_microdata,
    weak_id_summary, BootstrapConfig, Dataset, DesignSpec, Error, EstimateReport, EstimatorDescriptor, NamedEstimate,
    NuisanceSpecs, ResampleUnit, Result, Schema, SemiparOptions, SensitivityConfig, SensitivityReport,
    SensitivityTarget, SimulationConfig, SimulationReport, SummaryRole, Warning, WarningCode, WorkingModel,
};

use crate::{
    create, write_json, ColumnArgs, Command, EstimateArgs, SeArg, SensitivityArgs, SimulateArgs, TargetArg,
    TwoSampleArgs, WeakIdArgs, WorkingModelArg,
};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Estimate(a) => estimate(a),
        Command::TwoSample(a) => two_sample(a),
        Command::WeakId(a) => weak_id(a),
        Command::Sensitivity(a) => sensitivity(a),
        Command::Simulate(a) => simulate(a),
    }
}

fn schema(c: &ColumnArgs) -> Schema {
    Schema {
        t: c.t_col.clone(),
        z: c.z_col.clone(),
        d: c.d_col.clone(),
        y: c.y_col.clone(),
        covariates: if c.no_covariates { Some(Vec::new()) } else { c.covariates.clone() },
        unit_id: c.unit_id.clone(),
    }
}

fn spec(name: &str) -> Result<DesignSpec> {
    name.parse()
}

fn clamp(eps: Option<f64>) -> Result<Option<(f64, f64)>> {
    match eps {
        None => Ok(None),
        Some(e) if (0.0..0.5).contains(&e) && e > 0.0 => Ok(Some((e, 1.0 - e))),
        Some(_) => Err(Error::InvalidConfig("--pi-clamp must lie in (0, 0.5)".into())),
    }
}

fn bootstrap_config(a: &EstimateArgs) -> Result<BootstrapConfig> {
    let seed = a.seed.ok_or_else(|| Error::InvalidConfig("bootstrap standard errors need --seed".into()))?;
    if a.block && a.columns.unit_id.is_none() {
        return Err(Error::InvalidConfig("--block needs --unit-id".into()));
    }
    Ok(BootstrapConfig {
        replications: a.bootstrap_replications,
        resample_unit: if a.block { ResampleUnit::UnitIdBlock } else { ResampleUnit::Row },
        ..BootstrapConfig::new(seed)
    })
}

fn redraw_warning(report: &mut EstimateReport, attempts: usize, replications: usize) {
    if attempts > replications {
        report.warnings.push(Warning::new(
            WarningCode::ResamplesRedrawn,
            format!("{} degenerate bootstrap resamples were redrawn", attempts - replications),
        ));
    }
}

fn estimate(a: EstimateArgs) -> Result<()> {
    let data = load_dataset(&a.data, &schema(&a.columns))?;
    let weak = weak_id_microdata(&data, data.p() > 0)?;
    let cells = cell_table(&data)?;
    let wald = wald_estimate(&cells)?;

    let method = if data.p() > 0 { "wald+semiparametric" } else { "wald" };
    let mut report = EstimateReport::new(method, data.n()).with_weak_id(weak);

    let bootstrap = match a.se {
        SeArg::PlugIn => None,
        SeArg::Bootstrap => Some(bootstrap_config(&a)?),
    };

    match &bootstrap {
        Some(cfg) if data.p() == 0 => {
            let boot = percentile_bootstrap(&data, &EstimatorDescriptor::Wald, cfg)?;
            report.push_estimate("beta", wald.beta, boot.se[0], boot.ci[0]);
            redraw_warning(&mut report, boot.attempts, cfg.replications);
        }
        _ => report.push_estimate("beta", wald.beta, wald.se, wald.ci95),
    }

    if data.p() > 0 {
        report.warnings.push(Warning::new(WarningCode::CovariatesIgnored, "the Wald estimate ignores covariates"));
        let specs = NuisanceSpecs { mu_y: spec(&a.mu_y)?, mu_d: spec(&a.mu_d)?, pi: spec(&a.pi)? };
        let options = SemiparOptions { pi_clamp: clamp(a.pi_clamp)?, ..SemiparOptions::default() };
        let working_model = match a.working_model {
            WorkingModelArg::Constant => WorkingModel::constant(),
            WorkingModelArg::Linear => WorkingModel::linear((0..data.p()).collect()),
        };
        let nf = idid::fit_nuisance(&data, &specs)?;
        if let Some((lo, hi)) = options.pi_clamp {
            let clamped = data
                .rows()
                .iter()
                .filter(|r| {
                    let p = nf.predict_pi(r.t, r.z, &r.x);
                    p < lo || p > hi
                })
                .count();
            if clamped > 0 {
                report.warnings.push(Warning::new(
                    WarningCode::PropensityClamped,
                    format!("{clamped} fitted propensities were clamped to [{lo}, {hi}]"),
                ));
            }
        }
        let est = semiparametric_estimate(&data, &working_model, &nf, &options)?;
        let names = psi_names(est.psi.len());
        match &bootstrap {
            Some(cfg) => {
                let descriptor = EstimatorDescriptor::Semiparametric { working_model, specs, options };
                let boot = percentile_bootstrap(&data, &descriptor, cfg)?;
                for (j, name) in names.into_iter().enumerate() {
                    report.push_estimate(name, est.psi[j], boot.se[j], boot.ci[j]);
                }
                redraw_warning(&mut report, boot.attempts, cfg.replications);
            }
            None => {
                for (j, name) in names.into_iter().enumerate() {
                    report.push_estimate(name, est.psi[j], est.se[j], est.ci(j, idid::estimators::Z_95));
                }
            }
        }
    }
    write_json(&report, a.out.as_deref())
}

fn psi_names(k: usize) -> Vec<String> {
    if k == 1 {
        vec!["psi".into()]
    } else {
        (1..=k).map(|j| format!("psi{j}")).collect()
    }
}

fn two_sample(a: TwoSampleArgs) -> Result<()> {
    let outcome = load_summary(&a.outcome, SummaryRole::Outcome)?;
    let exposure = load_summary(&a.exposure, SummaryRole::Exposure)?;
    let est = two_sample_estimate(&outcome, &exposure)?;
    let weak = weak_id_summary(&exposure)?;
    let mut report = EstimateReport::new("two_sample", outcome.n_total() + exposure.n_total()).with_weak_id(weak);
    report.push_estimate("beta_ts", est.beta, est.se, est.ci95);
    write_json(&report, a.out.as_deref())
}

fn weak_id(a: WeakIdArgs) -> Result<()> {
    let report = match (&a.data, &a.exposure) {
        (Some(path), _) => {
            let data = load_dataset(path, &schema(&a.columns))?;
            weak_id_microdata(&data, data.p() > 0)?
        }
        (None, Some(path)) => weak_id_summary(&load_summary(path, SummaryRole::Exposure)?)?,
        (None, None) => return Err(Error::InvalidConfig("weak-id needs --data or --exposure".into())),
    };
    write_json(&report, a.out.as_deref())
}

fn sensitivity(a: SensitivityArgs) -> Result<()> {
    let cfg = SensitivityConfig {
        grid_points: a.grid_points,
        target: match a.target {
            TargetArg::Time0 => SensitivityTarget::Time0Effect,
            TargetArg::Time1 => SensitivityTarget::Time1Effect,
        },
        ..SensitivityConfig::new(a.gamma_lower, a.gamma_upper)
    };
    let unadjusted_cfg = SensitivityConfig { gamma_lower: 0.0, gamma_upper: 0.0, ..cfg };
    let at_zero = |band: &idid::SensitivityBand| {
        let p = band.grid[0];
        NamedEstimate { name: "beta".into(), estimate: p.estimate, se: p.se, ci95: [p.ci_low, p.ci_high] }
    };

    let report = match (&a.data, &a.outcome, &a.exposure) {
        (Some(path), _, _) => {
            let data: Dataset = load_dataset(path, &schema(&a.columns))?.without_covariates();
            let cells = cell_table(&data)?;
            let band = sensitivity_one_sample(&cells, &cfg)?;
            write_band(&band, &a)?;
            let unadjusted = at_zero(&sensitivity_one_sample(&cells, &unadjusted_cfg)?);
            SensitivityReport::new("one_sample", &cfg, &band, unadjusted).with_weak_id(weak_id_microdata(&data, false)?)
        }
        (None, Some(o), Some(e)) => {
            let outcome = load_summary(o, SummaryRole::Outcome)?;
            let exposure = load_summary(e, SummaryRole::Exposure)?;
            let band = sensitivity_two_sample(&outcome, &exposure, &cfg)?;
            write_band(&band, &a)?;
            let unadjusted = at_zero(&sensitivity_two_sample(&outcome, &exposure, &unadjusted_cfg)?);
            SensitivityReport::new("two_sample", &cfg, &band, unadjusted).with_weak_id(weak_id_summary(&exposure)?)
        }
        _ => return Err(Error::InvalidConfig("sensitivity needs --data or both --outcome and --exposure".into())),
    };
    write_json(&report, a.out.as_deref())
}

fn write_band(band: &idid::SensitivityBand, a: &SensitivityArgs) -> Result<()> {
    let mut w = create(&a.csv)?;
    band.write_csv(&mut w)?;
    w.flush().map_err(Error::from)
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.config).map_err(|e| Error::Io(format!("{}: {e}", a.config.display())))?;
    let mut config = SimulationConfig::from_toml_str(&text)?;
    config.seed = Some(a.seed);
    config.full_scale |= a.full_scale;
    let (grid, dgp) = config.build()?;
    let mc = run_monte_carlo(&grid, &dgp)?;
    let mut w = create(&a.csv)?;
    mc.write_csv(&mut w)?;
    w.flush()?;
    write_json(&SimulationReport::from(&mc), a.out.as_deref())
}
