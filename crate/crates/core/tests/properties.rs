mod common;

use common::{affine_y, d8, flip_t, flip_z, random_dataset, rel_close};
use idid::data::CELLS;
use idid::regression::{design_matrix, fit_linear, fit_logistic};
use idid::rng::stream;
use idid::simulation::{generate_latent, sample_truncated_normal};
use idid::*;
use proptest::prelude::*;

fn saturated_psi(data: &Dataset) -> f64 {
    let nf = fit_nuisance(data, &NuisanceSpecs::SATURATED).unwrap();
    semiparametric_estimate(data, &WorkingModel::constant(), &nf, &SemiparOptions::default()).unwrap().psi[0]
}

fn full_psi(data: &Dataset) -> f64 {
    let nf = fit_nuisance(data, &NuisanceSpecs::FULL).unwrap();
    semiparametric_estimate(data, &WorkingModel::constant(), &nf, &SemiparOptions::default()).unwrap().psi[0]
}

fn wald(data: &Dataset) -> WaldEstimate {
    wald_estimate(&cell_table(data).unwrap()).unwrap()
}

fn summary_table(mean_d: [f64; 4], mean_y: [f64; 4], se: f64) -> CellTable {
    let cells: Vec<CellSummary> = CELLS
        .iter()
        .enumerate()
        .map(|(k, &(t, z))| CellSummary {
            t,
            z,
            mean_y: mean_y[k],
            mean_d: mean_d[k],
            var_y: se * se * 100.0,
            var_d: se * se * 100.0,
            cov_yd: 0.0,
            n_cell: 100,
            se_mean_y: se,
            se_mean_d: se,
            cov_available: false,
        })
        .collect();
    CellTable::from_cells(cells.try_into().unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cell_table_ignores_row_order(seed in any::<u64>(), rot in 0usize..40) {
        let data = random_dataset(seed, 40, 1);
        let mut rows = data.rows().to_vec();
        rows.rotate_left(rot);
        rows.reverse();
        let a = cell_table(&data).unwrap();
        let b = cell_table(&data.with_rows(rows)).unwrap();
        for (x, y) in a.cells().iter().zip(b.cells()) {
            prop_assert!(rel_close(x.mean_y, y.mean_y, 1e-12));
            prop_assert!(rel_close(x.var_y, y.var_y, 1e-12));
            prop_assert!(rel_close(x.cov_yd, y.cov_yd, 1e-12));
        }
    }

    #[test]
    fn cell_means_reconstruct_total(seed in any::<u64>()) {
        let data = random_dataset(seed, 40, 0);
        let ct = cell_table(&data).unwrap();
        let from_cells: f64 = ct.cells().iter().map(|c| c.n_cell as f64 * c.mean_y).sum();
        let total: f64 = data.rows().iter().map(|r| r.y).sum();
        prop_assert!(rel_close(from_cells, total, 1e-12));
    }

    #[test]
    fn least_squares_residuals_are_orthogonal(seed in any::<u64>()) {
        let data = random_dataset(seed, 40, 2);
        let rows = data.rows();
        let x = design_matrix(40, 3, |i, out| { out.clear(); out.push(1.0); out.extend_from_slice(&rows[i].x); });
        let y: Vec<f64> = rows.iter().map(|r| r.y).collect();
        let fit = fit_linear(&x, &y, None).unwrap();
        let fitted = &x * &fit.coefficients;
        let resid: Vec<f64> = y.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect();
        let scale: f64 = y.iter().map(|v| v.abs()).sum();
        for j in 0..3 {
            let dot: f64 = (0..40).map(|i| x[(i, j)] * resid[i]).sum();
            prop_assert!(dot.abs() <= 1e-8 * scale);
        }
        // Refitting the fitted values reproduces the coefficients.
        let refit = fit_linear(&x, fitted.as_slice(), None).unwrap();
        for j in 0..3 {
            prop_assert!(rel_close(refit.coefficients[j], fit.coefficients[j], 1e-10));
        }
    }

    #[test]
    fn logistic_fit_matches_response_mean(seed in any::<u64>()) {
        let data = random_dataset(seed, 80, 1);
        let rows = data.rows();
        let x = design_matrix(80, 2, |i, out| { out.clear(); out.push(1.0); out.push(rows[i].x[0]); });
        let d: Vec<f64> = rows.iter().map(|r| r.d as f64).collect();
        let fit = fit_logistic(&x, &d).unwrap();
        let mean_p: f64 = (0..80).map(|i| fit.predict(&[1.0, rows[i].x[0]])).sum::<f64>() / 80.0;
        let mean_d: f64 = d.iter().sum::<f64>() / 80.0;
        prop_assert!((mean_p - mean_d).abs() < 1e-8);
    }

    #[test]
    fn propensity_sums_to_one(seed in any::<u64>(), x in -3.0f64..3.0) {
        let data = random_dataset(seed, 80, 1);
        let pi = Propensity::fit(&data, NuisanceSpecs::FULL.pi).unwrap();
        let total: f64 = CELLS.iter().map(|&(t, z)| pi.predict(t, z, &[x])).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn saturated_nuisances_reproduce_wald(seed in any::<u64>()) {
        let data = random_dataset(seed, 40, 0);
        prop_assert!(rel_close(saturated_psi(&data), wald(&data).beta, 1e-10));
    }

    #[test]
    fn estimates_survive_label_flips(seed in any::<u64>()) {
        let data = random_dataset(seed, 40, 0);
        let beta = wald(&data).beta;
        for flipped in [flip_z(&data), flip_t(&data), flip_z(&flip_t(&data))] {
            prop_assert!(rel_close(wald(&flipped).beta, beta, 1e-10));
            prop_assert!(rel_close(saturated_psi(&flipped), beta, 1e-10));
        }
        let with_x = random_dataset(seed, 80, 1);
        let psi = full_psi(&with_x);
        prop_assert!(rel_close(full_psi(&flip_z(&with_x)), psi, 1e-8));
        prop_assert!(rel_close(full_psi(&flip_t(&with_x)), psi, 1e-8));
    }

    #[test]
    fn estimates_are_affine_equivariant(seed in any::<u64>(), a in 0.1f64..5.0, b in -10.0f64..10.0) {
        let data = random_dataset(seed, 40, 0);
        let moved = affine_y(&data, a, b);
        prop_assert!(rel_close(wald(&moved).beta, a * wald(&data).beta, 1e-10));
        prop_assert!(rel_close(wald(&moved).se, a * wald(&data).se, 1e-10));
        prop_assert!(rel_close(saturated_psi(&moved), a * saturated_psi(&data), 1e-10));
        let with_x = random_dataset(seed, 80, 1);
        prop_assert!(rel_close(full_psi(&affine_y(&with_x, a, b)), a * full_psi(&with_x), 1e-8));
    }

    #[test]
    fn sensitivity_is_affine_in_delta(seed in any::<u64>(), hi in 0.01f64..2.0) {
        let ct = cell_table(&random_dataset(seed, 40, 0)).unwrap();
        let cfg = SensitivityConfig { grid_points: 3, ..SensitivityConfig::new(-hi, hi) };
        let band = sensitivity_one_sample(&ct, &cfg).unwrap();
        let [p0, p1, p2] = [band.grid[0], band.grid[1], band.grid[2]];
        let slope_a = (p1.estimate - p0.estimate) / (p1.delta - p0.delta);
        let slope_b = (p2.estimate - p1.estimate) / (p2.delta - p1.delta);
        prop_assert!(rel_close(slope_a, slope_b, 1e-10));
        prop_assert_eq!(band.grid[1].estimate, wald_estimate(&ct).unwrap().beta);
    }

    #[test]
    fn union_interval_grows_with_the_range(seed in any::<u64>(), hi in 0.01f64..1.0, extra in 0.0f64..1.0) {
        let ct = cell_table(&random_dataset(seed, 40, 0)).unwrap();
        let narrow = sensitivity_one_sample(&ct, &SensitivityConfig::new(0.0, hi)).unwrap();
        let wide = sensitivity_one_sample(&ct, &SensitivityConfig::new(-extra, hi + extra)).unwrap();
        prop_assert!(wide.union_ci[0] <= narrow.union_ci[0] + 1e-12);
        prop_assert!(wide.union_ci[1] >= narrow.union_ci[1] - 1e-12);
        let first = narrow.grid[0];
        let last = narrow.grid.last().unwrap();
        prop_assert!(narrow.union_ci[0] <= first.ci_low.min(last.ci_low));
        prop_assert!(narrow.union_ci[1] >= first.ci_high.max(last.ci_high));
    }

    #[test]
    fn duplicated_rows_double_kappa(seed in any::<u64>()) {
        let data = random_dataset(seed, 80, 0);
        let mut rows = data.rows().to_vec();
        rows.extend_from_slice(data.rows());
        let once = weak_id_microdata(&data, false).unwrap().kappa2_estimate;
        let twice = weak_id_microdata(&data.with_rows(rows), false).unwrap().kappa2_estimate;
        let ratio = twice / once;
        prop_assert!((1.9..=2.1).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn fwl_matches_direct_first_stage(seed in any::<u64>(), covariates in any::<bool>()) {
        let data = random_dataset(seed, 80, 2);
        let direct = weak_id_microdata(&data, covariates).unwrap().kappa2_estimate;
        let fwl = idid::diagnostics::weak_id_microdata_fwl(&data, covariates).unwrap().kappa2_estimate;
        prop_assert!(rel_close(direct, fwl, 1e-8));
    }

    #[test]
    fn two_sample_ratio_is_exact(delta_db in prop_oneof![-0.9f64..-0.05, 0.05f64..0.9]) {
        let exposure = summary_table([0.1, 0.1, 0.1, 0.1 + delta_db], [0.0; 4], 0.01);
        let outcome = summary_table([0.0; 4], [0.0, 0.0, 0.0, 0.285 * delta_db], 0.01);
        let ts = two_sample_estimate(&outcome, &exposure).unwrap();
        prop_assert!((ts.beta - 0.285).abs() < 1e-12);
    }
}

#[test]
fn two_sample_band_decreases_in_delta() {
    // mu_Db(1,1) > mu_Db(1,0) and delta_Db > 0.
    let exposure = summary_table([0.2, 0.25, 0.3, 0.6], [0.0; 4], 0.01);
    let outcome = summary_table([0.0; 4], [1.0, 1.1, 1.3, 1.6], 0.02);
    let band = sensitivity_two_sample(&outcome, &exposure, &SensitivityConfig::new(-0.5, 0.5)).unwrap();
    assert!(band.grid.windows(2).all(|w| w[1].estimate < w[0].estimate));
    let ts = two_sample_estimate(&outcome, &exposure).unwrap();
    assert_eq!(band.grid[50].delta, 0.0);
    assert_eq!(band.grid[50].estimate, ts.beta);
}

#[test]
fn two_sample_matches_one_sample_point_estimate() {
    let ct = cell_table(&d8()).unwrap();
    let one = wald_estimate(&ct).unwrap();
    let two = two_sample_estimate(&ct, &ct).unwrap();
    assert_eq!(one.beta, two.beta);
    assert_eq!(two.beta, 4.0);
}

#[test]
fn truncated_normal_moments() {
    let mut rng = stream(11, 0);
    let m = 1_000_000;
    let draws: Vec<f64> = (0..m).map(|_| sample_truncated_normal(&mut rng)).collect();
    assert!(draws.iter().all(|v| *v > -1.0 && *v < 1.0));
    let mean = draws.iter().sum::<f64>() / m as f64;
    assert!(mean.abs() < 0.005, "mean {mean}");
    let below = draws.iter().filter(|v| **v <= 0.5).count() as f64 / m as f64;
    let phi = idid::numeric::normal_cdf;
    let expected = (phi(0.5) - phi(-1.0)) / (phi(1.0) - phi(-1.0));
    assert!((expected - 0.7805).abs() < 5e-4);
    assert!((below - expected).abs() < 0.002, "cdf {below}");
}

#[test]
fn exposure_probabilities_stay_inside_unit_interval() {
    for case in [Case::Case1, Case::Case2] {
        let units = generate_latent(&DgpCase::new(case, 50_000).unwrap(), &mut stream(5, 0));
        for u in &units {
            assert!(u.p_exposure.iter().all(|p| *p > 0.0 && *p < 1.0));
            assert!(u.u[0] > -1.0 && u.u[0] < 1.0 && u.u[1] > 0.0 && u.u[1] < 2.0);
        }
    }
}

#[test]
fn case1_design_and_wald() {
    let dgp = DgpCase::new(Case::Case1, 100_000).unwrap();
    let data = generate_case_data(&dgp, &mut stream(2024, 0));
    let share_z = data.rows().iter().filter(|r| r.z == 1).count() as f64 / 1e5;
    assert!((share_z - 0.5).abs() < 0.01);
    let w = wald(&data);
    assert!((w.beta - 1.0).abs() < 3.0 * w.se, "beta {} se {}", w.beta, w.se);

    let nf = fit_nuisance(&data, &NuisanceSpecs::FULL).unwrap();
    let err: f64 = data
        .rows()
        .iter()
        .map(|r| (nf.predict_mu_d(r.t, r.z, &r.x) - ((r.z as f64 + 1.0) * r.t as f64 / 8.0 + 0.5)).abs())
        .sum::<f64>()
        / 1e5;
    assert!(err <= 0.01, "mean abs error {err}");
}

#[test]
fn same_stream_same_data() {
    let dgp = DgpCase::new(Case::Case2, 500).unwrap();
    let a = generate_case_data(&dgp, &mut stream(9, 3));
    let b = generate_case_data(&dgp, &mut stream(9, 3));
    assert_eq!(a, b);
    let c = generate_case_data(&dgp, &mut stream(9, 4));
    assert_ne!(a, c);
}
