//! Property tests of the invariants each module promises.

mod common;

use std::collections::BTreeSet;

use common::gaussian_fixture;
use proptest::prelude::*;
use welsch_regression::diagnostics::basin_indicator_fraction;
use welsch_regression::estimators::{fit_lad, fit_two_stage, MObjective};
use welsch_regression::io::{read_table, write_report, Cell, Provenance, Table};
use welsch_regression::model_selection::{fold_partition, holdout_split, median_cv, CvSpec};
use welsch_regression::optimizer::{minimize, Objective};
use welsch_regression::simulation::{
    default_beta_star, generate_dataset, ContaminationSpec, DesignSpec, NoiseSpec, Strategy as Adversary,
};
use welsch_regression::{Dataset, FitConfig, LossSpec, OptimizerConfig, ScaleMode};

fn symmetric_family() -> impl Strategy<Value = LossSpec<f64>> {
    prop_oneof![
        (0.01f64..10.0).prop_map(|tau| LossSpec::Welsch { tau }),
        (0.1f64..5.0).prop_map(|gamma| LossSpec::Huber { gamma }),
        (0.5f64..8.0).prop_map(|c| LossSpec::Tukey { c }),
        (0.2f64..3.0).prop_map(|a| LossSpec::Hampel { a, b: 2.0 * a, r: 4.0 * a }),
        Just(LossSpec::Absolute),
        Just(LossSpec::Squared),
    ]
}

fn smooth_family() -> impl Strategy<Value = LossSpec<f64>> {
    prop_oneof![
        (0.05f64..2.0).prop_map(|tau| LossSpec::Welsch { tau }),
        (0.5f64..3.0).prop_map(|gamma| LossSpec::Huber { gamma }),
        (3.0f64..8.0).prop_map(|c| LossSpec::Tukey { c }),
        (1.0f64..3.0).prop_map(|a| LossSpec::Hampel { a, b: 2.0 * a, r: 4.0 * a }),
    ]
}

fn kinks(spec: &LossSpec<f64>) -> Vec<f64> {
    match *spec {
        LossSpec::Huber { gamma } => vec![gamma],
        LossSpec::Tukey { c } => vec![c],
        LossSpec::Hampel { a, b, r } => vec![a, b, r],
        LossSpec::Pinball { .. } | LossSpec::Absolute => vec![0.0],
        _ => vec![],
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn symmetric_losses_are_even_with_odd_psi(spec in symmetric_family(), x in -50.0f64..50.0) {
        prop_assert_eq!(spec.rho(x).unwrap(), spec.rho(-x).unwrap());
        prop_assert_eq!(spec.psi(x).unwrap(), -spec.psi(-x).unwrap());
    }

    #[test]
    fn welsch_is_bounded_and_monotone(tau in 0.001f64..100.0, a in 0.0f64..1e3, b in 0.0f64..1e3) {
        let spec = LossSpec::Welsch { tau };
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (rl, rh) = (spec.rho(lo).unwrap(), spec.rho(hi).unwrap());
        prop_assert!(rl >= 0.0 && rl <= rh && rh <= 1.0 / tau);
        // Strictly below the plateau wherever exp(−τx²/2) is representable above rounding.
        if tau * hi * hi / 2.0 < 30.0 {
            prop_assert!(rh < 1.0 / tau);
        }
    }

    #[test]
    fn psi_and_curvature_match_finite_differences(spec in symmetric_family(), x in -20.0f64..20.0) {
        let h = 1e-6 * x.abs().max(1.0);
        prop_assume!(kinks(&spec).iter().all(|k| (x.abs() - k).abs() > 1e3 * h));
        let fd_psi = (spec.rho(x + h).unwrap() - spec.rho(x - h).unwrap()) / (2.0 * h);
        let fd_curv = (spec.psi(x + h).unwrap() - spec.psi(x - h).unwrap()) / (2.0 * h);
        let psi = spec.psi(x).unwrap();
        let curv = spec.curvature(x).unwrap();
        // Relative error, with a floor where the derivative itself vanishes.
        prop_assert!((fd_psi - psi).abs() <= 1e-6 * psi.abs().max(1e-3), "{fd_psi} vs {psi}");
        prop_assert!((fd_curv - curv).abs() <= 1e-6 * curv.abs().max(1e-3), "{fd_curv} vs {curv}");
    }

    #[test]
    fn weight_times_argument_is_psi(spec in symmetric_family(), x in -20.0f64..20.0) {
        prop_assume!(x != 0.0);
        let psi = spec.psi(x).unwrap();
        prop_assert!((spec.weight(x).unwrap() * x - psi).abs() <= 1e-12 * psi.abs().max(1e-300));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn basin_characterizations_agree(r in -100.0f64..100.0, log_tau in -8.0f64..3.0) {
        let tau = 10f64.powf(log_tau);
        let by_weight = (-tau * r * r / 2.0).exp() >= (-0.25f64).exp();
        prop_assert_eq!(by_weight, tau * r * r <= 0.5);
        let data = Dataset::from_rows(&[vec![1.0]], vec![r]).unwrap();
        let frac = basin_indicator_fraction(&data, &[0.0], tau).unwrap();
        prop_assert_eq!(frac == 1.0, by_weight);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn lbfgs_values_strictly_decrease(seed in 0u64..10_000, tau in 0.05f64..2.0) {
        let data = gaussian_fixture(60, &[1.0, -0.5, 0.25], 1.0, seed);
        let obj = MObjective::welsch(&data, tau);
        let (_, trace) = minimize(&obj, &[0.0, 0.0, 0.0], &OptimizerConfig::default()).unwrap();
        let values: Vec<f64> = trace.records.iter().map(|r| r.value).collect();
        prop_assert!(values.windows(2).all(|w| w[1] < w[0]), "{values:?}");
    }

    #[test]
    fn converged_fits_are_stationary(seed in 0u64..10_000, spec in smooth_family()) {
        let data = gaussian_fixture(120, &[0.5, 1.0, -1.0], 1.0, seed);
        let cfg = FitConfig::new(spec);
        let fit = fit_two_stage(&data, &cfg).unwrap();
        if fit.status.is_converged() {
            let mut g = vec![0.0; 3];
            MObjective::new(&data, spec, fit.scale).value_grad(&fit.beta, &mut g);
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(norm <= 10.0 * cfg.optimizer.grad_tol, "gradient norm {norm}");
        }
    }

    #[test]
    fn translating_response_translates_estimates(
        seed in 0u64..10_000,
        v in proptest::collection::vec(-3.0f64..3.0, 3),
        which in 0usize..3,
    ) {
        let data = gaussian_fixture(100, &[1.0, 0.5, -0.5], 1.0, seed);
        let shifted = data.shifted_by(&v);
        let (a, b) = if which == 2 {
            let lad = |d: &Dataset<f64>| fit_lad(d, &[0.0; 3], 0.0, 500).unwrap().beta;
            (lad(&data), lad(&shifted))
        } else {
            let loss = if which == 0 { LossSpec::Welsch { tau: 0.3 } } else { LossSpec::Huber { gamma: 1.0 } };
            // Stage 1 runs LAD to its exact vertex in this mode, so the start translates too.
            let mut cfg = FitConfig::new(loss).with_scale_mode(ScaleMode::MadOfLadResiduals);
            cfg.optimizer.grad_tol = 1e-11;
            (fit_two_stage(&data, &cfg).unwrap().beta, fit_two_stage(&shifted, &cfg).unwrap().beta)
        };
        for j in 0..3 {
            prop_assert!((b[j] - a[j] - v[j]).abs() <= 1e-8, "coordinate {j}: {} vs {}", b[j] - a[j], v[j]);
        }
    }

    #[test]
    fn contamination_count_is_floor_of_proportion(n in 20usize..3000, proportion in 0.0f64..0.49, seed in 0u64..1000) {
        let spec = ContaminationSpec::proportion(proportion, 100.0, Adversary::RandomShift);
        let (_, truth) = generate_dataset(n, &default_beta_star(3), DesignSpec::GaussianIsotropic, &NoiseSpec::default(), &spec, seed).unwrap();
        let expected = (proportion * n as f64 + 1e-9).floor() as usize;
        prop_assert_eq!(truth.outlier_count(), expected);
        prop_assert_eq!(truth.theta.iter().filter(|t| **t != 0.0).count(), expected);
    }

    #[test]
    fn folds_partition_the_rows(n in 4usize..500, k in 2usize..10, seed in any::<u64>()) {
        prop_assume!(n >= k);
        let folds = fold_partition(n, k, seed);
        prop_assert_eq!(folds.len(), k);
        let all: BTreeSet<usize> = folds.iter().flatten().copied().collect();
        prop_assert_eq!(all.len(), n);
        prop_assert_eq!(folds.iter().map(Vec::len).sum::<usize>(), n);
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn holdout_partitions_the_rows(n in 5usize..1000, fraction in 0.05f64..0.95, seed in any::<u64>()) {
        let (train, test) = holdout_split(n, fraction, seed).unwrap();
        prop_assert_eq!(test.len(), ((fraction * n as f64).ceil() as usize).min(n));
        let all: BTreeSet<usize> = train.iter().chain(&test).copied().collect();
        prop_assert_eq!(all.len(), n);
    }

    #[test]
    fn cv_choice_is_a_grid_minimizer(seed in 0u64..1000, grid_seed in 0u64..1000) {
        let data = gaussian_fixture(60, &[1.0, 2.0], 1.0, seed);
        let base = [1e-3, 0.03, 0.3, 1.0, 4.0];
        let grid: Vec<f64> = base.iter().map(|g| g * (1.0 + (grid_seed % 7) as f64 / 10.0)).collect();
        let out = median_cv(&data, &CvSpec::new(grid.clone()).with_seed(seed), &FitConfig::new(LossSpec::Welsch { tau: 1.0 })).unwrap();
        prop_assert!(grid.contains(&out.chosen));
        let best = out.chosen_row().aggregate.unwrap();
        for row in &out.rows {
            if let Some(a) = row.aggregate {
                prop_assert!(best <= a);
                if a == best {
                    prop_assert!(out.chosen <= row.candidate);
                }
            }
        }
    }

    #[test]
    fn report_floats_round_trip(values in proptest::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..20)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let mut t = Table::new(["value"]);
        for &v in &values {
            t.push(vec![Cell::Float(v)]);
        }
        write_report(&t, &path, &Provenance::new("test", None, std::collections::BTreeMap::<String, f64>::new())).unwrap();
        let (_, rows) = read_table(&path).unwrap();
        let back: Vec<f64> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
        prop_assert_eq!(back, values);
    }
}
