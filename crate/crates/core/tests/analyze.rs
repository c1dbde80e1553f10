mod common;

use proptest::prelude::*;
use warpforge::analyze::{
    self, eval_metrics, fold_report, jacobian_determinants, render_grid, spearman, SweepParam, SweepPlan,
    SweepRecord,
};
use warpforge::engine::{Architecture, RegistrationConfig};
use warpforge::regularize;
use warpforge::{register, DisplacementField, Image, RegularizerKind};

#[test]
fn zero_field_has_unit_determinants() {
    let grid = jacobian_determinants(&DisplacementField::zeros(6, 9));
    assert_eq!((grid.height, grid.width), (5, 8));
    assert!(grid.values.iter().all(|&d| d == 1.0));
    let r = fold_report(&DisplacementField::zeros(6, 9));
    assert_eq!(r.fold_count, 0);
    assert_eq!(r.fold_percent, 0.0);
    assert_eq!((r.det_min, r.det_max, r.det_mean), (1.0, 1.0, 1.0));
}

#[test]
fn uniform_scaling_determinant() {
    let u = DisplacementField::from_fn(8, 8, |y, x| (0.5 * x as f64, 0.5 * y as f64));
    let grid = jacobian_determinants(&u);
    assert!(grid.values.iter().all(|&d| (d - 2.25).abs() < 1e-12));
}

#[test]
fn folding_slope_folds_every_site() {
    let n = 10;
    let u = DisplacementField::from_fn(n, n, |_, x| (-2.0 * x as f64, 0.0));
    let r = fold_report(&u);
    assert_eq!(r.fold_count, (n - 1) * (n - 1));
    assert!((r.fold_percent - 100.0 * 81.0 / 100.0).abs() < 1e-12);
    assert!((r.det_min + 1.0).abs() < 1e-12);
}

#[test]
fn fold_threshold_is_inclusive() {
    // Slope -1 along x gives det exactly 0.
    let u = DisplacementField::from_fn(5, 5, |_, x| (-(x as f64), 0.0));
    assert_eq!(fold_report(&u).fold_count, 16);
}

#[test]
fn fold_counts_match_direct_loop() {
    for seed in 0..100 {
        let (h, w) = (3 + (seed % 6) as usize, 3 + (seed % 4) as usize);
        let u = common::random_field(h, w, 1.0, 1000 + seed);
        let grid = jacobian_determinants(&u);
        let oracle = common::determinants(&u);
        for (a, b) in grid.values.iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-10);
        }
        assert_eq!(fold_report(&u).fold_count, common::fold_count(&u), "seed {seed}");
    }
}

#[test]
fn smoothing_reduces_folds() {
    for seed in 0..5 {
        let u = common::random_field(32, 32, 3.0, 200 + seed);
        let s = regularize::gaussian_smooth_field(&u, 2.0).unwrap();
        assert!(fold_report(&s).fold_count <= fold_report(&u).fold_count);
    }
}

#[test]
fn eval_metric_examples() {
    let d = common::random_image(16, 16, 1).map(|v| v * 0.5);
    let m = eval_metrics(&d, &d).unwrap();
    assert_eq!(m.ssim, 1.0);
    assert_eq!(m.mse_255, 0.0);
    let shifted = d.map(|v| v + 16.0 / 255.0);
    assert!((eval_metrics(&shifted, &d).unwrap().mse_255 - 256.0).abs() < 1e-9);
}

#[test]
fn eval_metrics_reuse_similarity_definitions() {
    let d = common::random_image(16, 16, 2);
    let f = common::random_image(16, 16, 3);
    let m = eval_metrics(&d, &f).unwrap();
    let ssim = warpforge::similarity::ssim(&d, &f, Default::default()).unwrap();
    assert!((m.ssim - ssim).abs() < 1e-12);
    assert!((m.mse_255 - common::mse(&d, &f) * 65025.0).abs() < 1e-9);
    assert!(eval_metrics(&d, &Image::filled(8, 8, 0.0)).is_err());
}

#[test]
fn grid_rendering() {
    let zero = render_grid(&DisplacementField::zeros(16, 16), 4).unwrap();
    for y in 0..16 {
        for x in 0..16 {
            let on = y % 4 == 0 || x % 4 == 0;
            assert_eq!(zero.get(y, x), if on { 1.0 } else { 0.0 });
        }
    }
    // Sampling at p - u with u = (1, 0) moves lines one column right.
    let moved = render_grid(&DisplacementField::constant(16, 16, 1.0, 0.0), 4).unwrap();
    assert_eq!(moved.get(2, 1), 1.0);
    assert_eq!(moved.get(2, 0), 1.0); // clamped border
    assert_eq!(moved.get(2, 2), 0.0);
    let wild = render_grid(&common::random_field(16, 16, 6.0, 9), 3).unwrap();
    assert!(wild.values().iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(render_grid(&DisplacementField::zeros(4, 4), 1).is_err());
}

#[test]
fn jacobian_colours() {
    let grid = analyze::DetGrid {
        height: 1,
        width: 3,
        values: vec![1.0, -0.5, 2.5],
    };
    assert_eq!(
        analyze::jacobian_rgb(&grid),
        vec![255, 255, 255, 255, 0, 0, 0, 0, 255]
    );
}

#[test]
fn spearman_examples() {
    assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-12);
    assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 1.0, 0.0]).unwrap() + 1.0).abs() < 1e-12);
    assert_eq!(spearman(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]).unwrap(), 0.0);
    let a = [0.0, 0.0, 0.1, 0.1, 1.0, 1.0, 10.0, 10.0];
    let b = [900.0, 850.0, 10.0, 12.0, 0.0, 3.0, 0.0, 0.0];
    let got = spearman(&a, &b).unwrap();
    assert!((got - common::spearman(&a, &b)).abs() < 1e-12);
    assert!(got < 0.0);
    assert!(spearman(&[1.0], &[1.0]).is_err());
}

#[test]
fn sweep_param_application() {
    let base = RegistrationConfig {
        regularizer: RegularizerKind::GaussianSmoothing { sigma: 1.0 },
        ..RegistrationConfig::default()
    };
    let cfg = SweepParam::Sigma.apply(&base, 3.0).unwrap();
    assert_eq!(cfg.regularizer, RegularizerKind::GaussianSmoothing { sigma: 3.0 });
    assert!(SweepParam::Alpha.apply(&base, 1.0).is_err());
    assert_eq!(SweepParam::Lambda.apply(&base, 0.5).unwrap().lambda, 0.5);
    assert_eq!(SweepParam::default_for(&base.regularizer), SweepParam::Sigma);
    assert_eq!(SweepParam::default_for(&RegularizerKind::Tv), SweepParam::Lambda);
}

#[test]
fn csv_rows() {
    let mut r = SweepRecord {
        param: "lambda".into(),
        value: 0.1,
        seed: 3,
        ssim: 0.5,
        mse: 12.0,
        fold_count: 7,
        fold_percent: 0.25,
        status: "ok".into(),
    };
    assert_eq!(r.csv_row(), "lambda,0.1,3,0.5,12,7,0.25");
    let csv = analyze::sweep_csv(&[r.clone()]);
    assert_eq!(
        csv,
        "param,value,seed,ssim,mse,fold_count,fold_percent\nlambda,0.1,3,0.5,12,7,0.25\n"
    );
    r.status = "error: a, b".into();
    assert_eq!(r.csv_row(), "lambda,0.1,3,NaN,NaN,,NaN");
}

fn tiny_config() -> RegistrationConfig {
    RegistrationConfig {
        iterations: 3,
        regularizer: RegularizerKind::Diffusion,
        architecture: Architecture {
            encoder_channels: vec![4, 8],
            decoder_channels: vec![8],
            head_channels: 4,
        },
        ..RegistrationConfig::default()
    }
}

#[test]
fn single_cell_sweep_matches_register() {
    let m = common::random_image(32, 32, 4);
    let f = common::random_image(32, 32, 5);
    let base = tiny_config();
    let plan = SweepPlan {
        param: SweepParam::Lambda,
        values: vec![0.5],
        seeds: vec![9],
    };
    let out = analyze::sweep(&m, &f, &base, &plan, 1).unwrap();
    assert_eq!(out.len(), 1);
    let direct = register(
        &m,
        &f,
        None,
        &RegistrationConfig {
            lambda: 0.5,
            seed: 9,
            ..base
        },
    )
    .unwrap();
    let metrics = eval_metrics(&direct.deformed, &f).unwrap();
    let rec = &out[0].record;
    assert!(rec.is_ok());
    assert_eq!(rec.ssim, metrics.ssim);
    assert_eq!(rec.mse, metrics.mse_255);
    assert_eq!(rec.fold_count, fold_report(&direct.field).fold_count);
    assert_eq!(out[0].result.as_ref().unwrap().field, direct.field);
}

#[test]
fn sweep_is_sorted_and_independent_of_jobs() {
    let m = common::random_image(32, 32, 6);
    let f = common::random_image(32, 32, 7);
    let plan = SweepPlan {
        param: SweepParam::Lambda,
        values: vec![1.0, 0.0, 0.1],
        seeds: vec![2, 1],
    };
    let one = analyze::sweep(&m, &f, &tiny_config(), &plan, 1).unwrap();
    let three = analyze::sweep(&m, &f, &tiny_config(), &plan, 3).unwrap();
    let recs = |o: &[analyze::CellOutcome]| o.iter().map(|c| c.record.clone()).collect::<Vec<_>>();
    assert_eq!(analyze::sweep_csv(&recs(&one)), analyze::sweep_csv(&recs(&three)));
    let keys: Vec<(f64, u64)> = one.iter().map(|c| (c.record.value, c.record.seed)).collect();
    assert_eq!(
        keys,
        vec![(0.0, 1), (0.0, 2), (0.1, 1), (0.1, 2), (1.0, 1), (1.0, 2)]
    );

    // The zero-weight row is the unregularized run.
    let none = register(
        &m,
        &f,
        None,
        &RegistrationConfig {
            regularizer: RegularizerKind::None,
            seed: 1,
            ..tiny_config()
        },
    )
    .unwrap();
    assert_eq!(one[0].result.as_ref().unwrap().field, none.field);
}

#[test]
fn failed_cells_do_not_abort_the_sweep() {
    let m = common::random_image(32, 32, 8);
    let f = common::random_image(32, 32, 9);
    let plan = SweepPlan {
        param: SweepParam::Lambda,
        values: vec![-1.0, 0.5],
        seeds: vec![0],
    };
    let out = analyze::sweep(&m, &f, &tiny_config(), &plan, 1).unwrap();
    assert!(!out[0].record.is_ok());
    assert!(out[0].record.status.starts_with("error:"));
    assert!(out[0].result.is_none());
    assert!(out[1].record.is_ok());
    let empty = SweepPlan {
        values: vec![],
        ..plan
    };
    assert!(analyze::sweep(&m, &f, &tiny_config(), &empty, 1).is_err());
}

fn field_strategy(n: usize) -> impl Strategy<Value = DisplacementField> {
    prop::collection::vec(-1.5f64..1.5, 2 * n * n)
        .prop_map(move |v| DisplacementField::from_planes(n, n, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn constant_shift_leaves_determinants_unchanged(u in field_strategy(6), sx in -4.0f64..4.0, sy in -4.0f64..4.0) {
        let moved = DisplacementField::from_fn(6, 6, |y, x| {
            let (a, b) = u.get(y, x);
            (a + sx, b + sy)
        });
        let a = jacobian_determinants(&u);
        let b = jacobian_determinants(&moved);
        for (p, q) in a.values.iter().zip(&b.values) {
            prop_assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn fold_percent_is_bounded(u in field_strategy(7)) {
        let r = fold_report(&u);
        prop_assert!((0.0..=100.0).contains(&r.fold_percent));
        prop_assert!((r.fold_percent - 100.0 * r.fold_count as f64 / 49.0).abs() < 1e-12);
    }
}
