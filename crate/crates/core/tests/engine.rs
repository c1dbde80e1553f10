mod common;

use warpforge::data::{make_phantom, PhantomKind, PhantomSpec};
use warpforge::engine::{
    self, adam_step, prefilter_fixed, sgd_step, AdamState, Architecture, Optimizer, Precision,
    RegistrationConfig,
};
use warpforge::similarity::SimilarityKind;
use warpforge::tensor::filter::gaussian_kernel;
use warpforge::tensor::Tensor;
use warpforge::warp::warp_bilinear;
use warpforge::{register, Error, Image, LabelMap, RegularizerKind};

fn small_arch() -> Architecture {
    Architecture {
        encoder_channels: vec![4, 8],
        decoder_channels: vec![8],
        head_channels: 4,
    }
}

fn quick(iterations: usize) -> RegistrationConfig {
    RegistrationConfig {
        iterations,
        architecture: small_arch(),
        ..RegistrationConfig::default()
    }
}

fn pair(size: usize) -> (Image, Image) {
    let (moving, _) = make_phantom(&PhantomSpec::new(PhantomKind::SheppLogan, size)).unwrap();
    let shifted = warpforge::DisplacementField::from_fn(size, size, |y, x| {
        let t = (y as f64 / size as f64 * 6.0).sin() + (x as f64 / size as f64 * 4.0).cos();
        (1.5 * t, -t)
    });
    let fixed = warp_bilinear(&moving, &shifted).unwrap();
    (moving, fixed)
}

#[test]
fn adam_ignores_zero_gradient() {
    let mut p: Vec<Tensor<f64>> = vec![Tensor::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap()];
    let before = p.clone();
    let g = vec![Tensor::<f64>::zeros(&[3])];
    let mut state = AdamState::new(&p);
    for _ in 0..3 {
        adam_step(&mut p, &g, &mut state, 1e-3, 0.9, 0.999, 1e-8).unwrap();
    }
    assert_eq!(p, before);
}

#[test]
fn adam_first_and_second_steps_match_hand_arithmetic() {
    let (lr, b1, b2, eps) = (0.01, 0.9, 0.999, 1e-8);
    let mut p: Vec<Tensor<f64>> = vec![Tensor::from_f64(&[2], &[1.0, 1.0]).unwrap()];
    let mut state = AdamState::new(&p);
    let g1 = [0.5, -4.0];
    adam_step(
        &mut p,
        &[Tensor::from_f64(&[2], &g1).unwrap()],
        &mut state,
        lr,
        b1,
        b2,
        eps,
    )
    .unwrap();
    // Bias-corrected first step: m̂ = g, v̂ = g², so the step is lr·g/(|g| + eps).
    for (i, &g) in g1.iter().enumerate() {
        let want = 1.0 - lr * g / (g.abs() + eps);
        assert!((p[0].data()[i] - want).abs() < 1e-15);
    }
    let g2 = [1.0, 2.0];
    let before: Vec<f64> = p[0].data().to_vec();
    adam_step(
        &mut p,
        &[Tensor::from_f64(&[2], &g2).unwrap()],
        &mut state,
        lr,
        b1,
        b2,
        eps,
    )
    .unwrap();
    for i in 0..2 {
        let m = b1 * (1.0 - b1) * g1[i] + (1.0 - b1) * g2[i];
        let v = b2 * (1.0 - b2) * g1[i] * g1[i] + (1.0 - b2) * g2[i] * g2[i];
        let m_hat = m / (1.0 - b1 * b1);
        let v_hat = v / (1.0 - b2 * b2);
        let want = before[i] - lr * m_hat / (v_hat.sqrt() + eps);
        assert!(
            (p[0].data()[i] - want).abs() < 1e-14,
            "{} vs {want}",
            p[0].data()[i]
        );
    }
}

#[test]
fn adam_rejects_mismatched_state() {
    let mut p = vec![Tensor::<f64>::zeros(&[2])];
    let mut state = AdamState::new(&[Tensor::<f64>::zeros(&[3])]);
    assert!(adam_step(&mut p, &[Tensor::zeros(&[2])], &mut state, 1e-3, 0.9, 0.999, 1e-8).is_err());
}

#[test]
fn sgd_momentum_accumulates() {
    let mut p: Vec<Tensor<f64>> = vec![Tensor::from_f64(&[1], &[1.0]).unwrap()];
    let mut v = vec![Tensor::<f64>::zeros(&[1])];
    let g = vec![Tensor::from_f64(&[1], &[2.0]).unwrap()];
    sgd_step(&mut p, &g, &mut v, 0.1, 0.5).unwrap();
    assert!((p[0].data()[0] - 0.8).abs() < 1e-15);
    sgd_step(&mut p, &g, &mut v, 0.1, 0.5).unwrap();
    // v = 0.5·2 + 2 = 3
    assert!((p[0].data()[0] - 0.5).abs() < 1e-15);
}

#[test]
fn zero_lambda_matches_no_regularizer() {
    let (m, f) = pair(32);
    let none = register(&m, &f, None, &quick(6)).unwrap();
    let cfg = RegistrationConfig {
        regularizer: RegularizerKind::Diffusion,
        lambda: 0.0,
        ..quick(6)
    };
    let diff = register(&m, &f, None, &cfg).unwrap();
    assert_eq!(none.loss_trace, diff.loss_trace);
    assert_eq!(none.field.planes(), diff.field.planes());
}

#[test]
fn total_is_similarity_plus_weighted_penalty() {
    let (m, f) = pair(32);
    for reg in [
        RegularizerKind::Diffusion,
        RegularizerKind::Tv,
        RegularizerKind::DiffusionJacobian { alpha: 2.0 },
    ] {
        let cfg = RegistrationConfig {
            regularizer: reg,
            lambda: 0.05,
            precision: Precision::F64,
            ..quick(5)
        };
        let r = register(&m, &f, None, &cfg).unwrap();
        assert_eq!(r.loss_trace.len(), r.iterations_run);
        assert_eq!(r.iterations_run, 5);
        for rec in &r.loss_trace {
            assert!((rec.total - (rec.similarity + 0.05 * rec.regularizer)).abs() < 1e-10);
            assert!(rec.regularizer > 0.0, "{}", reg.name());
        }
    }
}

#[test]
fn deformed_image_is_recomputable_from_field() {
    let (m, f) = pair(32);
    let labels = LabelMap::new(32, 32, (0..32 * 32).map(|i| (i % 5) as u16).collect()).unwrap();
    let r = register(&m, &f, Some(&labels), &quick(4)).unwrap();
    let again = warp_bilinear(&m, &r.field).unwrap();
    for (a, b) in again.values().iter().zip(r.deformed.values()) {
        assert!((a - b).abs() <= 1e-6);
    }
    let warped = r.deformed_labels.expect("labels were given");
    assert_eq!(warped, warpforge::warp::warp_nearest(&labels, &r.field).unwrap());
}

#[test]
fn registrations_are_stateless_and_deterministic() {
    let (m, f) = pair(32);
    let cfg = RegistrationConfig { seed: 42, ..quick(5) };
    let a = register(&m, &f, None, &cfg).unwrap();
    let (other_m, other_f) = (f.clone(), m.clone());
    let _ = register(&other_m, &other_f, None, &quick(3)).unwrap();
    let b = register(&m, &f, None, &cfg).unwrap();
    assert_eq!(a.field.planes(), b.field.planes());
    assert_eq!(a.loss_trace, b.loss_trace);
    let c = register(&m, &f, None, &RegistrationConfig { seed: 43, ..cfg }).unwrap();
    assert_ne!(a.field.planes(), c.field.planes());
}

#[test]
fn best_loss_improves_over_the_run() {
    let (m, f) = pair(32);
    let r = register(&m, &f, None, &quick(30)).unwrap();
    let best = r
        .loss_trace
        .iter()
        .map(|rec| rec.total)
        .fold(f64::INFINITY, f64::min);
    assert!(best < r.loss_trace[0].total);
}

#[test]
fn self_registration_converges() {
    let (img, _) = make_phantom(&PhantomSpec::new(PhantomKind::SheppLogan, 64)).unwrap();
    let cfg = RegistrationConfig {
        iterations: 200,
        ..RegistrationConfig::default()
    };
    let r = register(&img, &img, None, &cfg).unwrap();
    let last = r.loss_trace.last().unwrap();
    assert!(last.similarity <= 1e-3, "{last:?}");
    assert!(r.field.mean_magnitude() <= 0.5, "{}", r.field.mean_magnitude());
}

#[test]
fn diverging_run_reports_iteration() {
    let (m, f) = pair(32);
    let cfg = RegistrationConfig {
        optimizer: Optimizer::Sgd { momentum: 0.0 },
        // Overflows 32-bit weights on the first update.
        learning_rate: 1e300,
        similarity: SimilarityKind::Mse,
        ..quick(5)
    };
    match register(&m, &f, None, &cfg) {
        Err(Error::NonFinite { iteration }) => assert!((1..5).contains(&iteration)),
        other => panic!("expected a non-finite abort, got {other:?}"),
    }
}

#[test]
fn collapsed_deformation_reports_iteration() {
    let (m, f) = pair(32);
    let cfg = RegistrationConfig {
        learning_rate: 1e300,
        ..quick(5)
    };
    match register(&m, &f, None, &cfg) {
        Err(Error::Diverged { iteration, .. }) | Err(Error::NonFinite { iteration }) => {
            assert!((1..5).contains(&iteration))
        }
        other => panic!("expected a divergence abort, got {other:?}"),
    }
}

#[test]
fn constant_fixed_image_is_a_structured_error() {
    let (m, _) = pair(32);
    let flat = Image::filled(32, 32, 0.3);
    let cfg = RegistrationConfig {
        similarity: SimilarityKind::Pcc,
        ..quick(2)
    };
    assert!(matches!(
        register(&m, &flat, None, &cfg),
        Err(Error::ZeroVariance { .. })
    ));
}

#[test]
fn invalid_configs_are_rejected() {
    let (m, f) = pair(32);
    let bad = [
        RegistrationConfig {
            iterations: 0,
            ..quick(1)
        },
        RegistrationConfig {
            learning_rate: 0.0,
            ..quick(1)
        },
        RegistrationConfig {
            lambda: -1.0,
            ..quick(1)
        },
        RegistrationConfig {
            prefilter_sigma: Some(0.0),
            ..quick(1)
        },
        RegistrationConfig {
            regularizer: RegularizerKind::GaussianSmoothing { sigma: 0.0 },
            ..quick(1)
        },
    ];
    for cfg in bad {
        assert!(
            matches!(register(&m, &f, None, &cfg), Err(Error::Config(_))),
            "{cfg:?}"
        );
    }
    let wrong = Image::filled(16, 16, 0.5);
    assert!(matches!(
        register(&m, &wrong, None, &quick(1)),
        Err(Error::Shape { .. })
    ));
    let odd = Image::filled(36, 36, 0.5);
    assert!(register(&odd, &odd, None, &quick(1)).is_err());
}

#[test]
fn config_round_trips_through_json() {
    let cfg = RegistrationConfig {
        regularizer: RegularizerKind::DiffusionJacobian { alpha: 0.5 },
        lambda: 1.0,
        prefilter_sigma: Some(0.8),
        precision: Precision::F64,
        ..RegistrationConfig::default()
    };
    let text = serde_json::to_string(&cfg).unwrap();
    assert_eq!(serde_json::from_str::<RegistrationConfig>(&text).unwrap(), cfg);
}

#[test]
fn prefilter_examples() {
    let img = common::random_image(16, 16, 3);
    let near = prefilter_fixed(&img, 0.01).unwrap();
    for (a, b) in near.values().iter().zip(img.values()) {
        assert!((a - b).abs() < 1e-6);
    }
    let flat = Image::filled(12, 12, 0.7);
    for v in prefilter_fixed(&flat, 2.0).unwrap().values() {
        assert!((v - 0.7).abs() < 1e-12);
    }
    assert!(prefilter_fixed(&img, 0.0).is_err());
}

#[test]
fn prefilter_impulse_matches_kernel_outer_product() {
    let n = 17;
    let c = 8;
    let img = Image::from_fn(n, n, |y, x| if (y, x) == (c, c) { 1.0 } else { 0.0 });
    let out = prefilter_fixed(&img, 0.8).unwrap();
    let k = gaussian_kernel(0.8);
    let r = k.len() / 2;
    for y in 0..n {
        for x in 0..n {
            let (dy, dx) = (y as isize - c as isize, x as isize - c as isize);
            let want = if dy.unsigned_abs() <= r && dx.unsigned_abs() <= r {
                k[(dy + r as isize) as usize] * k[(dx + r as isize) as usize]
            } else {
                0.0
            };
            assert!((out.get(y, x) - want).abs() < 1e-15, "({y},{x})");
        }
    }
}

#[test]
fn default_config_values() {
    let cfg = RegistrationConfig::default();
    assert_eq!(cfg.iterations, engine::DEFAULT_ITERATIONS);
    assert_eq!(cfg.learning_rate, 1e-3);
    assert_eq!(
        cfg.optimizer,
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8
        }
    );
    assert_eq!(cfg.similarity, SimilarityKind::ssim_pcc());
    assert_eq!(cfg.regularizer, RegularizerKind::None);
}
