#[path = "support/oracles.rs"]
mod oracles;

use dnt_core::forecast::{LinearForecaster, Sample};
use dnt_core::metrics::{quality_report, REPORT_CAP};
use dnt_core::rng::stream;
use oracles::*;
use proptest::prelude::*;
use rand::Rng;

fn samples(windows: &[Vec<f64>], targets: &[f64]) -> Vec<Sample<f64>> {
    windows
        .iter()
        .zip(targets)
        .map(|(w, t)| Sample {
            window: w.clone(),
            target: *t,
        })
        .collect()
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = stream(201, "fd-gradient");
    for _ in 0..100 {
        let (weights, bias, windows, targets) = random_ar_instance(&mut rng, 16, 40);
        let model = LinearForecaster {
            weights: weights.clone(),
            bias,
        };
        let got = model.gradient(&samples(&windows, &targets)).unwrap();
        let fd = finite_difference_gradient(&weights, bias, &windows, &targets, 1e-5);
        let err = relative_error(&got.0, &fd);
        assert!(err < 1e-5, "relative error {err}");
    }
}

#[test]
fn loss_matches_direct_sum() {
    let mut rng = stream(202, "loss");
    for _ in 0..50 {
        let (weights, bias, windows, targets) = random_ar_instance(&mut rng, 8, 20);
        let model = LinearForecaster {
            weights: weights.clone(),
            bias,
        };
        let got = model.mse_loss(&samples(&windows, &targets)).unwrap();
        assert!(close(got, ar_loss(&weights, bias, &windows, &targets), 1e-12));
    }
}

#[test]
fn f32_gradient_tracks_f64() {
    let mut rng = stream(203, "f32");
    let (weights, bias, windows, targets) = random_ar_instance(&mut rng, 6, 10);
    let m64 = LinearForecaster {
        weights: weights.clone(),
        bias,
    };
    let m32 = LinearForecaster {
        weights: weights.iter().map(|w| *w as f32).collect(),
        bias: bias as f32,
    };
    let s32: Vec<Sample<f32>> = windows
        .iter()
        .zip(&targets)
        .map(|(w, t)| Sample {
            window: w.iter().map(|x| *x as f32).collect(),
            target: *t as f32,
        })
        .collect();
    let g64 = m64.gradient(&samples(&windows, &targets)).unwrap();
    let g32 = m32.gradient(&s32).unwrap();
    let g32: Vec<f64> = g32.iter().map(|x| *x as f64).collect();
    assert!(relative_error(&g32, &g64.0) < 1e-4);
}

#[test]
fn quality_matches_oracle() {
    let mut rng = stream(204, "quality");
    for _ in 0..100 {
        let n = rng.random_range(2..60);
        let truth: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
        let pred: Vec<f64> = truth.iter().map(|t| t + rng.random_range(-3.0..3.0)).collect();
        let r = quality_report(&pred, &truth).unwrap();
        let (mae, mse, nrmse) = quality_oracle(&pred, &truth);
        assert!(close(r.mae.raw, mae, 1e-12));
        assert!(close(r.mse.raw, mse, 1e-12));
        assert!(close(r.nrmse.unwrap().raw, nrmse, 1e-12));
    }
}

#[test]
fn constant_truth_has_no_nrmse() {
    let r = quality_report(&[1.0, 2.0], &[3.0, 3.0]).unwrap();
    assert!(r.nrmse.is_none());
    assert!(r.nrmse().is_err());
}

proptest! {
    #[test]
    fn reported_errors_never_exceed_cap(scale in 0.0..1e6f64, n in 2..30usize) {
        let truth: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let pred: Vec<f64> = truth.iter().map(|t| t + scale).collect();
        let r = quality_report(&pred, &truth).unwrap();
        for m in [r.mae, r.mse, r.nrmse.unwrap()] {
            prop_assert!(m.reported <= REPORT_CAP);
            prop_assert_eq!(m.capped, m.raw > REPORT_CAP);
            if !m.capped {
                prop_assert_eq!(m.reported, m.raw);
            }
        }
    }
}
