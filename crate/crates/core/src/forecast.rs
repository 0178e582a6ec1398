//! Local twin model: a linear autoregressive forecaster over a fixed window.
//!
//! Windows are ordered most-recent-first, so `window[0]` is the value just
//! before the forecast target. Parameters pack as `[w_1 .. w_W, bias]`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamVec;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearForecaster<F> {
    pub weights: Vec<F>,
    pub bias: F,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub window: usize,
    pub learning_rate: f64,
    pub epochs: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            window: 12,
            learning_rate: 0.1,
            epochs: 5,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::config("forecaster.window", "must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("forecaster.learning_rate", "must be positive"));
        }
        Ok(())
    }
}

/// Per-cell min-max statistics, frozen from a training split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinMaxScaler<F> {
    pub min: F,
    pub max: F,
}

impl<F: Scalar> MinMaxScaler<F> {
    pub fn fit(series: &[F]) -> Self {
        let min = series.iter().copied().fold(F::infinity(), F::min);
        let max = series.iter().copied().fold(F::neg_infinity(), F::max);
        if series.is_empty() {
            MinMaxScaler {
                min: F::zero(),
                max: F::one(),
            }
        } else {
            MinMaxScaler { min, max }
        }
    }

    /// Range used for scaling; a flat series scales by one.
    fn range(&self) -> F {
        let r = self.max - self.min;
        if r > F::zero() {
            r
        } else {
            F::one()
        }
    }

    pub fn normalize(&self, v: F) -> F {
        (v - self.min) / self.range()
    }

    pub fn denormalize(&self, v: F) -> F {
        v * self.range() + self.min
    }

    pub fn normalize_all(&self, series: &[F]) -> Vec<F> {
        series.iter().map(|&v| self.normalize(v)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample<F> {
    pub window: Vec<F>,
    pub target: F,
}

/// Sliding `(window, target)` pairs over an already normalized series.
pub fn sliding_samples<F: Scalar>(series: &[F], window: usize) -> Vec<Sample<F>> {
    if series.len() <= window {
        return Vec::new();
    }
    (window..series.len())
        .map(|t| Sample {
            window: (1..=window).map(|lag| series[t - lag]).collect(),
            target: series[t],
        })
        .collect()
}

impl<F: Scalar> LinearForecaster<F> {
    pub fn zeros(window: usize) -> Self {
        LinearForecaster {
            weights: vec![F::zero(); window],
            bias: F::zero(),
        }
    }

    /// Gaussian initialization with standard deviation `scale`.
    pub fn random<R: Rng + ?Sized>(window: usize, scale: f64, rng: &mut R) -> Self {
        let mut draw = || F::lit(scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng));
        let weights = (0..window).map(|_| draw()).collect();
        LinearForecaster { weights, bias: draw() }
    }

    pub fn window(&self) -> usize {
        self.weights.len()
    }

    pub fn n_params(&self) -> usize {
        self.weights.len() + 1
    }

    pub fn pack(&self) -> ParamVec<F> {
        let mut v = self.weights.clone();
        v.push(self.bias);
        ParamVec(v)
    }

    pub fn unpack(params: &ParamVec<F>) -> Result<Self> {
        let (bias, weights) = params
            .as_slice()
            .split_last()
            .ok_or_else(|| Error::domain("parameter vector must hold at least the bias"))?;
        Ok(LinearForecaster {
            weights: weights.to_vec(),
            bias: *bias,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.bias.is_finite() && self.weights.iter().all(|w| w.is_finite())
    }

    pub fn predict(&self, window: &[F]) -> Result<F> {
        if window.len() != self.weights.len() {
            return Err(Error::Dimension {
                expected: self.weights.len(),
                got: window.len(),
            });
        }
        Ok(self.predict_unchecked(window))
    }

    fn predict_unchecked(&self, window: &[F]) -> F {
        self.weights.iter().zip(window).map(|(w, x)| *w * *x).sum::<F>() + self.bias
    }

    fn check_samples(&self, samples: &[Sample<F>]) -> Result<()> {
        if samples.is_empty() {
            return Err(Error::domain("no samples"));
        }
        if let Some(s) = samples.iter().find(|s| s.window.len() != self.weights.len()) {
            return Err(Error::Dimension {
                expected: self.weights.len(),
                got: s.window.len(),
            });
        }
        Ok(())
    }

    pub fn mse_loss(&self, samples: &[Sample<F>]) -> Result<F> {
        self.check_samples(samples)?;
        let total: F = samples
            .iter()
            .map(|s| {
                let r = self.predict_unchecked(&s.window) - s.target;
                r * r
            })
            .sum();
        Ok(total / F::count(samples.len()))
    }

    /// Exact gradient of [`Self::mse_loss`] w.r.t. the packed parameters.
    pub fn gradient(&self, samples: &[Sample<F>]) -> Result<ParamVec<F>> {
        self.check_samples(samples)?;
        let mut grad = vec![F::zero(); self.n_params()];
        for s in samples {
            let r = self.predict_unchecked(&s.window) - s.target;
            for (g, x) in grad.iter_mut().zip(&s.window) {
                *g = *g + r * *x;
            }
            grad[self.weights.len()] = grad[self.weights.len()] + r;
        }
        let scale = F::lit(2.0) / F::count(samples.len());
        Ok(ParamVec(grad.into_iter().map(|g| g * scale).collect()))
    }

    /// Full-batch gradient descent for `cfg.epochs` steps.
    pub fn train_on_samples(&self, samples: &[Sample<F>], cfg: &TrainingConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.epochs == 0 {
            return Ok(self.clone());
        }
        self.check_samples(samples)?;
        let lr = F::lit(cfg.learning_rate);
        let mut params = self.pack();
        for _ in 0..cfg.epochs {
            let model = Self::unpack(&params)?;
            let grad = model.gradient(samples)?;
            params = params.add_scaled(&grad, -lr)?;
        }
        Self::unpack(&params)
    }
}

/// Trains on one cell's raw series: normalizes with `scaler`, builds sliding
/// windows and runs full-batch descent. Returns the model and window count.
pub fn train_local<F: Scalar>(
    model: &LinearForecaster<F>,
    series: &[F],
    scaler: &MinMaxScaler<F>,
    cfg: &TrainingConfig,
) -> Result<(LinearForecaster<F>, usize)> {
    let w = model.window();
    if series.len() <= w {
        return Err(Error::domain(format!(
            "series of length {} too short for window {w}",
            series.len()
        )));
    }
    let samples = sliding_samples(&scaler.normalize_all(series), w);
    let trained = model.train_on_samples(&samples, cfg)?;
    Ok((trained, samples.len()))
}

/// One-step-ahead forecasts, teacher-forced on the true series, denormalized.
///
/// The forecasts target indices `len - horizon + 1 ..= len` of `series`; the
/// last one is the out-of-sample next step.
pub fn rolling_forecast<F: Scalar>(
    model: &LinearForecaster<F>,
    series: &[F],
    scaler: &MinMaxScaler<F>,
    horizon: usize,
) -> Result<Vec<F>> {
    let w = model.window();
    if horizon < 1 {
        return Err(Error::domain("forecast horizon must be at least 1"));
    }
    if series.len() < w {
        return Err(Error::domain(format!(
            "series of length {} shorter than window {w}",
            series.len()
        )));
    }
    if horizon > series.len() - w + 1 {
        return Err(Error::domain(format!(
            "horizon {horizon} exceeds the {} forecastable steps",
            series.len() - w + 1
        )));
    }
    let norm = scaler.normalize_all(series);
    let first = series.len() + 1 - horizon;
    let mut window = vec![F::zero(); w];
    Ok((first..=series.len())
        .map(|t| {
            for (lag, slot) in window.iter_mut().enumerate() {
                *slot = norm[t - 1 - lag];
            }
            scaler.denormalize(model.predict_unchecked(&window))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;
    use rand::Rng;

    fn model(weights: &[f64], bias: f64) -> LinearForecaster<f64> {
        LinearForecaster {
            weights: weights.to_vec(),
            bias,
        }
    }

    fn random_instance(rng: &mut impl Rng, w: usize, n: usize) -> (LinearForecaster<f64>, Vec<Sample<f64>>) {
        let m = LinearForecaster::random(w, 1.0, rng);
        let samples = (0..n)
            .map(|_| Sample {
                window: (0..w).map(|_| rng.random_range(-1.0..1.0)).collect(),
                target: rng.random_range(-1.0..1.0),
            })
            .collect();
        (m, samples)
    }

    #[test]
    fn predict_examples() {
        assert_eq!(model(&[0.0; 4], 3.0).predict(&[1.0, 9.0, -2.0, 4.0]).unwrap(), 3.0);
        assert_eq!(model(&[1.0, 0.0, 0.0], 0.0).predict(&[7.0, 5.0, 2.0]).unwrap(), 7.0);
        assert_eq!(model(&[0.5, 0.5], 1.0).predict(&[2.0, 4.0]).unwrap(), 4.0);
        assert!(matches!(
            model(&[1.0, 2.0], 0.0).predict(&[1.0]),
            Err(Error::Dimension { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn mse_examples() {
        let perfect = model(&[1.0], 0.0);
        let s = vec![
            Sample {
                window: vec![2.0],
                target: 2.0,
            },
            Sample {
                window: vec![-3.0],
                target: -3.0,
            },
        ];
        assert_eq!(perfect.mse_loss(&s).unwrap(), 0.0);
        let zero = model(&[0.0], 0.0);
        let s = vec![
            Sample {
                window: vec![5.0],
                target: 1.0,
            },
            Sample {
                window: vec![5.0],
                target: -1.0,
            },
        ];
        assert_eq!(zero.mse_loss(&s).unwrap(), 1.0);
        assert!(matches!(zero.mse_loss(&[]), Err(Error::Domain(_))));
    }

    #[test]
    fn mse_matches_direct_summation() {
        let mut rng = stream(17, "mse");
        let (m, samples) = random_instance(&mut rng, 3, 5);
        let mut oracle = 0.0;
        for s in &samples {
            let mut p = m.bias;
            for i in 0..3 {
                p += m.weights[i] * s.window[i];
            }
            oracle += (p - s.target) * (p - s.target);
        }
        oracle /= 5.0;
        assert!((m.mse_loss(&samples).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn gradient_examples() {
        let perfect = model(&[2.0], 1.0);
        let s = vec![
            Sample {
                window: vec![1.0],
                target: 3.0,
            },
            Sample {
                window: vec![4.0],
                target: 9.0,
            },
        ];
        assert_eq!(perfect.gradient(&s).unwrap(), ParamVec(vec![0.0, 0.0]));
        let zero = model(&[0.0], 0.0);
        let s = vec![Sample {
            window: vec![1.0],
            target: 1.0,
        }];
        assert_eq!(zero.gradient(&s).unwrap(), ParamVec(vec![-2.0, -2.0]));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = stream(3, "grad");
        for _ in 0..100 {
            let w = rng.random_range(1..8);
            let n = rng.random_range(1..12);
            let (m, samples) = random_instance(&mut rng, w, n);
            let grad = m.gradient(&samples).unwrap();
            let base = m.pack();
            let h = 1e-6;
            for i in 0..base.len() {
                let mut plus = base.clone();
                plus[i] += h;
                let mut minus = base.clone();
                minus[i] -= h;
                let lp = LinearForecaster::unpack(&plus).unwrap().mse_loss(&samples).unwrap();
                let lm = LinearForecaster::unpack(&minus).unwrap().mse_loss(&samples).unwrap();
                let fd = (lp - lm) / (2.0 * h);
                let rel = (fd - grad[i]).abs() / grad[i].abs().max(fd.abs()).max(1e-8);
                assert!(rel < 1e-5, "component {i}: analytic {} vs fd {fd}", grad[i]);
            }
        }
    }

    #[test]
    fn small_step_never_increases_loss() {
        let mut rng = stream(4, "descent");
        let cfg = TrainingConfig {
            window: 0,
            learning_rate: 1e-3,
            epochs: 1,
        };
        for _ in 0..100 {
            let w = rng.random_range(1..8);
            let n = rng.random_range(1..20);
            let (m, samples) = random_instance(&mut rng, w, n);
            let cfg = TrainingConfig { window: w, ..cfg };
            let next = m.train_on_samples(&samples, &cfg).unwrap();
            assert!(next.mse_loss(&samples).unwrap() <= m.mse_loss(&samples).unwrap());
        }
    }

    proptest! {
        #[test]
        fn predict_is_affine(
            w in proptest::collection::vec(-3.0f64..3.0, 4),
            b in -3.0f64..3.0,
            x in proptest::collection::vec(-3.0f64..3.0, 4),
            y in proptest::collection::vec(-3.0f64..3.0, 4),
            alpha in -2.0f64..2.0,
            beta in -2.0f64..2.0,
        ) {
            let m = model(&w, b);
            let mix: Vec<f64> = x.iter().zip(&y).map(|(a, c)| alpha * a + beta * c).collect();
            let lhs = m.predict(&mix).unwrap();
            let rhs = alpha * m.predict(&x).unwrap() + beta * m.predict(&y).unwrap() - (alpha + beta - 1.0) * b;
            prop_assert!((lhs - rhs).abs() < 1e-9);
        }

        #[test]
        fn pack_round_trip(values in proptest::collection::vec(-10.0f64..10.0, 1..20)) {
            let v = ParamVec(values);
            prop_assert_eq!(LinearForecaster::unpack(&v).unwrap().pack(), v);
        }
    }

    #[test]
    fn zero_epochs_is_noop() {
        let m = model(&[0.3, -0.2], 0.1);
        let series: Vec<f64> = (0..20).map(|t| t as f64).collect();
        let scaler = MinMaxScaler::fit(&series);
        let cfg = TrainingConfig {
            window: 2,
            learning_rate: 0.1,
            epochs: 0,
        };
        let (out, n) = train_local(&m, &series, &scaler, &cfg).unwrap();
        assert_eq!(out, m);
        assert_eq!(n, 18);
    }

    #[test]
    fn short_series_rejected() {
        let m = LinearForecaster::<f64>::zeros(4);
        let series = [1.0, 2.0, 3.0, 4.0];
        let err = train_local(&m, &series, &MinMaxScaler::fit(&series), &TrainingConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn constant_series_converges_monotonically() {
        // Loss after each single-epoch call must not increase at lr <= 0.1.
        let series = vec![7.5; 60];
        let scaler = MinMaxScaler::fit(&series);
        let cfg = TrainingConfig {
            window: 3,
            learning_rate: 0.1,
            epochs: 1,
        };
        let samples = sliding_samples(&scaler.normalize_all(&series), 3);
        let mut m = model(&[0.4, -0.3, 0.2], 0.9);
        let mut prev = m.mse_loss(&samples).unwrap();
        for _ in 0..300 {
            m = train_local(&m, &series, &scaler, &cfg).unwrap().0;
            let loss = m.mse_loss(&samples).unwrap();
            assert!(loss <= prev);
            prev = loss;
        }
        // Converged model reproduces the constant after denormalization.
        let preds = rolling_forecast(&m, &series, &scaler, 10).unwrap();
        assert!(preds.iter().all(|p| (p - 7.5).abs() < 1e-6), "{preds:?}");
    }

    #[test]
    fn training_is_deterministic() {
        let series: Vec<f64> = (0..80).map(|t| (t as f64 * 0.3).sin() + 2.0).collect();
        let scaler = MinMaxScaler::fit(&series);
        let cfg = TrainingConfig {
            window: 4,
            learning_rate: 0.05,
            epochs: 7,
        };
        let m = LinearForecaster::zeros(4);
        assert_eq!(
            train_local(&m, &series, &scaler, &cfg).unwrap(),
            train_local(&m, &series, &scaler, &cfg).unwrap()
        );
    }

    #[test]
    fn rolling_forecast_shapes_and_selector() {
        let series = vec![3.0, 8.0, 1.0, 6.0, 4.0];
        let scaler = MinMaxScaler::fit(&series);
        let selector = model(&[1.0, 0.0], 0.0);
        let one = rolling_forecast(&selector, &series, &scaler, 1).unwrap();
        assert_eq!(one.len(), 1);
        assert!((one[0] - 4.0).abs() < 1e-12);
        let all = rolling_forecast(&selector, &series, &scaler, 4).unwrap();
        assert_eq!(all.len(), 4);
        // Target indices 2..=5; the selector returns the preceding value.
        for (p, prev) in all.iter().zip(&series[1..]) {
            assert!((p - prev).abs() < 1e-12);
        }
        assert!(rolling_forecast(&selector, &series, &scaler, 0).is_err());
        assert!(rolling_forecast(&selector, &series, &scaler, 5).is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let m: LinearForecaster<f32> = LinearForecaster {
            weights: vec![0.5, 0.5],
            bias: 1.0,
        };
        assert_eq!(m.predict(&[2.0, 4.0]).unwrap(), 4.0);
        let s = vec![Sample {
            window: vec![1.0f32, 1.0],
            target: 0.0,
        }];
        assert_eq!(m.gradient(&s).unwrap().len(), 3);
    }
}
