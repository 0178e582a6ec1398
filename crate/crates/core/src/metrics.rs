//! Twin-quality metrics and the training/communication cost ledger.

use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Reported error values never exceed this cap.
pub const REPORT_CAP: f64 = 100.0;

/// Size of one raw traffic record: (cell, time, value).
pub const RECORD_SIZE: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metric<F> {
    /// Uncapped value; keeps ordering information past the cap.
    pub raw: F,
    pub reported: F,
    pub capped: bool,
}

impl<F: Scalar> Metric<F> {
    pub fn new(raw: F) -> Self {
        let cap = F::lit(REPORT_CAP);
        let capped = !(raw <= cap);
        Metric {
            raw,
            reported: if capped { cap } else { raw },
            capped,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityReport<F> {
    pub mae: Metric<F>,
    pub mse: Metric<F>,
    /// `None` when the truth has zero range.
    pub nrmse: Option<Metric<F>>,
}

impl<F: Scalar> QualityReport<F> {
    pub fn nrmse(&self) -> Result<Metric<F>> {
        self.nrmse
            .ok_or_else(|| Error::domain("NRMSE undefined: ground truth has zero range"))
    }
}

pub fn quality_report<F: Scalar>(predictions: &[F], truth: &[F]) -> Result<QualityReport<F>> {
    if predictions.len() != truth.len() {
        return Err(Error::Dimension {
            expected: truth.len(),
            got: predictions.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::domain("quality report needs at least one point"));
    }
    let n = F::count(truth.len());
    let mut abs = F::zero();
    let mut sq = F::zero();
    for (p, t) in predictions.iter().zip(truth) {
        let e = *p - *t;
        abs = abs + e.abs();
        sq = sq + e * e;
    }
    let mae = abs / n;
    let mse = sq / n;
    let lo = truth.iter().copied().fold(F::infinity(), F::min);
    let hi = truth.iter().copied().fold(F::neg_infinity(), F::max);
    let range = hi - lo;
    let nrmse = (range > F::zero()).then(|| Metric::new(mse.sqrt() / range));
    Ok(QualityReport {
        mae: Metric::new(mae),
        mse: Metric::new(mse),
        nrmse,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CostEvent {
    /// One model moved between a client and the aggregator.
    ModelTransfer {
        params: u64,
    },
    RawUpload {
        records: u64,
        record_size: u64,
    },
    Compute {
        epochs: u64,
        samples: u64,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub comm_units: u64,
    pub raw_data_units: u64,
    pub compute_units: u64,
    /// Measured seconds; informational only and never part of outputs.
    #[serde(skip)]
    pub wall_time: f64,
}

/// Relative weights of the cost components in a total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostWeights {
    pub comm: f64,
    pub raw_data: f64,
    pub compute: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights {
            comm: 1.0,
            raw_data: 1.0,
            compute: 1.0,
        }
    }
}

impl CostReport {
    pub fn record(&mut self, event: CostEvent) {
        match event {
            CostEvent::ModelTransfer { params } => self.comm_units += params,
            CostEvent::RawUpload { records, record_size } => self.raw_data_units += records * record_size,
            CostEvent::Compute { epochs, samples } => self.compute_units += epochs * samples,
        }
    }

    pub fn total(&self, weights: &CostWeights) -> f64 {
        weights.comm * self.comm_units as f64
            + weights.raw_data * self.raw_data_units as f64
            + weights.compute * self.compute_units as f64
    }
}

impl Add for CostReport {
    type Output = CostReport;

    fn add(self, rhs: CostReport) -> CostReport {
        CostReport {
            comm_units: self.comm_units + rhs.comm_units,
            raw_data_units: self.raw_data_units + rhs.raw_data_units,
            compute_units: self.compute_units + rhs.compute_units,
            wall_time: self.wall_time + rhs.wall_time,
        }
    }
}

impl AddAssign for CostReport {
    fn add_assign(&mut self, rhs: CostReport) {
        *self = *self + rhs;
    }
}

pub fn cost_accounting<'a>(events: impl IntoIterator<Item = &'a CostEvent>) -> CostReport {
    let mut report = CostReport::default();
    for e in events {
        report.record(*e);
    }
    report
}

/// Ledger of the centralized baseline: every raw record is uploaded once
/// and the server runs one training pass of `epochs` over all of them.
pub fn centralized_events(records: u64, epochs: u64) -> Vec<CostEvent> {
    vec![
        CostEvent::RawUpload {
            records,
            record_size: RECORD_SIZE,
        },
        CostEvent::Compute {
            epochs,
            samples: records,
        },
    ]
}

/// Percentage saved by `candidate` relative to `baseline`.
pub fn cost_reduction(candidate: &CostReport, baseline: &CostReport, weights: &CostWeights) -> Result<f64> {
    let base = baseline.total(weights);
    if !(base > 0.0) {
        return Err(Error::domain("baseline cost total must be positive"));
    }
    Ok(100.0 * (1.0 - candidate.total(weights) / base))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn perfect_fit() {
        let r = quality_report(&[1.0, 2.0, 5.0], &[1.0, 2.0, 5.0]).unwrap();
        assert_eq!((r.mae.raw, r.mse.raw, r.nrmse.unwrap().raw), (0.0, 0.0, 0.0));
    }

    #[test]
    fn arithmetic_example() {
        let r = quality_report(&[0.0, 0.0], &[1.0, -1.0]).unwrap();
        assert_eq!(r.mae.reported, 1.0);
        assert_eq!(r.mse.reported, 1.0);
        assert_eq!(r.nrmse().unwrap().reported, 0.5);
    }

    #[test]
    fn cap_applies_and_flags() {
        let r = quality_report(&[250.0], &[0.0]).unwrap();
        assert_eq!(r.mae.reported, 100.0);
        assert!(r.mae.capped);
        assert_eq!(r.mae.raw, 250.0);
        let r = quality_report(&[100.0], &[0.0]).unwrap();
        assert!(!r.mae.capped);
    }

    #[test]
    fn zero_range_truth() {
        let r = quality_report(&[1.0, 3.0], &[2.0, 2.0]).unwrap();
        assert_eq!(r.mae.raw, 1.0);
        assert!(matches!(r.nrmse(), Err(Error::Domain(_))));
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(
            quality_report(&[1.0], &[1.0, 2.0]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn matches_direct_summation_oracle() {
        let mut rng = stream(99, "quality");
        for _ in 0..100 {
            let n = rng.random_range(2..50);
            let p: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let t: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let r = quality_report(&p, &t).unwrap();
            let (mut a, mut s) = (0.0, 0.0);
            let (mut lo, mut hi) = (f64::MAX, f64::MIN);
            for i in 0..n {
                a += (p[i] - t[i]).abs();
                s += (p[i] - t[i]) * (p[i] - t[i]);
                lo = lo.min(t[i]);
                hi = hi.max(t[i]);
            }
            let (mae, mse) = (a / n as f64, s / n as f64);
            assert!((r.mae.raw - mae).abs() < 1e-12);
            assert!((r.mse.raw - mse).abs() < 1e-12);
            assert!((r.nrmse.unwrap().raw - mse.sqrt() / (hi - lo)).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn permutation_invariant(pairs in proptest::collection::vec((-9.0f64..9.0, -9.0f64..9.0), 2..30), seed in 0u64..1000) {
            let (p, t): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            let mut idx: Vec<usize> = (0..pairs.len()).collect();
            use rand::seq::SliceRandom;
            idx.shuffle(&mut stream(seed, "perm"));
            let pp: Vec<f64> = idx.iter().map(|&i| p[i]).collect();
            let tt: Vec<f64> = idx.iter().map(|&i| t[i]).collect();
            let a = quality_report(&p, &t).unwrap();
            let b = quality_report(&pp, &tt).unwrap();
            prop_assert!((a.mae.raw - b.mae.raw).abs() < 1e-12);
            prop_assert!((a.mse.raw - b.mse.raw).abs() < 1e-12);
        }

        #[test]
        fn accounting_is_additive(a in proptest::collection::vec((0u8..3, 0u64..500, 0u64..500), 0..20),
                                  b in proptest::collection::vec((0u8..3, 0u64..500, 0u64..500), 0..20)) {
            let to_events = |v: &[(u8, u64, u64)]| -> Vec<CostEvent> {
                v.iter().map(|&(k, x, y)| match k {
                    0 => CostEvent::ModelTransfer { params: x },
                    1 => CostEvent::RawUpload { records: x, record_size: y },
                    _ => CostEvent::Compute { epochs: x, samples: y },
                }).collect()
            };
            let (ea, eb) = (to_events(&a), to_events(&b));
            let joined: Vec<CostEvent> = ea.iter().chain(&eb).copied().collect();
            prop_assert_eq!(cost_accounting(&joined), cost_accounting(&ea) + cost_accounting(&eb));
        }
    }

    #[test]
    fn accounting_examples() {
        assert_eq!(cost_accounting(&[]), CostReport::default());
        // 1 round, 4 clients, model size 13: download + upload per client.
        let round: Vec<CostEvent> = (0..8).map(|_| CostEvent::ModelTransfer { params: 13 }).collect();
        assert_eq!(cost_accounting(&round).comm_units, 104);
        let central = cost_accounting(&centralized_events(4 * 1_000, 1));
        assert_eq!(central.raw_data_units, 4_000 * RECORD_SIZE);
    }

    #[test]
    fn reduction_examples() {
        let w = CostWeights::default();
        let base = CostReport {
            comm_units: 10,
            raw_data_units: 20,
            compute_units: 70,
            wall_time: 0.0,
        };
        assert_eq!(cost_reduction(&base, &base, &w).unwrap(), 0.0);
        let half = CostReport {
            comm_units: 50,
            raw_data_units: 0,
            compute_units: 0,
            wall_time: 0.0,
        };
        assert_eq!(cost_reduction(&half, &base, &w).unwrap(), 50.0);
        assert!(cost_reduction(&base, &CostReport::default(), &w).is_err());
    }
}
