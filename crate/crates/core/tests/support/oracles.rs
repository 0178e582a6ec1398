//! Reference implementations written independently of the library, plus
//! random instance generators. Shared by several test targets.
#![allow(dead_code)]

use dnt_core::fedsync::ClientUpdate;
use dnt_core::params::ParamVec;
use rand::Rng;

#[derive(Debug, Clone)]
pub struct Instance {
    pub params: Vec<Vec<f64>>,
    pub counts: Vec<u64>,
}

impl Instance {
    pub fn updates(&self) -> Vec<ClientUpdate<f64>> {
        self.params
            .iter()
            .zip(&self.counts)
            .enumerate()
            .map(|(i, (p, &n))| ClientUpdate::new(i as u32, ParamVec(p.clone()), n, 0))
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.params[0].len()
    }
}

/// Random clients with occasional outliers, duplicated clients and
/// zero sample counts.
pub fn random_instance(rng: &mut impl Rng, min_clients: usize, max_clients: usize, max_dim: usize) -> Instance {
    let n = rng.random_range(min_clients..=max_clients);
    let dim = rng.random_range(1..=max_dim);
    let center: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
    let mut params: Vec<Vec<f64>> = Vec::with_capacity(n);
    for _ in 0..n {
        let p = if !params.is_empty() && rng.random_bool(0.1) {
            params[rng.random_range(0..params.len())].clone()
        } else {
            center
                .iter()
                .map(|c| {
                    let v = c + rng.random_range(-1.0..1.0);
                    if rng.random_bool(0.1) {
                        v * 40.0
                    } else {
                        v
                    }
                })
                .collect()
        };
        params.push(p);
    }
    let counts = (0..n)
        .map(|_| {
            if rng.random_bool(0.1) {
                0
            } else {
                rng.random_range(1..200)
            }
        })
        .collect();
    Instance { params, counts }
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

pub fn all_close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| close(*x, *y, tol))
}

pub fn sort_median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn column(inst: &Instance, d: usize) -> Vec<f64> {
    inst.params.iter().map(|p| p[d]).collect()
}

pub fn mean_oracle(inst: &Instance) -> Vec<f64> {
    let total: u64 = inst.counts.iter().sum();
    (0..inst.dim())
        .map(|d| {
            let mut num = 0.0;
            let mut den = 0.0;
            for (p, &n) in inst.params.iter().zip(&inst.counts) {
                let w = if total == 0 { 1.0 } else { n as f64 };
                num += w * p[d];
                den += w;
            }
            num / den
        })
        .collect()
}

pub fn median_oracle(inst: &Instance) -> Vec<f64> {
    (0..inst.dim()).map(|d| sort_median(&column(inst, d))).collect()
}

pub fn fltrust_oracle(inst: &Instance, server: &[f64], global: &[f64]) -> Vec<f64> {
    let ds: Vec<f64> = server.iter().zip(global).map(|(s, g)| s - g).collect();
    let ns = ds.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut sum = vec![0.0; global.len()];
    let mut trust_sum = 0.0;
    for p in &inst.params {
        let di: Vec<f64> = p.iter().zip(global).map(|(a, g)| a - g).collect();
        let ni = di.iter().map(|x| x * x).sum::<f64>().sqrt();
        if ni == 0.0 {
            continue;
        }
        let cos = di.iter().zip(&ds).map(|(a, b)| a * b).sum::<f64>() / (ni * ns);
        let trust = if cos > 0.0 { cos } else { 0.0 };
        for (s, x) in sum.iter_mut().zip(&di) {
            *s += trust * x * ns / ni;
        }
        trust_sum += trust;
    }
    if trust_sum == 0.0 {
        return global.to_vec();
    }
    global.iter().zip(&sum).map(|(g, s)| g + s / trust_sum).collect()
}

/// Median/MAD of a dimension; when the MAD vanishes on a non-constant
/// dimension both are recomputed over the distinct values.
fn center_spread(values: &[f64]) -> (f64, f64) {
    let m = sort_median(values);
    let mad = sort_median(&values.iter().map(|v| (v - m).abs()).collect::<Vec<_>>());
    if mad > 0.0 {
        return (m, mad);
    }
    let mut distinct: Vec<f64> = Vec::new();
    for v in values {
        if !distinct.contains(v) {
            distinct.push(*v);
        }
    }
    if distinct.len() < 2 {
        return (m, 0.0);
    }
    let m = sort_median(&distinct);
    let mad = sort_median(&distinct.iter().map(|v| (v - m).abs()).collect::<Vec<_>>());
    (m, mad)
}

pub fn tid_oracle(inst: &Instance, tau: f64) -> Vec<f64> {
    let n = inst.params.len();
    let dim = inst.dim();
    let mut outlier = vec![vec![false; dim]; n];
    let mut centers = vec![0.0; dim];
    for d in 0..dim {
        let col = column(inst, d);
        let (m, mad) = center_spread(&col);
        centers[d] = m;
        if mad > 0.0 {
            for i in 0..n {
                outlier[i][d] = (col[i] - m).abs() > tau * 1.4826 * mad;
            }
        }
    }
    let weight: Vec<f64> = (0..n)
        .map(|i| {
            let frac = outlier[i].iter().filter(|x| **x).count() as f64 / dim as f64;
            inst.counts[i] as f64 * (1.0 - frac)
        })
        .collect();
    (0..dim)
        .map(|d| {
            let kept: Vec<usize> = (0..n).filter(|&i| !outlier[i][d]).collect();
            if kept.is_empty() {
                return centers[d];
            }
            let wsum: f64 = kept.iter().map(|&i| weight[i]).sum();
            if wsum > 0.0 {
                kept.iter().map(|&i| weight[i] * inst.params[i][d]).sum::<f64>() / wsum
            } else {
                kept.iter().map(|&i| inst.params[i][d]).sum::<f64>() / kept.len() as f64
            }
        })
        .collect()
}

/// Linear AR instance: (weights, bias, windows, targets).
pub type ArInstance = (Vec<f64>, f64, Vec<Vec<f64>>, Vec<f64>);

pub fn random_ar_instance(rng: &mut impl Rng, max_window: usize, max_samples: usize) -> ArInstance {
    let w = rng.random_range(1..=max_window);
    let n = rng.random_range(1..=max_samples);
    let weights = (0..w).map(|_| rng.random_range(-1.0..1.0)).collect();
    let bias = rng.random_range(-1.0..1.0);
    let windows = (0..n)
        .map(|_| (0..w).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let targets = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    (weights, bias, windows, targets)
}

pub fn ar_loss(weights: &[f64], bias: f64, windows: &[Vec<f64>], targets: &[f64]) -> f64 {
    let mut total = 0.0;
    for (x, t) in windows.iter().zip(targets) {
        let mut p = bias;
        for (w, v) in weights.iter().zip(x) {
            p += w * v;
        }
        total += (p - t) * (p - t);
    }
    total / targets.len() as f64
}

/// Central finite differences of [`ar_loss`] over `[weights.., bias]`.
pub fn finite_difference_gradient(
    weights: &[f64],
    bias: f64,
    windows: &[Vec<f64>],
    targets: &[f64],
    h: f64,
) -> Vec<f64> {
    let mut grad = Vec::with_capacity(weights.len() + 1);
    for j in 0..=weights.len() {
        let shifted = |delta: f64| {
            let mut w = weights.to_vec();
            let mut b = bias;
            if j < w.len() {
                w[j] += delta;
            } else {
                b += delta;
            }
            ar_loss(&w, b, windows, targets)
        };
        grad.push((shifted(h) - shifted(-h)) / (2.0 * h));
    }
    grad
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-8);
    diff / scale
}

/// (MAE, MSE, NRMSE) by direct summation, uncapped.
pub fn quality_oracle(pred: &[f64], truth: &[f64]) -> (f64, f64, f64) {
    let n = truth.len() as f64;
    let mut abs = 0.0;
    let mut sq = 0.0;
    for (p, t) in pred.iter().zip(truth) {
        abs += (p - t).abs();
        sq += (p - t) * (p - t);
    }
    let hi = truth.iter().cloned().fold(f64::MIN, f64::max);
    let lo = truth.iter().cloned().fold(f64::MAX, f64::min);
    (abs / n, sq / n, (sq / n).sqrt() / (hi - lo))
}
