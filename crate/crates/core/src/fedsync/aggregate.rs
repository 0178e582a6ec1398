//! Aggregation rules over client updates.
//!
//! Every rule first puts the updates in a canonical order (client id, then
//! sample count, then parameters) so results are bit-identical under any
//! permutation of the input list.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::params::ParamVec;
use crate::scalar::{median, total_cmp, Scalar};

use super::ClientUpdate;

/// Consistency constant making the MAD estimate the standard deviation of
/// normally distributed values.
pub const MAD_CONSISTENCY: f64 = 1.4826;

fn canonical<F: Scalar>(updates: &[ClientUpdate<F>]) -> Result<Vec<&ClientUpdate<F>>> {
    let first = updates
        .first()
        .ok_or_else(|| Error::domain("no updates to aggregate"))?;
    let dim = first.params.len();
    if let Some(bad) = updates.iter().find(|u| u.params.len() != dim) {
        return Err(Error::Dimension {
            expected: dim,
            got: bad.params.len(),
        });
    }
    let mut ordered: Vec<&ClientUpdate<F>> = updates.iter().collect();
    ordered.sort_by(|a, b| {
        a.client_id
            .cmp(&b.client_id)
            .then(a.sample_count.cmp(&b.sample_count))
            .then_with(|| {
                a.params
                    .iter()
                    .zip(b.params.iter())
                    .map(|(x, y)| total_cmp(x, y))
                    .find(|o| *o != Ordering::Equal)
                    .unwrap_or(Ordering::Equal)
            })
    });
    Ok(ordered)
}

/// Sample-count-weighted mean; unweighted when every count is zero.
pub fn aggregate_mean<F: Scalar>(updates: &[ClientUpdate<F>]) -> Result<ParamVec<F>> {
    let ordered = canonical(updates)?;
    let dim = ordered[0].params.len();
    let total: u64 = ordered.iter().map(|u| u.sample_count).sum();
    let weight = |u: &ClientUpdate<F>| {
        if total == 0 {
            F::one()
        } else {
            F::lit(u.sample_count as f64)
        }
    };
    let norm = if total == 0 {
        F::count(ordered.len())
    } else {
        F::lit(total as f64)
    };
    let mut acc = vec![F::zero(); dim];
    for u in &ordered {
        let w = weight(u);
        for (a, v) in acc.iter_mut().zip(u.params.iter()) {
            *a = *a + w * *v;
        }
    }
    Ok(ParamVec(acc.into_iter().map(|a| a / norm).collect()))
}

/// Coordinate-wise median; sample counts are ignored.
pub fn aggregate_median<F: Scalar>(updates: &[ClientUpdate<F>]) -> Result<ParamVec<F>> {
    let ordered = canonical(updates)?;
    let dim = ordered[0].params.len();
    let mut column = Vec::with_capacity(ordered.len());
    let out = (0..dim)
        .map(|d| {
            column.clear();
            column.extend(ordered.iter().map(|u| u.params[d]));
            median(&column).expect("non-empty column")
        })
        .collect();
    Ok(ParamVec(out))
}

/// FLTrust: clients are trusted by the clipped cosine between their update
/// direction and the server's, and every direction is rescaled to the
/// server's norm before the trust-weighted average.
pub fn aggregate_fltrust<F: Scalar>(
    updates: &[ClientUpdate<F>],
    server_update: &ParamVec<F>,
    global: &ParamVec<F>,
) -> Result<ParamVec<F>> {
    let ordered = canonical(updates)?;
    let server_dir = server_update.sub(global)?;
    let server_norm = server_dir.norm();
    if !(server_norm > F::zero()) {
        return Err(Error::DegenerateServer);
    }
    let mut acc = ParamVec::zeros(global.len());
    let mut trust_total = F::zero();
    for u in ordered {
        let dir = u.params.sub(global)?;
        let norm = dir.norm();
        if !(norm > F::zero()) {
            continue;
        }
        let cosine = dir.dot(&server_dir)? / (norm * server_norm);
        let trust = cosine.max(F::zero());
        if trust > F::zero() {
            acc = acc.add_scaled(&dir, trust * server_norm / norm)?;
            trust_total = trust_total + trust;
        }
    }
    if trust_total > F::zero() {
        global.add_scaled(&acc, F::one() / trust_total)
    } else {
        Ok(global.clone())
    }
}

/// Per-dimension robust centre and spread used by TID.
///
/// Normally the median and MAD of the values. When more than half of the
/// values coincide the MAD collapses to zero even though the dimension is
/// not constant; the statistics are then taken over the distinct values so
/// that a bloc of identical submissions counts once.
pub fn robust_center_spread<F: Scalar>(values: &[F]) -> (F, F) {
    let m = median(values).expect("non-empty");
    let deviations: Vec<F> = values.iter().map(|v| (*v - m).abs()).collect();
    let mad = median(&deviations).expect("non-empty");
    if mad > F::zero() {
        return (m, mad);
    }
    let mut distinct = values.to_vec();
    distinct.sort_by(total_cmp);
    distinct.dedup();
    if distinct.len() < 2 {
        return (m, mad);
    }
    let m = median(&distinct).expect("non-empty");
    let deviations: Vec<F> = distinct.iter().map(|v| (*v - m).abs()).collect();
    (m, median(&deviations).expect("non-empty"))
}

/// Outcome of a TID aggregation, exposing which values were trimmed.
#[derive(Debug, Clone, PartialEq)]
pub struct TidOutcome<F> {
    pub params: ParamVec<F>,
    /// `trimmed[i][d]` for the i-th update of the input slice.
    pub trimmed: Vec<Vec<bool>>,
    /// Benign weight per input update.
    pub weights: Vec<F>,
}

/// Twin inconsistency defense: trims dimension-wise outliers by robust
/// z-score, then averages the surviving values weighted by each client's
/// benign weight `sample_count * (1 - outlier fraction)`.
pub fn aggregate_tid<F: Scalar>(updates: &[ClientUpdate<F>], tau: F) -> Result<ParamVec<F>> {
    tid_with_details(updates, tau).map(|o| o.params)
}

pub fn tid_with_details<F: Scalar>(updates: &[ClientUpdate<F>], tau: F) -> Result<TidOutcome<F>> {
    if !(tau > F::zero()) {
        return Err(Error::config("fedsync.tau", "TID threshold must be positive"));
    }
    if updates.len() < 3 {
        return Err(Error::domain(format!(
            "TID needs at least 3 updates, got {}",
            updates.len()
        )));
    }
    let ordered = canonical(updates)?;
    let n = ordered.len();
    let dim = ordered[0].params.len();
    let cutoff_scale = tau * F::lit(MAD_CONSISTENCY);

    let mut trimmed = vec![vec![false; dim]; n];
    let mut centers = Vec::with_capacity(dim);
    let mut column = Vec::with_capacity(n);
    for d in 0..dim {
        column.clear();
        column.extend(ordered.iter().map(|u| u.params[d]));
        let (m, mad) = robust_center_spread(&column);
        centers.push(m);
        if mad > F::zero() {
            let cutoff = cutoff_scale * mad;
            for (i, v) in column.iter().enumerate() {
                trimmed[i][d] = (*v - m).abs() > cutoff;
            }
        }
    }

    let weights: Vec<F> = ordered
        .iter()
        .zip(&trimmed)
        .map(|(u, t)| {
            let outliers = t.iter().filter(|&&x| x).count();
            F::lit(u.sample_count as f64) * (F::one() - F::count(outliers) / F::count(dim.max(1)))
        })
        .collect();

    let params = (0..dim)
        .map(|d| {
            let kept: Vec<usize> = (0..n).filter(|&i| !trimmed[i][d]).collect();
            if kept.is_empty() {
                return centers[d];
            }
            let total: F = kept.iter().map(|&i| weights[i]).sum();
            if total > F::zero() {
                kept.iter().map(|&i| weights[i] * ordered[i].params[d]).sum::<F>() / total
            } else {
                kept.iter().map(|&i| ordered[i].params[d]).sum::<F>() / F::count(kept.len())
            }
        })
        .collect();

    // Report per-update details in the caller's order.
    let mut by_input_trimmed = vec![Vec::new(); n];
    let mut by_input_weights = vec![F::zero(); n];
    for (slot, u) in ordered.iter().enumerate() {
        let idx = updates
            .iter()
            .position(|x| std::ptr::eq(x, *u))
            .expect("ordered holds references into updates");
        by_input_trimmed[idx] = trimmed[slot].clone();
        by_input_weights[idx] = weights[slot];
    }
    Ok(TidOutcome {
        params: ParamVec(params),
        trimmed: by_input_trimmed,
        weights: by_input_weights,
    })
}

/// Asynchronous staleness discount `beta / (1 + s)`.
pub fn staleness_weight(staleness: i64, beta: f64) -> Result<f64> {
    if staleness < 0 {
        return Err(Error::domain(format!("negative staleness {staleness}")));
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::config("fedsync.beta", "base weight must lie in (0, 1]"));
    }
    Ok(beta / (1.0 + staleness as f64))
}
