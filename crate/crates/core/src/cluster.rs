//! Periodic clustering of cells into twin regions.
//!
//! Cells are described by `(x, y, mean traffic, traffic std)`, each feature
//! standardized to zero mean and unit variance, then grouped with seeded
//! k-means++ / Lloyd iterations.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::network::{PhysicalNetwork, PnoId};
use crate::rng::SimRng;
use crate::traffic::TrafficDataset;

pub const FEATURES: usize = 4;
pub const MAX_ITERATIONS: usize = 100;

pub type Feature = [f64; FEATURES];

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub k: usize,
    pub assignment: BTreeMap<PnoId, usize>,
    /// Centroids in standardized feature space.
    pub centroids: Vec<Feature>,
    pub recluster_period: usize,
}

impl ClusterAssignment {
    /// Every cell in one cluster.
    pub fn single(cells: &[PnoId], recluster_period: usize) -> Self {
        ClusterAssignment {
            k: 1,
            assignment: cells.iter().map(|&c| (c, 0)).collect(),
            centroids: vec![[0.0; FEATURES]],
            recluster_period,
        }
    }

    pub fn members(&self, cluster: usize) -> Vec<PnoId> {
        self.assignment
            .iter()
            .filter(|(_, &c)| c == cluster)
            .map(|(&id, _)| id)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &c in self.assignment.values() {
            sizes[c] += 1;
        }
        sizes
    }

    pub fn validate(&self) -> Result<()> {
        if self.centroids.len() != self.k {
            return Err(Error::State(format!(
                "{} centroids for k={}",
                self.centroids.len(),
                self.k
            )));
        }
        if self.assignment.values().any(|&c| c >= self.k) {
            return Err(Error::State("cluster index out of range".into()));
        }
        if self.sizes().contains(&0) {
            return Err(Error::State("empty cluster".into()));
        }
        if self.centroids.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::State("non-finite centroid".into()));
        }
        Ok(())
    }
}

/// Raw `(x, y, mean, std)` per cell of `network`, in network order.
pub fn raw_features(network: &PhysicalNetwork, dataset: &TrafficDataset) -> Result<Vec<Feature>> {
    network
        .objects
        .iter()
        .map(|obj| {
            let series = dataset
                .series(obj.id)
                .ok_or_else(|| Error::domain(format!("dataset has no series for cell {}", obj.id)))?;
            if series.is_empty() {
                return Err(Error::domain(format!("cell {} has an empty series", obj.id)));
            }
            let n = series.len() as f64;
            let mean = series.iter().sum::<f64>() / n;
            let var = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            Ok([obj.position.0, obj.position.1, mean, var.sqrt()])
        })
        .collect()
}

/// Standardizes each feature column; zero-variance columns become 0.
pub fn standardize(features: &[Feature]) -> Vec<Feature> {
    let n = features.len().max(1) as f64;
    let mut out = features.to_vec();
    for j in 0..FEATURES {
        let mean = features.iter().map(|f| f[j]).sum::<f64>() / n;
        let var = features.iter().map(|f| (f[j] - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        for f in out.iter_mut() {
            f[j] = if sd > 0.0 { (f[j] - mean) / sd } else { 0.0 };
        }
    }
    out
}

fn dist2(a: &Feature, b: &Feature) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn nearest(point: &Feature, centroids: &[Feature]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = dist2(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Seeded k-means over `points`; returns labels and centroids.
pub fn kmeans(points: &[Feature], k: usize, seed: u64) -> Result<(Vec<usize>, Vec<Feature>)> {
    if k == 0 {
        return Err(Error::config("clustering.k", "must be at least 1"));
    }
    if k > points.len() {
        return Err(Error::config(
            "clustering.k",
            format!("k={k} exceeds the {} available cells", points.len()),
        ));
    }
    let mut rng = SimRng::seed_from_u64(seed);

    // k-means++ seeding.
    let mut centroids = vec![points[rng.random_range(0..points.len())]];
    while centroids.len() < k {
        let d2: Vec<f64> = points.iter().map(|p| nearest(p, &centroids).1).collect();
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = d2.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if *d > 0.0 && target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        centroids.push(points[pick]);
    }

    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..MAX_ITERATIONS {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let (c, _) = nearest(p, &centroids);
            if labels[i] != c {
                labels[i] = c;
                changed = true;
            }
        }
        repair_empty(points, &mut labels, &centroids, k);
        let next = recompute(points, &labels, k);
        let moved = next != centroids;
        centroids = next;
        if !changed && !moved {
            break;
        }
    }
    repair_empty(points, &mut labels, &centroids, k);
    centroids = recompute(points, &labels, k);
    Ok((labels, centroids))
}

/// Moves the point farthest from its centroid (taken from a cluster with
/// more than one member) into each empty cluster.
fn repair_empty(points: &[Feature], labels: &mut [usize], centroids: &[Feature], k: usize) {
    loop {
        let mut sizes = vec![0usize; k];
        for &l in labels.iter() {
            sizes[l] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let victim = (0..points.len())
            .filter(|&i| sizes[labels[i]] > 1)
            .max_by(|&a, &b| {
                let da = dist2(&points[a], &centroids[labels[a]]);
                let db = dist2(&points[b], &centroids[labels[b]]);
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .expect("k <= points guarantees a donor cluster");
        labels[victim] = empty;
    }
}

fn recompute(points: &[Feature], labels: &[usize], k: usize) -> Vec<Feature> {
    let mut sums = vec![[0.0; FEATURES]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for j in 0..FEATURES {
            sums[l][j] += p[j];
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        if n > 0 {
            for v in s.iter_mut() {
                *v /= n as f64;
            }
        }
    }
    sums
}

pub fn cluster_cells(
    network: &PhysicalNetwork,
    dataset: &TrafficDataset,
    k: usize,
    seed: u64,
    recluster_period: usize,
) -> Result<ClusterAssignment> {
    if k > network.len() {
        return Err(Error::config(
            "clustering.k",
            format!("k={k} exceeds the {} cells", network.len()),
        ));
    }
    let points = standardize(&raw_features(network, dataset)?);
    let (labels, centroids) = kmeans(&points, k, seed)?;
    Ok(ClusterAssignment {
        k,
        assignment: network.cell_ids().into_iter().zip(labels).collect(),
        centroids,
        recluster_period,
    })
}

/// Relabels `next` so that each of its clusters keeps the index of the
/// closest centroid in `prev` (greedy, closest pairs first). Keeps twin
/// identities stable across periodic re-clustering.
pub fn align_labels(prev: &ClusterAssignment, next: &ClusterAssignment) -> ClusterAssignment {
    if prev.k != next.k {
        return next.clone();
    }
    let k = next.k;
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(k * k);
    for (i, a) in next.centroids.iter().enumerate() {
        for (j, b) in prev.centroids.iter().enumerate() {
            pairs.push((dist2(a, b), i, j));
        }
    }
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut map = vec![usize::MAX; k];
    let mut taken = vec![false; k];
    for (_, i, j) in pairs {
        if map[i] == usize::MAX && !taken[j] {
            map[i] = j;
            taken[j] = true;
        }
    }
    let mut centroids = vec![[0.0; FEATURES]; k];
    for (i, c) in next.centroids.iter().enumerate() {
        centroids[map[i]] = *c;
    }
    ClusterAssignment {
        k,
        assignment: next.assignment.iter().map(|(&id, &c)| (id, map[c])).collect(),
        centroids,
        recluster_period: next.recluster_period,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_physical_network, NetworkConfig};
    use crate::traffic::{generate_synthetic_traffic, Channel, TrafficProfile};

    fn setup(rows: usize, cols: usize) -> (PhysicalNetwork, TrafficDataset) {
        let net = build_physical_network(&NetworkConfig {
            rows,
            cols,
            ..Default::default()
        })
        .unwrap();
        let ds = generate_synthetic_traffic(&net, 5, 300, &TrafficProfile::default()).unwrap();
        (net, ds)
    }

    #[test]
    fn single_cluster() {
        let (net, ds) = setup(4, 4);
        let a = cluster_cells(&net, &ds, 1, 0, 20).unwrap();
        assert!(a.assignment.values().all(|&c| c == 0));
        a.validate().unwrap();
    }

    #[test]
    fn k_equals_cells_is_bijection() {
        let (net, ds) = setup(3, 3);
        let a = cluster_cells(&net, &ds, 9, 11, 20).unwrap();
        let mut sizes = a.sizes();
        sizes.sort();
        assert_eq!(sizes, vec![1; 9]);
    }

    #[test]
    fn k_above_cells_rejected() {
        let (net, ds) = setup(2, 2);
        assert!(matches!(cluster_cells(&net, &ds, 5, 0, 20), Err(Error::Config { .. })));
    }

    #[test]
    fn two_separated_groups_recovered() {
        // 1x6 strip: cells 0..3 light load on the left, 3..6 heavy load on
        // the right. Oracle: each cell's nearest (brute force) centroid is
        // its own cluster's, and the partition equals the two groups.
        let net = build_physical_network(&NetworkConfig {
            rows: 1,
            cols: 6,
            ..Default::default()
        })
        .unwrap();
        let values: Vec<Vec<f64>> = (0..6)
            .map(|c| {
                let base = if c < 3 { 1.0 } else { 20.0 };
                (0..50)
                    .map(|t| base + if t % 2 == 0 { 0.1 } else { -0.1 } * base)
                    .collect()
            })
            .collect();
        let ds = TrafficDataset {
            cell_ids: (0..6).collect(),
            timestamps: (0..50).collect(),
            values,
            channel: Channel::Sms,
        };
        for seed in 0..10 {
            let a = cluster_cells(&net, &ds, 2, seed, 20).unwrap();
            let left = a.assignment[&0];
            for c in 0..6u32 {
                assert_eq!(a.assignment[&c] == left, c < 3, "seed {seed}");
            }
            let points = standardize(&raw_features(&net, &ds).unwrap());
            for (i, p) in points.iter().enumerate() {
                let own = a.assignment[&(i as u32)];
                let brute = (0..2)
                    .min_by(|&x, &y| dist2(p, &a.centroids[x]).total_cmp(&dist2(p, &a.centroids[y])))
                    .unwrap();
                assert_eq!(own, brute);
            }
        }
    }

    #[test]
    fn deterministic_and_partitioning() {
        let (net, ds) = setup(10, 10);
        let a = cluster_cells(&net, &ds, 4, 3, 20).unwrap();
        let b = cluster_cells(&net, &ds, 4, 3, 20).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.sizes().iter().sum::<usize>(), 100);
        a.validate().unwrap();
    }

    #[test]
    fn duplicate_points_still_fill_every_cluster() {
        let points = [[1.0; FEATURES]; 5];
        let (labels, centroids) = kmeans(&points, 3, 1).unwrap();
        let mut sizes = [0; 3];
        labels.iter().for_each(|&l| sizes[l] += 1);
        assert!(!sizes.contains(&0));
        assert!(centroids.iter().flatten().all(|v| v.is_finite()));
    }

    #[test]
    fn alignment_is_identity_on_same_clustering() {
        let (net, ds) = setup(6, 6);
        let a = cluster_cells(&net, &ds, 3, 8, 20).unwrap();
        assert_eq!(align_labels(&a, &a), a);
    }
}
