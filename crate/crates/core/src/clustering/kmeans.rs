use std::collections::BTreeSet;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::standardize::Standardizer;
use crate::rng::{derive_seed, rng_from_seed, Rng};
use crate::{Error, Result};

pub const MAX_LLOYD_ITERATIONS: usize = 300;

/// Fitted K-means clustering.
///
/// Centroids live in the space the model was fitted in. When `standardizer`
/// is set, raw points must go through [`KMeansModel::predict_raw`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub seed: u64,
    pub restarts: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardizer: Option<Standardizer>,
}

/// Per-restart diagnostics from [`kmeans_fit_traced`].
#[derive(Debug, Clone)]
pub struct RestartTrace {
    pub restart: usize,
    /// Inertia after every assignment step, starting with the seeding.
    pub inertia_history: Vec<f64>,
    pub inertia: f64,
    pub iterations: usize,
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn count_distinct<R: AsRef<[f64]>>(points: &[R]) -> usize {
    points
        .iter()
        .map(|p| p.as_ref().iter().map(|v| (v + 0.0).to_bits()).collect::<Vec<_>>())
        .collect::<BTreeSet<_>>()
        .len()
}

fn check_points<R: AsRef<[f64]>>(points: &[R]) -> Result<usize> {
    let Some(first) = points.first() else {
        return Err(Error::Validation("no points to cluster".into()));
    };
    let dim = first.as_ref().len();
    if dim == 0 {
        return Err(Error::Validation("points have zero dimensions".into()));
    }
    for (i, p) in points.iter().enumerate() {
        let p = p.as_ref();
        if p.len() != dim {
            return Err(Error::Validation(format!("point {i} has {} dimensions, expected {dim}", p.len())));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric { path: format!("point {i}") });
        }
    }
    Ok(dim)
}

/// Nearest centroid; ties go to the lowest cluster id.
pub(crate) fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, sq_dist(point, &centroids[0]));
    for (c, centroid) in centroids.iter().enumerate().skip(1) {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

pub fn wcss<R: AsRef<[f64]>>(points: &[R], centroids: &[Vec<f64>], assignment: &[usize]) -> f64 {
    points.iter().zip(assignment).map(|(p, &c)| sq_dist(p.as_ref(), &centroids[c])).sum()
}

fn plus_plus_seeding<R: AsRef<[f64]>>(points: &[R], k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].as_ref().to_vec()];
    let mut dist: Vec<f64> = points.iter().map(|p| sq_dist(p.as_ref(), &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = dist.iter().sum();
        // k <= distinct points guarantees some point is still at positive distance.
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &d) in dist.iter().enumerate() {
            if d <= 0.0 {
                continue;
            }
            acc += d;
            pick = Some(i);
            if acc > target {
                break;
            }
        }
        let chosen = points[pick.expect("a point at positive distance")].as_ref().to_vec();
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(sq_dist(p.as_ref(), &chosen));
        }
        centroids.push(chosen);
    }
    centroids
}

fn recompute_means<R: AsRef<[f64]>>(points: &[R], assignment: &mut [usize], centroids: &mut [Vec<f64>]) {
    let k = centroids.len();
    let dim = centroids[0].len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &c) in points.iter().zip(assignment.iter()) {
        counts[c] += 1;
        for (s, v) in sums[c].iter_mut().zip(p.as_ref()) {
            *s += v;
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
        }
    }
    // Repair empty clusters by moving in the point farthest from its own centroid.
    for c in 0..k {
        if counts[c] > 0 {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            let owner = assignment[i];
            if counts[owner] < 2 {
                continue;
            }
            let d = sq_dist(p.as_ref(), &centroids[owner]);
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        let Some((i, _)) = best else { break };
        let donor = assignment[i];
        assignment[i] = c;
        counts[donor] -= 1;
        counts[c] = 1;
        centroids[c] = points[i].as_ref().to_vec();
        let members: Vec<&[f64]> = points.iter().zip(assignment.iter()).filter(|(_, &a)| a == donor).map(|(p, _)| p.as_ref()).collect();
        let mut mean = vec![0.0; dim];
        for m in &members {
            for (s, v) in mean.iter_mut().zip(*m) {
                *s += v;
            }
        }
        centroids[donor] = mean.iter().map(|s| s / members.len() as f64).collect();
    }
}

fn single_restart<R: AsRef<[f64]> + Sync>(points: &[R], k: usize, seed: u64, restart: usize) -> (Vec<Vec<f64>>, RestartTrace) {
    let mut rng = rng_from_seed(derive_seed(seed, &format!("restart/{restart}")));
    let mut centroids = plus_plus_seeding(points, k, &mut rng);
    let mut assignment: Vec<usize> = points.iter().map(|p| nearest(p.as_ref(), &centroids).0).collect();
    let mut history = vec![wcss(points, &centroids, &assignment)];
    let mut iterations = 0;
    for _ in 0..MAX_LLOYD_ITERATIONS {
        iterations += 1;
        recompute_means(points, &mut assignment, &mut centroids);
        let next: Vec<usize> = points.iter().map(|p| nearest(p.as_ref(), &centroids).0).collect();
        history.push(wcss(points, &centroids, &next));
        if next == assignment {
            break;
        }
        assignment = next;
    }
    let inertia = wcss(points, &centroids, &assignment);
    (centroids, RestartTrace { restart, inertia_history: history, inertia, iterations })
}

/// Lloyd's algorithm from k-means++ seeds, best of `restarts` by inertia
/// (ties go to the lower restart index). Restart `r` draws from the stream
/// `seed -> "restart/r"`, so the result does not depend on scheduling.
pub fn kmeans_fit<R: AsRef<[f64]> + Sync>(points: &[R], k: usize, restarts: usize, seed: u64) -> Result<KMeansModel> {
    Ok(kmeans_fit_traced(points, k, restarts, seed)?.0)
}

pub fn kmeans_fit_traced<R: AsRef<[f64]> + Sync>(
    points: &[R],
    k: usize,
    restarts: usize,
    seed: u64,
) -> Result<(KMeansModel, Vec<RestartTrace>)> {
    check_points(points)?;
    if k == 0 {
        return Err(Error::Validation("k must be >= 1".into()));
    }
    if restarts == 0 {
        return Err(Error::Validation("restarts must be >= 1".into()));
    }
    let distinct = count_distinct(points);
    if k > distinct {
        return Err(Error::Validation(format!("k={k} exceeds the {distinct} distinct points")));
    }
    let runs: Vec<_> = (0..restarts).into_par_iter().map(|r| single_restart(points, k, seed, r)).collect();
    let (best_idx, _) = runs
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bv), (i, (_, t))| if t.inertia < bv { (i, t.inertia) } else { (bi, bv) });
    let mut traces = Vec::with_capacity(runs.len());
    let mut best = None;
    for (i, (centroids, trace)) in runs.into_iter().enumerate() {
        if i == best_idx {
            best = Some(KMeansModel { k, centroids, inertia: trace.inertia, seed, restarts, standardizer: None });
        }
        traces.push(trace);
    }
    Ok((best.expect("at least one restart"), traces))
}

/// Nearest-centroid assignment in model space; ties go to the lowest id.
pub fn kmeans_predict<R: AsRef<[f64]>>(model: &KMeansModel, points: &[R]) -> Result<Vec<usize>> {
    let dim = model.centroids[0].len();
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let p = p.as_ref();
            if p.len() != dim {
                return Err(Error::Validation(format!("point {i} has {} dimensions, model expects {dim}", p.len())));
            }
            Ok(nearest(p, &model.centroids).0)
        })
        .collect()
}

impl KMeansModel {
    pub fn predict<R: AsRef<[f64]>>(&self, points: &[R]) -> Result<Vec<usize>> {
        kmeans_predict(self, points)
    }

    /// Standardize (if the model carries a standardizer) and assign.
    pub fn predict_raw<R: AsRef<[f64]>>(&self, points: &[R]) -> Result<Vec<usize>> {
        match &self.standardizer {
            Some(s) => kmeans_predict(self, &s.apply(points)?),
            None => kmeans_predict(self, points),
        }
    }

    /// Relabel clusters so that ids ascend with the first centroid coordinate.
    /// Returns the relabelled model and the old-to-new id map.
    pub fn sorted_by_first_coordinate(&self) -> (KMeansModel, Vec<usize>) {
        let mut order: Vec<usize> = (0..self.k).collect();
        order.sort_by(|&a, &b| self.centroids[a][0].total_cmp(&self.centroids[b][0]).then(a.cmp(&b)));
        let mut old_to_new = vec![0; self.k];
        for (new, &old) in order.iter().enumerate() {
            old_to_new[old] = new;
        }
        let centroids = order.iter().map(|&o| self.centroids[o].clone()).collect();
        (KMeansModel { centroids, ..self.clone() }, old_to_new)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn two_pairs_in_one_dimension() {
        let p = pts(&[0.1, 0.2, 0.9, 1.0]);
        let m = kmeans_fit(&p, 2, 10, 1).unwrap();
        let mut c: Vec<f64> = m.centroids.iter().map(|c| c[0]).collect();
        c.sort_by(f64::total_cmp);
        assert!((c[0] - 0.15).abs() < 1e-12 && (c[1] - 0.95).abs() < 1e-12);
        let a = m.predict(&p).unwrap();
        assert_eq!(a[0], a[1]);
        assert_eq!(a[2], a[3]);
        assert_ne!(a[0], a[2]);
        assert!((m.inertia - 0.01).abs() < 1e-12);
    }

    #[test]
    fn single_cluster_is_global_mean() {
        let p = vec![vec![1.0, 2.0], vec![3.0, 0.0], vec![5.0, 4.0]];
        let m = kmeans_fit(&p, 1, 3, 0).unwrap();
        assert!((m.centroids[0][0] - 3.0).abs() < 1e-12);
        assert!((m.centroids[0][1] - 2.0).abs() < 1e-12);
        // Total variance times n: (4+0+4) + (0+4+4).
        assert!((m.inertia - 16.0).abs() < 1e-12);
    }

    #[test]
    fn k_equal_n_has_zero_inertia() {
        let p = pts(&[0.0, 1.0, 5.0, 7.5]);
        assert_eq!(kmeans_fit(&p, 4, 5, 3).unwrap().inertia, 0.0);
    }

    #[test]
    fn k_above_distinct_points_is_rejected() {
        let p = pts(&[1.0, 1.0, 2.0]);
        assert!(matches!(kmeans_fit(&p, 3, 5, 0), Err(Error::Validation(_))));
    }

    #[test]
    fn predict_ties_and_distances() {
        let m = KMeansModel { k: 2, centroids: vec![vec![0.15], vec![0.95]], inertia: 0.0, seed: 0, restarts: 1, standardizer: None };
        assert_eq!(m.predict(&pts(&[0.5])).unwrap(), vec![0]);
        let tie = KMeansModel { centroids: vec![vec![0.0], vec![1.0]], ..m.clone() };
        assert_eq!(tie.predict(&pts(&[0.5])).unwrap(), vec![0]);
        assert_eq!(m.predict(&m.centroids).unwrap(), vec![0, 1]);
        assert!(m.predict(&[vec![0.1, 0.2]]).is_err());
    }

    #[test]
    fn empty_cluster_is_repaired() {
        // Duplicated mass plus one outlier; every fit must keep k clusters populated.
        let mut p = pts(&[0.0; 6]);
        p.push(vec![1.0]);
        p.push(vec![1.0 + 1e-9]);
        for seed in 0..20 {
            let m = kmeans_fit(&p, 3, 1, seed).unwrap();
            let a = m.predict(&p).unwrap();
            let used: BTreeSet<usize> = a.iter().copied().collect();
            assert_eq!(used.len(), 3, "seed {seed}");
        }
    }

    #[test]
    fn repair_moves_farthest_point_into_empty_cluster() {
        let p = pts(&[0.0, 0.1, 5.0, 5.2]);
        let mut assignment = vec![0; 4];
        let mut centroids = vec![vec![0.0], vec![100.0]];
        recompute_means(&p, &mut assignment, &mut centroids);
        // Mean of all four is 2.575; 5.2 is farthest from it.
        assert_eq!(assignment, vec![0, 0, 0, 1]);
        assert_eq!(centroids[1], vec![5.2]);
        assert!((centroids[0][0] - 5.1 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn sort_by_coordinate_relabels() {
        let m = KMeansModel { k: 3, centroids: vec![vec![2.0], vec![0.5], vec![1.0]], inertia: 0.0, seed: 0, restarts: 1, standardizer: None };
        let (s, map) = m.sorted_by_first_coordinate();
        assert_eq!(s.centroids, vec![vec![0.5], vec![1.0], vec![2.0]]);
        assert_eq!(map, vec![2, 0, 1]);
    }
}
