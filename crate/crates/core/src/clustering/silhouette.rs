use std::collections::BTreeMap;

use super::kmeans::sq_dist;
use crate::{Error, Result};

/// Per-point silhouette values `(b - a) / max(a, b)`; points in singleton
/// clusters score 0. Cluster ids may be any labels.
pub fn silhouette_samples<R: AsRef<[f64]>>(points: &[R], assignments: &[usize]) -> Result<Vec<f64>> {
    if points.len() != assignments.len() {
        return Err(Error::Validation(format!("{} points but {} assignments", points.len(), assignments.len())));
    }
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in assignments.iter().enumerate() {
        members.entry(c).or_default().push(i);
    }
    if members.len() < 2 {
        return Err(Error::Validation("silhouette needs at least two non-empty clusters".into()));
    }
    let n = points.len();
    let mut scores = Vec::with_capacity(n);
    for i in 0..n {
        let own = assignments[i];
        if members[&own].len() == 1 {
            scores.push(0.0);
            continue;
        }
        let p = points[i].as_ref();
        let mut a = 0.0;
        let mut b = f64::INFINITY;
        for (&c, idx) in &members {
            let total: f64 = idx.iter().filter(|&&j| j != i).map(|&j| sq_dist(p, points[j].as_ref()).sqrt()).sum();
            if c == own {
                a = total / (idx.len() - 1) as f64;
            } else {
                b = b.min(total / idx.len() as f64);
            }
        }
        let denom = a.max(b);
        scores.push(if denom > 0.0 { (b - a) / denom } else { 0.0 });
    }
    Ok(scores)
}

/// Mean silhouette over all points.
pub fn silhouette<R: AsRef<[f64]>>(points: &[R], assignments: &[usize]) -> Result<f64> {
    let s = silhouette_samples(points, assignments)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn two_tight_pairs() {
        let p = pts(&[0.0, 0.1, 10.0, 10.1]);
        let s = silhouette(&p, &[0, 0, 1, 1]).unwrap();
        // Direct evaluation: a = 0.1 for every point; b = 10.05 (points 0 and 3) or 9.95 (points 1 and 2).
        let expected = ((1.0 - 0.1 / 10.05) * 2.0 + (1.0 - 0.1 / 9.95) * 2.0) / 4.0;
        assert!((s - expected).abs() < 1e-12);
        assert!((s - 0.990).abs() < 1e-3);
    }

    #[test]
    fn identical_points_within_clusters_score_one() {
        let p = pts(&[2.0, 2.0, 2.0, 7.0, 7.0]);
        assert_eq!(silhouette(&p, &[0, 0, 0, 1, 1]).unwrap(), 1.0);
    }

    #[test]
    fn permuting_labels_is_neutral() {
        let p = pts(&[0.0, 0.4, 1.0, 3.0, 3.3, 9.0]);
        let a = silhouette(&p, &[0, 0, 0, 1, 1, 2]).unwrap();
        let b = silhouette(&p, &[7, 7, 7, 2, 2, 4]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn singleton_scores_zero_and_single_cluster_errors() {
        let p = pts(&[0.0, 0.1, 5.0]);
        let s = silhouette_samples(&p, &[0, 0, 1]).unwrap();
        assert_eq!(s[2], 0.0);
        assert!(silhouette(&p, &[0, 0, 0]).is_err());
    }
}
