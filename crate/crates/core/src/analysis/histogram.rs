use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Equal-width histogram of per-participant mean losses, split by cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramSpec {
    /// `bins + 1` edges from min to max.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// `cluster_counts[b][c]`: participants of cluster `c` in bin `b`.
    pub cluster_counts: Vec<Vec<usize>>,
    pub clusters: BTreeMap<String, usize>,
    pub bin_of: BTreeMap<String, usize>,
}

impl HistogramSpec {
    pub fn bins(&self) -> usize {
        self.counts.len()
    }
}

/// Bin `losses` into `bins` equal-width bins over `[min, max]` (the last bin
/// is closed) and tag each participant with its cluster from `clusters`.
pub fn participant_loss_histogram(losses: &BTreeMap<String, f64>, clusters: &BTreeMap<String, usize>, bins: usize) -> Result<HistogramSpec> {
    if bins == 0 {
        return Err(Error::Validation("histogram needs >= 1 bin".into()));
    }
    if losses.is_empty() {
        return Err(Error::Validation("histogram of no participants".into()));
    }
    if let Some((p, _)) = losses.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Numeric { path: format!("loss of {p}") });
    }
    let min = losses.values().copied().fold(f64::INFINITY, f64::min);
    let max = losses.values().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (max - min) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|b| if b == bins { max } else { min + width * b as f64 }).collect();
    let k = clusters.values().max().map_or(1, |m| m + 1);
    let mut counts = vec![0; bins];
    let mut cluster_counts = vec![vec![0; k]; bins];
    let mut bin_of = BTreeMap::new();
    let mut tags = BTreeMap::new();
    for (p, &v) in losses {
        let b = if width > 0.0 { (((v - min) / width).floor() as usize).min(bins - 1) } else { 0 };
        let c = *clusters.get(p).ok_or_else(|| Error::Unrouted(p.clone()))?;
        counts[b] += 1;
        cluster_counts[b][c] += 1;
        bin_of.insert(p.clone(), b);
        tags.insert(p.clone(), c);
    }
    Ok(HistogramSpec { edges, counts, cluster_counts, clusters: tags, bin_of })
}

/// `bin_low,bin_high,count,cluster`, one row per bin and cluster.
pub fn histogram_csv(h: &HistogramSpec) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["bin_low", "bin_high", "count", "cluster"]).expect("in-memory write");
    for (b, per) in h.cluster_counts.iter().enumerate() {
        for (c, n) in per.iter().enumerate() {
            w.write_record([h.edges[b].to_string(), h.edges[b + 1].to_string(), n.to_string(), c.to_string()]).expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(v: &[(&str, f64)]) -> BTreeMap<String, f64> {
        v.iter().map(|(p, x)| (p.to_string(), *x)).collect()
    }

    fn zeros(v: &BTreeMap<String, f64>) -> BTreeMap<String, usize> {
        v.keys().map(|p| (p.clone(), 0)).collect()
    }

    #[test]
    fn two_bins_over_range() {
        let l = map(&[("a", 0.1), ("b", 0.2), ("c", 0.9)]);
        let h = participant_loss_histogram(&l, &zeros(&l), 2).unwrap();
        assert_eq!(h.counts, vec![2, 1]);
        assert_eq!(h.edges.first(), Some(&0.1));
        assert_eq!(h.edges.last(), Some(&0.9));
    }

    #[test]
    fn equal_losses_fill_one_bin() {
        let l = map(&[("a", 0.4), ("b", 0.4), ("c", 0.4)]);
        let h = participant_loss_histogram(&l, &zeros(&l), 5).unwrap();
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(h.counts.iter().sum::<usize>(), 3);
    }

    #[test]
    fn cluster_tags_pass_through() {
        let l = map(&[("a", 0.1), ("b", 0.5), ("c", 0.9)]);
        let tags: BTreeMap<String, usize> = [("a", 0), ("b", 1), ("c", 2)].iter().map(|(p, c)| (p.to_string(), *c)).collect();
        let h = participant_loss_histogram(&l, &tags, 3).unwrap();
        assert_eq!(h.clusters, tags);
        let csv = histogram_csv(&h);
        assert_eq!(csv.lines().next(), Some("bin_low,bin_high,count,cluster"));
        assert_eq!(csv.lines().count(), 1 + 3 * 3);
    }

    #[test]
    fn errors() {
        let l = map(&[("a", 0.1)]);
        assert!(participant_loss_histogram(&l, &zeros(&l), 0).is_err());
        assert!(participant_loss_histogram(&BTreeMap::new(), &BTreeMap::new(), 2).is_err());
        assert!(participant_loss_histogram(&l, &BTreeMap::new(), 2).is_err());
    }
}
