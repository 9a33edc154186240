//! Synthetic multi-source data with planted participant heterogeneity.
//!
//! Each participant belongs to a latent cluster. A day's features are
//!
//! ```text
//! cluster_mean[c] + participant_offset[p] + noise_scale[sex] · N(0, I) + episode_shift[c] · in_episode
//! ```
//!
//! Episodes start at a confirmed day drawn at `episode_rate` per 100 days; the
//! seven-day window around it carries the shift and, after segmentation and
//! label expansion, the positive label. Clusters respond to episodes along
//! different feature directions (cluster 1 opposes cluster 0), so a single
//! shared decision rule cannot fit every cluster. The sex effect is purely a
//! noise-scale multiplier.

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::record::{Dataset, Record, Sex};
use super::segment::{expand_labels, segment_by_gaps};
use crate::rng::{derive_seed, rng_from_seed};
use crate::{Error, Result, NUM_FEATURES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub participants: usize,
    pub clusters: usize,
    /// Relative cluster sizes; empty means equal sizes.
    pub cluster_weights: Vec<f64>,
    /// Explicit cluster mean vectors (one per cluster, 20 values each); empty
    /// means draw `N(0, cluster_offset_scale²)` per feature.
    pub cluster_offsets: Vec<Vec<f64>>,
    pub cluster_offset_scale: f64,
    pub participant_offset_scale: f64,
    pub noise_female: f64,
    pub noise_male: f64,
    pub female_fraction: f64,
    /// Per-cluster share of female participants; empty means `female_fraction`
    /// everywhere, drawn independently of cluster.
    pub cluster_female_fraction: Vec<f64>,
    /// Expected episodes per 100 days.
    pub episode_rate: f64,
    /// Magnitude of the per-feature shift during an episode window.
    pub episode_shift: f64,
    /// Per-cluster probability of flipping each label; empty means none.
    pub label_noise: Vec<f64>,
    pub days: usize,
    /// Probability that a day is missing (exercises gap segmentation).
    pub missing_day_rate: f64,
    pub start_date: NaiveDate,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            participants: 60,
            clusters: 3,
            cluster_weights: vec![0.5, 0.3, 0.2],
            cluster_offsets: Vec::new(),
            cluster_offset_scale: 0.3,
            participant_offset_scale: 0.5,
            noise_female: 1.5,
            noise_male: 1.0,
            female_fraction: 0.5,
            cluster_female_fraction: Vec::new(),
            episode_rate: 3.0,
            episode_shift: 1.5,
            label_noise: Vec::new(),
            days: 60,
            missing_day_rate: 0.0,
            start_date: NaiveDate::from_ymd_opt(2021, 6, 28).expect("valid date"),
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.participants == 0 || self.clusters == 0 || self.days == 0 {
            return bad("participants, clusters and days must be >= 1".into());
        }
        if self.clusters > self.participants {
            return bad(format!("{} clusters for {} participants", self.clusters, self.participants));
        }
        if !self.cluster_weights.is_empty()
            && (self.cluster_weights.len() != self.clusters || self.cluster_weights.iter().any(|w| !(*w > 0.0)))
        {
            return bad("cluster_weights needs one positive weight per cluster".into());
        }
        if !self.cluster_offsets.is_empty()
            && (self.cluster_offsets.len() != self.clusters || self.cluster_offsets.iter().any(|o| o.len() != NUM_FEATURES))
        {
            return bad(format!("cluster_offsets needs {} vectors of {NUM_FEATURES} values", self.clusters));
        }
        for (name, v) in [
            ("cluster_offset_scale", self.cluster_offset_scale),
            ("participant_offset_scale", self.participant_offset_scale),
            ("noise_female", self.noise_female),
            ("noise_male", self.noise_male),
            ("episode_rate", self.episode_rate),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a finite value >= 0"));
            }
        }
        if !self.episode_shift.is_finite() {
            return bad("episode_shift must be finite".into());
        }
        if !(0.0..=1.0).contains(&self.female_fraction) || !(0.0..1.0).contains(&self.missing_day_rate) {
            return bad("female_fraction must lie in [0,1] and missing_day_rate in [0,1)".into());
        }
        if !self.cluster_female_fraction.is_empty()
            && (self.cluster_female_fraction.len() != self.clusters || self.cluster_female_fraction.iter().any(|p| !(0.0..=1.0).contains(p)))
        {
            return bad("cluster_female_fraction needs one fraction in [0,1] per cluster".into());
        }
        if !self.label_noise.is_empty() && (self.label_noise.len() != self.clusters || self.label_noise.iter().any(|p| !(0.0..=1.0).contains(p))) {
            return bad("label_noise needs one probability per cluster".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub dataset: Dataset,
    /// Planted cluster per participant.
    pub truth: BTreeMap<String, usize>,
    /// Confirmed episode days per participant.
    pub confirmed: BTreeMap<String, Vec<NaiveDate>>,
}

pub fn participant_id(i: usize) -> String {
    format!("P{i:03}")
}

/// Cluster sizes by largest remainder so they sum to `n` exactly.
fn cluster_sizes(n: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let raw: Vec<f64> = weights.iter().map(|w| w / total * n as f64).collect();
    let mut sizes: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    let mut missing = n - sizes.iter().sum::<usize>();
    for &c in order.iter().cycle() {
        if missing == 0 {
            break;
        }
        sizes[c] += 1;
        missing -= 1;
    }
    sizes
}

/// Episode response direction of cluster `c`: a signed block of five features.
/// Cluster 1 mirrors cluster 0; further clusters move to fresh blocks.
pub fn episode_direction(c: usize) -> [f64; NUM_FEATURES] {
    let mut d = [0.0; NUM_FEATURES];
    let (block, sign) = match c {
        0 => (0, 1.0),
        1 => (0, -1.0),
        other => ((other - 1) % 4, if other % 2 == 0 { 1.0 } else { -1.0 }),
    };
    for v in d.iter_mut().skip(block * 5).take(5) {
        *v = sign;
    }
    d
}

pub fn synth_generate(config: &SynthConfig) -> Result<SynthOutput> {
    config.validate()?;
    let n = config.participants;
    let weights = if config.cluster_weights.is_empty() { vec![1.0; config.clusters] } else { config.cluster_weights.clone() };

    let mut rng = rng_from_seed(derive_seed(config.seed, "clusters"));
    let cluster_means: Vec<Vec<f64>> = if config.cluster_offsets.is_empty() {
        (0..config.clusters)
            .map(|_| {
                (0..NUM_FEATURES)
                    .map(|_| { let z: f64 = StandardNormal.sample(&mut rng); config.cluster_offset_scale * z })
                    .collect::<Vec<f64>>()
            })
            .collect()
    } else {
        config.cluster_offsets.clone()
    };
    let mut membership: Vec<usize> = cluster_sizes(n, &weights).iter().enumerate().flat_map(|(c, &s)| std::iter::repeat_n(c, s)).collect();
    membership.shuffle(&mut rng);
    let sexes: Vec<Sex> = if config.cluster_female_fraction.is_empty() {
        let females = (config.female_fraction * n as f64).round() as usize;
        let mut s: Vec<Sex> = (0..n).map(|i| if i < females { Sex::F } else { Sex::M }).collect();
        s.shuffle(&mut rng);
        s
    } else {
        let mut s = vec![Sex::M; n];
        for (c, frac) in config.cluster_female_fraction.iter().enumerate() {
            let mut members: Vec<usize> = (0..n).filter(|&p| membership[p] == c).collect();
            members.shuffle(&mut rng);
            let females = (frac * members.len() as f64).round() as usize;
            members.iter().take(females).for_each(|&p| s[p] = Sex::F);
        }
        s
    };

    let mut records = Vec::with_capacity(n * config.days);
    let mut truth = BTreeMap::new();
    let mut confirmed = BTreeMap::new();
    for p in 0..n {
        let id = participant_id(p);
        let cluster = membership[p];
        let sex = sexes[p];
        let mut prng = rng_from_seed(derive_seed(config.seed, &format!("participant/{p}")));
        let offset: Vec<f64> = (0..NUM_FEATURES)
            .map(|_| { let z: f64 = StandardNormal.sample(&mut prng); config.participant_offset_scale * z })
            .collect();
        let noise = match sex {
            Sex::F => config.noise_female,
            Sex::M => config.noise_male,
        };

        // Confirmed days, at least seven days apart so windows do not overlap.
        let mut episode_days = Vec::new();
        let mut next_allowed = 0usize;
        for d in 0..config.days {
            if d >= next_allowed && prng.random::<f64>() < config.episode_rate / 100.0 {
                episode_days.push(d);
                next_allowed = d + 7;
            }
        }
        let in_window = |d: usize| episode_days.iter().any(|&c| d.abs_diff(c) <= 3);
        let direction = episode_direction(cluster);

        let mut part_records = Vec::with_capacity(config.days);
        for d in 0..config.days {
            let mut features = [0.0; NUM_FEATURES];
            for (j, f) in features.iter_mut().enumerate() {
                let eps: f64 = StandardNormal.sample(&mut prng);
                *f = cluster_means[cluster][j] + offset[j] + noise * eps;
            }
            if in_window(d) {
                for (f, dir) in features.iter_mut().zip(direction) {
                    *f += config.episode_shift * dir;
                }
            }
            let missing = config.missing_day_rate > 0.0 && prng.random::<f64>() < config.missing_day_rate;
            if missing {
                continue;
            }
            part_records.push(Record {
                participant_id: id.clone(),
                date: config.start_date + Duration::days(d as i64),
                features,
                label: 0,
                sex,
            });
        }

        // Labels follow the expansion rule inside each gap-free run; short runs keep label 0.
        let part = Dataset::new(part_records)?;
        let dates: Vec<NaiveDate> = episode_days.iter().map(|&d| config.start_date + Duration::days(d as i64)).collect();
        let (segments, _) = segment_by_gaps(&part);
        let mut labelled: BTreeMap<NaiveDate, u8> = BTreeMap::new();
        for seg in segments {
            let inside: Vec<NaiveDate> = dates.iter().copied().filter(|&d| seg.contains(d)).collect();
            for r in expand_labels(&seg, &inside)?.records {
                labelled.insert(r.date, r.label);
            }
        }
        let flip = config.label_noise.get(cluster).copied().unwrap_or(0.0);
        for mut r in part.records().iter().cloned() {
            r.label = labelled.get(&r.date).copied().unwrap_or(0);
            if flip > 0.0 && prng.random::<f64>() < flip {
                r.label = 1 - r.label;
            }
            records.push(r);
        }
        truth.insert(id.clone(), cluster);
        confirmed.insert(id, dates);
    }
    Ok(SynthOutput { dataset: Dataset::new(records)?, truth, confirmed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::{kmeans_fit, Standardizer};
    use crate::data::split::participant_profiles;

    #[test]
    fn record_count_before_segmentation() {
        let cfg = SynthConfig { participants: 5, days: 100, clusters: 2, cluster_weights: vec![], ..SynthConfig::default() };
        let out = synth_generate(&cfg).unwrap();
        assert_eq!(out.dataset.len(), 500);
        assert_eq!(out.truth.values().count(), 5);
    }

    #[test]
    fn zero_episode_rate_means_no_positives() {
        let cfg = SynthConfig { episode_rate: 0.0, participants: 6, days: 30, ..SynthConfig::default() };
        let out = synth_generate(&cfg).unwrap();
        assert!(out.dataset.records().iter().all(|r| r.label == 0));
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = SynthConfig { participants: 8, days: 20, ..SynthConfig::default() };
        let a = synth_generate(&cfg).unwrap();
        let b = synth_generate(&cfg).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.truth, b.truth);
        let c = synth_generate(&SynthConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a.dataset, c.dataset);
    }

    #[test]
    fn cluster_sizes_follow_weights() {
        assert_eq!(cluster_sizes(60, &[0.5, 0.3, 0.2]), vec![30, 18, 12]);
        assert_eq!(cluster_sizes(7, &[1.0, 1.0, 1.0]).iter().sum::<usize>(), 7);
        let cfg = SynthConfig::default();
        let out = synth_generate(&cfg).unwrap();
        let mut counts = vec![0; 3];
        out.truth.values().for_each(|&c| counts[c] += 1);
        assert_eq!(counts, vec![30, 18, 12]);
    }

    #[test]
    fn noiseless_profiles_recover_planted_clusters() {
        let mut offsets = vec![vec![0.0; NUM_FEATURES]; 3];
        offsets[1][10] = 5.0;
        offsets[2][15] = -5.0;
        let cfg = SynthConfig {
            participants: 12,
            days: 10,
            cluster_offsets: offsets,
            participant_offset_scale: 0.0,
            noise_female: 0.0,
            noise_male: 0.0,
            episode_rate: 0.0,
            ..SynthConfig::default()
        };
        let out = synth_generate(&cfg).unwrap();
        let rows: Vec<Vec<f64>> = out.dataset.records().iter().map(|r| r.features.to_vec()).collect();
        let s = Standardizer::fit(&rows).unwrap();
        let profiles = participant_profiles(&out.dataset, &s).unwrap();
        let ids: Vec<&String> = profiles.keys().collect();
        let pts: Vec<Vec<f64>> = profiles.values().cloned().collect();
        let m = kmeans_fit(&pts, 3, 10, 0).unwrap();
        let found = m.predict(&pts).unwrap();
        // Same partition up to relabelling.
        for i in 0..ids.len() {
            for j in 0..ids.len() {
                assert_eq!(found[i] == found[j], out.truth[ids[i]] == out.truth[ids[j]]);
            }
        }
    }

    #[test]
    fn episode_windows_are_seven_days() {
        let cfg = SynthConfig { participants: 4, days: 200, episode_rate: 2.0, ..SynthConfig::default() };
        let out = synth_generate(&cfg).unwrap();
        let positives = out.dataset.records().iter().filter(|r| r.label == 1).count();
        let episodes: usize = out.confirmed.values().map(Vec::len).sum();
        assert!(episodes > 0);
        // Windows never overlap; only clipping at the ends can shorten one.
        assert!(positives <= 7 * episodes && positives + 6 >= 7 * episodes.saturating_sub(1));
    }

    #[test]
    fn invalid_config_is_rejected() {
        assert!(synth_generate(&SynthConfig { participants: 0, ..SynthConfig::default() }).is_err());
        assert!(synth_generate(&SynthConfig { noise_male: -1.0, ..SynthConfig::default() }).is_err());
        assert!(synth_generate(&SynthConfig { cluster_weights: vec![1.0], ..SynthConfig::default() }).is_err());
    }
}
