use std::collections::BTreeMap;

use chrono::NaiveDate;
use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use super::record::Dataset;
use crate::clustering::Standardizer;
use crate::rng::rng_from_seed;
use crate::{Error, Result};

/// Train gets dates strictly before `split_date`, test the rest.
pub fn temporal_split(dataset: &Dataset, split_date: NaiveDate) -> (Dataset, Dataset) {
    (dataset.filter(|r| r.date < split_date), dataset.filter(|r| r.date >= split_date))
}

/// Mean standardized feature vector per participant.
pub fn participant_profiles(dataset: &Dataset, standardizer: &Standardizer) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut out = BTreeMap::new();
    for (id, rows) in dataset.rows_by_participant() {
        let mut acc = vec![0.0; standardizer.dim()];
        for &i in &rows {
            let z = standardizer.apply_one(&dataset.records()[i].features)?;
            for (a, v) in acc.iter_mut().zip(z) {
                *a += v;
            }
        }
        acc.iter_mut().for_each(|a| *a /= rows.len() as f64);
        out.insert(id, acc);
    }
    Ok(out)
}

/// Rows kept per participant by [`stratified_resample`]: `⌊fraction·n⌋`, at least 1.
pub fn resample_count(fraction: f64, n: usize) -> usize {
    // Guard against products like 0.8·10 landing a hair under an integer.
    (((fraction * n as f64) + 1e-9).floor() as usize).clamp(1, n.max(1))
}

/// Sample `⌊fraction·n_p⌋` (minimum 1) rows of each participant without replacement.
pub fn stratified_resample(dataset: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Validation(format!("resample fraction {fraction} outside (0, 1]")));
    }
    let mut rng = rng_from_seed(seed);
    let mut keep = Vec::with_capacity(dataset.len());
    for rows in dataset.rows_by_participant().values() {
        let count = resample_count(fraction, rows.len());
        let mut picked: Vec<usize> = index::sample(&mut rng, rows.len(), count).into_iter().map(|i| rows[i]).collect();
        picked.sort_unstable();
        keep.extend(picked);
    }
    Ok(dataset.subset(&keep))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// Uniform over all rows.
    #[default]
    Uniform,
    /// Same fraction drawn from each participant.
    Stratified,
}

/// Random train/validation split with `round(val_fraction·n)` validation rows
/// (per participant in stratified mode).
pub fn mc_split(dataset: &Dataset, val_fraction: f64, seed: u64, mode: SplitMode) -> Result<(Dataset, Dataset)> {
    if dataset.is_empty() {
        return Err(Error::Validation("cannot split an empty dataset".into()));
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::Validation(format!("validation fraction {val_fraction} outside [0, 1)")));
    }
    let mut rng = rng_from_seed(seed);
    let mut val = Vec::new();
    match mode {
        SplitMode::Uniform => {
            let mut idx: Vec<usize> = (0..dataset.len()).collect();
            idx.shuffle(&mut rng);
            let n_val = (val_fraction * dataset.len() as f64).round() as usize;
            val.extend_from_slice(&idx[..n_val]);
        }
        SplitMode::Stratified => {
            for rows in dataset.rows_by_participant().values() {
                let mut idx = rows.clone();
                idx.shuffle(&mut rng);
                let n_val = (val_fraction * rows.len() as f64).round() as usize;
                val.extend_from_slice(&idx[..n_val]);
            }
        }
    }
    val.sort_unstable();
    let mut is_val = vec![false; dataset.len()];
    val.iter().for_each(|&i| is_val[i] = true);
    let train: Vec<usize> = (0..dataset.len()).filter(|&i| !is_val[i]).collect();
    Ok((dataset.subset(&train), dataset.subset(&val)))
}

/// Disjoint k-fold partition: fold `f` validates on its own slice of a shuffled order.
pub fn kfold_splits(dataset: &Dataset, folds: usize, seed: u64) -> Result<Vec<(Dataset, Dataset)>> {
    if folds < 2 || folds > dataset.len() {
        return Err(Error::Validation(format!("cannot make {folds} folds from {} rows", dataset.len())));
    }
    let mut idx: Vec<usize> = (0..dataset.len()).collect();
    idx.shuffle(&mut rng_from_seed(seed));
    let n = dataset.len();
    Ok((0..folds)
        .map(|f| {
            let (lo, hi) = (f * n / folds, (f + 1) * n / folds);
            let mut val: Vec<usize> = idx[lo..hi].to_vec();
            val.sort_unstable();
            let mut train: Vec<usize> = idx[..lo].iter().chain(&idx[hi..]).copied().collect();
            train.sort_unstable();
            (dataset.subset(&train), dataset.subset(&val))
        })
        .collect())
}
