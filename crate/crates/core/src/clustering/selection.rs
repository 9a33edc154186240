//! Choosing the number of clusters: WCSS curves with chord-distance knees
//! and silhouette maximisation.

use serde::{Deserialize, Serialize};

use super::kmeans::{count_distinct, kmeans_fit, KMeansModel};
use super::silhouette::silhouette;
use crate::rng::derive_seed;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChosenBy {
    Silhouette,
    Elbow,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelection {
    pub ks: Vec<usize>,
    pub wcss: Vec<f64>,
    /// `None` where undefined (k = 1 or every cluster a singleton).
    pub silhouette: Vec<Option<f64>>,
    pub chosen: usize,
    pub chosen_by: ChosenBy,
    /// Set when the elbow rule found no bend and fell back to the smallest k.
    #[serde(default)]
    pub no_knee: bool,
}

/// Result of [`knee`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Knee {
    pub index: usize,
    /// Perpendicular distance to the chord in unit-normalised coordinates.
    pub distance: f64,
    pub no_knee: bool,
}

const NO_KNEE_TOLERANCE: f64 = 1e-9;

/// Index of the point farthest from the chord joining the first and last
/// points, after mapping x and y onto `[0, 1]` (so the result is invariant to
/// positive affine rescaling of the values). Ties go to the smallest index; a
/// curve with no point off the chord is flagged `no_knee` with index 0.
pub fn knee(values: &[f64]) -> Result<Knee> {
    if values.len() < 3 {
        return Err(Error::Validation(format!("knee detection needs >= 3 values, got {}", values.len())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric { path: "knee curve".into() });
    }
    if values.iter().all(|&v| v == values[0]) {
        return Ok(Knee { index: 0, distance: 0.0, no_knee: true });
    }
    let n = values.len();
    let first = values[0];
    let last = values[n - 1];
    let span = if first != last {
        first - last
    } else {
        let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        if hi > lo { hi - lo } else { 1.0 }
    };
    let mut best = Knee { index: 0, distance: 0.0, no_knee: true };
    for (i, &v) in values.iter().enumerate() {
        let x = i as f64 / (n - 1) as f64;
        let y = (v - last) / span;
        // Chord from (0, 1) to (1, 0) in normalised coordinates.
        let d = (x + y - 1.0).abs() / std::f64::consts::SQRT_2;
        if d > best.distance {
            best = Knee { index: i, distance: d, no_knee: false };
        }
    }
    if best.distance < NO_KNEE_TOLERANCE {
        return Ok(Knee { index: 0, distance: best.distance, no_knee: true });
    }
    Ok(best)
}

fn check_range<R: AsRef<[f64]>>(points: &[R], k_min: usize, k_max: usize) -> Result<()> {
    if k_min == 0 || k_min > k_max {
        return Err(Error::Validation(format!("invalid k range [{k_min}, {k_max}]")));
    }
    let distinct = count_distinct(points);
    if k_max > distinct {
        return Err(Error::Validation(format!("k_max={k_max} exceeds the {distinct} distinct points")));
    }
    Ok(())
}

fn fit_range<R: AsRef<[f64]> + Sync>(
    points: &[R],
    k_min: usize,
    k_max: usize,
    restarts: usize,
    seed: u64,
) -> Result<Vec<(usize, KMeansModel, Option<f64>)>> {
    check_range(points, k_min, k_max)?;
    (k_min..=k_max)
        .map(|k| {
            let model = kmeans_fit(points, k, restarts, derive_seed(seed, &format!("k/{k}")))?;
            let sil = if k >= 2 && k < points.len() {
                Some(silhouette(points, &model.predict(points)?)?)
            } else {
                None
            };
            Ok((k, model, sil))
        })
        .collect()
}

/// WCSS per k from best-of-restarts fits, with the chord-distance knee as the
/// chosen k (the smallest k when fewer than three values exist or there is no bend).
pub fn wcss_curve<R: AsRef<[f64]> + Sync>(points: &[R], k_min: usize, k_max: usize, restarts: usize, seed: u64) -> Result<KSelection> {
    let fits = fit_range(points, k_min, k_max, restarts, seed)?;
    let ks: Vec<usize> = fits.iter().map(|f| f.0).collect();
    let wcss: Vec<f64> = fits.iter().map(|f| f.1.inertia).collect();
    let (chosen, no_knee) = if wcss.len() >= 3 {
        let kn = knee(&wcss)?;
        (ks[kn.index], kn.no_knee)
    } else {
        (k_min, true)
    };
    Ok(KSelection { ks, silhouette: fits.iter().map(|f| f.2).collect(), wcss, chosen, chosen_by: ChosenBy::Elbow, no_knee })
}

/// Fit every k in `[k_min, k_max]` (k_min >= 2) and choose the highest mean
/// silhouette; ties go to the smaller k.
pub fn select_by_silhouette<R: AsRef<[f64]> + Sync>(
    points: &[R],
    k_min: usize,
    k_max: usize,
    restarts: usize,
    seed: u64,
) -> Result<KSelection> {
    if k_min < 2 {
        return Err(Error::Validation("silhouette selection needs k_min >= 2".into()));
    }
    let fits = fit_range(points, k_min, k_max, restarts, seed)?;
    let mut chosen = None;
    let mut best = f64::NEG_INFINITY;
    for (k, _, sil) in &fits {
        if let Some(s) = sil {
            if *s > best {
                best = *s;
                chosen = Some(*k);
            }
        }
    }
    let chosen = chosen.ok_or_else(|| Error::Validation("no k in range has a defined silhouette".into()))?;
    Ok(KSelection {
        ks: fits.iter().map(|f| f.0).collect(),
        wcss: fits.iter().map(|f| f.1.inertia).collect(),
        silhouette: fits.iter().map(|f| f.2).collect(),
        chosen,
        chosen_by: ChosenBy::Silhouette,
        no_knee: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn knee_of_hand_curve() {
        // Normalised distances |x + y - 1|: 0.659, 0.474, 0.237 at indices 1..3.
        let k = knee(&[100.0, 30.0, 25.0, 24.0, 23.0]).unwrap();
        assert_eq!(k.index, 1);
        assert!(!k.no_knee);
    }

    #[test]
    fn linear_curve_has_no_knee() {
        let k = knee(&[10.0, 8.0, 6.0, 4.0, 2.0]).unwrap();
        assert!(k.no_knee);
        assert_eq!(k.index, 0);
        let flat = knee(&[1.0, 1.0, 1.0]).unwrap();
        assert!(flat.no_knee);
    }

    #[test]
    fn knee_is_affine_invariant() {
        let v = [5.0, 2.0, 1.2, 1.0, 0.9, 0.85];
        let base = knee(&v).unwrap().index;
        for (a, b) in [(3.0, 0.0), (0.01, 7.0), (250.0, -40.0)] {
            let w: Vec<f64> = v.iter().map(|x| a * x + b).collect();
            assert_eq!(knee(&w).unwrap().index, base);
        }
    }

    #[test]
    fn knee_needs_three_values() {
        assert!(knee(&[1.0, 0.5]).is_err());
    }

    fn three_blobs() -> Vec<Vec<f64>> {
        let mut p = Vec::new();
        for (c, centre) in [0.0, 10.0, 20.0].iter().enumerate() {
            for j in 0..5 {
                p.push(vec![centre + 0.05 * j as f64 + 0.01 * c as f64]);
            }
        }
        p
    }

    #[test]
    fn wcss_curve_on_three_blobs() {
        let p = three_blobs();
        let sel = wcss_curve(&p, 1, 6, 10, 42).unwrap();
        assert_eq!(sel.chosen, 3);
        // Large drop up to k = 3, marginal afterwards.
        assert!(sel.wcss[2] < 0.01 * sel.wcss[1]);
        assert!(sel.wcss[2] - sel.wcss[5] < 0.1);
        for w in sel.wcss.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn degenerate_range_is_zero() {
        let p = vec![vec![0.0], vec![1.0], vec![3.0]];
        let sel = wcss_curve(&p, 3, 3, 5, 0).unwrap();
        assert_eq!(sel.wcss, vec![0.0]);
        assert!(wcss_curve(&p, 2, 4, 5, 0).is_err());
        assert!(wcss_curve(&p, 0, 2, 5, 0).is_err());
    }

    #[test]
    fn silhouette_picks_two_blobs() {
        let mut p: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 * 0.1, 0.0]).collect();
        p.extend((0..6).map(|i| vec![50.0 + i as f64 * 0.1, 3.0]));
        let sel = select_by_silhouette(&p, 2, 6, 10, 1).unwrap();
        assert_eq!(sel.chosen, 2);
        assert_eq!(sel.chosen_by, ChosenBy::Silhouette);
    }
}
