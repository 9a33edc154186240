use std::collections::BTreeSet;

use chrono::NaiveDate;
use proptest::prelude::*;
use routed_mlp::clustering::{kmeans_fit, kmeans_predict, wcss};
use routed_mlp::data::{mc_split, resample_count, segment_by_gaps, stratified_resample, temporal_split, Dataset, Record, Sex, SplitMode};
use routed_mlp::nn::{finite_diff_grad, max_relative_error, softmax_cross_entropy, MlpParams, Mode};
use routed_mlp::rng::rng_from_seed;
use routed_mlp::{Matrix, NUM_FEATURES};

fn dataset(days: &BTreeSet<u16>, participants: usize) -> Dataset {
    let base = NaiveDate::from_ymd_opt(2022, 1, 1).unwrap();
    let mut rows = Vec::new();
    for p in 0..participants {
        for &d in days {
            rows.push(Record {
                participant_id: format!("P{p}"),
                date: base + chrono::Duration::days(d as i64 + p as i64),
                features: [d as f64; NUM_FEATURES],
                label: (d % 3 == 0) as u8,
                sex: if p % 2 == 0 { Sex::F } else { Sex::M },
            });
        }
    }
    Dataset::new(rows).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn backprop_matches_finite_differences(seed in any::<u64>(), hidden in 1usize..6, rows in 1usize..5) {
        let mut rng = rng_from_seed(seed);
        let params = MlpParams::init(&[4, hidden, 2], &mut rng).unwrap();
        let x = Matrix::from_vec(rows, 4, (0..rows * 4).map(|i| ((seed.wrapping_add(i as u64) % 17) as f64 - 8.0) / 4.0).collect()).unwrap();
        let labels: Vec<u8> = (0..rows).map(|i| (i % 2) as u8).collect();
        let (logits, cache) = params.forward(&x, Mode::Infer, 0.0, &mut rng).unwrap();
        let (_, probs) = softmax_cross_entropy(&logits, &labels).unwrap();
        let g = params.backward(&cache, &probs, &labels).unwrap();
        let fd = finite_diff_grad(&params, &x, &labels, 1e-6).unwrap();
        prop_assert!(max_relative_error(&g, &fd, 1e-6) < 1e-5);
    }

    #[test]
    fn kmeans_labels_are_nearest_centroids(pts in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 2), 4..30), k in 1usize..4, seed in any::<u64>()) {
        let m = kmeans_fit(&pts, k, 3, seed).unwrap();
        let labels = kmeans_predict(&m, &pts).unwrap();
        prop_assert!((wcss(&pts, &m.centroids, &labels) - m.inertia).abs() < 1e-9 * (1.0 + m.inertia));
    }

    #[test]
    fn segments_are_gap_free_and_long_enough(days in prop::collection::btree_set(0u16..60, 0..40)) {
        let ds = dataset(&days, 1);
        let (segs, stats) = segment_by_gaps(&ds);
        let kept: usize = segs.iter().map(|s| s.records.len()).sum();
        prop_assert_eq!(kept + stats.dropped_records, ds.len());
        for s in &segs {
            prop_assert!(s.records.len() >= 3);
            for w in s.records.windows(2) {
                prop_assert_eq!((w[1].date - w[0].date).num_days(), 1);
            }
        }
    }

    #[test]
    fn temporal_split_partitions_by_date(days in prop::collection::btree_set(0u16..60, 1..30), cut in 0i64..70) {
        let ds = dataset(&days, 2);
        let date = NaiveDate::from_ymd_opt(2022, 1, 1).unwrap() + chrono::Duration::days(cut);
        let (tr, te) = temporal_split(&ds, date);
        prop_assert_eq!(tr.len() + te.len(), ds.len());
        prop_assert!(tr.records().iter().all(|r| r.date < date));
        prop_assert!(te.records().iter().all(|r| r.date >= date));
    }

    #[test]
    fn resample_keeps_floor_per_participant(days in prop::collection::btree_set(0u16..60, 1..30), frac in 0.05f64..=1.0, seed in any::<u64>()) {
        let ds = dataset(&days, 3);
        let s = stratified_resample(&ds, frac, seed).unwrap();
        for (p, rows) in s.rows_by_participant() {
            let total = ds.records().iter().filter(|r| r.participant_id == p).count();
            prop_assert_eq!(rows.len(), resample_count(frac, total));
        }
    }

    #[test]
    fn mc_split_is_a_partition(days in prop::collection::btree_set(0u16..60, 2..30), seed in any::<u64>()) {
        let ds = dataset(&days, 2);
        let (a, b) = mc_split(&ds, 0.2, seed, SplitMode::Uniform).unwrap();
        prop_assert_eq!(a.len() + b.len(), ds.len());
        prop_assert!(!b.is_empty());
    }
}
