//! Routing tables from feature profiles or elbow-epoch losses.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::kind::KChoice;
use crate::clustering::{count_distinct, kmeans_fit, knee, select_by_silhouette, wcss_curve, KMeansModel, KSelection, Standardizer};
use crate::data::{participant_profiles, Dataset};
use crate::nn::{softmax_cross_entropy, train, EpochTrace, MlpParams, ParamSnapshot, TrainConfig};
use crate::rng::{derive_seed, rng_from_seed};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Features,
    Loss,
}

/// Whether routing decisions are made per participant or per row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    #[default]
    Participant,
    Row,
}

/// Which split a batch of rows is routed for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoutingOptions {
    pub restarts: usize,
    /// Feature routing only; loss routing is always per participant.
    pub granularity: Granularity,
    /// Re-predict clusters of participants seen in training when routing test rows.
    pub repredict_common: bool,
    /// Use this 1-based epoch instead of the detected elbow.
    pub elbow_epoch: Option<usize>,
    pub feature_k_max: usize,
    pub loss_k_min: usize,
    pub loss_k_max: usize,
}

impl Default for RoutingOptions {
    fn default() -> Self {
        Self {
            restarts: 10,
            granularity: Granularity::Participant,
            repredict_common: false,
            elbow_epoch: None,
            feature_k_max: 8,
            loss_k_min: 2,
            loss_k_max: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Elbow {
    /// 1-based epoch.
    pub epoch: usize,
    pub no_knee: bool,
    pub overridden: bool,
}

/// Participant-to-cluster map plus the frozen artifacts that route new participants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingTable {
    pub provenance: Provenance,
    pub granularity: Granularity,
    pub k: usize,
    pub assignments: BTreeMap<String, usize>,
    /// Participants whose cluster came from training data.
    pub train_participants: BTreeSet<String>,
    /// Fitted on standardized profiles (features, carrying its standardizer)
    /// or on 1-D mean losses (loss, ids ascending with loss).
    pub cluster_model: KMeansModel,
    pub selection: Option<KSelection>,
    /// Loss routing: baseline parameters at the elbow epoch.
    pub snapshot: Option<ParamSnapshot>,
    pub elbow: Option<Elbow>,
    /// Loss routing: per-participant mean loss used for the assignment.
    pub participant_losses: BTreeMap<String, f64>,
    pub repredict_common: bool,
}

impl RoutingTable {
    /// A single cluster holding every participant of `train`.
    pub fn single(train: &Dataset, provenance: Provenance) -> Self {
        let ids = train.participant_set();
        Self {
            provenance,
            granularity: Granularity::Participant,
            k: 1,
            assignments: ids.iter().map(|p| (p.clone(), 0)).collect(),
            train_participants: ids,
            cluster_model: KMeansModel {
                k: 1,
                centroids: vec![vec![0.0]],
                inertia: 0.0,
                seed: 0,
                restarts: 1,
                standardizer: None,
            },
            selection: None,
            snapshot: None,
            elbow: None,
            participant_losses: BTreeMap::new(),
            repredict_common: false,
        }
    }

    fn predict_participants(&self, dataset: &Dataset, ids: &[String]) -> Result<BTreeMap<String, usize>> {
        if ids.is_empty() {
            return Ok(BTreeMap::new());
        }
        let sub = dataset.filter(|r| ids.binary_search(&r.participant_id).is_ok());
        let points: Vec<Vec<f64>> = match self.provenance {
            Provenance::Features => {
                let s = self
                    .cluster_model
                    .standardizer
                    .as_ref()
                    .ok_or_else(|| Error::Contract("feature routing model has no standardizer".into()))?;
                participant_profiles(&sub, s)?.into_values().collect()
            }
            Provenance::Loss => {
                let snap = self.snapshot.as_ref().ok_or_else(|| Error::Contract("loss routing has no snapshot".into()))?;
                mean_losses_with(&snap.params, &sub)?.into_values().map(|v| vec![v]).collect()
            }
        };
        let clusters = self.cluster_model.predict(&points)?;
        Ok(sub.participant_ids().into_iter().zip(clusters).collect())
    }

    /// Cluster of every row of `dataset`. Participants not seen in training
    /// (and, with `repredict_common`, every participant at the test stage)
    /// are assigned through the frozen cluster model.
    pub fn route(&self, dataset: &Dataset, stage: Stage) -> Result<Vec<usize>> {
        if self.granularity == Granularity::Row {
            let rows: Vec<Vec<f64>> = dataset.records().iter().map(|r| r.features.to_vec()).collect();
            return if rows.is_empty() { Ok(Vec::new()) } else { self.cluster_model.predict_raw(&rows) };
        }
        let repredict = |p: &String| {
            !self.assignments.contains_key(p) || (stage == Stage::Test && self.repredict_common && self.train_participants.contains(p))
        };
        let pending: Vec<String> = dataset.participant_ids().into_iter().filter(|p| repredict(p)).collect();
        let predicted = self.predict_participants(dataset, &pending)?;
        dataset
            .records()
            .iter()
            .map(|r| {
                predicted
                    .get(&r.participant_id)
                    .or_else(|| self.assignments.get(&r.participant_id))
                    .copied()
                    .ok_or_else(|| Error::Unrouted(r.participant_id.clone()))
            })
            .collect()
    }

    /// Add predicted entries for participants of `dataset` not yet in the table.
    /// Existing entries are never changed.
    pub fn extended_with(&self, dataset: &Dataset) -> Result<RoutingTable> {
        let mut out = self.clone();
        if self.granularity == Granularity::Row {
            return Ok(out);
        }
        let unseen: Vec<String> = dataset.participant_ids().into_iter().filter(|p| !self.assignments.contains_key(p)).collect();
        out.assignments.extend(self.predict_participants(dataset, &unseen)?);
        Ok(out)
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        self.assignments.values().for_each(|&c| sizes[c] += 1);
        sizes
    }
}

/// Inference-mode mean loss per participant under `params`.
pub fn mean_losses_with(params: &MlpParams, dataset: &Dataset) -> Result<BTreeMap<String, f64>> {
    let x = dataset.feature_matrix();
    let (losses, _) = softmax_cross_entropy(&params.logits(&x)?, &dataset.labels())?;
    Ok(dataset
        .rows_by_participant()
        .into_iter()
        .map(|(p, rows)| {
            let mean = rows.iter().map(|&r| losses[r]).sum::<f64>() / rows.len() as f64;
            (p, mean)
        })
        .collect())
}

/// Feature-profile routing: standardizer on train rows, K-means on
/// per-participant mean profiles (or on rows with [`Granularity::Row`]),
/// with `Auto` choosing the best silhouette over `2..=feature_k_max`.
pub fn route_by_features(train: &Dataset, test: Option<&Dataset>, k: KChoice, options: &RoutingOptions, seed: u64) -> Result<RoutingTable> {
    if train.is_empty() {
        return Err(Error::Validation("feature routing needs training rows".into()));
    }
    let rows: Vec<Vec<f64>> = train.records().iter().map(|r| r.features.to_vec()).collect();
    let standardizer = Standardizer::fit(&rows)?;
    let (ids, points): (Vec<String>, Vec<Vec<f64>>) = match options.granularity {
        Granularity::Participant => participant_profiles(train, &standardizer)?.into_iter().unzip(),
        Granularity::Row => (Vec::new(), standardizer.apply(&rows)?),
    };
    let units = if options.granularity == Granularity::Participant { ids.len() } else { points.len() };
    let seed = derive_seed(seed, "routing/features");
    let (k, selection) = match k {
        KChoice::Fixed(k) => {
            if k > units {
                return Err(Error::Validation(format!("k={k} exceeds the {units} training participants")));
            }
            (k, None)
        }
        KChoice::Auto => {
            let k_max = options.feature_k_max.min(count_distinct(&points)).min(units.saturating_sub(1));
            if k_max < 2 {
                return Err(Error::Validation("too few distinct profiles to choose k automatically".into()));
            }
            let sel = select_by_silhouette(&points, 2, k_max, options.restarts, seed)?;
            (sel.chosen, Some(sel))
        }
    };
    let mut model = kmeans_fit(&points, k, options.restarts, derive_seed(seed, &format!("k/{k}")))?;
    model.standardizer = Some(standardizer);
    let assignments = if options.granularity == Granularity::Participant {
        ids.iter().cloned().zip(model.predict(&points)?).collect()
    } else {
        BTreeMap::new()
    };
    let table = RoutingTable {
        provenance: super::routing::Provenance::Features,
        granularity: options.granularity,
        k,
        train_participants: train.participant_set(),
        assignments,
        cluster_model: model,
        selection,
        snapshot: None,
        elbow: None,
        participant_losses: BTreeMap::new(),
        repredict_common: options.repredict_common,
    };
    match test {
        Some(t) => table.extended_with(t),
        None => Ok(table),
    }
}

/// Elbow of an epoch-mean loss curve as a 1-based epoch. Without a bend the
/// default is epoch `⌈E/10⌉`, flagged `no_knee`.
pub fn elbow_epoch(epoch_means: &[f64], manual: Option<usize>) -> Result<Elbow> {
    if epoch_means.len() < 3 {
        return Err(Error::Validation(format!("elbow detection needs >= 3 epochs, got {}", epoch_means.len())));
    }
    if let Some(e) = manual {
        if e == 0 || e > epoch_means.len() {
            return Err(Error::Validation(format!("elbow epoch {e} outside [1, {}]", epoch_means.len())));
        }
        return Ok(Elbow { epoch: e, no_knee: false, overridden: true });
    }
    let kn = knee(epoch_means)?;
    if kn.no_knee {
        let epoch = epoch_means.len().div_ceil(10);
        log::warn!("training loss curve has no elbow; using epoch {epoch}");
        return Ok(Elbow { epoch, no_knee: true, overridden: false });
    }
    Ok(Elbow { epoch: kn.index + 1, no_knee: false, overridden: false })
}

/// Result of [`route_by_loss`]: the table plus the baseline run it came from.
#[derive(Debug, Clone)]
pub struct LossRouting {
    pub table: RoutingTable,
    pub traces: Vec<EpochTrace>,
    /// Final baseline parameters of the routing run.
    pub final_params: MlpParams,
}

/// Loss-dependent routing: train the baseline, take per-participant mean
/// losses at the elbow epoch, cluster them in 1-D (ids ascending with loss)
/// and assign unseen participants from losses under the elbow snapshot.
pub fn route_by_loss(train_set: &Dataset, test: Option<&Dataset>, config: &TrainConfig, k: KChoice, options: &RoutingOptions) -> Result<LossRouting> {
    if train_set.is_empty() {
        return Err(Error::Validation("loss routing needs training rows".into()));
    }
    let roster = train_set.participant_ids();
    let data = train_set.to_train_data(&roster)?;
    let mut init = rng_from_seed(derive_seed(config.seed, "init"));
    let all_epochs: BTreeSet<usize> = (1..=config.epochs).collect();
    let run = train(MlpParams::baseline(&mut init), &data, config, &all_epochs)?;
    let means: Vec<f64> = run.traces.iter().map(|t| t.mean_loss).collect();
    let elbow = elbow_epoch(&means, options.elbow_epoch)?;
    let trace = &run.traces[elbow.epoch - 1];
    let snapshot = run.snapshots[elbow.epoch - 1].clone();
    let per_participant: BTreeMap<String, f64> =
        trace.participant_means().into_iter().map(|(p, v)| (roster[p].clone(), v)).collect();
    if per_participant.len() != roster.len() {
        return Err(Error::Contract("a training participant has no traced loss".into()));
    }
    let points: Vec<Vec<f64>> = per_participant.values().map(|&v| vec![v]).collect();
    let distinct = count_distinct(&points);
    let seed = derive_seed(config.seed, "routing/loss");
    let (k, selection) = match k {
        KChoice::Fixed(k) => {
            if k > distinct {
                return Err(Error::Validation(format!("k={k} exceeds the {distinct} distinct participant losses")));
            }
            (k, None)
        }
        KChoice::Auto => {
            let k_max = options.loss_k_max.min(distinct);
            if k_max < options.loss_k_min.max(1) {
                return Err(Error::Validation(format!("only {distinct} distinct participant losses; cannot pick k automatically")));
            }
            let sel = wcss_curve(&points, 1, k_max, options.restarts, seed)?;
            (sel.chosen.clamp(options.loss_k_min, k_max), Some(sel))
        }
    };
    let fitted = kmeans_fit(&points, k, options.restarts, derive_seed(seed, &format!("k/{k}")))?;
    let (model, old_to_new) = fitted.sorted_by_first_coordinate();
    let raw = fitted.predict(&points)?;
    let assignments = per_participant.keys().cloned().zip(raw.into_iter().map(|c| old_to_new[c])).collect();
    let table = RoutingTable {
        provenance: Provenance::Loss,
        granularity: Granularity::Participant,
        k,
        assignments,
        train_participants: train_set.participant_set(),
        cluster_model: model,
        selection,
        snapshot: Some(snapshot),
        elbow: Some(elbow),
        participant_losses: per_participant,
        repredict_common: options.repredict_common,
    };
    let table = match test {
        Some(t) => table.extended_with(t)?,
        None => table,
    };
    Ok(LossRouting { table, traces: run.traces, final_params: run.params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthConfig};

    #[test]
    fn elbow_of_hand_curve_is_epoch_two() {
        let e = elbow_epoch(&[1.0, 0.4, 0.3, 0.29, 0.285, 0.28], None).unwrap();
        assert_eq!((e.epoch, e.no_knee), (2, false));
    }

    #[test]
    fn linear_curve_defaults_to_tenth() {
        let curve: Vec<f64> = (0..30).map(|i| 3.0 - 0.1 * i as f64).collect();
        let e = elbow_epoch(&curve, None).unwrap();
        assert_eq!((e.epoch, e.no_knee), (3, true));
        assert_eq!(elbow_epoch(&curve, Some(5)).unwrap().epoch, 5);
        assert!(elbow_epoch(&[1.0, 0.5], None).is_err());
    }

    #[test]
    fn mean_of_two_losses() {
        let trace = EpochTrace::new(
            1,
            vec![
                crate::nn::SampleLoss { participant: 0, record: 0, loss: 0.2 },
                crate::nn::SampleLoss { participant: 0, record: 1, loss: 0.4 },
            ],
        );
        assert!((trace.participant_means()[&0] - 0.3).abs() < 1e-15);
    }

    fn two_cluster_data() -> Dataset {
        let mut offsets = vec![vec![0.0; 20]; 2];
        offsets[0][3] = 4.0;
        offsets[1][3] = -4.0;
        let cfg = SynthConfig {
            participants: 12,
            clusters: 2,
            cluster_weights: vec![],
            cluster_offsets: offsets,
            participant_offset_scale: 0.1,
            days: 15,
            seed: 3,
            ..SynthConfig::default()
        };
        synth_generate(&cfg).unwrap().dataset
    }

    #[test]
    fn feature_routing_finds_two_clusters_and_routes_unseen() {
        let d = two_cluster_data();
        let ids = d.participant_ids();
        let (tr_ids, te_ids) = ids.split_at(9);
        let train = d.filter(|r| tr_ids.contains(&r.participant_id));
        let test = d.filter(|r| te_ids.contains(&r.participant_id));
        let t = route_by_features(&train, Some(&test), KChoice::Auto, &RoutingOptions::default(), 1).unwrap();
        assert_eq!(t.k, 2);
        assert_eq!(t.assignments.len(), 12);
        assert_eq!(t.route(&test, Stage::Test).unwrap().len(), test.len());
        let again = route_by_features(&train, Some(&test), KChoice::Auto, &RoutingOptions::default(), 1).unwrap();
        assert_eq!(t, again);
    }

    #[test]
    fn forced_k_on_one_cluster_keeps_clusters_nonempty() {
        let cfg = SynthConfig { participants: 6, clusters: 1, cluster_weights: vec![], days: 10, ..SynthConfig::default() };
        let d = synth_generate(&cfg).unwrap().dataset;
        for k in [2, 4] {
            let t = route_by_features(&d, None, KChoice::Fixed(k), &RoutingOptions::default(), 0).unwrap();
            assert!(t.cluster_sizes().iter().all(|&s| s > 0));
        }
        assert!(route_by_features(&d, None, KChoice::Fixed(7), &RoutingOptions::default(), 0).is_err());
    }

    #[test]
    fn row_granularity_routes_each_row() {
        let d = two_cluster_data();
        let opts = RoutingOptions { granularity: Granularity::Row, ..RoutingOptions::default() };
        let t = route_by_features(&d, None, KChoice::Fixed(2), &opts, 0).unwrap();
        assert_eq!(t.route(&d, Stage::Train).unwrap().len(), d.len());
    }

    #[test]
    fn unrouted_participant_is_named() {
        let d = two_cluster_data();
        let mut t = route_by_features(&d, None, KChoice::Fixed(2), &RoutingOptions::default(), 0).unwrap();
        t.cluster_model.standardizer = None;
        let extra = d.filter(|r| r.participant_id == "P000");
        t.assignments.remove("P000");
        assert!(t.route(&extra, Stage::Test).is_err());
    }

    #[test]
    fn loss_routing_is_deterministic_and_frozen() {
        let d = two_cluster_data();
        let ids = d.participant_ids();
        let train = d.filter(|r| ids[..10].contains(&r.participant_id));
        let test = d.filter(|r| ids[10..].contains(&r.participant_id));
        let cfg = TrainConfig { epochs: 6, seed: 2, ..TrainConfig::default() };
        let a = route_by_loss(&train, None, &cfg, KChoice::Auto, &RoutingOptions::default()).unwrap();
        let b = route_by_loss(&train, None, &cfg, KChoice::Auto, &RoutingOptions::default()).unwrap();
        assert_eq!(a.table, b.table);
        assert!((2..=6).contains(&a.table.k));
        let before = a.table.clone();
        let routed = a.table.route(&test, Stage::Test).unwrap();
        assert_eq!(routed.len(), test.len());
        assert_eq!(a.table, before);
        // Cluster ids ascend with loss.
        let c = &a.table.cluster_model.centroids;
        assert!(c.windows(2).all(|w| w[0][0] <= w[1][0]));
        for (p, &cl) in &a.table.assignments {
            let l = a.table.participant_losses[p];
            let nearest = (0..c.len()).min_by(|&i, &j| (c[i][0] - l).abs().total_cmp(&(c[j][0] - l).abs())).unwrap();
            assert_eq!(nearest, cl);
        }
    }
}
