//! The model families and their routing pipelines.
//!
//! A strategy is fitted in two steps: routing (feature profiles or
//! elbow-epoch losses, skipped for unrouted kinds) and training, where each
//! row flows through the path of its cluster. [`FittedStrategy`] bundles the
//! result and serializes to JSON with exact float round-tripping.

pub mod kind;
pub mod model;
pub mod routing;

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use kind::{KChoice, StrategyKind, StrategySpec, PRESET_NAMES};
pub use model::{
    build_strategy, build_strategy_with, groups_from_clusters, train_model, Architecture, EmbeddingTable, StrategyModel,
    StrategyTrace, EMBEDDING_DIM, EMBEDDING_INIT_SCALE,
};
pub use routing::{
    elbow_epoch, mean_losses_with, route_by_features, route_by_loss, Elbow, Granularity, LossRouting, Provenance, RoutingOptions,
    RoutingTable, Stage,
};

use crate::data::Dataset;
use crate::nn::{EpochTrace, TrainConfig, TrainData};
use crate::{Error, Matrix, Result};

/// Keys rows by the embedding table for the embedding kind, by their own roster otherwise.
fn train_data_for(model: &StrategyModel, rows: &Dataset) -> Result<TrainData> {
    match &model.arch {
        Architecture::Embedded { table, .. } => {
            let unseen: Vec<String> = rows.participant_ids().into_iter().filter(|p| table.index_of(p).is_none()).collect();
            if !unseen.is_empty() {
                return Err(Error::UnseenParticipants(unseen));
            }
            rows.to_train_data(&table.ids)
        }
        _ => rows.to_train_data(&rows.participant_ids()),
    }
}

fn clusters_for(model: &StrategyModel, routing: Option<&RoutingTable>, rows: &Dataset, stage: Stage) -> Result<Vec<usize>> {
    if !model.is_routed() {
        return Ok(vec![0; rows.len()]);
    }
    let routing = routing.ok_or_else(|| Error::Validation(format!("{} needs a routing table", model.kind)))?;
    if routing.k != model.k {
        return Err(Error::Contract(format!("routing has k={} but the model has {} paths", routing.k, model.k)));
    }
    routing.route(rows, stage)
}

/// Train `model` on `rows`, routing each row by `routing` (routed kinds).
pub fn train_strategy(
    model: &mut StrategyModel,
    routing: Option<&RoutingTable>,
    rows: &Dataset,
    config: &TrainConfig,
    snapshot_epochs: &BTreeSet<usize>,
) -> Result<StrategyTrace> {
    let data = train_data_for(model, rows)?;
    let clusters = clusters_for(model, routing, rows, Stage::Train)?;
    train_model(model, &data, &clusters, config, snapshot_epochs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub labels: Vec<u8>,
    pub probs: Matrix,
    pub clusters: Vec<usize>,
}

/// Predict every row of `rows`, in order.
pub fn predict_strategy(model: &StrategyModel, routing: Option<&RoutingTable>, rows: &Dataset) -> Result<Prediction> {
    let data = train_data_for(model, rows)?;
    let clusters = clusters_for(model, routing, rows, Stage::Test)?;
    let (labels, probs) = model.predict(&data, &clusters)?;
    Ok(Prediction { labels, probs, clusters })
}

/// Inference per-sample losses of `rows`, in order.
pub fn strategy_losses(model: &StrategyModel, routing: Option<&RoutingTable>, rows: &Dataset, stage: Stage) -> Result<Vec<f64>> {
    let data = train_data_for(model, rows)?;
    let clusters = clusters_for(model, routing, rows, stage)?;
    model.losses(&data, &clusters)
}

/// A trained strategy with everything needed to predict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedStrategy {
    pub spec: StrategySpec,
    pub routing: Option<RoutingTable>,
    pub model: StrategyModel,
    /// Epoch-mean training losses.
    pub epoch_losses: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub fitted: FittedStrategy,
    pub traces: Vec<EpochTrace>,
    /// Baseline traces of the loss-routing run.
    pub routing_traces: Option<Vec<EpochTrace>>,
}

/// Route (if needed), build and train `spec` on `train`. Participants of
/// `test` unseen in training are added to the routing table.
pub fn fit_strategy(spec: &StrategySpec, train: &Dataset, test: Option<&Dataset>) -> Result<FitOutcome> {
    spec.validate()?;
    if train.is_empty() {
        return Err(Error::Validation("training set is empty".into()));
    }
    let seed = spec.train.seed;
    let (routing, routing_traces) = match spec.kind {
        StrategyKind::FeatureClustered => (Some(route_by_features(train, test, spec.k, &spec.routing, seed)?), None),
        StrategyKind::LossFullySeparated | StrategyKind::LossFinalLayerSeparated => {
            let lr = route_by_loss(train, test, &spec.train, spec.k, &spec.routing)?;
            (Some(lr.table), Some(lr.traces))
        }
        StrategyKind::Baseline | StrategyKind::IdEmbedding => (None, None),
    };
    let k = routing.as_ref().map_or(1, |r| r.k);
    let roster = train.participant_ids();
    let mut model = build_strategy(spec.kind, k, seed, Some(&roster))?;
    let trace = train_strategy(&mut model, routing.as_ref(), train, &spec.train, &BTreeSet::new())?;
    let epoch_losses = trace.traces.iter().map(|t| t.mean_loss).collect();
    Ok(FitOutcome {
        fitted: FittedStrategy { spec: spec.clone(), routing, model, epoch_losses },
        traces: trace.traces,
        routing_traces,
    })
}

impl FittedStrategy {
    pub fn predict(&self, rows: &Dataset) -> Result<Prediction> {
        predict_strategy(&self.model, self.routing.as_ref(), rows)
    }

    pub fn losses(&self, rows: &Dataset) -> Result<Vec<f64>> {
        strategy_losses(&self.model, self.routing.as_ref(), rows, Stage::Test)
    }

    /// Split `rows` into those the model can score and the ids it must exclude
    /// (participants without an embedding; empty for other kinds).
    pub fn partition_supported(&self, rows: &Dataset) -> (Dataset, Vec<String>) {
        match &self.model.arch {
            Architecture::Embedded { table, .. } => {
                let unseen: Vec<String> = rows.participant_ids().into_iter().filter(|p| table.index_of(p).is_none()).collect();
                (rows.filter(|r| table.index_of(&r.participant_id).is_some()), unseen)
            }
            _ => (rows.clone(), Vec::new()),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s: FittedStrategy = crate::io::read_json(path)?;
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        let paths = match &self.model.arch {
            Architecture::Separate { nets } => {
                nets.iter().try_for_each(|n| n.params.validate())?;
                nets.len()
            }
            Architecture::SharedTrunk { trunk, heads, .. } => {
                trunk.validate()?;
                heads.iter().try_for_each(|h| h.params.validate())?;
                heads.len()
            }
            Architecture::Embedded { net, .. } => {
                net.params.validate()?;
                1
            }
        };
        if paths != self.model.k || self.routing.as_ref().is_some_and(|r| r.k != self.model.k) {
            return Err(Error::Validation("model file is inconsistent: path count, k and routing disagree".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthConfig};

    fn small() -> Dataset {
        synth_generate(&SynthConfig { participants: 9, days: 20, seed: 5, ..SynthConfig::default() }).unwrap().dataset
    }

    fn quick(name: &str) -> StrategySpec {
        let mut s = StrategySpec::preset(name).unwrap();
        s.train.epochs = 5;
        s.train.seed = 9;
        s
    }

    #[test]
    fn every_preset_fits_and_round_trips() {
        let d = small();
        let dir = tempfile::tempdir().unwrap();
        for name in PRESET_NAMES {
            let out = fit_strategy(&quick(name), &d, None).unwrap();
            let pred = out.fitted.predict(&d).unwrap();
            assert_eq!(pred.labels.len(), d.len());
            let path = dir.path().join(format!("{name}.json"));
            out.fitted.save(&path).unwrap();
            let back = FittedStrategy::load(&path).unwrap();
            assert_eq!(back, out.fitted);
            assert_eq!(back.predict(&d).unwrap(), pred);
        }
    }

    #[test]
    fn id_embedding_rejects_unseen() {
        let d = small();
        let ids = d.participant_ids();
        let train = d.filter(|r| r.participant_id != ids[0]);
        let out = fit_strategy(&quick("id-embed"), &train, None).unwrap();
        match out.fitted.predict(&d) {
            Err(Error::UnseenParticipants(u)) => assert_eq!(u, vec![ids[0].clone()]),
            other => panic!("{other:?}"),
        }
        let (ok, excluded) = out.fitted.partition_supported(&d);
        assert_eq!(excluded, vec![ids[0].clone()]);
        assert!(out.fitted.predict(&ok).is_ok());
    }

    #[test]
    fn routed_strategy_predicts_unseen_participant() {
        let d = small();
        let ids = d.participant_ids();
        let train = d.filter(|r| r.participant_id != ids[0]);
        let test = d.filter(|r| r.participant_id == ids[0]);
        for name in ["feature2", "loss-final"] {
            let out = fit_strategy(&quick(name), &train, None).unwrap();
            assert_eq!(out.fitted.predict(&test).unwrap().labels.len(), test.len());
        }
    }

    #[test]
    fn k1_routed_prediction_equals_baseline_on_same_params() {
        let d = small();
        let base = fit_strategy(&quick("baseline"), &d, None).unwrap().fitted;
        let Architecture::Separate { nets } = &base.model.arch else { panic!() };
        let mut routed = build_strategy(StrategyKind::LossFullySeparated, 1, 0, None).unwrap();
        routed.arch = Architecture::Separate { nets: nets.clone() };
        let table = RoutingTable::single(&d, Provenance::Loss);
        let a = predict_strategy(&routed, Some(&table), &d).unwrap();
        let b = base.predict(&d).unwrap();
        assert_eq!(a.probs, b.probs);
    }

    #[test]
    fn missing_routing_is_an_error() {
        let d = small();
        let mut m = build_strategy(StrategyKind::FeatureClustered, 2, 0, None).unwrap();
        assert!(train_strategy(&mut m, None, &d, &TrainConfig::default(), &BTreeSet::new()).is_err());
    }
}
