//! Mini-batch training loop shared by every architecture.
//!
//! The loop owns epoch scheduling, shuffling, loss tracing and snapshots; the
//! architecture implements [`Trainable`] to run one batch. Rows are split into
//! groups (one per routing cluster; a single group for unrouted models). Each
//! epoch shuffles every group with the run generator, chunks it into batches
//! and interleaves the groups round-robin, so a single-group run is exactly
//! the plain shuffled mini-batch loop.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamHyper, AdamState};
use super::forward::{softmax_cross_entropy, Mode};
use super::params::MlpParams;
use crate::rng::{rng_from_seed, Rng};
use crate::{Error, Matrix, Result};

/// When per-sample losses are recorded for an [`EpochTrace`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossRecording {
    /// As each batch is consumed, before its update (train mode, with dropout).
    #[default]
    PreUpdate,
    /// An extra inference-mode pass over all rows after the epoch.
    EpochEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub dropout_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub loss_recording: LossRecording,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            dropout_rate: 0.0,
            epochs: 30,
            batch_size: 32,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            loss_recording: LossRecording::PreUpdate,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Validation(format!("learning rate {} must be > 0", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Validation(format!("dropout rate {} outside [0,1)", self.dropout_rate)));
        }
        if self.epochs == 0 {
            return Err(Error::Validation("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Validation("batch size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(Error::Validation("adam betas must lie in [0,1) and epsilon be > 0".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper::from(self)
    }
}

/// Feature rows with labels and bookkeeping keys.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub inputs: Matrix,
    pub labels: Vec<u8>,
    /// Participant index per row (into whatever roster the caller keeps).
    pub participants: Vec<usize>,
    /// Source record index per row.
    pub records: Vec<usize>,
}

impl TrainData {
    /// Rows keyed to a single anonymous participant, records numbered in order.
    pub fn new(inputs: Matrix, labels: Vec<u8>) -> Result<Self> {
        let n = inputs.rows();
        Self::with_keys(inputs, labels, vec![0; n], (0..n).collect())
    }

    pub fn with_keys(inputs: Matrix, labels: Vec<u8>, participants: Vec<usize>, records: Vec<usize>) -> Result<Self> {
        let n = inputs.rows();
        if labels.len() != n || participants.len() != n || records.len() != n {
            return Err(Error::Validation(format!(
                "{n} input rows but {} labels, {} participant keys, {} record keys",
                labels.len(),
                participants.len(),
                records.len()
            )));
        }
        if let Some(y) = labels.iter().find(|&&y| y > 1) {
            return Err(Error::Validation(format!("label {y} outside {{0,1}}")));
        }
        Ok(Self { inputs, labels, participants, records })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn batch(&self, rows: &[usize]) -> (Matrix, Vec<u8>) {
        (self.inputs.select_rows(rows), rows.iter().map(|&r| self.labels[r]).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleLoss {
    pub participant: usize,
    pub record: usize,
    pub loss: f64,
}

/// Per-sample losses of one epoch, in the order they were recorded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochTrace {
    /// 1-based epoch number.
    pub epoch: usize,
    pub samples: Vec<SampleLoss>,
    pub mean_loss: f64,
}

impl EpochTrace {
    pub fn new(epoch: usize, samples: Vec<SampleLoss>) -> Self {
        let mean_loss = samples.iter().map(|s| s.loss).sum::<f64>() / samples.len() as f64;
        Self { epoch, samples, mean_loss }
    }

    /// Mean loss per participant index.
    pub fn participant_means(&self) -> BTreeMap<usize, f64> {
        let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for s in &self.samples {
            let e = acc.entry(s.participant).or_default();
            e.0 += s.loss;
            e.1 += 1;
        }
        acc.into_iter().map(|(p, (sum, n))| (p, sum / n as f64)).collect()
    }

    /// Loss per source record index.
    pub fn record_losses(&self) -> BTreeMap<usize, f64> {
        self.samples.iter().map(|s| (s.record, s.loss)).collect()
    }
}

/// Parameters and optimizer state captured at the end of an epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSnapshot {
    pub epoch: usize,
    pub seed: u64,
    pub params: MlpParams,
    pub adam: AdamState,
}

/// An architecture the shared loop can train.
pub trait Trainable {
    /// Run forward, backward and one optimizer step on `rows` (all from
    /// `group`), returning their per-sample losses computed before the update.
    fn train_batch(&mut self, data: &TrainData, group: usize, rows: &[usize], config: &TrainConfig, rng: &mut Rng) -> Result<Vec<f64>>;

    /// Inference-mode per-sample losses.
    fn eval_losses(&self, data: &TrainData, group: usize, rows: &[usize]) -> Result<Vec<f64>>;
}

/// Batches for one epoch as `(group, rows)`, interleaved round-robin by group.
pub fn epoch_batches(groups: &[Vec<usize>], batch_size: usize, rng: &mut Rng) -> Vec<(usize, Vec<usize>)> {
    let per_group: Vec<Vec<Vec<usize>>> = groups
        .iter()
        .map(|g| {
            let mut rows = g.clone();
            rows.shuffle(rng);
            rows.chunks(batch_size).map(<[usize]>::to_vec).collect()
        })
        .collect();
    let rounds = per_group.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = Vec::new();
    for r in 0..rounds {
        for (g, batches) in per_group.iter().enumerate() {
            if let Some(b) = batches.get(r) {
                out.push((g, b.clone()));
            }
        }
    }
    out
}

pub struct TrainOutcome<S> {
    pub traces: Vec<EpochTrace>,
    pub snapshots: Vec<S>,
}

/// Run `config.epochs` epochs over `groups` of row indices.
///
/// `snapshot` is called after each epoch listed in `snapshot_epochs` (1-based).
pub fn run_epochs<M: Trainable, S>(
    model: &mut M,
    data: &TrainData,
    groups: &[Vec<usize>],
    config: &TrainConfig,
    snapshot_epochs: &BTreeSet<usize>,
    mut snapshot: impl FnMut(&M, usize) -> S,
) -> Result<TrainOutcome<S>> {
    config.validate()?;
    if data.is_empty() || groups.iter().all(Vec::is_empty) {
        return Err(Error::Validation("training data is empty".into()));
    }
    if let Some(&bad) = snapshot_epochs.iter().find(|&&e| e == 0 || e > config.epochs) {
        return Err(Error::Validation(format!("snapshot epoch {bad} outside [1, {}]", config.epochs)));
    }
    let mut rng = rng_from_seed(config.seed);
    let mut traces = Vec::with_capacity(config.epochs);
    let mut snapshots = Vec::new();
    for epoch in 1..=config.epochs {
        let mut samples = Vec::with_capacity(data.len());
        for (group, rows) in epoch_batches(groups, config.batch_size, &mut rng) {
            let losses = model.train_batch(data, group, &rows, config, &mut rng)?;
            if config.loss_recording == LossRecording::PreUpdate {
                samples.extend(rows.iter().zip(losses).map(|(&r, loss)| SampleLoss {
                    participant: data.participants[r],
                    record: data.records[r],
                    loss,
                }));
            }
        }
        if config.loss_recording == LossRecording::EpochEnd {
            for (group, rows) in groups.iter().enumerate() {
                if rows.is_empty() {
                    continue;
                }
                let losses = model.eval_losses(data, group, rows)?;
                samples.extend(rows.iter().zip(losses).map(|(&r, loss)| SampleLoss {
                    participant: data.participants[r],
                    record: data.records[r],
                    loss,
                }));
            }
        }
        traces.push(EpochTrace::new(epoch, samples));
        if snapshot_epochs.contains(&epoch) {
            snapshots.push(snapshot(model, epoch));
        }
    }
    Ok(TrainOutcome { traces, snapshots })
}

/// A single network with its optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub params: MlpParams,
    pub adam: AdamState,
}

impl Network {
    pub fn new(params: MlpParams) -> Self {
        let adam = AdamState::new(&params);
        Self { params, adam }
    }

    pub fn snapshot(&self, epoch: usize, seed: u64) -> ParamSnapshot {
        ParamSnapshot { epoch, seed, params: self.params.clone(), adam: self.adam.clone() }
    }
}

impl Trainable for Network {
    fn train_batch(&mut self, data: &TrainData, _group: usize, rows: &[usize], config: &TrainConfig, rng: &mut Rng) -> Result<Vec<f64>> {
        let (x, y) = data.batch(rows);
        let (logits, cache) = self.params.forward(&x, Mode::Train, config.dropout_rate, rng)?;
        let (losses, probs) = softmax_cross_entropy(&logits, &y)?;
        let grads = self.params.backward(&cache, &probs, &y)?;
        adam_step(&mut self.params, &grads, &mut self.adam, config.adam())?;
        Ok(losses)
    }

    fn eval_losses(&self, data: &TrainData, _group: usize, rows: &[usize]) -> Result<Vec<f64>> {
        let (x, y) = data.batch(rows);
        Ok(softmax_cross_entropy(&self.params.logits(&x)?, &y)?.0)
    }
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub params: MlpParams,
    pub adam: AdamState,
    pub traces: Vec<EpochTrace>,
    pub snapshots: Vec<ParamSnapshot>,
}

/// Train a single network on all rows.
pub fn train(params: MlpParams, data: &TrainData, config: &TrainConfig, snapshot_epochs: &BTreeSet<usize>) -> Result<TrainResult> {
    params.validate()?;
    if data.inputs.cols() != params.input_dim() {
        return Err(Error::Shape {
            layer: 0,
            detail: format!("data has {} features, network expects {}", data.inputs.cols(), params.input_dim()),
        });
    }
    let mut net = Network::new(params);
    let groups = vec![(0..data.len()).collect::<Vec<_>>()];
    let seed = config.seed;
    let outcome = run_epochs(&mut net, data, &groups, config, snapshot_epochs, |n, e| n.snapshot(e, seed))?;
    Ok(TrainResult { params: net.params, adam: net.adam, traces: outcome.traces, snapshots: outcome.snapshots })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::forward::predict;

    fn separable(n: usize) -> TrainData {
        // Two Gaussian-free clouds: label = 1 iff x0 + x1 > 0, with a margin.
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let t = i as f64 / n as f64 * std::f64::consts::TAU;
            let (a, b) = (t.cos(), t.sin());
            let y = u8::from(a + b > 0.0);
            let shift = if y == 1 { 0.5 } else { -0.5 };
            rows.push([a + shift, b + shift]);
            labels.push(y);
        }
        TrainData::new(Matrix::from_rows(&rows).unwrap(), labels).unwrap()
    }

    fn cfg() -> TrainConfig {
        TrainConfig { learning_rate: 0.01, epochs: 50, batch_size: 8, seed: 3, ..TrainConfig::default() }
    }

    #[test]
    fn rejects_zero_epochs_and_empty_data() {
        let data = separable(10);
        let p = MlpParams::init(&[2, 4, 2], &mut rng_from_seed(0)).unwrap();
        let bad = TrainConfig { epochs: 0, ..cfg() };
        assert!(matches!(train(p.clone(), &data, &bad, &BTreeSet::new()), Err(Error::Validation(_))));
        let empty = TrainData::new(Matrix::zeros(0, 2), vec![]).unwrap();
        assert!(matches!(train(p.clone(), &empty, &cfg(), &BTreeSet::new()), Err(Error::Validation(_))));
        let snap = BTreeSet::from([51]);
        assert!(train(p, &data, &cfg(), &snap).is_err());
    }

    #[test]
    fn converges_on_separable_data() {
        let data = separable(200);
        let p = MlpParams::init(&[2, 8, 2], &mut rng_from_seed(1)).unwrap();
        let out = train(p, &data, &cfg(), &BTreeSet::new()).unwrap();
        let last = out.traces.last().unwrap();
        assert!(last.mean_loss < 0.05, "final loss {}", last.mean_loss);
        let (pred, _) = predict(&out.params, &data.inputs).unwrap();
        let acc = pred.iter().zip(&data.labels).filter(|(a, b)| a == b).count() as f64 / data.len() as f64;
        assert!(acc > 0.95, "accuracy {acc}");
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let data = separable(64);
        let p = MlpParams::init(&[2, 8, 4, 2], &mut rng_from_seed(2)).unwrap();
        let c = TrainConfig { dropout_rate: 0.2, epochs: 5, ..cfg() };
        let a = train(p.clone(), &data, &c, &BTreeSet::new()).unwrap();
        let b = train(p, &data, &c, &BTreeSet::new()).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.traces, b.traces);
    }

    #[test]
    fn traces_are_ordered_and_means_exact() {
        let data = separable(40);
        let p = MlpParams::init(&[2, 4, 2], &mut rng_from_seed(2)).unwrap();
        let c = TrainConfig { epochs: 4, ..cfg() };
        let out = train(p, &data, &c, &BTreeSet::from([2, 4])).unwrap();
        assert_eq!(out.traces.iter().map(|t| t.epoch).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
        for t in &out.traces {
            assert_eq!(t.samples.len(), 40);
            let mean = t.samples.iter().map(|s| s.loss).sum::<f64>() / t.samples.len() as f64;
            assert_eq!(mean, t.mean_loss);
            assert!(t.samples.iter().all(|s| s.loss >= 0.0));
        }
        assert_eq!(out.snapshots.iter().map(|s| s.epoch).collect::<Vec<_>>(), vec![2, 4]);
        assert_eq!(out.snapshots[1].params, out.params);
    }

    #[test]
    fn epoch_end_recording_matches_inference_losses() {
        let data = separable(30);
        let p = MlpParams::init(&[2, 4, 2], &mut rng_from_seed(4)).unwrap();
        let c = TrainConfig { epochs: 2, loss_recording: LossRecording::EpochEnd, ..cfg() };
        let out = train(p, &data, &c, &BTreeSet::new()).unwrap();
        let last = out.traces.last().unwrap();
        let direct = out.params.mean_loss(&data.inputs, &data.labels).unwrap();
        assert!((last.mean_loss - direct).abs() < 1e-12);
    }

    #[test]
    fn batches_interleave_groups_round_robin() {
        let groups = vec![(0..5).collect::<Vec<_>>(), (5..7).collect()];
        let batches = epoch_batches(&groups, 2, &mut rng_from_seed(0));
        let order: Vec<usize> = batches.iter().map(|(g, _)| *g).collect();
        assert_eq!(order, vec![0, 1, 0, 0]);
        let mut all: Vec<usize> = batches.into_iter().flat_map(|(_, r)| r).collect();
        all.sort();
        assert_eq!(all, (0..7).collect::<Vec<_>>());
    }
}
