//! Strategy architectures and their training/prediction paths.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::kind::StrategyKind;
use crate::nn::{
    adam::adam_update, adam_step, backward_path, forward_path, softmax_cross_entropy, softmax_rows, AdamState, Dense, Mode,
    MlpParams, Network, TrainConfig, TrainData, Trainable, BASELINE_SHAPE,
};
use crate::nn::params::fill_uniform;
use crate::rng::{derive_seed, rng_from_seed, Rng};
use crate::{Error, Matrix, Result, NUM_FEATURES};

pub const EMBEDDING_DIM: usize = 8;
/// Embedding vectors start uniform in `±EMBEDDING_INIT_SCALE`.
pub const EMBEDDING_INIT_SCALE: f64 = 0.05;
/// Layers of the baseline shape that form the shared trunk (20→30→10).
pub const TRUNK_LAYERS: usize = 2;

/// Trainable per-participant vectors with their own dense Adam moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    /// Sorted participant ids; row `i` of `vectors` belongs to `ids[i]`.
    pub ids: Vec<String>,
    pub vectors: Matrix,
    pub m: Matrix,
    pub v: Matrix,
    pub t: u64,
    /// Frozen tables receive no updates.
    pub frozen: bool,
}

impl EmbeddingTable {
    pub fn new(ids: Vec<String>, vectors: Matrix, frozen: bool) -> Result<Self> {
        if vectors.rows() != ids.len() || vectors.cols() != EMBEDDING_DIM {
            return Err(Error::Validation(format!(
                "embedding table for {} ids must be {}x{EMBEDDING_DIM}, got {}x{}",
                ids.len(),
                ids.len(),
                vectors.rows(),
                vectors.cols()
            )));
        }
        if ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Validation("embedding ids must be sorted and unique".into()));
        }
        let (r, c) = vectors.shape();
        Ok(Self { ids, vectors, m: Matrix::zeros(r, c), v: Matrix::zeros(r, c), t: 0, frozen })
    }

    pub fn uniform(ids: Vec<String>, rng: &mut Rng) -> Self {
        let mut vectors = Matrix::zeros(ids.len(), EMBEDDING_DIM);
        fill_uniform(vectors.as_mut_slice(), EMBEDDING_INIT_SCALE, rng);
        Self::new(ids, vectors, false).expect("shape is consistent")
    }

    /// All-zero, frozen table: the embedding contributes nothing.
    pub fn zeros(ids: Vec<String>) -> Self {
        let n = ids.len();
        Self::new(ids, Matrix::zeros(n, EMBEDDING_DIM), true).expect("shape is consistent")
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.binary_search_by(|p| p.as_str().cmp(id)).ok()
    }

    pub fn lookup(&self, id: &str) -> Result<&[f64]> {
        self.index_of(id).map(|i| self.vectors.row(i)).ok_or_else(|| Error::UnseenParticipants(vec![id.to_string()]))
    }

    /// `[features | embedding]` for rows keyed by table index.
    fn augment(&self, features: &Matrix, keys: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(features.rows(), features.cols() + EMBEDDING_DIM);
        for (r, &k) in keys.iter().enumerate() {
            let row = out.row_mut(r);
            row[..features.cols()].copy_from_slice(features.row(r));
            row[features.cols()..].copy_from_slice(self.vectors.row(k));
        }
        out
    }
}

/// Parameter layout of a strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Architecture {
    /// Independent baseline-shaped networks, one per cluster.
    Separate { nets: Vec<Network> },
    /// A shared trunk with one output head per cluster.
    SharedTrunk { trunk: MlpParams, trunk_adam: AdamState, heads: Vec<Network> },
    /// A baseline-shaped network over `[features | id embedding]`.
    Embedded { net: Network, table: EmbeddingTable },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyModel {
    pub kind: StrategyKind,
    pub k: usize,
    pub arch: Architecture,
}

/// Build an untrained strategy. Every network draws from the stream
/// `seed -> "init"` in order (cluster 0 first), so cluster 0 of any k starts
/// from exactly the baseline initialization. `roster` (sorted) is required
/// for the embedding kind.
pub fn build_strategy(kind: StrategyKind, k: usize, seed: u64, roster: Option<&[String]>) -> Result<StrategyModel> {
    build_strategy_with(kind, k, seed, roster, false)
}

/// As [`build_strategy`]; `frozen_zero_embedding` replaces the embedding
/// table by a frozen all-zero one.
pub fn build_strategy_with(
    kind: StrategyKind,
    k: usize,
    seed: u64,
    roster: Option<&[String]>,
    frozen_zero_embedding: bool,
) -> Result<StrategyModel> {
    if k == 0 {
        return Err(Error::Validation("strategy needs k >= 1".into()));
    }
    if matches!(kind, StrategyKind::Baseline | StrategyKind::IdEmbedding) && k != 1 {
        return Err(Error::Validation(format!("{kind} is unrouted and takes k = 1, got {k}")));
    }
    let mut rng = rng_from_seed(derive_seed(seed, "init"));
    let arch = match kind {
        StrategyKind::Baseline | StrategyKind::LossFullySeparated => {
            Architecture::Separate { nets: (0..k).map(|_| Network::new(MlpParams::baseline(&mut rng))).collect() }
        }
        StrategyKind::FeatureClustered | StrategyKind::LossFinalLayerSeparated => {
            let mut base = MlpParams::baseline(&mut rng);
            let head0 = base.layers.split_off(TRUNK_LAYERS);
            let mut heads = vec![Network::new(MlpParams { layers: head0 })];
            let head_in = BASELINE_SHAPE[TRUNK_LAYERS];
            let head_out = BASELINE_SHAPE[TRUNK_LAYERS + 1];
            for _ in 1..k {
                heads.push(Network::new(MlpParams { layers: vec![Dense::glorot(head_in, head_out, &mut rng)] }));
            }
            let trunk_adam = AdamState::new(&base);
            Architecture::SharedTrunk { trunk: base, trunk_adam, heads }
        }
        StrategyKind::IdEmbedding => {
            let roster = roster.ok_or_else(|| Error::Validation("id embedding needs the training roster".into()))?;
            let mut ids = roster.to_vec();
            ids.sort();
            ids.dedup();
            let mut net = MlpParams::baseline(&mut rng);
            let mut emb_rng = rng_from_seed(derive_seed(seed, "embedding"));
            // Extra first-layer columns for the embedding inputs, same Glorot limit as the feature columns.
            let limit = crate::nn::params::glorot_limit(NUM_FEATURES, BASELINE_SHAPE[1]);
            let first = &net.layers[0];
            let mut w = Matrix::zeros(first.outputs(), NUM_FEATURES + EMBEDDING_DIM);
            let mut extra = vec![0.0; first.outputs() * EMBEDDING_DIM];
            fill_uniform(&mut extra, limit, &mut emb_rng);
            for r in 0..first.outputs() {
                w.row_mut(r)[..NUM_FEATURES].copy_from_slice(first.weight.row(r));
                w.row_mut(r)[NUM_FEATURES..].copy_from_slice(&extra[r * EMBEDDING_DIM..(r + 1) * EMBEDDING_DIM]);
            }
            net.layers[0].weight = w;
            let table = if frozen_zero_embedding { EmbeddingTable::zeros(ids) } else { EmbeddingTable::uniform(ids, &mut emb_rng) };
            Architecture::Embedded { net: Network::new(net), table }
        }
    };
    Ok(StrategyModel { kind, k, arch })
}

impl StrategyModel {
    pub fn param_count(&self) -> usize {
        match &self.arch {
            Architecture::Separate { nets } => nets.iter().map(|n| n.params.param_count()).sum(),
            Architecture::SharedTrunk { trunk, heads, .. } => {
                trunk.param_count() + heads.iter().map(|h| h.params.param_count()).sum::<usize>()
            }
            Architecture::Embedded { net, table } => net.params.param_count() + table.vectors.as_slice().len(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match &self.arch {
            Architecture::Separate { nets } => nets[0].params.input_dim(),
            Architecture::SharedTrunk { trunk, .. } => trunk.input_dim(),
            Architecture::Embedded { net, .. } => net.params.input_dim(),
        }
    }

    pub fn is_routed(&self) -> bool {
        self.kind.is_routed()
    }

    /// Inference logits for the rows of `data` in cluster `group`.
    fn group_logits(&self, data: &TrainData, group: usize, rows: &[usize]) -> Result<Matrix> {
        let (x, _) = data.batch(rows);
        let mut unused = rng_from_seed(0);
        match &self.arch {
            Architecture::Separate { nets } => nets[group].params.logits(&x),
            Architecture::SharedTrunk { trunk, heads, .. } => {
                let path: Vec<&Dense> = trunk.layers.iter().chain(&heads[group].params.layers).collect();
                Ok(forward_path(&path, &x, Mode::Infer, 0.0, &mut unused)?.0)
            }
            Architecture::Embedded { net, table } => {
                let keys: Vec<usize> = rows.iter().map(|&r| data.participants[r]).collect();
                net.params.logits(&table.augment(&x, &keys))
            }
        }
    }

    /// Logits for every row of `data`, dispatching row `i` to cluster `clusters[i]`.
    pub fn logits(&self, data: &TrainData, clusters: &[usize]) -> Result<Matrix> {
        if clusters.len() != data.len() {
            return Err(Error::Contract(format!("{} cluster ids for {} rows", clusters.len(), data.len())));
        }
        if let Some(&c) = clusters.iter().find(|&&c| c >= self.k) {
            return Err(Error::Contract(format!("cluster {c} outside model k={}", self.k)));
        }
        let mut out = Matrix::zeros(data.len(), 2);
        for (g, rows) in groups_from_clusters(clusters, self.k).iter().enumerate() {
            if rows.is_empty() {
                continue;
            }
            let z = self.group_logits(data, g, rows)?;
            for (i, &r) in rows.iter().enumerate() {
                out.row_mut(r).copy_from_slice(z.row(i));
            }
        }
        Ok(out)
    }

    /// Inference per-sample losses in row order.
    pub fn losses(&self, data: &TrainData, clusters: &[usize]) -> Result<Vec<f64>> {
        Ok(softmax_cross_entropy(&self.logits(data, clusters)?, &data.labels)?.0)
    }

    /// Predicted labels and class probabilities in row order.
    pub fn predict(&self, data: &TrainData, clusters: &[usize]) -> Result<(Vec<u8>, Matrix)> {
        let logits = self.logits(data, clusters)?;
        Ok((crate::nn::argmax_rows(&logits), softmax_rows(&logits)))
    }
}

/// Row indices per cluster, each in ascending order.
pub fn groups_from_clusters(clusters: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); k];
    for (r, &c) in clusters.iter().enumerate() {
        groups[c].push(r);
    }
    groups
}

impl Trainable for StrategyModel {
    fn train_batch(&mut self, data: &TrainData, group: usize, rows: &[usize], config: &TrainConfig, rng: &mut Rng) -> Result<Vec<f64>> {
        match &mut self.arch {
            Architecture::Separate { nets } => nets[group].train_batch(data, 0, rows, config, rng),
            Architecture::SharedTrunk { trunk, trunk_adam, heads } => {
                let (x, y) = data.batch(rows);
                let head = &mut heads[group];
                let path: Vec<&Dense> = trunk.layers.iter().chain(&head.params.layers).collect();
                let (logits, cache) = forward_path(&path, &x, Mode::Train, config.dropout_rate, rng)?;
                let (losses, probs) = softmax_cross_entropy(&logits, &y)?;
                let (mut grads, _) = backward_path(&path, &cache, &probs, &y, false)?;
                let head_grads = MlpParams { layers: grads.split_off(TRUNK_LAYERS) };
                let trunk_grads = MlpParams { layers: grads };
                if let Some(p) = crate::nn::adam::find_non_finite(&head_grads) {
                    return Err(Error::Numeric { path: format!("head{group}.{p}") });
                }
                adam_step(trunk, &trunk_grads, trunk_adam, config.adam())?;
                adam_step(&mut head.params, &head_grads, &mut head.adam, config.adam())?;
                Ok(losses)
            }
            Architecture::Embedded { net, table } => {
                let (x, y) = data.batch(rows);
                let keys: Vec<usize> = rows.iter().map(|&r| data.participants[r]).collect();
                let input = table.augment(&x, &keys);
                let layers = net.params.layer_refs();
                let (logits, cache) = forward_path(&layers, &input, Mode::Train, config.dropout_rate, rng)?;
                let (losses, probs) = softmax_cross_entropy(&logits, &y)?;
                let (grads, input_grad) = backward_path(&layers, &cache, &probs, &y, !table.frozen)?;
                adam_step(&mut net.params, &MlpParams { layers: grads }, &mut net.adam, config.adam())?;
                if let Some(ig) = input_grad {
                    let mut g = Matrix::zeros(table.ids.len(), EMBEDDING_DIM);
                    for (r, &k) in keys.iter().enumerate() {
                        for (acc, v) in g.row_mut(k).iter_mut().zip(&ig.row(r)[NUM_FEATURES..]) {
                            *acc += v;
                        }
                    }
                    if g.as_slice().iter().any(|v| !v.is_finite()) {
                        return Err(Error::Numeric { path: "embedding".into() });
                    }
                    table.t += 1;
                    adam_update(
                        table.vectors.as_mut_slice(),
                        g.as_slice(),
                        table.m.as_mut_slice(),
                        table.v.as_mut_slice(),
                        table.t,
                        config.adam(),
                    );
                }
                Ok(losses)
            }
        }
    }

    fn eval_losses(&self, data: &TrainData, group: usize, rows: &[usize]) -> Result<Vec<f64>> {
        let (_, y) = data.batch(rows);
        Ok(softmax_cross_entropy(&self.group_logits(data, group, rows)?, &y)?.0)
    }
}

/// Losses traced while training a strategy.
#[derive(Debug, Clone)]
pub struct StrategyTrace {
    pub traces: Vec<crate::nn::EpochTrace>,
    pub snapshots: Vec<(usize, StrategyModel)>,
}

/// Train on `data` with row `i` routed to `clusters[i]`.
pub fn train_model(
    model: &mut StrategyModel,
    data: &TrainData,
    clusters: &[usize],
    config: &TrainConfig,
    snapshot_epochs: &BTreeSet<usize>,
) -> Result<StrategyTrace> {
    if clusters.len() != data.len() {
        return Err(Error::Contract(format!("{} cluster ids for {} rows", clusters.len(), data.len())));
    }
    if let Some(&c) = clusters.iter().find(|&&c| c >= model.k) {
        return Err(Error::Contract(format!("cluster {c} outside model k={}", model.k)));
    }
    if data.inputs.cols() != NUM_FEATURES {
        return Err(Error::Shape { layer: 0, detail: format!("expected {NUM_FEATURES} features, got {}", data.inputs.cols()) });
    }
    if let Architecture::Embedded { table, .. } = &model.arch {
        if let Some(&p) = data.participants.iter().find(|&&p| p >= table.ids.len()) {
            return Err(Error::Contract(format!("participant key {p} outside the embedding table")));
        }
    }
    let groups = groups_from_clusters(clusters, model.k);
    let outcome = crate::nn::run_epochs(model, data, &groups, config, snapshot_epochs, |m, e| (e, m.clone()))?;
    Ok(StrategyTrace { traces: outcome.traces, snapshots: outcome.snapshots })
}
