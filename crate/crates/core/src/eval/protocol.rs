//! Grid search, cross-validation and the resampled train/test protocol.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{grouped_metrics, Confusion, Group, GroupMetrics, Metric};
use crate::data::{kfold_splits, mc_split, stratified_resample, Dataset, SplitMode};
use crate::rng::derive_seed;
use crate::strategies::{fit_strategy, FittedStrategy, StrategySpec};
use crate::{Error, Result};

/// How per-run metrics become the reported summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Metrics per run, then mean and population std over runs.
    #[default]
    PerRun,
    /// Means from the summed confusion over runs; std still over runs.
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FoldScheme {
    /// Independent random splits.
    #[default]
    MonteCarlo,
    /// Disjoint partition into `folds` parts.
    KFold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    CrossValidation,
    Resample,
}

/// One evaluated fold or run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub index: usize,
    pub seed: u64,
    pub metrics: GroupMetrics,
    /// Mean inference loss on the evaluated rows.
    pub loss: f64,
    pub evaluated_rows: usize,
    /// Participants left out because the model cannot score them.
    pub excluded_participants: Vec<String>,
    pub routing_k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryCell {
    pub metric: Metric,
    pub group: Group,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub strategy: String,
    pub spec: StrategySpec,
    pub protocol: Protocol,
    pub root_seed: u64,
    pub aggregation: Aggregation,
    pub runs: Vec<RunMetrics>,
    /// Metric-major order: precision (female, male, overall), sensitivity, accuracy.
    pub summary: Vec<SummaryCell>,
}

impl RunReport {
    pub fn cell(&self, metric: Metric, group: Group) -> &SummaryCell {
        self.summary.iter().find(|c| c.metric == metric && c.group == group).expect("summary covers every cell")
    }

    pub fn flagged_runs(&self) -> usize {
        self.runs.iter().filter(|r| Group::ALL.iter().any(|&g| r.metrics.get(g).flagged())).count()
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn summarize(runs: &[RunMetrics], aggregation: Aggregation) -> Vec<SummaryCell> {
    let pooled = {
        let f = runs.iter().fold(Confusion::default(), |a, r| a + r.metrics.female_confusion);
        let m = runs.iter().fold(Confusion::default(), |a, r| a + r.metrics.male_confusion);
        GroupMetrics::from_confusions(f, m)
    };
    let mut out = Vec::with_capacity(9);
    for metric in Metric::ALL {
        for group in Group::ALL {
            let values: Vec<f64> = runs.iter().map(|r| r.metrics.get(group).get(metric)).collect();
            let (mut mean, std) = mean_std(&values);
            if aggregation == Aggregation::Pooled {
                mean = pooled.get(group).get(metric);
            }
            out.push(SummaryCell { metric, group, mean, std });
        }
    }
    out
}

/// Fit on `train` and score `eval` (unscorable participants are excluded).
fn fit_and_score(spec: &StrategySpec, train: &Dataset, eval: &Dataset, index: usize, seed: u64) -> Result<(RunMetrics, FittedStrategy)> {
    let fitted = fit_strategy(spec, train, Some(eval))?.fitted;
    let (scored, excluded) = fitted.partition_supported(eval);
    if scored.is_empty() {
        return Err(Error::Validation(format!("run {index}: no evaluation rows remain after excluding unseen participants")));
    }
    let pred = fitted.predict(&scored)?;
    let losses = fitted.losses(&scored)?;
    let metrics = grouped_metrics(&pred.labels, &scored.labels(), &scored.sexes())?;
    let loss = losses.iter().sum::<f64>() / losses.len() as f64;
    let routing_k = fitted.model.k;
    Ok((RunMetrics { index, seed, metrics, loss, evaluated_rows: scored.len(), excluded_participants: excluded, routing_k }, fitted))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvOptions {
    pub folds: usize,
    pub val_fraction: f64,
    pub scheme: FoldScheme,
    pub split_mode: SplitMode,
    pub aggregation: Aggregation,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self { folds: 10, val_fraction: 0.2, scheme: FoldScheme::MonteCarlo, split_mode: SplitMode::Uniform, aggregation: Aggregation::PerRun }
    }
}

/// Train/validation pairs for `options`, fold `f` drawn from `seed -> "fold/f"`.
pub fn cv_splits(train: &Dataset, seed: u64, options: &CvOptions) -> Result<Vec<(u64, Dataset, Dataset)>> {
    if options.folds < 2 {
        return Err(Error::Validation(format!("cross-validation needs >= 2 folds, got {}", options.folds)));
    }
    match options.scheme {
        FoldScheme::MonteCarlo => (0..options.folds)
            .map(|f| {
                let s = derive_seed(seed, &format!("fold/{f}"));
                let (tr, va) = mc_split(train, options.val_fraction, s, options.split_mode)?;
                Ok((s, tr, va))
            })
            .collect(),
        FoldScheme::KFold => Ok(kfold_splits(train, options.folds, derive_seed(seed, "kfold"))?
            .into_iter()
            .enumerate()
            .map(|(f, (tr, va))| (derive_seed(seed, &format!("fold/{f}")), tr, va))
            .collect()),
    }
}

/// Validation metrics over folds, each fold trained from its own derived seed.
pub fn cross_validate(spec: &StrategySpec, train: &Dataset, seed: u64, options: &CvOptions) -> Result<RunReport> {
    spec.validate()?;
    let splits = cv_splits(train, seed, options)?;
    let runs: Vec<RunMetrics> = splits
        .par_iter()
        .enumerate()
        .map(|(f, (s, tr, va))| {
            let fold_spec = spec.with_train(spec.train.with_seed(derive_seed(*s, "train")));
            fit_and_score(&fold_spec, tr, va, f, *s).map(|r| r.0)
        })
        .collect::<Result<_>>()?;
    Ok(RunReport {
        strategy: spec.name.clone(),
        spec: spec.clone(),
        protocol: Protocol::CrossValidation,
        root_seed: seed,
        aggregation: options.aggregation,
        summary: summarize(&runs, options.aggregation),
        runs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResampleOptions {
    pub runs: usize,
    pub fraction: f64,
    /// Draw a fresh resample and training seed per run; otherwise every run repeats run 0.
    pub vary_seed_per_run: bool,
    pub aggregation: Aggregation,
}

impl Default for ResampleOptions {
    fn default() -> Self {
        Self { runs: 5, fraction: 0.8, vary_seed_per_run: true, aggregation: Aggregation::PerRun }
    }
}

/// Train on a per-participant resample of `train` each run and test on all of `test`.
pub fn resample_evaluate(spec: &StrategySpec, train: &Dataset, test: &Dataset, seed: u64, options: &ResampleOptions) -> Result<RunReport> {
    Ok(resample_evaluate_models(spec, train, test, seed, options)?.0)
}

/// As [`resample_evaluate`], also returning each run's fitted model.
pub fn resample_evaluate_models(
    spec: &StrategySpec,
    train: &Dataset,
    test: &Dataset,
    seed: u64,
    options: &ResampleOptions,
) -> Result<(RunReport, Vec<FittedStrategy>)> {
    spec.validate()?;
    if options.runs == 0 {
        return Err(Error::Validation("runs must be >= 1".into()));
    }
    if test.is_empty() {
        return Err(Error::Validation("test set is empty".into()));
    }
    let results: Vec<(RunMetrics, FittedStrategy)> = (0..options.runs)
        .into_par_iter()
        .map(|r| {
            let s = derive_seed(seed, &format!("run/{}", if options.vary_seed_per_run { r } else { 0 }));
            let sample = stratified_resample(train, options.fraction, derive_seed(s, "resample"))?;
            let run_spec = spec.with_train(spec.train.with_seed(derive_seed(s, "train")));
            let (mut m, f) = fit_and_score(&run_spec, &sample, test, r, s)?;
            m.index = r;
            Ok((m, f))
        })
        .collect::<Result<_>>()?;
    let (runs, models): (Vec<RunMetrics>, Vec<FittedStrategy>) = results.into_iter().unzip();
    let report = RunReport {
        strategy: spec.name.clone(),
        spec: spec.clone(),
        protocol: Protocol::Resample,
        root_seed: seed,
        aggregation: options.aggregation,
        summary: summarize(&runs, options.aggregation),
        runs,
    };
    Ok((report, models))
}

/// Evaluate an already trained model on `test` as a single run.
pub fn evaluate_fitted(fitted: &FittedStrategy, test: &Dataset, seed: u64) -> Result<RunReport> {
    let (scored, excluded) = fitted.partition_supported(test);
    if scored.is_empty() {
        return Err(Error::Validation("no test rows remain after excluding unseen participants".into()));
    }
    let pred = fitted.predict(&scored)?;
    let losses = fitted.losses(&scored)?;
    let metrics = grouped_metrics(&pred.labels, &scored.labels(), &scored.sexes())?;
    let runs = vec![RunMetrics {
        index: 0,
        seed,
        metrics,
        loss: losses.iter().sum::<f64>() / losses.len() as f64,
        evaluated_rows: scored.len(),
        excluded_participants: excluded,
        routing_k: fitted.model.k,
    }];
    Ok(RunReport {
        strategy: fitted.spec.name.clone(),
        spec: fitted.spec.clone(),
        protocol: Protocol::Resample,
        root_seed: seed,
        aggregation: Aggregation::PerRun,
        summary: summarize(&runs, Aggregation::PerRun),
        runs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Grid {
    pub learning_rates: Vec<f64>,
    pub dropout_rates: Vec<f64>,
}

impl Default for Grid {
    fn default() -> Self {
        Self { learning_rates: vec![0.001, 0.005, 0.01], dropout_rates: vec![0.0, 0.2, 0.5] }
    }
}

impl Grid {
    pub fn configs(&self) -> Vec<(f64, f64)> {
        self.learning_rates.iter().flat_map(|&lr| self.dropout_rates.iter().map(move |&d| (lr, d))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub learning_rate: f64,
    pub dropout_rate: f64,
    /// Final-epoch mean validation loss per fold (non-finite losses recorded as infinity).
    pub fold_losses: Vec<f64>,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub strategy: String,
    pub root_seed: u64,
    pub folds: usize,
    pub entries: Vec<GridEntry>,
    pub chosen_learning_rate: f64,
    pub chosen_dropout_rate: f64,
}

/// Argmin of the mean loss; ties go to the lower learning rate, then the lower dropout.
pub fn choose_config(entries: &[GridEntry]) -> Option<&GridEntry> {
    entries.iter().min_by(|a, b| {
        a.mean_loss
            .total_cmp(&b.mean_loss)
            .then(a.learning_rate.total_cmp(&b.learning_rate))
            .then(a.dropout_rate.total_cmp(&b.dropout_rate))
    })
}

/// Evaluate every learning-rate × dropout pair on the same folds and choose
/// the lowest mean final-epoch validation loss.
pub fn grid_search(spec: &StrategySpec, train: &Dataset, grid: &Grid, seed: u64, options: &CvOptions) -> Result<GridResult> {
    let configs = grid.configs();
    if configs.is_empty() {
        return Err(Error::Validation("grid is empty".into()));
    }
    for &(lr, d) in &configs {
        spec.with_train(crate::nn::TrainConfig { learning_rate: lr, dropout_rate: d, ..spec.train.clone() }).validate()?;
    }
    let splits = cv_splits(train, seed, options)?;
    let jobs: Vec<(usize, usize)> = (0..configs.len()).flat_map(|c| (0..splits.len()).map(move |f| (c, f))).collect();
    let losses: Vec<f64> = jobs
        .par_iter()
        .map(|&(c, f)| {
            let (lr, dropout) = configs[c];
            let (s, tr, va) = &splits[f];
            let train_cfg = crate::nn::TrainConfig { learning_rate: lr, dropout_rate: dropout, seed: derive_seed(*s, "train"), ..spec.train.clone() };
            let run = (|| -> Result<f64> {
                let fitted = fit_strategy(&spec.with_train(train_cfg), tr, Some(va))?.fitted;
                let (scored, _) = fitted.partition_supported(va);
                if scored.is_empty() {
                    return Ok(f64::INFINITY);
                }
                let l = fitted.losses(&scored)?;
                Ok(l.iter().sum::<f64>() / l.len() as f64)
            })();
            match run {
                Ok(v) if v.is_finite() => Ok(v),
                Ok(_) | Err(Error::Numeric { .. }) => Ok(f64::INFINITY),
                Err(e) => Err(Error::GridConfig { learning_rate: lr, dropout_rate: dropout, source: Box::new(e) }),
            }
        })
        .collect::<Result<_>>()?;
    let entries: Vec<GridEntry> = configs
        .iter()
        .enumerate()
        .map(|(c, &(lr, d))| {
            let fold_losses = losses[c * splits.len()..(c + 1) * splits.len()].to_vec();
            let mean_loss = fold_losses.iter().sum::<f64>() / fold_losses.len() as f64;
            GridEntry { learning_rate: lr, dropout_rate: d, fold_losses, mean_loss: if mean_loss.is_nan() { f64::INFINITY } else { mean_loss } }
        })
        .collect();
    let best = choose_config(&entries).expect("non-empty");
    Ok(GridResult {
        strategy: spec.name.clone(),
        root_seed: seed,
        folds: splits.len(),
        chosen_learning_rate: best.learning_rate,
        chosen_dropout_rate: best.dropout_rate,
        entries,
    })
}
