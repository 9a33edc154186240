use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use chrono::NaiveDate;
use routed_mlp::analysis::{elbow_embedding, embedding_csv, embedding_svg, histogram_csv, histogram_svg, participant_loss_histogram};
use routed_mlp::data::{
    dataset_to_csv_bytes, label_pipeline, read_confirmed_days, read_dataset, synth_generate, temporal_split, write_confirmed_days,
    write_ground_truth, Dataset,
};
use routed_mlp::eval::{cross_validate, evaluate_fitted, grid_search, resample_evaluate, table_csv, table_markdown, GridResult, Metric, Group, RunReport};
use routed_mlp::rng::derive_seed;
use routed_mlp::strategies::{fit_strategy, route_by_features, route_by_loss, FittedStrategy, KChoice, StrategyKind, StrategySpec};

use crate::config::{Config, Overrides};
use crate::manifest::Run;
use crate::{Cli, Command, RouteBy, UsageError, OUT_DIR_ENV};

/// `println!` that tolerates a closed stdout (e.g. piped into `head`).
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let g = &cli.global;
    let overrides = Overrides {
        seed: g.seed,
        strategy: g.strategy.clone(),
        k: g.k,
        runs: g.runs,
        folds: g.folds,
        out_dir: g.out_dir.clone(),
    };
    let mut config = Config::load(g.config.as_deref())?.with_overrides(&overrides);
    if config.out_dir.is_none() {
        config.out_dir = std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from);
    }
    match cli.command {
        Command::Synth { participants, split_date } => {
            if let Some(p) = participants {
                config.synth.participants = p;
            }
            if let Some(s) = config.seed {
                config.synth.seed = s;
            }
            config.validate(false)?;
            synth(Run::new("synth", config), split_date)
        }
        Command::Ingest { input, confirmed, split_date } => {
            config.validate(false)?;
            ingest(Run::new("ingest", config), &input, confirmed.as_deref(), split_date)
        }
        Command::Tune { data } => {
            config.validate(false)?;
            tune(Run::new("tune", config), &data)
        }
        Command::Train { data, test, grid } => {
            config.validate(false)?;
            train(Run::new("train", config), &data, test.as_deref(), grid.as_deref())
        }
        Command::Evaluate { model, train, test, grid } => {
            config.validate(false)?;
            evaluate(Run::new("evaluate", config), model.as_deref(), train.as_deref(), test.as_deref(), grid.as_deref())
        }
        Command::Cluster { data, test, by } => {
            config.validate(true)?;
            cluster(Run::new("cluster", config), &data, test.as_deref(), by)
        }
        Command::Tsne { data, test, perplexity, iterations } => {
            if let Some(p) = perplexity {
                config.tsne.perplexity = p;
            }
            if let Some(i) = iterations {
                config.tsne.iterations = i;
            }
            config.validate(true)?;
            tsne(Run::new("tsne", config), &data, test.as_deref())
        }
        Command::Report { inputs } => {
            config.validate(false)?;
            report(Run::new("report", config), &inputs)
        }
    }
}

fn announce(paths: &[PathBuf]) {
    for p in paths {
        say!("wrote {}", p.display());
    }
}

/// A clean dataset CSV; rejected rows are an error here (`ingest` reports them).
fn load_dataset(run: &mut Run, path: &Path) -> anyhow::Result<Dataset> {
    let bytes = run.read_input(path)?;
    let ing = read_dataset(bytes.as_slice()).with_context(|| format!("parsing {}", path.display()))?;
    if let Some(r) = ing.rejected.first() {
        bail!("{}: {} invalid rows (first at line {}: {}); clean it with `ingest`", path.display(), ing.rejected.len(), r.line, r.reason);
    }
    Ok(ing.dataset)
}

/// Routing for an unrouted strategy chooses k from the data unless `--k` says otherwise.
fn routing_spec(run: &mut Run) -> anyhow::Result<StrategySpec> {
    let k = run.config().k;
    let spec = run.config().routing_spec()?;
    let mut spec = seeded(run, spec)?;
    if !spec.kind.is_routed() {
        spec.k = k.unwrap_or(KChoice::Auto);
    }
    Ok(spec)
}

/// The configured strategy with its training seed derived from the root seed.
fn seeded_spec(run: &mut Run) -> anyhow::Result<StrategySpec> {
    seeded(run, run.config().spec()?)
}

fn seeded(run: &mut Run, spec: StrategySpec) -> anyhow::Result<StrategySpec> {
    let root = run.config().root_seed();
    run.seed("root", root);
    let s = run.seed("train", derive_seed(root, "train"));
    Ok(spec.with_train(spec.train.with_seed(s)))
}

fn apply_grid(run: &mut Run, spec: StrategySpec, grid: Option<&Path>) -> anyhow::Result<StrategySpec> {
    let Some(path) = grid else { return Ok(spec) };
    let bytes = run.read_input(path)?;
    let g: GridResult = serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))?;
    if g.strategy != spec.name {
        log::warn!("grid {} was tuned for {:?}, applying it to {:?}", path.display(), g.strategy, spec.name);
    }
    let train = routed_mlp::nn::TrainConfig { learning_rate: g.chosen_learning_rate, dropout_rate: g.chosen_dropout_rate, ..spec.train.clone() };
    Ok(spec.with_train(train))
}

fn split_outputs(run: &mut Run, dataset: &Dataset, split_date: Option<NaiveDate>) -> anyhow::Result<()> {
    if let Some(date) = split_date {
        let (train, test) = temporal_split(dataset, date);
        if train.is_empty() || test.is_empty() {
            return Err(UsageError(format!("split date {date} leaves an empty train or test set")).into());
        }
        run.output("train.csv", dataset_to_csv_bytes(&train)?);
        run.output("test.csv", dataset_to_csv_bytes(&test)?);
    }
    Ok(())
}

fn synth(mut run: Run, split_date: Option<NaiveDate>) -> anyhow::Result<()> {
    let cfg = run.config().synth.clone();
    run.seed("synth", cfg.seed);
    let out = synth_generate(&cfg)?;
    run.lap("generate");
    run.output("dataset.csv", dataset_to_csv_bytes(&out.dataset)?);
    run.output("ground_truth.csv", write_ground_truth(&out.truth)?);
    run.output("confirmed_days.csv", write_confirmed_days(&out.confirmed)?);
    split_outputs(&mut run, &out.dataset, split_date)?;
    say!("{} records, {} participants", out.dataset.len(), out.truth.len());
    announce(&run.finish()?);
    Ok(())
}

fn ingest(mut run: Run, input: &Path, confirmed: Option<&Path>, split_date: Option<NaiveDate>) -> anyhow::Result<()> {
    let bytes = run.read_input(input)?;
    let ing = read_dataset(bytes.as_slice()).with_context(|| format!("parsing {}", input.display()))?;
    let confirmed = match confirmed {
        Some(p) => {
            let b = run.read_input(p)?;
            Some(read_confirmed_days(b.as_slice()).with_context(|| format!("parsing {}", p.display()))?)
        }
        None => None,
    };
    let (dataset, stats) = label_pipeline(&ing.dataset, confirmed.as_ref())?;
    run.lap("pipeline");
    if !ing.rejected.is_empty() {
        eprintln!("warning: {} rows rejected (listed in ingest_stats.json)", ing.rejected.len());
    }
    run.output("dataset.csv", dataset_to_csv_bytes(&dataset)?);
    run.output_json("ingest_stats.json", &serde_json::json!({ "rejected": ing.rejected, "pipeline": stats }))?;
    split_outputs(&mut run, &dataset, split_date)?;
    say!("{} records kept, {} rejected, {} positive", dataset.len(), ing.rejected.len(), stats.positive_records);
    announce(&run.finish()?);
    Ok(())
}

fn tune(mut run: Run, data: &Path) -> anyhow::Result<()> {
    let data = load_dataset(&mut run, data)?;
    let spec = seeded_spec(&mut run)?;
    let root = run.config().root_seed();
    let (grid, cv) = (run.config().grid.clone(), run.config().cv.clone());
    let result = grid_search(&spec, &data, &grid, root, &cv)?;
    run.lap("grid");
    say!("{}: lr={} dropout={}", result.strategy, result.chosen_learning_rate, result.chosen_dropout_rate);
    run.output_json("grid.json", &result)?;
    announce(&run.finish()?);
    Ok(())
}

fn train(mut run: Run, data: &Path, test: Option<&Path>, grid: Option<&Path>) -> anyhow::Result<()> {
    let data = load_dataset(&mut run, data)?;
    let test = test.map(|p| load_dataset(&mut run, p)).transpose()?;
    let spec = seeded_spec(&mut run)?;
    let spec = apply_grid(&mut run, spec, grid)?;
    let outcome = fit_strategy(&spec, &data, test.as_ref())?;
    run.lap("fit");
    let f = &outcome.fitted;
    say!("{}: k={} final loss {:.4}", f.spec.name, f.model.k, f.epoch_losses.last().copied().unwrap_or(f64::NAN));
    run.output_json("model.json", f)?;
    announce(&run.finish()?);
    Ok(())
}

fn print_summary(r: &RunReport) {
    let c = |m, g| {
        let cell = r.cell(m, g);
        routed_mlp::eval::format_cell(cell.mean, cell.std)
    };
    say!(
        "{}: precision {} sensitivity {} accuracy {} (overall)",
        r.strategy,
        c(Metric::Precision, Group::Overall),
        c(Metric::Sensitivity, Group::Overall),
        c(Metric::Accuracy, Group::Overall)
    );
    if r.flagged_runs() > 0 {
        say!("{} run(s) contain zero-division or empty-group cells reported as 0", r.flagged_runs());
    }
}

fn evaluate(mut run: Run, model: Option<&Path>, train: Option<&Path>, test: Option<&Path>, grid: Option<&Path>) -> anyhow::Result<()> {
    let root = run.config().root_seed();
    let report = match (model, train, test) {
        (Some(m), _, Some(t)) => {
            let bytes = run.read_input(m)?;
            let fitted: FittedStrategy = serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", m.display()))?;
            let test = load_dataset(&mut run, t)?;
            run.seed("root", root);
            evaluate_fitted(&fitted, &test, root)?
        }
        (Some(_), _, None) => return Err(UsageError("--model needs --test".into()).into()),
        (None, Some(tr), Some(t)) => {
            let train = load_dataset(&mut run, tr)?;
            let test = load_dataset(&mut run, t)?;
            let spec = seeded_spec(&mut run)?;
            let spec = apply_grid(&mut run, spec, grid)?;
            let opts = run.config().resample.clone();
            resample_evaluate(&spec, &train, &test, root, &opts)?
        }
        (None, Some(tr), None) => {
            let train = load_dataset(&mut run, tr)?;
            let spec = seeded_spec(&mut run)?;
            let spec = apply_grid(&mut run, spec, grid)?;
            let cv = run.config().cv.clone();
            cross_validate(&spec, &train, root, &cv)?
        }
        (None, None, _) => return Err(UsageError("evaluate needs --model and --test, or --train [--test]".into()).into()),
    };
    run.lap("evaluate");
    print_summary(&report);
    run.output_json("report.json", &report)?;
    run.output("report.csv", table_csv(std::slice::from_ref(&report)).into_bytes());
    announce(&run.finish()?);
    Ok(())
}

fn cluster(mut run: Run, data: &Path, test: Option<&Path>, by: Option<RouteBy>) -> anyhow::Result<()> {
    let data = load_dataset(&mut run, data)?;
    let test = test.map(|p| load_dataset(&mut run, p)).transpose()?;
    let spec = routing_spec(&mut run)?;
    let by = by.unwrap_or(if spec.kind == StrategyKind::FeatureClustered { RouteBy::Features } else { RouteBy::Loss });
    let table = match by {
        RouteBy::Features => route_by_features(&data, test.as_ref(), spec.k, &spec.routing, spec.train.seed)?,
        RouteBy::Loss => {
            let table = route_by_loss(&data, test.as_ref(), &spec.train, spec.k, &spec.routing)?.table;
            let bins = run.config().analysis.histogram_bins;
            let h = participant_loss_histogram(&table.participant_losses, &table.assignments, bins)?;
            run.output("histogram.csv", histogram_csv(&h).into_bytes());
            run.output("histogram.svg", histogram_svg(&h).into_bytes());
            table
        }
    };
    run.lap("route");
    say!("k={} cluster sizes {:?}", table.k, table.cluster_sizes());
    run.output_json("routing.json", &table)?;
    announce(&run.finish()?);
    Ok(())
}

fn tsne(mut run: Run, data: &Path, test: Option<&Path>) -> anyhow::Result<()> {
    let data = load_dataset(&mut run, data)?;
    let test = test.map(|p| load_dataset(&mut run, p)).transpose()?;
    let spec = routing_spec(&mut run)?;
    let mut ts = run.config().tsne.clone();
    ts.seed = run.seed("tsne", derive_seed(run.config().root_seed(), "tsne"));
    let n = data.len() + test.as_ref().map_or(0, Dataset::len);
    if !(ts.perplexity > 0.0 && ts.perplexity < (n as f64 - 1.0) / 3.0) {
        return Err(UsageError(format!("perplexity {} is infeasible for {n} rows", ts.perplexity)).into());
    }
    let routing = route_by_loss(&data, test.as_ref(), &spec.train, spec.k, &spec.routing)?;
    run.lap("route");
    let elbow = routing.table.elbow.as_ref().map_or(1, |e| e.epoch);
    let coloring = run.config().analysis.coloring;
    let (points, result) = elbow_embedding(&data, test.as_ref(), &routing.table, &routing.traces[elbow - 1], &ts, coloring)?;
    run.lap("embed");
    say!("{} points, elbow epoch {elbow}, final KL {:.4}", points.len(), result.kl_history.last().map_or(f64::NAN, |h| h.1));
    run.output("embedding.csv", embedding_csv(&points).into_bytes());
    run.output("embedding.svg", embedding_svg(&points).into_bytes());
    announce(&run.finish()?);
    Ok(())
}

fn report(mut run: Run, inputs: &[PathBuf]) -> anyhow::Result<()> {
    let mut reports = Vec::new();
    for p in inputs {
        let bytes = run.read_input(p)?;
        let r: RunReport = serde_json::from_slice(&bytes).with_context(|| format!("parsing {} as a run report", p.display()))?;
        reports.push(r);
    }
    run.output("table.csv", table_csv(&reports).into_bytes());
    run.output("table.md", table_markdown(&reports).into_bytes());
    announce(&run.finish()?);
    Ok(())
}
