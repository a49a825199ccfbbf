//! `hfd`: dataset ingestion, feature extraction, training, scoring and table
//! reproduction for handover failure detection.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use hfd_core::correlation::{evaluate_baseline_with, CorrelationTable};
use hfd_core::dataset::{
    align_to_frames, load_dataset, split_by_participant, AlignedTrial, GripperCalibrations, SplitSet, SplitSpec,
};
use hfd_core::experiment::{
    render_report, reproduce_table, run_experiment, score_artifact, segmentation_tally, train_seed, ExperimentConfig,
    ExperimentData, LossHeads, ModelId, ResultStore, TrainedArtifact,
};
use hfd_core::features::{
    extract_frame_features, list_cached, list_versions, load_features, write_features, Backbone, FeatureSequence,
    FrameGeometry,
};
use hfd_core::metrics::MetricsReport;
use hfd_core::modality::Modalities;
use hfd_core::synthetic::{write_suite, SuiteConfig, SPLIT_FILE};

#[derive(Parser)]
#[command(name = "hfd", version, about = "Handover failure detection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate every trial, then print per-cell counts.
    Ingest(IngestArgs),
    /// Write a synthetic dataset with cached features and a split file.
    Synth(SynthArgs),
    /// Compute backbone features for every trial and cache them.
    ExtractFeatures(ExtractArgs),
    /// Fit the robot-action correlation table on the training split.
    FitBaseline(FitBaselineArgs),
    /// Evaluate a fitted correlation table.
    EvalBaseline(EvalBaselineArgs),
    /// Train one model for one seed and save it.
    Train(TrainArgs),
    /// Apply a saved model and write per-trial predictions.
    Score(ScoreArgs),
    /// Run every seed of one experiment config and append the result row.
    Run(RunArgs),
    /// Run every configuration of a results table.
    Reproduce(ReproduceArgs),
    /// Render CSV and SVG summaries of stored results.
    Report(ReportArgs),
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Dataset root holding one directory per trial.
    #[arg(long, env = "HFD_DATA_ROOT")]
    data_root: PathBuf,
    /// Feature cache root; defaults to `<data-root>/cache`.
    #[arg(long, env = "HFD_CACHE_DIR")]
    cache_dir: Option<PathBuf>,
    /// Participant split file; defaults to `<data-root>/split.json`.
    #[arg(long)]
    split: Option<PathBuf>,
}

impl DataArgs {
    fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.data_root.join("cache"))
    }

    fn split_path(&self) -> PathBuf {
        self.split.clone().unwrap_or_else(|| self.data_root.join(SPLIT_FILE))
    }

    fn split_spec(&self) -> Result<SplitSpec> {
        let path = self.split_path();
        SplitSpec::load(&path).with_context(|| format!("reading split {}", path.display()))
    }
}

#[derive(Args, Clone)]
struct CacheArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Backbone version to read; required only when the cache holds several.
    #[arg(long)]
    backbone_version: Option<String>,
}

impl CacheArgs {
    fn version(&self) -> Result<String> {
        if let Some(v) = &self.backbone_version {
            return Ok(v.clone());
        }
        let cache = self.data.cache_dir();
        let versions = list_versions(&cache).with_context(|| format!("listing cache {}", cache.display()))?;
        match versions.as_slice() {
            [only] => Ok(only.clone()),
            [] => bail!("no cached features under {}; run `hfd extract-features` first", cache.display()),
            many => bail!("cache holds several backbone versions ({}); pass --backbone-version", many.join(", ")),
        }
    }

    fn load(&self) -> Result<ExperimentData> {
        let version = self.version()?;
        Ok(ExperimentData::load(&self.data.cache_dir(), &version, &self.data.split_path())?)
    }
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Also write the per-cell counts as CSV.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Output root; defaults to HFD_DATA_ROOT.
    #[arg(long, env = "HFD_DATA_ROOT")]
    out: PathBuf,
    /// Trials per (task, outcome) cell.
    #[arg(long, default_value_t = 4, conflicts_with_all = ["total", "dataset_shaped"])]
    per_cell: usize,
    /// Total trial count, spread over the eight cells.
    #[arg(long, conflicts_with = "dataset_shaped")]
    total: Option<usize>,
    /// Match the real dataset's per-cell counts and participant split.
    #[arg(long)]
    dataset_shaped: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ExtractArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Seed of the random-projection backbone.
    #[arg(long, default_value_t = 0)]
    backbone_seed: u64,
    /// Recompute trials that are already cached.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct FitBaselineArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
    /// Count only trials whose outcome is success.
    #[arg(long)]
    nominal_only: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SetChoice {
    Train,
    Val,
    Test,
    All,
}

impl SetChoice {
    fn keeps(self, set: Option<SplitSet>) -> bool {
        match self {
            SetChoice::All => true,
            SetChoice::Train => set == Some(SplitSet::Train),
            SetChoice::Val => set == Some(SplitSet::Val),
            SetChoice::Test => set == Some(SplitSet::Test),
        }
    }
}

#[derive(Args)]
struct EvalBaselineArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Fitted table from `hfd fit-baseline`.
    #[arg(long)]
    table: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    set: SetChoice,
    /// Drop idle and post-idle segments from segmental F1 matching.
    #[arg(long)]
    exclude_background: bool,
    /// Write the metrics as a one-row CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    cache: CacheArgs,
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Seed to train; defaults to the config's first seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint path (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    #[command(flatten)]
    cache: CacheArgs,
    /// Checkpoint written by `hfd train`.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    set: SetChoice,
    /// Directory for `<trial_id>.json` predictions and `metrics.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    cache: CacheArgs,
    #[arg(long)]
    config: PathBuf,
    /// Append-only result store.
    #[arg(long, default_value = "results")]
    results: PathBuf,
}

#[derive(Args)]
struct ReproduceArgs {
    #[command(flatten)]
    cache: CacheArgs,
    /// Table number: 3, 4, 5 or 6.
    #[arg(long)]
    table: u32,
    /// Config supplying seeds and hyperparameters for every row.
    #[arg(long)]
    base: Option<PathBuf>,
    /// Comma-separated seeds overriding the base config.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Append-only result store; table files are written here too.
    #[arg(long, default_value = "results")]
    results: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, default_value = "results")]
    results: PathBuf,
    /// Output directory; defaults to `<results>/report`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Synth(a) => synth(a),
        Command::ExtractFeatures(a) => extract_features(a),
        Command::FitBaseline(a) => fit_baseline(a),
        Command::EvalBaseline(a) => eval_baseline(a),
        Command::Train(a) => train(a),
        Command::Score(a) => score(a),
        Command::Run(a) => run(a),
        Command::Reproduce(a) => reproduce(a),
        Command::Report(a) => report(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn pct(v: f64) -> String {
    format!("{:.1}", 100.0 * v)
}

/// Human-readable lines plus CSV header and row.
fn metrics_table(report: &MetricsReport) -> (Vec<String>, Vec<String>) {
    let mut header = Vec::new();
    let mut row = Vec::new();
    if let Some(s) = report.outcome_accuracy {
        header.push("outcome_accuracy".to_string());
        row.push(pct(s.mean));
    }
    for (k, s) in &report.f1_at {
        header.push(format!("f1_{k}"));
        row.push(pct(s.mean));
    }
    if let Some(s) = report.frame_accuracy {
        header.push("frame_accuracy".to_string());
        row.push(pct(s.mean));
    }
    (header, row)
}

fn print_metrics(report: &MetricsReport) {
    let (header, row) = metrics_table(report);
    for (h, v) in header.iter().zip(&row) {
        println!("{h:>18}  {v}");
    }
}

fn write_metrics_csv(path: &Path, report: &MetricsReport) -> Result<()> {
    let (header, row) = metrics_table(report);
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(&header)?;
    w.write_record(&row)?;
    w.flush()?;
    Ok(())
}

fn load_aligned(data: &DataArgs) -> Result<Vec<AlignedTrial>> {
    let trials = load_dataset(&data.data_root).with_context(|| format!("loading {}", data.data_root.display()))?;
    let calib = GripperCalibrations::default();
    trials.iter().map(|t| align_to_frames(t, &calib).with_context(|| format!("aligning {}", t.trial_id()))).collect()
}

fn ingest(a: IngestArgs) -> Result<()> {
    let trials = load_dataset(&a.data.data_root).with_context(|| format!("loading {}", a.data.data_root.display()))?;
    let calib = GripperCalibrations::default();
    let mut counts: BTreeMap<(String, String, String), usize> = BTreeMap::new();
    let mut failures = Vec::new();
    for t in &trials {
        let checked = t.validate().and_then(|_| align_to_frames(t, &calib)).and_then(|al| al.validate().map(|_| al));
        match checked {
            Ok(al) => {
                let outcome = al.labels.as_ref().map(|l| l.outcome.to_string()).unwrap_or_else(|| "unlabelled".into());
                *counts.entry((t.meta.robot_platform.to_string(), t.meta.task.to_string(), outcome)).or_default() += 1;
            }
            Err(e) => failures.push(format!("{}: {e}", t.trial_id())),
        }
    }
    println!("{:<12} {:<5} {:<12} {:>6}", "platform", "task", "outcome", "trials");
    for ((p, t, o), n) in &counts {
        println!("{p:<12} {t:<5} {o:<12} {n:>6}");
    }
    println!("{} trials loaded, {} valid", trials.len(), trials.len() - failures.len());

    if let Ok(spec) = a.data.split_spec() {
        let mut sets: BTreeMap<String, usize> = BTreeMap::new();
        for t in &trials {
            let set = spec.0.get(&t.meta.participant_id).map(|s| format!("{s:?}").to_lowercase());
            *sets.entry(set.unwrap_or_else(|| "unassigned".into())).or_default() += 1;
        }
        let line: Vec<String> = sets.iter().map(|(s, n)| format!("{s}={n}")).collect();
        println!("split: {}", line.join(" "));
    }

    if let Some(path) = &a.summary {
        let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
        w.write_record(["platform", "task", "outcome", "trials"])?;
        for ((p, t, o), n) in &counts {
            w.write_record([p.as_str(), t, o, &n.to_string()])?;
        }
        w.flush()?;
    }
    if !failures.is_empty() {
        for f in &failures {
            eprintln!("invalid: {f}");
        }
        bail!("{} of {} trials failed validation", failures.len(), trials.len());
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let config = if a.dataset_shaped {
        SuiteConfig::dataset_shaped(a.seed)
    } else if let Some(total) = a.total {
        SuiteConfig::balanced_total(total, a.seed)
    } else {
        SuiteConfig::balanced(a.per_cell, a.seed)
    };
    let layout = write_suite(&config, &a.out)?;
    println!(
        "wrote {} trials to {} (split {}, features {})",
        layout.trials,
        layout.dataset_root.display(),
        layout.split_path.display(),
        layout.cache_root.display()
    );
    Ok(())
}

fn extract_features(a: ExtractArgs) -> Result<()> {
    let trials = load_aligned(&a.data)?;
    let cache = a.data.cache_dir();
    let geometry = FrameGeometry::default();
    let version = Backbone::random(a.backbone_seed, geometry).version();
    let done: Vec<String> = if a.force { Vec::new() } else { list_cached(&cache, &version).unwrap_or_default() };
    let todo: Vec<&AlignedTrial> = trials.iter().filter(|t| !done.contains(&t.meta.trial_id)).collect();
    info!("{} trials to extract, {} already cached for {version}", todo.len(), trials.len() - todo.len());
    if todo.is_empty() {
        return Ok(());
    }
    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(todo.len());
    let chunk = todo.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = todo
            .chunks(chunk)
            .map(|part| {
                let cache = &cache;
                scope.spawn(move || -> Result<()> {
                    let backbone = Backbone::random(a.backbone_seed, geometry);
                    for t in part {
                        let seq = extract_frame_features(t, &backbone)
                            .with_context(|| format!("extracting {}", t.meta.trial_id))?;
                        write_features(cache, &seq)?;
                        info!("cached {}", t.meta.trial_id);
                    }
                    Ok(())
                })
            })
            .collect();
        handles.into_iter().try_for_each(|h| h.join().expect("extraction thread panicked"))
    })?;
    println!("features for {} trials cached under {}", todo.len(), cache.display());
    Ok(())
}

fn fit_baseline(a: FitBaselineArgs) -> Result<()> {
    let spec = a.data.split_spec()?;
    let trials = load_aligned(&a.data)?;
    let (train, _, _) = split_by_participant(trials, &spec, |t| t.meta.participant_id.as_str())?;
    let table = CorrelationTable::fit(train.iter().map(|t| t.labels.as_ref()), a.nominal_only, "train")?;
    let empty = table.empty_cells();
    if !empty.is_empty() {
        warn!("{} (robot action, progress bin) cells have no counts and fall back to idle", empty.len());
    }
    table.save(&a.out)?;
    println!("fitted on {} trials ({} frames), saved to {}", train.len(), table.total(), a.out.display());
    Ok(())
}

fn eval_baseline(a: EvalBaselineArgs) -> Result<()> {
    let table = CorrelationTable::load(&a.table)?;
    let spec = a.data.split_spec()?;
    let trials = load_aligned(&a.data)?;
    let kept: Vec<&AlignedTrial> =
        trials.iter().filter(|t| a.set.keeps(spec.0.get(&t.meta.participant_id).copied())).collect();
    if kept.is_empty() {
        bail!("no trials in the selected set");
    }
    let tally = segmentation_tally(a.exclude_background);
    let report = evaluate_baseline_with(&table, kept.iter().map(|t| t.labels.as_ref()), tally)?;
    println!("{} trials", kept.len());
    print_metrics(&report);
    if let Some(out) = &a.out {
        write_metrics_csv(out, &report)?;
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let config = ExperimentConfig::load(&a.config)?;
    if config.model == ModelId::Correlation {
        bail!("the correlation baseline is fitted with `hfd fit-baseline`");
    }
    let seed = a.seed.unwrap_or(config.seeds[0]);
    let data = a.cache.load()?;
    let (split, stats) = data.prepare(&config)?;
    info!("training {} seed {seed} on {} trials", config.model, split.train.len());
    let (model, run) = train_seed(&config, &split, seed)?;
    TrainedArtifact::new(&config, seed, stats, &model).save(&a.out)?;
    println!("{} epochs, test metrics:", run.curve.train_loss.len());
    print_metrics(&run.report);
    println!("checkpoint saved to {}", a.out.display());
    Ok(())
}

fn score(a: ScoreArgs) -> Result<()> {
    let artifact = TrainedArtifact::load(&a.checkpoint)?;
    let version = a.cache.version()?;
    let cache = a.cache.data.cache_dir();
    let spec = a.cache.data.split_spec().ok();
    let mut seqs: Vec<FeatureSequence> = Vec::new();
    for id in list_cached(&cache, &version)? {
        let seq = load_features(&cache, &version, &id)?;
        let set = spec.as_ref().and_then(|s| s.0.get(&seq.meta.participant_id).copied());
        let platform_ok = artifact.config.test_platform.is_none_or(|p| p == seq.meta.robot_platform);
        let task_ok = artifact.config.task.is_none_or(|t| t == seq.meta.task);
        if a.set.keeps(set) && platform_ok && task_ok {
            seqs.push(seq);
        }
    }
    if seqs.is_empty() {
        bail!("no cached trials match the selected set and the model's filters");
    }
    let (report, preds) = score_artifact(&artifact, &seqs)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for p in &preds {
        let path = a.out.join(format!("{}.json", p.trial_id));
        fs::write(&path, serde_json::to_string_pretty(p)?).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("scored {} trials into {}", preds.len(), a.out.display());
    if let Some(report) = report {
        fs::write(a.out.join("metrics.json"), serde_json::to_string_pretty(&report)?)?;
        print_metrics(&report);
    }
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let config = ExperimentConfig::load(&a.config)?;
    let data = a.cache.load()?;
    let row = run_experiment(&config, &data)?;
    let store = ResultStore::new(&a.results)?;
    let path = store.append(&row)?;
    println!("{} seeds, fingerprint {}, stored at {}", row.runs.len(), row.fingerprint, path.display());
    print_metrics(&row.report);
    if !row.complete {
        bail!("seeds {:?} failed", row.failed_seeds);
    }
    Ok(())
}

fn reproduce(a: ReproduceArgs) -> Result<()> {
    let mut base = match &a.base {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::new(ModelId::Correlation, Modalities::ALL, LossHeads::CLS),
    };
    if let Some(seeds) = a.seeds {
        base.seeds = seeds;
    }
    base.validate()?;
    let data = a.cache.load()?;
    let store = ResultStore::new(&a.results)?;
    let output = reproduce_table(a.table, &data, &base, Some(&store))?;
    let json = a.results.join(format!("table_{}.json", a.table));
    fs::write(&json, serde_json::to_string_pretty(&output)?)?;
    let csv_path = a.results.join(format!("table_{}.csv", a.table));
    let csv_text = output.to_csv()?;
    fs::write(&csv_path, &csv_text)?;
    print!("{csv_text}");
    println!("wrote {} and {}", csv_path.display(), json.display());
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let out = a.out.unwrap_or_else(|| a.results.join("report"));
    let written = render_report(&a.results, &out)?;
    for p in &written {
        println!("{}", p.display());
    }
    Ok(())
}
