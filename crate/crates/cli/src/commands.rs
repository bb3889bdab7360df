//! Command implementations behind the `leadprice` binary.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context};
use chrono::{DateTime, Utc};
use clap::{Args, ValueEnum};
use leadprice::choice::{fit_mle, BucketScheme, FitConfig};
use leadprice::dataset::TrainingSet;
use leadprice::engine::{QuoteEngine, QuoteRequest};
use leadprice::features::FeatureKind;
use leadprice::mst::{fit_tree, TreeHyperparams};
use leadprice::predictors::{categorical_levels, CancelFeatures, CostTable, OptionEncoding};
use leadprice::pricer::{GridConfig, Guardrails, ObjectiveConfig};
use leadprice::quotelog::{ingest_path, write_log, IngestConfig};
use leadprice::second_level::{WindowCatalog, WindowFitConfig, WindowGrid};
use leadprice::simulator::{
    ab_compare, evaluate_models, generate_quotes, scenarios, ChoicePredictor, GroundTruth,
    LegacyPricer, NaiveBaseline, RandomExploration,
};
use leadprice::train::{train, SecondLevelTrainConfig, TrainConfig};

#[derive(Args, Debug, Clone)]
pub struct GuardrailArgs {
    /// Price floor for every option, in currency units.
    #[arg(long, default_value_t = 0.0)]
    pub floor: f64,
    /// Price ceiling for every option, in currency units.
    #[arg(long, default_value_t = 100.0)]
    pub ceiling: f64,
    /// CSV with columns `option,floor,ceiling`; overrides --floor/--ceiling.
    #[arg(long)]
    pub guardrails: Option<PathBuf>,
}

impl GuardrailArgs {
    pub fn build(&self, num_options: usize) -> anyhow::Result<Guardrails<f64>> {
        let Some(path) = &self.guardrails else {
            return Ok(Guardrails::uniform(num_options, self.floor, self.ceiling)?);
        };
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)?;
        let mut rows: Vec<(usize, f64, f64)> = Vec::new();
        for rec in reader.deserialize() {
            rows.push(rec.with_context(|| format!("reading {}", path.display()))?);
        }
        rows.sort_by_key(|r| r.0);
        if rows.iter().enumerate().any(|(k, r)| r.0 != k + 1) || rows.len() != num_options {
            bail!(
                "{} must list options 1..={num_options} exactly once",
                path.display()
            );
        }
        Ok(Guardrails::new(
            rows.iter().map(|r| r.1).collect(),
            rows.iter().map(|r| r.2).collect(),
        )?)
    }
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    /// Quote log (newline-delimited JSON).
    #[arg(long)]
    pub log: PathBuf,
    /// Cost table CSV; defaults to the mean logged cost per option.
    #[arg(long)]
    pub costs: Option<PathBuf>,
    /// Artifact to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub window_weeks: u32,
    /// End of the training window (ISO-8601 UTC); defaults to the latest quote.
    #[arg(long)]
    pub window_end: Option<DateTime<Utc>>,
    #[arg(long, default_value_t = 0.5)]
    pub subsample: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 200)]
    pub min_leaf: usize,
    #[arg(long, default_value_t = 2.0)]
    pub min_gain: f64,
    /// Objective mix: 0 profit, 0.5 revenue, 1 cost-weighted conversion.
    #[arg(long, default_value_t = 0.0)]
    pub alpha: f64,
    /// Ignore cancellations in the pricing objective.
    #[arg(long)]
    pub no_cancellation: bool,
    #[arg(long, default_value_t = 41)]
    pub m1_points: usize,
    #[arg(long, default_value_t = 41)]
    pub m2_points: usize,
    #[arg(long, default_value_t = 4)]
    pub refine: usize,
    /// Fit a time-window model with windows of this many hours (2, 3, 4 or 6).
    #[arg(long)]
    pub window_hours: Option<u32>,
    /// Abort ingestion when more than this fraction of rows is malformed.
    #[arg(long, default_value_t = 0.01)]
    pub max_reject: f64,
    #[command(flatten)]
    pub guardrails: GuardrailArgs,
}

fn load_log(path: &Path, max_reject: f64) -> anyhow::Result<TrainingSet<f64>> {
    let ingested = ingest_path(
        path,
        &IngestConfig {
            max_reject_fraction: max_reject,
        },
    )
    .with_context(|| format!("ingesting {}", path.display()))?;
    for r in &ingested.rejected {
        log::warn!("{}:{}: {}", path.display(), r.line, r.reason);
    }
    Ok(ingested.data)
}

fn mean_cost_table(data: &TrainingSet<f64>, num_options: usize) -> anyhow::Result<CostTable> {
    let mut sums = vec![0.0; num_options];
    for row in &data.rows {
        for (s, c) in sums.iter_mut().zip(&row.costs) {
            *s += c;
        }
    }
    let n = data.len().max(1) as f64;
    Ok(CostTable::new(
        Vec::new(),
        sums.iter().map(|s| s / n).collect(),
    )?)
}

/// Cancellation design: every schema feature plus the option index.
fn cancel_features(data: &TrainingSet<f64>) -> CancelFeatures {
    let mut numeric = Vec::new();
    let mut categorical_names = Vec::new();
    for (name, kind) in &data.schema.features {
        match kind {
            FeatureKind::Numeric => numeric.push(name.clone()),
            FeatureKind::Categorical => categorical_names.push(name.clone()),
        }
    }
    CancelFeatures {
        numeric,
        categorical: categorical_levels(data.rows.iter().map(|r| &r.features), &categorical_names),
        option: OptionEncoding::Linear,
    }
}

pub fn run_train(args: &TrainArgs) -> anyhow::Result<String> {
    let data = load_log(&args.log, args.max_reject)?;
    let num_options = data
        .rows
        .first()
        .map(|r| r.choice.num_options())
        .context("empty log")?;
    let costs = match &args.costs {
        Some(p) => {
            CostTable::read_csv(File::open(p).with_context(|| format!("opening {}", p.display()))?)?
        }
        None => mean_cost_table(&data, num_options)?,
    };
    let mut config = TrainConfig::new(args.guardrails.build(num_options)?);
    config.window_weeks = args.window_weeks;
    config.window_end = args.window_end;
    config.subsample_fraction = args.subsample;
    config.seed = args.seed;
    config.tree = TreeHyperparams {
        max_depth: args.max_depth,
        min_leaf_samples: args.min_leaf,
        min_split_gain: args.min_gain,
        ..TreeHyperparams::default()
    };
    config.buckets = BucketScheme::for_horizon(num_options);
    config.cancel_features = cancel_features(&data);
    config.objective = ObjectiveConfig {
        alpha: args.alpha,
        include_cancellation: !args.no_cancellation,
        ..ObjectiveConfig::default()
    };
    config.grid = GridConfig {
        min_price_points: args.m1_points,
        markup_points: args.m2_points,
        refine_factor: args.refine,
        ..GridConfig::default()
    };
    if let Some(h) = args.window_hours {
        config.second_level = Some(SecondLevelTrainConfig {
            catalog: WindowCatalog::uniform(h)?,
            fit: WindowFitConfig::default(),
            grid: WindowGrid::default(),
        });
    }
    let artifact = train(&data, costs, &config)?;
    let version = artifact.save(&args.out)?;
    log::info!(
        "wrote {} ({} segments, {} rows) version {version}",
        args.out.display(),
        artifact.tree.num_segments(),
        artifact.training_rows
    );
    Ok(version)
}

#[derive(Args, Debug, Clone)]
pub struct QuoteArgs {
    #[arg(long)]
    pub artifact: PathBuf,
    /// Request JSON file, or `-` for standard input.
    #[arg(long, default_value = "-")]
    pub request: String,
}

pub fn run_quote(args: &QuoteArgs) -> anyhow::Result<String> {
    let engine = QuoteEngine::load(&args.artifact)?;
    let mut text = String::new();
    if args.request == "-" {
        std::io::stdin().read_to_string(&mut text)?;
    } else {
        File::open(&args.request)?.read_to_string(&mut text)?;
    }
    let request: QuoteRequest = serde_json::from_str(&text).context("parsing quote request")?;
    Ok(serde_json::to_string(&engine.quote(&request)?)?)
}

#[derive(Args, Debug, Clone)]
pub struct ServeArgs {
    #[arg(long)]
    pub artifact: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// How often to check the artifact file for changes.
    #[arg(long, default_value_t = 1000)]
    pub poll_ms: u64,
}

pub fn run_serve(args: &ServeArgs) -> anyhow::Result<()> {
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(crate::server::serve(
        &args.artifact,
        args.addr,
        Duration::from_millis(args.poll_ms),
    ))
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// One segment with strong reference effects.
    Reference,
    /// Two segments split on a binary feature.
    TwoSegment,
    /// Reference effects plus time windows.
    Windows,
}

#[derive(Args, Debug, Clone)]
pub struct TruthArgs {
    #[arg(long, value_enum, default_value_t = Scenario::Reference)]
    pub scenario: Scenario,
    /// Ground-truth JSON; overrides --scenario.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, default_value_t = 14)]
    pub num_options: usize,
}

impl TruthArgs {
    pub fn build(&self) -> anyhow::Result<GroundTruth> {
        if let Some(p) = &self.truth {
            let truth: GroundTruth = serde_json::from_reader(File::open(p)?)?;
            truth.validate()?;
            return Ok(truth);
        }
        Ok(match self.scenario {
            Scenario::Reference => scenarios::reference_effect(self.num_options),
            Scenario::TwoSegment => scenarios::two_segment(self.num_options),
            Scenario::Windows => scenarios::with_windows(self.num_options),
        })
    }
}

#[derive(Args, Debug, Clone)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub truth: TruthArgs,
    #[arg(short, long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Exploration markups over cost are drawn from [markup_low, markup_high].
    #[arg(long, default_value_t = 2.0)]
    pub markup_low: f64,
    #[arg(long, default_value_t = 25.0)]
    pub markup_high: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the ground truth as JSON.
    #[arg(long)]
    pub write_truth: Option<PathBuf>,
}

pub fn run_simulate(args: &SimulateArgs) -> anyhow::Result<usize> {
    let truth = args.truth.build()?;
    let pricer = RandomExploration {
        low: args.markup_low,
        high: args.markup_high,
        seed: args.seed,
    };
    let log = generate_quotes(&truth, args.n, &pricer, args.seed)?;
    write_log(&log.rows, BufWriter::new(File::create(&args.out)?))?;
    if let Some(p) = &args.write_truth {
        let mut f = BufWriter::new(File::create(p)?);
        serde_json::to_writer_pretty(&mut f, &truth)?;
        f.write_all(b"\n")?;
    }
    log::info!(
        "{} quotes, {} conversions, {} cancellations",
        log.quotes,
        log.conversions,
        log.cancellations
    );
    Ok(log.quotes)
}

#[derive(Args, Debug, Clone)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub log: PathBuf,
    /// Fraction of quotes held out for scoring.
    #[arg(long, default_value_t = 0.2)]
    pub holdout: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 200)]
    pub min_leaf: usize,
    #[arg(long, default_value_t = 0.01)]
    pub max_reject: f64,
}

pub fn run_evaluate(args: &EvaluateArgs) -> anyhow::Result<String> {
    let data = load_log(&args.log, args.max_reject)?;
    let (train_set, holdout) = data.split_holdout(args.holdout, args.seed)?;
    let num_options = data
        .rows
        .first()
        .map(|r| r.choice.num_options())
        .context("empty log")?;
    let buckets = BucketScheme::for_horizon(num_options);
    let naive = NaiveBaseline::fit(&train_set.rows)?;
    let vanilla = fit_mle(
        &train_set
            .rows
            .iter()
            .map(|r| r.choice.clone())
            .collect::<Vec<_>>(),
        &buckets,
        &FitConfig {
            reference_effects: false,
            ..FitConfig::default()
        },
    )?
    .params;
    let tree = fit_tree(
        &train_set,
        &TreeHyperparams {
            max_depth: args.max_depth,
            min_leaf_samples: args.min_leaf,
            ..TreeHyperparams::default()
        },
        &buckets,
        &FitConfig::default(),
    )?;
    let models: [(&str, &dyn ChoicePredictor); 3] = [
        ("naive", &naive),
        ("vanilla_mnl", &vanilla),
        ("framework", &tree),
    ];
    let reports = evaluate_models(&holdout.rows, &models)?;
    Ok(serde_json::to_string_pretty(&reports)?)
}

#[derive(Args, Debug, Clone)]
pub struct AbTestArgs {
    #[command(flatten)]
    pub truth: TruthArgs,
    /// Framework artifact (arm B).
    #[arg(long)]
    pub artifact: PathBuf,
    /// Log the legacy per-option curves are fitted on (arm A).
    #[arg(long)]
    pub legacy_log: PathBuf,
    #[arg(short, long, default_value_t = 20_000)]
    pub n: usize,
    /// Share of quotes sent to arm A.
    #[arg(long, default_value_t = 0.5)]
    pub split: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 101)]
    pub legacy_grid: usize,
}

pub fn run_ab_test(args: &AbTestArgs) -> anyhow::Result<String> {
    let truth = args.truth.build()?;
    let engine = QuoteEngine::load(&args.artifact)?;
    let data = load_log(&args.legacy_log, 0.01)?;
    let objective = engine.artifact().objective;
    let legacy = LegacyPricer::fit(
        &data.rows,
        engine.artifact().guardrails.clone(),
        args.legacy_grid,
        objective,
    )?;
    let report = ab_compare(
        &truth, &legacy, &engine, args.n, args.split, args.seed, &objective,
    )?;
    Ok(serde_json::to_string_pretty(&report)?)
}
