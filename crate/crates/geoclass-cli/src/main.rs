//! `geoclass`: experiment pipeline for image classification with location
//! context.
//!
//! Subcommands cover the full workflow: generate a synthetic benchmark
//! (`synth`), extract feature caches (`extract`), train and evaluate the
//! concatenation network (`train`, `eval`, `predict`), run the Bayesian
//! prior baselines (`baseline`), rank location-sensitive classes
//! (`select`), and sweep the ablation grid (`ablate`).
//!
//! Experiment commands read a TOML config (see `--config`); every config
//! field has a matching command-line override. Errors print as a single
//! `error: ...` line on stderr with a nonzero exit code.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};

use geoclass::experiment::{
    run_ablate, run_baseline, run_eval, run_extract, run_predict, run_select, run_synth, run_train,
    AblationVariants, BaselineOptions, ExperimentConfig, PriorKind, TRAIN_CACHE,
};
use geoclass::features::FeatureKind;
use geoclass::geodata::{BoundingBox, GridSpec};
use geoclass::synth::SynthSpec;

#[derive(Parser)]
#[command(name = "geoclass", version, about = "Location-context image classification pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark (records, hashtag corpus, concept corpus).
    Synth(SynthArgs),
    /// Extract feature caches for the train and test record files.
    Extract(ExtractArgs),
    /// Train the network on an extracted cache.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a cache; writes metrics.csv.
    Eval(EvalArgs),
    /// Write per-record class probabilities for a cache.
    Predict(EvalArgs),
    /// Image-only classifier plus Bayesian location priors.
    Baseline(BaselineArgs),
    /// Rank classes by KL divergence from the all-image distribution.
    Select(SelectArgs),
    /// Run the feature x pre-cat x radius-learning ablation grid.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Synthetic benchmark spec (TOML); defaults apply for missing keys.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output directory for the generated files.
    #[arg(long)]
    out: PathBuf,
    /// Master seed (mandatory: generation must be reproducible).
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    train_records: Option<usize>,
    #[arg(long)]
    test_records: Option<usize>,
    #[arg(long)]
    embedding_dim: Option<usize>,
    /// Class-signal-to-noise of the embeddings.
    #[arg(long)]
    snr: Option<f64>,
    /// Fraction of classes with no location signal.
    #[arg(long)]
    insensitive_frac: Option<f64>,
    #[arg(long)]
    corpus_per_class: Option<usize>,
}

/// Overrides shared by the experiment commands; unset flags fall back to
/// the config file.
#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated feature list (embedding,gps,map,acs,hashtag,visual).
    #[arg(long, value_delimiter = ',')]
    features: Option<Vec<String>>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    pre_cat: Option<usize>,
    #[arg(long)]
    post_cat: Option<usize>,
    #[arg(long)]
    rl_replicas: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    /// GPS-encoding grid as ROWSxCOLS, e.g. 100x200.
    #[arg(long)]
    gps_grid: Option<String>,
    /// Context pooling grid as ROWSxCOLS, e.g. 25000x50000.
    #[arg(long)]
    pooling_grid: Option<String>,
    /// Bounding box as lon_min,lat_min,lon_max,lat_max.
    #[arg(long, value_delimiter = ',')]
    bbox: Option<Vec<f64>>,
    /// Pooling radii in meters, comma separated.
    #[arg(long, value_delimiter = ',')]
    radii: Option<Vec<f64>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    train_records: Option<PathBuf>,
    #[arg(long)]
    test_records: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    concepts: Option<PathBuf>,
    #[arg(long)]
    maps_dir: Option<PathBuf>,
    #[arg(long)]
    zip_csv: Option<PathBuf>,
}

#[derive(Args)]
struct ExtractArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory for cache-train.jsonl / cache-test.jsonl.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Extracted training cache (defaults to <out>/cache-train.jsonl).
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Output directory for checkpoint.json, loss.csv, radii.csv.
    #[arg(long)]
    out: PathBuf,
    /// Master seed (mandatory: training must be reproducible).
    #[arg(long)]
    seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    cache: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
    /// Prior to apply (knn or radius); repeat for both (default: both).
    #[arg(long = "prior")]
    priors: Vec<String>,
    /// Neighbors for the knn prior.
    #[arg(long, default_value_t = 100)]
    k: usize,
    /// Pooling radius in meters for the radius prior.
    #[arg(long, default_value_t = 4000.0)]
    radius_m: f64,
    /// Prior smoothing; 0 reproduces the unsmoothed priors.
    #[arg(long, default_value_t = 1e-6)]
    epsilon: f64,
}

#[derive(Args)]
struct SelectArgs {
    /// Hashtag corpus (corpus.jsonl).
    #[arg(long)]
    corpus: PathBuf,
    /// Selection grid as ROWSxCOLS.
    #[arg(long, default_value = "100x200")]
    grid: String,
    /// Bounding box as lon_min,lat_min,lon_max,lat_max.
    #[arg(long, value_delimiter = ',')]
    bbox: Option<Vec<f64>>,
    /// Additive smoothing applied to the per-class distributions.
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
    #[arg(long, default_value_t = 100)]
    top_n: usize,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
    /// Pre-cat widths to sweep, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0,256")]
    pre_cat_widths: Vec<usize>,
    /// Radius-learning replica counts to sweep (0 = fixed histograms).
    #[arg(long, value_delimiter = ',', default_value = "0,5,10")]
    rl: Vec<usize>,
}

fn parse_dims(text: &str) -> Result<(usize, usize)> {
    let (rows, cols) = text
        .split_once(['x', 'X'])
        .ok_or_else(|| anyhow!("expected ROWSxCOLS, got '{text}'"))?;
    Ok((
        rows.trim().parse().context("bad row count")?,
        cols.trim().parse().context("bad column count")?,
    ))
}

fn parse_bbox(values: &[f64]) -> Result<BoundingBox> {
    if values.len() != 4 {
        return Err(anyhow!("bbox needs lon_min,lat_min,lon_max,lat_max"));
    }
    Ok(BoundingBox::new(values[0], values[1], values[2], values[3])?)
}

fn parse_features(names: &[String]) -> Result<Vec<FeatureKind>> {
    names
        .iter()
        .map(|n| {
            FeatureKind::from_name(n.trim())
                .ok_or_else(|| anyhow!("unknown feature '{n}' (expected one of embedding,gps,map,acs,hashtag,visual)"))
        })
        .collect()
}

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let mut config: ExperimentConfig =
        toml::from_str(&text).with_context(|| format!("parsing {}", args.config.display()))?;

    if let Some(features) = &args.features {
        config.features = parse_features(features)?;
    }
    if let Some(v) = args.classes {
        config.classes = v;
    }
    if let Some(v) = args.pre_cat {
        config.pre_cat = v;
    }
    if let Some(v) = args.post_cat {
        config.post_cat = v;
    }
    if let Some(v) = args.rl_replicas {
        config.rl_replicas = v;
    }
    if let Some(v) = args.dropout {
        config.dropout = v;
    }
    if let Some(text) = &args.gps_grid {
        config.gps_grid = parse_dims(text)?;
    }
    if let Some(text) = &args.pooling_grid {
        config.pooling_grid = parse_dims(text)?;
    }
    if let Some(values) = &args.bbox {
        config.bbox = parse_bbox(values)?;
    }
    if let Some(radii) = &args.radii {
        config.radii = geoclass::features::RadiiSet::new(radii.clone())?;
    }
    if let Some(v) = args.epochs {
        config.train.epochs = v;
    }
    if let Some(v) = args.lr {
        config.train.lr = v;
    }
    if let Some(v) = args.momentum {
        config.train.momentum = v;
    }
    if let Some(v) = args.weight_decay {
        config.train.weight_decay = v;
    }
    if let Some(v) = args.batch_size {
        config.train.batch_size = v;
    }
    if let Some(p) = &args.train_records {
        config.data.train_records = p.clone();
    }
    if let Some(p) = &args.test_records {
        config.data.test_records = p.clone();
    }
    if let Some(p) = &args.corpus {
        config.data.corpus = Some(p.clone());
    }
    if let Some(p) = &args.concepts {
        config.data.concepts = Some(p.clone());
    }
    if let Some(p) = &args.maps_dir {
        config.data.maps_dir = Some(p.clone());
    }
    if let Some(p) = &args.zip_csv {
        config.data.zip_csv = Some(p.clone());
    }
    Ok(config)
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let mut spec = match &args.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => SynthSpec::default(),
    };
    spec.seed = args.seed;
    if let Some(v) = args.classes {
        spec.classes = v;
    }
    if let Some(v) = args.train_records {
        spec.train_records = v;
    }
    if let Some(v) = args.test_records {
        spec.test_records = v;
    }
    if let Some(v) = args.embedding_dim {
        spec.embedding_dim = v;
    }
    if let Some(v) = args.snr {
        spec.snr = v;
    }
    if let Some(v) = args.insensitive_frac {
        spec.insensitive_frac = v;
    }
    if let Some(v) = args.corpus_per_class {
        spec.corpus_per_class = v;
    }
    let out = run_synth(&spec, &args.out)?;
    println!(
        "synth: {} train, {} test, {} corpus points, {} concept points -> {}",
        out.train.len(),
        out.test.len(),
        out.corpus.len(),
        out.concepts.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_extract(args: &ExtractArgs) -> Result<()> {
    let config = load_config(&args.config)?;
    let (train, test) = run_extract(&config, &args.out)?;
    let dims: Vec<String> = train
        .manifest
        .parts
        .iter()
        .map(|p| format!("{}={}", p.name, p.dim))
        .collect();
    println!(
        "extract: {} train / {} test records, dims {} -> {}",
        train.records.len(),
        test.records.len(),
        dims.join(" "),
        args.out.display()
    );
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut config = load_config(&args.config)?;
    config.seed = args.seed;
    let cache = args
        .cache
        .clone()
        .unwrap_or_else(|| args.out.join(TRAIN_CACHE));
    let model = run_train(&config, &cache, &args.out)?;
    let last = model.curve.last().expect("at least one epoch");
    println!(
        "train: {} epochs, final loss {:.6} -> {}",
        model.curve.len(),
        last.loss,
        args.out.join("checkpoint.json").display()
    );
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let report = run_eval(&args.checkpoint, &args.cache, &args.out)?;
    println!(
        "eval: mean_ap {:.4} acc@1 {:.4} acc@5 {:.4} -> {}",
        report.mean_ap.unwrap_or(f64::NAN),
        report.acc1.unwrap_or(f64::NAN),
        report.acc5.unwrap_or(f64::NAN),
        args.out.display()
    );
    if !report.skipped_classes.is_empty() {
        eprintln!(
            "warning: {} classes without test positives skipped by mean AP: {:?}",
            report.skipped_classes.len(),
            report.skipped_classes
        );
    }
    Ok(())
}

fn cmd_predict(args: &EvalArgs) -> Result<()> {
    run_predict(&args.checkpoint, &args.cache, &args.out)?;
    println!("predict -> {}", args.out.display());
    Ok(())
}

fn cmd_baseline(args: &BaselineArgs) -> Result<()> {
    let config = load_config(&args.config)?;
    let mut options = BaselineOptions {
        k: args.k,
        radius_m: args.radius_m,
        epsilon: args.epsilon,
        ..BaselineOptions::default()
    };
    if !args.priors.is_empty() {
        options.priors = args
            .priors
            .iter()
            .map(|p| match p.as_str() {
                "knn" => Ok(PriorKind::Knn),
                "radius" => Ok(PriorKind::Radius),
                other => Err(anyhow!("unknown prior '{other}' (expected knn or radius)")),
            })
            .collect::<Result<_>>()?;
    }
    let train_count = std::fs::read_to_string(&config.data.train_records)
        .map(|t| t.lines().filter(|l| !l.trim().is_empty()).count())
        .unwrap_or(0);
    if options.priors.contains(&PriorKind::Knn) && args.k > train_count {
        eprintln!("warning: k={} exceeds {train_count} training records; using all of them", args.k);
    }
    let results = run_baseline(&config, &options, &args.out)?;
    println!("method,mean_ap,acc1,acc5");
    for (name, report) in &results {
        println!(
            "{name},{:.4},{:.4},{:.4}",
            report.mean_ap.unwrap_or(f64::NAN),
            report.acc1.unwrap_or(f64::NAN),
            report.acc5.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

fn cmd_select(args: &SelectArgs) -> Result<()> {
    let (rows, cols) = parse_dims(&args.grid)?;
    let bbox = match &args.bbox {
        Some(values) => parse_bbox(values)?,
        None => BoundingBox::contiguous_us(),
    };
    let grid = GridSpec::new(rows, cols, bbox)?;
    let ranked = run_select(&args.corpus, grid, args.alpha, args.top_n, &args.out)?;
    println!("select: {} classes ranked -> {}", ranked.len(), args.out.display());
    for (class, kl) in ranked.iter().take(10) {
        println!("class {class}: {kl:.4} nats");
    }
    Ok(())
}

fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let config = load_config(&args.config)?;
    let mut variants = AblationVariants::standard(&config.features);
    variants.pre_cat_widths = args.pre_cat_widths.clone();
    variants.rl_replicas = args.rl.clone();
    let rows = run_ablate(&config, &variants, &args.out)?;
    println!("features,pre_cat,post_cat,rl_replicas,mean_ap,acc1,acc5");
    for row in &rows {
        println!(
            "{},{},{},{},{:.4},{:.4},{:.4}",
            row.features, row.pre_cat, row.post_cat, row.rl_replicas, row.mean_ap, row.acc1, row.acc5
        );
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Extract(args) => cmd_extract(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Baseline(args) => cmd_baseline(args),
        Command::Select(args) => cmd_select(args),
        Command::Ablate(args) => cmd_ablate(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
