//! Command-line frontend: data prep, training, evaluation, hyperparameter
//! sweeps, clustering, and exports. Diagnostics go to stderr, data to files.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::analysis::{cluster_items, cluster_report, write_items_clustered_csv, ReportScope};
use crate::data::{load_split, parse_interactions, split_holdout, write_split, InputFormat};
use crate::eval::{evaluate, EvalReport};
use crate::model::EmbeddingModel;
use crate::trainer::{load_model, save_checkpoint, train, EpochStats, Strategy, TrainConfig};

#[derive(Parser)]
#[command(
    name = "onebp",
    version,
    about = "Two-tower recommender with swappable backpropagation strategies"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse an interaction log, binarize it, and write a train/test split.
    Prepare(PrepareArgs),
    /// Train a model on a prepared split and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint at the requested cutoffs.
    Evaluate(EvaluateArgs),
    /// Train one model per axis value and collect metrics into one CSV.
    Sweep(SweepArgs),
    /// Cluster item embeddings and report per-cluster statistics.
    Cluster(ClusterArgs),
    /// Convert a checkpoint into the embeddings CSV.
    ExportEmbeddings(ExportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    /// Tab-separated `user item rating timestamp`.
    MovielensTab,
    /// `user,item` per line, no header.
    CsvPairs,
}

#[derive(Args)]
struct PrepareArgs {
    /// Raw interaction log.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "movielens-tab")]
    format: FormatArg,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output directory for train.csv, test.csv, meta.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct ConfigOverrides {
    /// JSON config file; flat keys matching the training config fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long = "lr")]
    learning_rate: Option<f64>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long = "negatives")]
    num_negatives: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigOverrides {
    /// File values first, CLI flags override.
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let bytes =
                    fs::read(path).with_context(|| format!("reading config {}", path.display()))?;
                serde_json::from_slice(&bytes)
                    .with_context(|| format!("parsing config {}", path.display()))?
            }
            None => TrainConfig::default(),
        };
        if let Some(v) = self.strategy {
            cfg.strategy = v;
        }
        if let Some(v) = self.beta {
            cfg.beta = v;
        }
        if let Some(v) = self.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.dim {
            cfg.dim = v;
        }
        if let Some(v) = self.num_negatives {
            cfg.num_negatives = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Directory produced by `prepare`.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    overrides: ConfigOverrides,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Path to a model.bin checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Cutoffs, e.g. `--k 5,10,20`.
    #[arg(long = "k", value_delimiter = ',', default_values_t = vec![5, 10, 20])]
    cutoffs: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SweepAxis {
    Beta,
    NumNegatives,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    overrides: ConfigOverrides,
    #[arg(long, value_enum)]
    axis: SweepAxis,
    /// Axis values, e.g. `--values 0.9,0.99,0.999`.
    #[arg(long, value_delimiter = ',')]
    values: Vec<f64>,
    #[arg(long = "k", value_delimiter = ',', default_values_t = vec![5, 10, 20])]
    cutoffs: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Number of latent types.
    #[arg(long, default_value_t = 6)]
    clusters: usize,
    /// Report a single user instead of aggregating over all evaluable users.
    #[arg(long)]
    user: Option<u32>,
    /// Recommendation list length for the report.
    #[arg(long = "k", default_value_t = 10)]
    list_len: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

/// Everything needed to reproduce and audit one training run.
#[derive(Debug, Serialize)]
struct RunManifest {
    version: String,
    config: TrainConfig,
    dataset_fingerprint: String,
    epochs: Vec<EpochStats>,
    report: EvalReport,
    train_seconds: f64,
    total_seconds: f64,
}

pub fn run() -> Result<()> {
    configure_threads()?;
    match Cli::parse().command {
        Command::Prepare(args) => cmd_prepare(&args),
        Command::Train(args) => cmd_train(&args),
        Command::Evaluate(args) => cmd_evaluate(&args),
        Command::Sweep(args) => cmd_sweep(&args),
        Command::Cluster(args) => cmd_cluster(&args),
        Command::ExportEmbeddings(args) => cmd_export(&args),
    }
}

/// `ONEBP_THREADS` caps internal parallelism (rayon's global pool).
fn configure_threads() -> Result<()> {
    if let Ok(raw) = std::env::var("ONEBP_THREADS") {
        let n: usize = raw
            .parse()
            .with_context(|| format!("ONEBP_THREADS=`{raw}` is not a thread count"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    Ok(())
}

fn cmd_prepare(args: &PrepareArgs) -> Result<()> {
    let file =
        fs::File::open(&args.input).with_context(|| format!("opening {}", args.input.display()))?;
    let format = match args.format {
        FormatArg::MovielensTab => InputFormat::MovieLensTab,
        FormatArg::CsvPairs => InputFormat::CsvPairs,
    };
    let dataset = parse_interactions(file, format)
        .with_context(|| format!("parsing {}", args.input.display()))?;
    eprintln!(
        "parsed {} users, {} items, {} interactions (density {:.4})",
        dataset.num_users(),
        dataset.num_items(),
        dataset.num_interactions(),
        dataset.density()
    );
    let split = split_holdout(&dataset, args.test_fraction, args.seed)?;
    write_split(&split, &args.out)?;
    eprintln!(
        "wrote split to {}: {} train / {} test pairs, {} evaluable users",
        args.out.display(),
        split.train.num_interactions(),
        split.test.num_interactions(),
        split.evaluable_users.len()
    );
    Ok(())
}

fn dataset_fingerprint(data_dir: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    for name in ["train.csv", "test.csv"] {
        hasher.update(fs::read(data_dir.join(name))?);
    }
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let total_start = Instant::now();
    let cfg = args.overrides.resolve()?;
    let split = load_split(&args.data)
        .with_context(|| format!("loading split from {}", args.data.display()))?;
    let fingerprint = dataset_fingerprint(&args.data)?;

    eprintln!(
        "training {} on {} users x {} items ({} train pairs), d={}, lr={}, beta={}, N_s={}, batch={}, epochs={}, seed={}",
        cfg.strategy.name(),
        split.train.num_users(),
        split.train.num_items(),
        split.train.num_interactions(),
        cfg.dim,
        cfg.learning_rate,
        cfg.beta,
        cfg.num_negatives,
        cfg.batch_size,
        cfg.epochs,
        cfg.seed
    );

    let mut model = EmbeddingModel::random_init(
        split.train.num_users(),
        split.train.num_items(),
        cfg.dim,
        cfg.seed,
    );
    let train_start = Instant::now();
    let stats = train(&mut model, &split, &cfg, |s| {
        eprintln!(
            "epoch {:>4}: mean loss {:.6} ({:.2}s)",
            s.epoch, s.mean_loss, s.wall_seconds
        );
    })?;
    let train_seconds = train_start.elapsed().as_secs_f64();

    fs::create_dir_all(&args.out)?;
    save_checkpoint(&args.out, &model, &cfg, stats.len())?;

    let mut epochs_csv = String::from("epoch,mean_loss,seconds\n");
    for s in &stats {
        epochs_csv.push_str(&format!("{},{},{}\n", s.epoch, s.mean_loss, s.wall_seconds));
    }
    fs::write(args.out.join("epochs.csv"), epochs_csv)?;

    let report = evaluate(&model, &split, &[5, 10, 20])?;
    write_report(&report, &args.out)?;

    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg,
        dataset_fingerprint: fingerprint,
        epochs: stats,
        report,
        train_seconds,
        total_seconds: total_start.elapsed().as_secs_f64(),
    };
    fs::write(
        args.out.join("manifest.json"),
        serde_json::to_vec_pretty(&manifest)?,
    )?;
    eprintln!("checkpoint and manifest written to {}", args.out.display());
    Ok(())
}

fn write_report(report: &EvalReport, out_dir: &Path) -> Result<()> {
    fs::write(
        out_dir.join("report.json"),
        serde_json::to_vec_pretty(report)?,
    )?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    fs::write(out_dir.join("report.csv"), csv)?;
    Ok(())
}

fn load_checkpoint_for_split(
    checkpoint: &Path,
    data_dir: &Path,
) -> Result<(EmbeddingModel, crate::data::DataSplit)> {
    let model = load_model(checkpoint)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let split = load_split(data_dir)
        .with_context(|| format!("loading split from {}", data_dir.display()))?;
    if model.num_users() != split.train.num_users() || model.num_items() != split.train.num_items()
    {
        bail!(
            "checkpoint shape {}x{} does not match dataset {}x{}",
            model.num_users(),
            model.num_items(),
            split.train.num_users(),
            split.train.num_items()
        );
    }
    Ok((model, split))
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let (model, split) = load_checkpoint_for_split(&args.checkpoint, &args.data)?;
    let report = evaluate(&model, &split, &args.cutoffs)?;
    fs::create_dir_all(&args.out)?;
    write_report(&report, &args.out)?;
    for &k in &args.cutoffs {
        eprintln!(
            "K={k}: P={:.4} R={:.4} F1={:.4} NDCG={:.4}",
            report.precision[&k], report.recall[&k], report.f1[&k], report.ndcg[&k]
        );
    }
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    if args.values.is_empty() {
        bail!("sweep requires at least one axis value");
    }
    let base = args.overrides.resolve()?;
    let split = load_split(&args.data)?;

    let mut rows = String::from("axis_value,metric,K,value\n");
    for &value in &args.values {
        let mut cfg = base.clone();
        let label = match args.axis {
            SweepAxis::Beta => {
                cfg.beta = value;
                format!("{value}")
            }
            SweepAxis::NumNegatives => {
                if value.fract() != 0.0 || value < 1.0 {
                    bail!("num_negatives axis values must be positive integers, got {value}");
                }
                cfg.num_negatives = value as usize;
                format!("{}", value as usize)
            }
        };
        cfg.validate()?;
        eprintln!("sweep {}={}", axis_name(args.axis), label);
        let mut model = EmbeddingModel::random_init(
            split.train.num_users(),
            split.train.num_items(),
            cfg.dim,
            cfg.seed,
        );
        train(&mut model, &split, &cfg, |s| {
            eprintln!("  epoch {:>4}: loss {:.6}", s.epoch, s.mean_loss);
        })?;
        let report = evaluate(&model, &split, &args.cutoffs)?;
        for (name, map) in [
            ("precision", &report.precision),
            ("recall", &report.recall),
            ("f1", &report.f1),
            ("ndcg", &report.ndcg),
        ] {
            for (k, v) in map {
                rows.push_str(&format!("{label},{name},{k},{v}\n"));
            }
        }
    }
    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join("sweep.csv"), rows)?;
    eprintln!(
        "sweep results written to {}",
        args.out.join("sweep.csv").display()
    );
    Ok(())
}

fn axis_name(axis: SweepAxis) -> &'static str {
    match axis {
        SweepAxis::Beta => "beta",
        SweepAxis::NumNegatives => "num_negatives",
    }
}

fn cmd_cluster(args: &ClusterArgs) -> Result<()> {
    let (model, split) = load_checkpoint_for_split(&args.checkpoint, &args.data)?;
    let clustering = cluster_items(&model, args.clusters, args.max_iters, args.seed)?;
    eprintln!(
        "k-means: k={}, {} iterations, inertia {:.4}",
        clustering.k, clustering.iterations, clustering.inertia
    );

    fs::create_dir_all(&args.out)?;
    let mut csv = Vec::new();
    write_items_clustered_csv(&model, &clustering, &mut csv)?;
    fs::write(args.out.join("items_clustered.csv"), csv)?;

    let scope = match args.user {
        Some(u) => ReportScope::SingleUser(u),
        None => ReportScope::AllUsers,
    };
    let report = cluster_report(&clustering, &split, &model, scope, args.list_len)?;
    fs::write(
        args.out.join("cluster_report.json"),
        serde_json::to_vec_pretty(&report)?,
    )?;
    eprintln!("cluster outputs written to {}", args.out.display());
    Ok(())
}

fn cmd_export(args: &ExportArgs) -> Result<()> {
    let model = load_model(&args.checkpoint)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut csv = Vec::new();
    model.write_embeddings_csv(&mut csv)?;
    fs::write(&args.out, csv)?;
    eprintln!("embeddings written to {}", args.out.display());
    Ok(())
}

impl ValueEnum for Strategy {
    fn value_variants<'a>() -> &'a [Self] {
        &[Strategy::TwoBp, Strategy::OneBp, Strategy::UserOnlyBp]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(self.name()))
    }
}
