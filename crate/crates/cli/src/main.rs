//! `xmodal`: semantic space, neighbor tables, synthetic data, training,
//! evaluation and ablations from the command line.
//!
//! Every subcommand writes its artifacts to the paths it is given and a
//! one-line JSON summary to stdout. Failures print one JSON line
//! `{"error": <code>, "message": <text>}` to stderr and exit nonzero.

mod layer;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use xmodal::data::{generate_synthetic, load_dataset, PairDataset, Split, SyntheticConfig};
use xmodal::eval::{evaluate_checkpoint, run_ablation, AblationVariant, EvalConfig};
use xmodal::io::{write_json_file, write_jsonl_file};
use xmodal::neighbor::{build_index, neighbor_source_variant, IndexConfig, IndexMode, Metric, NeighborSource, NeighborTable};
use xmodal::semantic::{embed_corpus, load_external_space, Document, PvdmConfig, SemanticSpace, SpaceSource};
use xmodal::train::{train, write_metrics_log, Architecture, Objective, TrainConfig};
use xmodal::{Checkpoint64, Error, PairDataset64, Result, SemanticSpace64};

use layer::{load_config, serde_name, set};

#[derive(Parser)]
#[command(name = "xmodal", version, about = "Cross-modal metric learning with semantic-neighbor terms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train paragraph vectors on a corpus and write one vector per document.
    EmbedDocs(EmbedDocsArgs),
    /// Compute the k nearest neighbors of every sample.
    BuildNeighbors(BuildNeighborsArgs),
    /// Generate a synthetic paired dataset with ground-truth topics.
    Synth(SynthArgs),
    /// Train the two encoders; writes a checkpoint and a metrics log.
    Train(TrainArgs),
    /// Evaluate a checkpoint on its test split.
    Eval(EvalArgs),
    /// Train and evaluate the full loss and each ablation.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct EmbedDocsArgs {
    /// Corpus file: JSON lines {"id", "tokens"}.
    #[arg(long)]
    corpus: PathBuf,
    /// Vectors file to write.
    #[arg(long)]
    out: PathBuf,
    /// JSON file with paragraph-vector settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    min_count: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    infer_steps: Option<usize>,
}

#[derive(Args)]
struct BuildNeighborsArgs {
    /// Vectors file: JSON lines {"id", "vector"}.
    #[arg(long, conflicts_with = "features", required_unless_present = "features")]
    vectors: Option<PathBuf>,
    /// Features file; neighbors are taken over text or image features.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Space of a features file to search: text_omega or image_visual.
    #[arg(long, value_parser = serde_name::<NeighborSource>, default_value = "text_omega")]
    source: NeighborSource,
    #[arg(long, default_value_t = xmodal::neighbor::DEFAULT_K)]
    k: usize,
    /// Neighbor-table file to write.
    #[arg(long)]
    out: PathBuf,
    /// JSON file with index settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// exact or approximate.
    #[arg(long, value_parser = serde_name::<IndexMode>)]
    mode: Option<IndexMode>,
    /// euclidean or cosine.
    #[arg(long, value_parser = serde_name::<Metric>)]
    metric: Option<Metric>,
    #[arg(long)]
    max_degree: Option<usize>,
    #[arg(long)]
    ef_construction: Option<usize>,
    #[arg(long)]
    ef_search: Option<usize>,
}

#[derive(Args)]
struct SynthArgs {
    /// Features file to write.
    #[arg(long)]
    out: PathBuf,
    /// Also write the generated tokens as a corpus file.
    #[arg(long)]
    corpus_out: Option<PathBuf>,
    /// JSON file with generator settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    topics: Option<usize>,
    #[arg(long)]
    modes_per_topic: Option<usize>,
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    image_dim: Option<usize>,
    #[arg(long)]
    text_dim: Option<usize>,
    #[arg(long)]
    text_noise: Option<f64>,
    #[arg(long)]
    image_noise: Option<f64>,
    #[arg(long)]
    tokens_per_doc: Option<usize>,
}

/// Inputs shared by `train` and `ablate`.
#[derive(Args)]
struct DataArgs {
    /// Features file: JSON lines {"id", "image_feature", "text_feature"?, "text_tokens"?}.
    #[arg(long)]
    features: PathBuf,
    /// Corpus file whose tokens are merged into the features by id.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Semantic-space vectors; used as text features where those are absent.
    #[arg(long)]
    omega: Option<PathBuf>,
}

#[derive(Args)]
struct TrainFlags {
    /// JSON file with training settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    /// Width of a hidden ReLU layer; omit for linear encoders.
    #[arg(long)]
    hidden: Option<usize>,
    /// Weight of the text-neighbor term.
    #[arg(long)]
    alpha: Option<f64>,
    /// Weight of the image-neighbor term.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    tan_sq_alpha: Option<f64>,
    #[arg(long)]
    margin: Option<f64>,
    /// combined or symmetric_only.
    #[arg(long, value_parser = serde_name::<Objective>)]
    objective: Option<Objective>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Neighbor table; required by the combined objective.
    #[arg(long)]
    neighbors: Option<PathBuf>,
    /// Directory for checkpoint.json, metrics.jsonl and split.json.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args)]
struct EvalFlags {
    /// JSON file with evaluation settings.
    #[arg(long)]
    eval_config: Option<PathBuf>,
    #[arg(long)]
    way_count: Option<usize>,
    /// Distractor draws per query.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    preservation_k: Option<usize>,
    #[arg(long, value_parser = serde_name::<Metric>)]
    omega_metric: Option<Metric>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Report file to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    eval: EvalFlags,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    neighbors: PathBuf,
    /// Directory for ablation.json and one metrics log per variant.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    flags: TrainFlags,
    #[command(flatten)]
    eval: EvalFlags,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let message = e.render().to_string();
            let first = message.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("{}", json!({"error": "UsageError", "message": first}));
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::EmbedDocs(a) => embed_docs(a),
        Command::BuildNeighbors(a) => build_neighbors(a),
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Ablate(a) => ablate(a),
    };
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({"error": e.code(), "message": e.to_string()}));
            ExitCode::FAILURE
        }
    }
}

fn embed_docs(a: EmbedDocsArgs) -> Result<serde_json::Value> {
    let mut cfg: PvdmConfig = load_config(a.config.as_deref())?;
    set(&mut cfg.seed, a.seed);
    set(&mut cfg.dim, a.dim);
    set(&mut cfg.window, a.window);
    set(&mut cfg.min_count, a.min_count);
    set(&mut cfg.epochs, a.epochs);
    set(&mut cfg.infer_steps, a.infer_steps);
    let corpus: Vec<Document> = xmodal::io::read_jsonl_file(&a.corpus)?;
    let (model, space) = embed_corpus::<f64>(&corpus, &cfg)?;
    space.save_jsonl(&a.out)?;
    Ok(json!({
        "command": "embed-docs",
        "documents": space.len(),
        "vocabulary": model.vocabulary().len(),
        "dim": space.dim(),
        "final_loss": model.epoch_losses().last(),
        "out": a.out,
    }))
}

fn build_neighbors(a: BuildNeighborsArgs) -> Result<serde_json::Value> {
    let mut cfg: IndexConfig = load_config(a.config.as_deref())?;
    set(&mut cfg.seed, a.seed);
    set(&mut cfg.mode, a.mode);
    set(&mut cfg.metric, a.metric);
    set(&mut cfg.max_degree, a.max_degree);
    set(&mut cfg.ef_construction, a.ef_construction);
    set(&mut cfg.ef_search, a.ef_search);
    let space = match (&a.vectors, &a.features) {
        (Some(path), _) => load_external_space::<f64>(path)?,
        (None, Some(path)) => {
            let dataset: PairDataset64 = load_dataset(path, None)?;
            match a.source {
                NeighborSource::TextOmega => text_feature_space(&dataset)?,
                NeighborSource::ImageVisual => neighbor_source_variant(&dataset, NeighborSource::ImageVisual, None)?,
            }
        }
        (None, None) => unreachable!("clap requires one input"),
    };
    let table = build_index(&space, &cfg)?.build_table(a.k, a.source);
    table.save_jsonl(&a.out)?;
    Ok(json!({
        "command": "build-neighbors",
        "points": table.ids().len(),
        "k": table.k(),
        "mode": cfg.mode,
        "metric": cfg.metric,
        "out": a.out,
    }))
}

fn synth(a: SynthArgs) -> Result<serde_json::Value> {
    let mut cfg: SyntheticConfig = load_config(a.config.as_deref())?;
    set(&mut cfg.seed, a.seed);
    set(&mut cfg.topics, a.topics);
    set(&mut cfg.modes_per_topic, a.modes_per_topic);
    set(&mut cfg.pairs, a.pairs);
    set(&mut cfg.image_dim, a.image_dim);
    set(&mut cfg.text_dim, a.text_dim);
    set(&mut cfg.text_noise, a.text_noise);
    set(&mut cfg.image_noise, a.image_noise);
    set(&mut cfg.tokens_per_doc, a.tokens_per_doc);
    let dataset: PairDataset64 = generate_synthetic(&cfg)?;
    dataset.save_jsonl(&a.out)?;
    if let Some(path) = &a.corpus_out {
        write_jsonl_file(path, dataset.corpus())?;
    }
    Ok(json!({
        "command": "synth",
        "pairs": dataset.len(),
        "image_dim": dataset.image_dim(),
        "text_dim": dataset.text_dim(),
        "out": a.out,
    }))
}

fn train_cmd(a: TrainArgs) -> Result<serde_json::Value> {
    let cfg = train_config(&a.flags)?;
    let (dataset, _) = load_inputs(&a.data)?;
    let table = match &a.neighbors {
        Some(path) => Some(NeighborTable::load_jsonl(path, Metric::default(), cfg.neighbor_source)?),
        None => None,
    };
    let outcome = train(&dataset, table.as_ref(), &cfg)?;
    fs::create_dir_all(&a.out)?;
    let checkpoint = a.out.join("checkpoint.json");
    outcome.checkpoint.save(&checkpoint)?;
    write_metrics_log(a.out.join("metrics.jsonl"), &outcome.metrics)?;
    write_json_file(a.out.join("split.json"), &SplitIds::new(&dataset, &outcome.split))?;
    Ok(json!({
        "command": "train",
        "epochs": outcome.metrics.len(),
        "best_epoch": outcome.checkpoint.epoch,
        "best_val_loss": outcome.checkpoint.best_val_loss,
        "config_hash": outcome.checkpoint.config_hash,
        "out": a.out,
    }))
}

fn eval_cmd(a: EvalArgs) -> Result<serde_json::Value> {
    let mut cfg = eval_config(&a.eval)?;
    set(&mut cfg.seed, a.seed);
    let checkpoint = Checkpoint64::load(&a.checkpoint)?;
    let (dataset, omega) = load_inputs(&a.data)?;
    let omega = match omega {
        Some(space) => space,
        None => text_feature_space(&dataset)?,
    };
    let report = evaluate_checkpoint(&checkpoint, &dataset, &omega, &cfg)?;
    report.save(&a.out)?;
    Ok(json!({
        "command": "eval",
        "recall_image_to_text": report.recall_image_to_text,
        "recall_text_to_image": report.recall_text_to_image,
        "preservation_image": report.preservation_image,
        "preservation_text": report.preservation_text,
        "out": a.out,
    }))
}

fn ablate(a: AblateArgs) -> Result<serde_json::Value> {
    let train_cfg = train_config(&a.flags)?;
    let mut eval_cfg = eval_config(&a.eval)?;
    set(&mut eval_cfg.seed, a.flags.seed);
    let (dataset, omega) = load_inputs(&a.data)?;
    let omega = match omega {
        Some(space) => space,
        None => text_feature_space(&dataset)?,
    };
    let table = NeighborTable::load_jsonl(&a.neighbors, Metric::default(), train_cfg.neighbor_source)?;
    let rows = run_ablation(&dataset, &table, &omega, &train_cfg, &eval_cfg)?;
    fs::create_dir_all(&a.out)?;
    for row in &rows {
        write_metrics_log(a.out.join(format!("metrics_{}.jsonl", variant_name(row.variant))), &row.metrics)?;
    }
    let summary: Vec<AblationSummary> = rows
        .iter()
        .map(|r| AblationSummary {
            variant: r.variant,
            mean_recall: r.report.mean_recall(),
            mean_preservation: r.report.mean_preservation(),
            report: r.report.clone(),
        })
        .collect();
    write_json_file(a.out.join("ablation.json"), &summary)?;
    Ok(json!({
        "command": "ablate",
        "variants": summary.iter().map(|s| json!({
            "variant": s.variant,
            "mean_recall": s.mean_recall,
            "mean_preservation": s.mean_preservation,
        })).collect::<Vec<_>>(),
        "out": a.out,
    }))
}

#[derive(Serialize)]
struct AblationSummary {
    variant: AblationVariant,
    mean_recall: f64,
    mean_preservation: f64,
    report: xmodal::eval::EvalReport,
}

fn variant_name(v: AblationVariant) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|s| s.as_str().map(str::to_string))
        .unwrap_or_default()
}

#[derive(Serialize)]
struct SplitIds<'a> {
    train: Vec<&'a str>,
    val: Vec<&'a str>,
    test: Vec<&'a str>,
}

impl<'a> SplitIds<'a> {
    fn new(dataset: &'a PairDataset64, split: &Split) -> Self {
        let ids = |p: &[usize]| p.iter().map(|&i| dataset.ids()[i].as_str()).collect();
        Self {
            train: ids(&split.train),
            val: ids(&split.val),
            test: ids(&split.test),
        }
    }
}

fn train_config(f: &TrainFlags) -> Result<TrainConfig> {
    let mut cfg: TrainConfig = load_config(f.config.as_deref())?;
    set(&mut cfg.seed, f.seed);
    set(&mut cfg.batch_size, f.batch_size);
    set(&mut cfg.learning_rate, f.learning_rate);
    set(&mut cfg.weight_decay, f.weight_decay);
    set(&mut cfg.max_epochs, f.max_epochs);
    set(&mut cfg.patience, f.patience);
    set(&mut cfg.embed_dim, f.embed_dim);
    set(&mut cfg.architecture, f.hidden.map(|hidden| Architecture::Mlp { hidden }));
    set(&mut cfg.loss.weights.alpha_text, f.alpha);
    set(&mut cfg.loss.weights.beta_img, f.beta);
    set(&mut cfg.loss.angular.tan_sq_alpha, f.tan_sq_alpha);
    set(&mut cfg.loss.triplet.margin, f.margin);
    set(&mut cfg.objective, f.objective);
    cfg.validate()?;
    Ok(cfg)
}

fn eval_config(f: &EvalFlags) -> Result<EvalConfig> {
    let mut cfg: EvalConfig = load_config(f.eval_config.as_deref())?;
    set(&mut cfg.way_count, f.way_count);
    set(&mut cfg.trials, f.trials);
    set(&mut cfg.preservation_k, f.preservation_k);
    set(&mut cfg.omega_metric, f.omega_metric);
    Ok(cfg)
}

/// Loads the dataset and optional semantic space. Records without a text
/// feature take their semantic vector.
fn load_inputs(d: &DataArgs) -> Result<(PairDataset64, Option<SemanticSpace64>)> {
    let dataset: PairDataset64 = load_dataset(&d.features, d.corpus.as_deref())?;
    match &d.omega {
        Some(path) => {
            let omega = load_external_space(path)?;
            Ok((dataset.fill_text_features(&omega)?, Some(omega)))
        }
        None => Ok((dataset, None)),
    }
}

/// The dataset's text features as a semantic space.
fn text_feature_space(dataset: &PairDataset<f64>) -> Result<SemanticSpace64> {
    let vectors = dataset
        .records()
        .iter()
        .map(|r| {
            r.text_feature
                .clone()
                .ok_or_else(|| Error::MissingFeatures(format!("{:?} has no text feature; pass a vectors file", r.id)))
        })
        .collect::<Result<Vec<_>>>()?;
    SemanticSpace::new(dataset.ids().to_vec(), vectors, SpaceSource::ExternalFile)
}
