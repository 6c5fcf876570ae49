//! `medcomm`: evaluate model answers against physician answers from the
//! command line.
//!
//! Settings come from an optional TOML file (`--config`) with flags taking
//! precedence. Relative paths in the file resolve against its directory.
//! `MEDCOMM_REMOTE_URL` is consulted only when neither sets a remote URL.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use medcomm_core::corpus::{CorpusFormat, SystemId};
use medcomm_core::pipeline::{run_pipeline, PipelineConfig, PipelineError, Stage};
use medcomm_core::report::Formats;
use medcomm_core::sampler::FeatureTarget;

const REMOTE_URL_ENV: &str = "MEDCOMM_REMOTE_URL";

#[derive(Parser)]
#[command(name = "medcomm", version, about = "Compare model-generated and physician medical answers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load the corpus and responses and report alignment.
    Ingest(RunArgs),
    /// Select a representative subset of records.
    Sample(RunArgs),
    /// Score readability, semantic fidelity and affect per response.
    Score(RunArgs),
    /// Run pairwise statistical comparisons between systems.
    Compare(RunArgs),
    /// Produce the full report directory.
    Report(RunArgs),
    /// Run every stage (same output as `report`).
    All(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum CorpusFormatArg {
    Jsonl,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetArg {
    Question,
    Answer,
}

#[derive(Args, Default)]
struct RunArgs {
    /// TOML file with default settings.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Question/answer corpus (.jsonl or .csv).
    #[arg(long, value_name = "FILE")]
    corpus: Option<PathBuf>,
    #[arg(long, value_enum)]
    corpus_format: Option<CorpusFormatArg>,
    /// Response file with {"id","system","text"} lines. Repeatable.
    #[arg(long, value_name = "FILE")]
    responses: Vec<PathBuf>,
    /// Embedding store keyed by content hash.
    #[arg(long, value_name = "FILE")]
    vectors: Option<PathBuf>,
    /// Sentiment/emotion store keyed by content hash.
    #[arg(long, value_name = "FILE")]
    labels: Option<PathBuf>,
    /// Inference service for whichever store is not given.
    #[arg(long, value_name = "URL")]
    remote_url: Option<String>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Readability-driven subset of K records.
    #[arg(long, value_name = "K")]
    sample_k: Option<usize>,
    /// Severity-stratified subset, --quota records per class.
    #[arg(long)]
    stratified: bool,
    #[arg(long)]
    quota: Option<usize>,
    /// Apply IQR filtering within severity classes.
    #[arg(long)]
    stratified_iqr: bool,
    /// Text the sampler computes readability on.
    #[arg(long, value_enum)]
    target: Option<TargetArg>,
    /// Evaluate on records every system covers instead of failing.
    #[arg(long)]
    allow_partial: bool,
    /// Likert ratings CSV (role,variant,criterion,score).
    #[arg(long, value_name = "FILE")]
    ratings: Option<PathBuf>,
    /// Restrict to these systems, e.g. GPT-4_Base. Repeatable.
    #[arg(long = "system", value_name = "ID")]
    systems: Vec<String>,
    /// Table formats to write. Repeatable; default both.
    #[arg(long = "format", value_enum)]
    formats: Vec<FormatArg>,
    #[arg(long)]
    arrow_tolerance: Option<f64>,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

/// Schema of the `--config` file. Every key is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    corpus: Option<PathBuf>,
    corpus_format: Option<String>,
    #[serde(default)]
    responses: Vec<PathBuf>,
    vectors: Option<PathBuf>,
    labels: Option<PathBuf>,
    remote_url: Option<String>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    threads: Option<usize>,
    sample_k: Option<usize>,
    stratified: Option<bool>,
    quota: Option<usize>,
    stratified_iqr: Option<bool>,
    target: Option<String>,
    iqr_multiplier: Option<f64>,
    max_iterations: Option<usize>,
    allow_partial: Option<bool>,
    ratings: Option<PathBuf>,
    #[serde(default)]
    systems: Vec<String>,
    #[serde(default)]
    formats: Vec<String>,
    arrow_tolerance: Option<f64>,
}

fn config_err(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(msg.into())
}

fn read_file_config(path: &Path) -> Result<FileConfig, PipelineError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg: FileConfig = toml::from_str(&text)
        .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    for p in [&mut cfg.corpus, &mut cfg.vectors, &mut cfg.labels, &mut cfg.out, &mut cfg.ratings]
        .into_iter()
        .flatten()
    {
        resolve(p);
    }
    cfg.responses.iter_mut().for_each(resolve);
    Ok(cfg)
}

fn parse_formats(names: &[String]) -> Result<Formats, PipelineError> {
    let mut f = Formats { csv: false, json: false };
    for n in names {
        match n.to_ascii_lowercase().as_str() {
            "csv" => f.csv = true,
            "json" => f.json = true,
            other => return Err(config_err(format!("unknown format \"{other}\""))),
        }
    }
    Ok(f)
}

fn build_config(args: &RunArgs) -> Result<PipelineConfig, PipelineError> {
    let file = match &args.config {
        Some(p) => read_file_config(p)?,
        None => FileConfig::default(),
    };
    let corpus = args
        .corpus
        .clone()
        .or(file.corpus)
        .ok_or_else(|| config_err("--corpus is required"))?;
    let out = args
        .out
        .clone()
        .or(file.out)
        .ok_or_else(|| config_err("--out is required"))?;
    let mut c = PipelineConfig::new(corpus, out);

    c.corpus_format = match (args.corpus_format, file.corpus_format) {
        (Some(CorpusFormatArg::Jsonl), _) => Some(CorpusFormat::Jsonl),
        (Some(CorpusFormatArg::Csv), _) => Some(CorpusFormat::Csv),
        (None, Some(s)) => Some(s.parse().map_err(|e| config_err(format!("corpus_format: {e}")))?),
        (None, None) => None,
    };
    c.responses = if args.responses.is_empty() { file.responses } else { args.responses.clone() };
    c.vectors = args.vectors.clone().or(file.vectors);
    c.labels = args.labels.clone().or(file.labels);
    c.remote_url = args
        .remote_url
        .clone()
        .or(file.remote_url)
        .or_else(|| std::env::var(REMOTE_URL_ENV).ok().filter(|s| !s.is_empty()));
    if let Some(seed) = args.seed.or(file.seed) {
        c.seed = seed;
    }
    c.threads = args.threads.or(file.threads);
    c.sample_k = args.sample_k.or(file.sample_k);
    c.stratified = args.stratified || file.stratified.unwrap_or(false);
    if let Some(q) = args.quota.or(file.quota) {
        c.sampler.per_class_quota = q;
    }
    c.sampler.stratified_iqr = args.stratified_iqr || file.stratified_iqr.unwrap_or(false);
    c.sampler.target = match (args.target, file.target) {
        (Some(TargetArg::Question), _) => FeatureTarget::Question,
        (Some(TargetArg::Answer), _) => FeatureTarget::Answer,
        (None, Some(s)) => s.parse().map_err(config_err)?,
        (None, None) => FeatureTarget::Answer,
    };
    if let Some(m) = file.iqr_multiplier {
        c.sampler.iqr_multiplier = m;
    }
    if let Some(m) = file.max_iterations {
        c.sampler.max_iterations = m;
    }
    c.allow_partial = args.allow_partial || file.allow_partial.unwrap_or(false);
    c.ratings = args.ratings.clone().or(file.ratings);
    let systems = if args.systems.is_empty() { file.systems } else { args.systems.clone() };
    c.systems = systems
        .iter()
        .map(|s| s.parse::<SystemId>().map_err(|e| config_err(format!("--system {s}: {e}"))))
        .collect::<Result<_, _>>()?;
    let formats: Vec<String> = if args.formats.is_empty() {
        file.formats
    } else {
        args.formats
            .iter()
            .map(|f| match f {
                FormatArg::Csv => "csv".to_string(),
                FormatArg::Json => "json".to_string(),
            })
            .collect()
    };
    if !formats.is_empty() {
        c.formats = parse_formats(&formats)?;
    }
    if let Some(t) = args.arrow_tolerance.or(file.arrow_tolerance) {
        c.arrow_tolerance = t;
    }
    Ok(c)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (stage, args) = match &cli.command {
        Command::Ingest(a) => (Stage::Ingest, a),
        Command::Sample(a) => (Stage::Sample, a),
        Command::Score(a) => (Stage::Score, a),
        Command::Compare(a) => (Stage::Compare, a),
        Command::Report(a) | Command::All(a) => (Stage::Report, a),
    };
    let level = match args.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = build_config(args).and_then(|c| run_pipeline(&c, stage).map(|o| (c, o)));
    match result {
        Ok((config, outcome)) => {
            println!(
                "{} records, {} systems: wrote {} files to {} (manifest {})",
                outcome.records,
                outcome.systems.len(),
                outcome.manifest.files.len(),
                config.out.display(),
                outcome.manifest.digest()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
