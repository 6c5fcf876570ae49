//! End-to-end run: load → align → (sample) → readability → fidelity →
//! affect → pairwise statistics → report.
//!
//! Each stage adds its artifacts to one file set. A run stopped early writes
//! what it has so far, so every stage can be re-run on its own.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::affect::{
    emotion_index, profile_corpus, sentiment_share_table, top_dominant_emotions, AffectError,
    AffectProfile, ClassifierProvider, FileLabelStore,
};
use crate::corpus::{load_responses, Corpus, CorpusError, CorpusFormat, SystemId};
use crate::remote::RemoteProvider;
use crate::report::{
    emit_report, likert_summary, load_likert_csv, write_files, Formats, Manifest, MetricSummary,
    NamedMatrix, ReportBundle, ReportError, TopEmotions, ViolinData, DEFAULT_ARROW_TOLERANCE,
};
use crate::sampler::{representative_subset, stratified_representatives, SamplerConfig, SamplerError};
use crate::semantic::{
    semantic_fidelity_scores, EmbeddingProvider, FidelityScore, FileVectorStore, ProviderError,
    SemanticError,
};
use crate::stats::{descriptive, pairwise_compare, CompareKind, PairwiseMatrix, ScoreTable, StatsError};
use crate::textmetrics::{analyze_text, readability};

pub const DEFAULT_SEED: u64 = 42;
pub const TOP_EMOTIONS: usize = 5;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("provider error: {0}")]
    Provider(String),
}

impl PipelineError {
    /// 2 for configuration, 3 for input data, 4 for providers.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Data(_) => 3,
            PipelineError::Provider(_) => 4,
        }
    }
}

impl From<CorpusError> for PipelineError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::UnsupportedFormat(_) => PipelineError::Config(e.to_string()),
            _ => PipelineError::Data(e.to_string()),
        }
    }
}

impl From<SamplerError> for PipelineError {
    fn from(e: SamplerError) -> Self {
        match e {
            SamplerError::InvalidConfig(_) => PipelineError::Config(format!("sampler: {e}")),
            _ => PipelineError::Data(format!("sampler: {e}")),
        }
    }
}

impl From<SemanticError> for PipelineError {
    fn from(e: SemanticError) -> Self {
        match e {
            SemanticError::Provider { .. } => PipelineError::Provider(format!("embeddings: {e}")),
            _ => PipelineError::Data(format!("semantic: {e}")),
        }
    }
}

impl From<AffectError> for PipelineError {
    fn from(e: AffectError) -> Self {
        match e {
            AffectError::Provider { .. } | AffectError::Protocol { .. } => {
                PipelineError::Provider(format!("classifier: {e}"))
            }
            _ => PipelineError::Data(format!("affect: {e}")),
        }
    }
}

impl From<StatsError> for PipelineError {
    fn from(e: StatsError) -> Self {
        PipelineError::Data(format!("stats: {e}"))
    }
}

impl From<ReportError> for PipelineError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::Unwritable(_) | ReportError::Io { .. } => PipelineError::Config(format!("report: {e}")),
            _ => PipelineError::Data(format!("report: {e}")),
        }
    }
}

fn provider_err(e: ProviderError) -> PipelineError {
    PipelineError::Provider(e.to_string())
}

/// Last stage to run. Later stages include every earlier one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    Sample,
    Score,
    Compare,
    Report,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub corpus: PathBuf,
    /// Inferred from the corpus extension when unset.
    pub corpus_format: Option<CorpusFormat>,
    pub responses: Vec<PathBuf>,
    pub vectors: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    /// Serves whichever of embeddings and labels has no store file.
    pub remote_url: Option<String>,
    pub out: PathBuf,
    pub seed: u64,
    pub threads: Option<usize>,
    /// Readability-driven subset size.
    pub sample_k: Option<usize>,
    pub stratified: bool,
    pub sampler: SamplerConfig,
    /// Model systems to evaluate; empty means all in the response files.
    pub systems: Vec<SystemId>,
    /// Evaluate on the records every selected system covers instead of
    /// failing on gaps.
    pub allow_partial: bool,
    pub ratings: Option<PathBuf>,
    pub formats: Formats,
    pub arrow_tolerance: f64,
}

impl PipelineConfig {
    pub fn new(corpus: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            corpus: corpus.into(),
            corpus_format: None,
            responses: Vec::new(),
            vectors: None,
            labels: None,
            remote_url: None,
            out: out.into(),
            seed: DEFAULT_SEED,
            threads: None,
            sample_k: None,
            stratified: false,
            sampler: SamplerConfig::default(),
            systems: Vec::new(),
            allow_partial: false,
            ratings: None,
            formats: Formats::default(),
            arrow_tolerance: DEFAULT_ARROW_TOLERANCE,
        }
    }

    pub fn validate(&self, stage: Stage) -> Result<(), PipelineError> {
        if self.threads == Some(0) {
            return Err(PipelineError::Config("--threads must be at least 1".into()));
        }
        if self.sample_k.is_some() && self.stratified {
            return Err(PipelineError::Config(
                "--sample-k and --stratified are mutually exclusive".into(),
            ));
        }
        if stage == Stage::Sample && self.sample_k.is_none() && !self.stratified {
            return Err(PipelineError::Config(
                "sample needs --sample-k or --stratified".into(),
            ));
        }
        if self.sample_k == Some(0) {
            return Err(PipelineError::Config("--sample-k must be at least 1".into()));
        }
        if !(self.arrow_tolerance >= 0.0 && self.arrow_tolerance.is_finite()) {
            return Err(PipelineError::Config("arrow tolerance must be non-negative".into()));
        }
        if stage >= Stage::Score {
            if self.vectors.is_none() && self.remote_url.is_none() {
                return Err(PipelineError::Config(
                    "no embedding source: pass --vectors or --remote-url".into(),
                ));
            }
            if self.labels.is_none() && self.remote_url.is_none() {
                return Err(PipelineError::Config(
                    "no classifier source: pass --labels or --remote-url".into(),
                ));
            }
        }
        if !(stage >= Stage::Sample && (self.sample_k.is_some() || self.stratified)) {
            return Ok(());
        }
        self.sampler_config().validate().map_err(PipelineError::from)
    }

    fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            k: self.sample_k.unwrap_or(self.sampler.k),
            seed: self.seed,
            ..self.sampler.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub stage: Stage,
    /// Records evaluated after alignment and sampling.
    pub records: usize,
    /// Physician first, then model systems in order.
    pub systems: Vec<String>,
    pub manifest: Manifest,
}

/// Per (record, system) scores. `fidelity` is `None` for the physician.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub record_id: String,
    pub system: SystemId,
    pub fkgl: f64,
    pub gfi: f64,
    pub fidelity: Option<f64>,
    pub profile: AffectProfile,
}

struct Providers {
    vectors: Option<FileVectorStore>,
    labels: Option<FileLabelStore>,
    remote: Option<RemoteProvider>,
}

impl Providers {
    fn open(config: &PipelineConfig) -> Result<Self, PipelineError> {
        let vectors = config
            .vectors
            .as_deref()
            .map(FileVectorStore::load)
            .transpose()
            .map_err(provider_err)?;
        let labels = config
            .labels
            .as_deref()
            .map(FileLabelStore::load)
            .transpose()
            .map_err(provider_err)?;
        let remote = match (&vectors, &labels, &config.remote_url) {
            (Some(_), Some(_), _) | (_, _, None) => None,
            (_, _, Some(url)) => Some(RemoteProvider::connect(url).map_err(provider_err)?),
        };
        Ok(Providers { vectors, labels, remote })
    }

    fn embeddings(&self) -> &dyn EmbeddingProvider {
        match (&self.vectors, &self.remote) {
            (Some(v), _) => v,
            (None, Some(r)) => r,
            (None, None) => unreachable!("validated: an embedding source exists"),
        }
    }

    fn classifier(&self) -> &dyn ClassifierProvider {
        match (&self.labels, &self.remote) {
            (Some(l), _) => l,
            (None, Some(r)) => r,
            (None, None) => unreachable!("validated: a classifier source exists"),
        }
    }
}

fn json_file<T: serde::Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let mut b = serde_json::to_vec_pretty(value).expect("artifact serializes");
    b.push(b'\n');
    b
}

/// Loads the corpus and responses, picks the systems, and resolves gaps.
fn ingest(
    config: &PipelineConfig,
    files: &mut BTreeMap<String, Vec<u8>>,
) -> Result<(Corpus, Vec<SystemId>), PipelineError> {
    let format = match config.corpus_format {
        Some(f) => f,
        None => CorpusFormat::from_path(&config.corpus)?,
    };
    let mut corpus = Corpus::load(&config.corpus, format)?;
    for path in &config.responses {
        for (system, responses) in load_responses(path)? {
            corpus = corpus.attach_responses(system, responses)?;
        }
    }
    let present = corpus.systems();
    let systems: Vec<SystemId> = if config.systems.is_empty() {
        present.clone()
    } else {
        let mut chosen: Vec<SystemId> = config
            .systems
            .iter()
            .filter(|s| !s.is_physician())
            .cloned()
            .collect();
        chosen.sort();
        chosen.dedup();
        if let Some(s) = chosen.iter().find(|s| !present.contains(s)) {
            return Err(PipelineError::Data(format!("system {s} has no responses")));
        }
        chosen
    };

    let alignment = corpus.validate_alignment();
    files.insert("alignment.json".into(), json_file(&alignment));
    let gaps: Vec<&SystemId> = systems
        .iter()
        .filter(|s| !alignment.is_pair_complete(s))
        .collect();
    if !gaps.is_empty() {
        if !config.allow_partial {
            let names: Vec<String> = gaps.iter().map(|s| s.to_string()).collect();
            return Err(PipelineError::Data(format!(
                "systems not pair-complete: {} (use --allow-partial to evaluate the common records)",
                names.join(", ")
            )));
        }
        let covered: Vec<HashSet<&str>> = systems
            .iter()
            .map(|s| {
                alignment
                    .coverage(s)
                    .map(|c| c.covered.iter().map(String::as_str).collect())
                    .unwrap_or_default()
            })
            .collect();
        let common: Vec<String> = corpus
            .records
            .iter()
            .filter(|r| covered.iter().all(|c| c.contains(r.id.as_str())))
            .map(|r| r.id.clone())
            .collect();
        log::warn!(
            "evaluating {} of {} records covered by every selected system",
            common.len(),
            corpus.records.len()
        );
        corpus = corpus.restrict(&common);
        if corpus.records.is_empty() {
            return Err(PipelineError::Data("no record is covered by every selected system".into()));
        }
    }
    files.insert("corpus.jsonl".into(), corpus.to_jsonl().into_bytes());
    Ok((corpus, systems))
}

fn sample(
    config: &PipelineConfig,
    corpus: Corpus,
    files: &mut BTreeMap<String, Vec<u8>>,
) -> Result<Corpus, PipelineError> {
    if config.sample_k.is_none() && !config.stratified {
        return Ok(corpus);
    }
    let sampler = config.sampler_config();
    let selection = if config.stratified {
        stratified_representatives(&corpus, &sampler)?
    } else {
        representative_subset(&corpus, &sampler)?
    };
    files.insert("selection.json".into(), selection.to_json(&sampler).into_bytes());
    log::info!("sampled {} of {} records", selection.chosen_ids.len(), corpus.records.len());
    Ok(corpus.restrict(&selection.chosen_ids))
}

fn score(
    corpus: &Corpus,
    systems: &[SystemId],
    providers: &Providers,
) -> Result<Vec<ScoreRow>, PipelineError> {
    let mut all = vec![SystemId::physician()];
    all.extend(systems.iter().cloned());

    let mut ids: Vec<&str> = corpus.records.iter().map(|r| r.id.as_str()).collect();
    ids.sort();
    let lookups: Vec<_> = all.iter().map(|s| corpus.responses_of(s)).collect();
    let cells: Vec<(&str, usize)> = ids
        .iter()
        .flat_map(|id| (0..all.len()).map(move |si| (*id, si)))
        .filter(|(id, si)| lookups[*si].contains_key(id))
        .collect();
    let readability_scores: Vec<(f64, f64)> = cells
        .par_iter()
        .map(|&(id, si)| {
            readability(&analyze_text(lookups[si][id]))
                .map(|r| (r.fkgl, r.gfi))
                .map_err(|e| PipelineError::Data(format!("record {id}, system {}: {e}", all[si])))
        })
        .collect::<Result<_, _>>()?;

    let fidelity: Vec<FidelityScore> =
        semantic_fidelity_scores(corpus, providers.embeddings(), systems, true)?;
    let fidelity: BTreeMap<(&str, &SystemId), f64> = fidelity
        .iter()
        .map(|f| ((f.record_id.as_str(), &f.system_id), f.score))
        .collect();
    let profiles = profile_corpus(corpus, providers.classifier(), systems, true)?;
    let mut profiles: BTreeMap<(String, SystemId), AffectProfile> = profiles
        .into_iter()
        .map(|p| ((p.record_id.clone(), p.system_id.clone()), p))
        .collect();

    cells
        .iter()
        .zip(readability_scores)
        .map(|(&(id, si), (fkgl, gfi))| {
            let system = all[si].clone();
            let profile = profiles
                .remove(&(id.to_string(), system.clone()))
                .ok_or_else(|| PipelineError::Data(format!("no affect profile for {id}/{system}")))?;
            Ok(ScoreRow {
                record_id: id.to_string(),
                fidelity: fidelity.get(&(id, &system)).copied(),
                system,
                fkgl,
                gfi,
                profile,
            })
        })
        .collect()
}

fn scores_csv(rows: &[ScoreRow]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["record_id", "system", "fkgl", "gfi", "fidelity", "sentiment", "dominant_emotion"])
        .expect("in-memory write");
    for r in rows {
        w.write_record([
            r.record_id.clone(),
            r.system.to_string(),
            r.fkgl.to_string(),
            r.gfi.to_string(),
            r.fidelity.map(|f| f.to_string()).unwrap_or_default(),
            r.profile.sentiment.to_string(),
            r.profile.dominant.to_string(),
        ])
        .expect("in-memory write");
    }
    w.into_inner().expect("flush")
}

/// Metric tables in system order, physician first.
struct Tables {
    fkgl: ScoreTable,
    gfi: ScoreTable,
    fidelity: ScoreTable,
    sentiment: ScoreTable,
    emotion: ScoreTable,
}

fn tables(rows: &[ScoreRow], systems: &[String]) -> Tables {
    let mut t = Tables {
        fkgl: ScoreTable::new(),
        gfi: ScoreTable::new(),
        fidelity: ScoreTable::new(),
        sentiment: ScoreTable::new(),
        emotion: ScoreTable::new(),
    };
    for system in systems {
        for r in rows.iter().filter(|r| &r.system.to_string() == system) {
            let id = r.record_id.as_str();
            t.fkgl.insert(system, id, r.fkgl);
            t.gfi.insert(system, id, r.gfi);
            if let Some(f) = r.fidelity {
                t.fidelity.insert(system, id, f);
            }
            t.sentiment.insert(system, id, r.profile.sentiment.index() as f64);
            let e = emotion_index(r.profile.dominant).expect("taxonomy label");
            t.emotion.insert(system, id, e as f64);
        }
    }
    t
}

fn compare(t: &Tables) -> Result<Vec<NamedMatrix>, PipelineError> {
    let mut out = Vec::new();
    for (metric, table, kind) in [
        ("fkgl", &t.fkgl, CompareKind::TTest),
        ("gfi", &t.gfi, CompareKind::TTest),
        ("fidelity", &t.fidelity, CompareKind::TTest),
        ("sentiment", &t.sentiment, CompareKind::Contingency),
        ("emotion", &t.emotion, CompareKind::Contingency),
    ] {
        if table.systems().len() < 2 {
            log::info!("skipping {metric} comparisons: fewer than two systems");
            continue;
        }
        let matrix: PairwiseMatrix = pairwise_compare(table, kind)?;
        out.push(NamedMatrix {
            metric: metric.into(),
            matrix,
        });
    }
    Ok(out)
}

fn summaries(metric: &str, table: &ScoreTable) -> Result<Vec<MetricSummary>, PipelineError> {
    table
        .systems()
        .iter()
        .map(|s| {
            Ok(MetricSummary {
                metric: metric.into(),
                system: s.clone(),
                summary: descriptive(&table.values(s).expect("listed system"))?,
            })
        })
        .collect()
}

fn violin(metric: &str, table: &ScoreTable) -> ViolinData {
    ViolinData {
        metric: metric.into(),
        systems: table.systems().to_vec(),
        values: table
            .systems()
            .iter()
            .map(|s| (s.clone(), table.values(s).expect("listed system")))
            .collect(),
    }
}

fn build_bundle(
    config: &PipelineConfig,
    systems: &[SystemId],
    rows: &[ScoreRow],
    t: &Tables,
    matrices: Vec<NamedMatrix>,
    extra: BTreeMap<String, Vec<u8>>,
) -> Result<ReportBundle, PipelineError> {
    let mut all = vec![SystemId::physician()];
    all.extend(systems.iter().cloned());
    let profiles: Vec<AffectProfile> = rows.iter().map(|r| r.profile.clone()).collect();

    let sentiment = all
        .iter()
        .map(|s| sentiment_share_table(&profiles, s))
        .collect::<Result<Vec<_>, _>>()?;
    let top_emotions = all
        .iter()
        .map(|s| {
            Ok(TopEmotions {
                system: s.to_string(),
                ranking: top_dominant_emotions(&profiles, s, TOP_EMOTIONS)?
                    .into_iter()
                    .map(|(l, p)| (l.to_string(), p))
                    .collect(),
            })
        })
        .collect::<Result<Vec<_>, AffectError>>()?;

    let mut readability_rows = summaries("fkgl", &t.fkgl)?;
    readability_rows.extend(summaries("gfi", &t.gfi)?);
    let likert = match &config.ratings {
        Some(path) => likert_summary(&load_likert_csv(path)?)?,
        None => Vec::new(),
    };
    let mut violins = vec![violin("fkgl", &t.fkgl), violin("gfi", &t.gfi)];
    if !t.fidelity.systems().is_empty() {
        violins.push(violin("fidelity", &t.fidelity));
    }
    Ok(ReportBundle {
        systems: all.iter().map(|s| s.to_string()).collect(),
        sentiment,
        top_emotions,
        readability: readability_rows,
        fidelity: summaries("fidelity", &t.fidelity)?,
        matrices,
        violins,
        likert,
        arrow_tolerance: config.arrow_tolerance,
        extra,
    })
}

/// Runs every stage up to and including `stage` and writes the artifacts
/// with a manifest into `config.out`.
pub fn run_pipeline(config: &PipelineConfig, stage: Stage) -> Result<PipelineOutcome, PipelineError> {
    config.validate(stage)?;
    match config.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))?
            .install(|| run_stages(config, stage)),
        None => run_stages(config, stage),
    }
}

fn finish(
    stage: Stage,
    out: &Path,
    corpus: &Corpus,
    systems: &[SystemId],
    files: &BTreeMap<String, Vec<u8>>,
) -> Result<PipelineOutcome, PipelineError> {
    let manifest = write_files(files, out)?;
    Ok(outcome(stage, corpus, systems, manifest))
}

fn outcome(stage: Stage, corpus: &Corpus, systems: &[SystemId], manifest: Manifest) -> PipelineOutcome {
    let mut names = vec![SystemId::physician().to_string()];
    names.extend(systems.iter().map(|s| s.to_string()));
    PipelineOutcome {
        stage,
        records: corpus.records.len(),
        systems: names,
        manifest,
    }
}

fn run_stages(config: &PipelineConfig, stage: Stage) -> Result<PipelineOutcome, PipelineError> {
    let mut files = BTreeMap::new();
    let (corpus, systems) = ingest(config, &mut files)?;
    if stage == Stage::Ingest {
        return finish(stage, &config.out, &corpus, &systems, &files);
    }
    let corpus = sample(config, corpus, &mut files)?;
    if stage == Stage::Sample {
        return finish(stage, &config.out, &corpus, &systems, &files);
    }
    let providers = Providers::open(config)?;
    let rows = score(&corpus, &systems, &providers)?;
    files.insert("scores.csv".into(), scores_csv(&rows));
    if stage == Stage::Score {
        return finish(stage, &config.out, &corpus, &systems, &files);
    }
    let mut names = vec![SystemId::physician().to_string()];
    names.extend(systems.iter().map(|s| s.to_string()));
    let t = tables(&rows, &names);
    let matrices = compare(&t)?;
    if stage == Stage::Compare {
        for m in &matrices {
            files.insert(format!("heatmap_{}.csv", m.metric), m.matrix.to_csv().into_bytes());
            files.insert(format!("heatmap_{}.json", m.metric), json_file(&m.matrix));
        }
        return finish(stage, &config.out, &corpus, &systems, &files);
    }
    let bundle = build_bundle(config, &systems, &rows, &t, matrices, files)?;
    let manifest = emit_report(&bundle, &config.out, config.formats)?;
    Ok(outcome(stage, &corpus, &systems, manifest))
}
