//! Presentation layer: two-decimal rendering, baseline comparison arrows,
//! Likert aggregation and the on-disk report bundle.
//!
//! Every file written by [`emit_report`] is a pure function of the bundle, so
//! two runs over the same inputs produce byte-identical directories.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affect::{SentimentLabel, SentimentShares};
use crate::corpus::SystemId;
use crate::hashing::bytes_hash;
use crate::stats::{descriptive, DescriptiveSummary, PairwiseMatrix, StatsError};

pub const DEFAULT_ARROW_TOLERANCE: f64 = 0.005;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("output directory {0} is not writable")]
    Unwritable(String),
    #[error("{table}: system set differs from the bundle (missing: {missing:?}, unexpected: {unexpected:?})")]
    Inconsistent {
        table: String,
        missing: Vec<String>,
        unexpected: Vec<String>,
    },
    #[error("sentiment table has no physician row to compare against")]
    MissingBaseline,
    #[error("no ratings to summarize")]
    EmptyRatings,
    #[error("ratings line {line}: {message}")]
    InvalidRating { line: usize, message: String },
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Rounds half away from zero to 2 decimals. Negative zero becomes zero.
pub fn round2(x: f64) -> f64 {
    let r = (x * 100.0).round() / 100.0;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Renders with exactly 2 decimals after [`round2`].
pub fn fmt2(x: f64) -> String {
    format!("{:.2}", round2(x))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Arrow {
    Up,
    Down,
    Similar,
}

impl Arrow {
    pub fn as_char(self) -> char {
        match self {
            Arrow::Up => 'u',
            Arrow::Down => 'd',
            Arrow::Similar => 's',
        }
    }
}

/// `Similar` iff `|value - baseline| <= tolerance`.
pub fn comparison_arrow(value: f64, baseline: f64, tolerance: f64) -> Arrow {
    let diff = value - baseline;
    if diff.abs() <= tolerance {
        Arrow::Similar
    } else if diff > tolerance {
        Arrow::Up
    } else {
        Arrow::Down
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Criterion {
    Accuracy,
    Style,
    Precision,
    Trust,
    Comprehensibility,
    EmotionalTone,
}

impl Criterion {
    pub const ALL: [Criterion; 6] = [
        Criterion::Accuracy,
        Criterion::Style,
        Criterion::Precision,
        Criterion::Trust,
        Criterion::Comprehensibility,
        Criterion::EmotionalTone,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::Accuracy => "accuracy",
            Criterion::Style => "style",
            Criterion::Precision => "precision",
            Criterion::Trust => "trust",
            Criterion::Comprehensibility => "comprehensibility",
            Criterion::EmotionalTone => "emotional_tone",
        }
    }
}

fn squash(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_alphanumeric())
        .collect::<String>()
        .to_lowercase()
}

impl FromStr for Criterion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = squash(s);
        Criterion::ALL
            .into_iter()
            .find(|c| squash(c.as_str()) == key)
            .ok_or_else(|| format!("unknown criterion \"{s}\""))
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RaterRole {
    Expert,
    Patient,
}

impl RaterRole {
    pub fn as_str(self) -> &'static str {
        match self {
            RaterRole::Expert => "expert",
            RaterRole::Patient => "patient",
        }
    }
}

impl FromStr for RaterRole {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match squash(s).as_str() {
            "expert" | "physician" => Ok(RaterRole::Expert),
            "patient" => Ok(RaterRole::Patient),
            _ => Err(format!("unknown rater role \"{s}\"")),
        }
    }
}

impl fmt::Display for RaterRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LikertRating {
    pub variant: SystemId,
    pub criterion: Criterion,
    pub rater_role: RaterRole,
    score: u8,
}

impl LikertRating {
    pub fn new(
        variant: SystemId,
        criterion: Criterion,
        rater_role: RaterRole,
        score: u8,
    ) -> Result<Self, String> {
        if !(1..=5).contains(&score) {
            return Err(format!("score {score} outside 1..=5"));
        }
        Ok(LikertRating {
            variant,
            criterion,
            rater_role,
            score,
        })
    }

    pub fn score(&self) -> u8 {
        self.score
    }
}

/// Aggregate of one (role, variant, criterion) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LikertCell {
    pub role: RaterRole,
    pub variant: SystemId,
    pub criterion: Criterion,
    pub summary: DescriptiveSummary,
}

impl LikertCell {
    pub fn single_rater(&self) -> bool {
        self.summary.n == 1
    }

    /// Sample std, reported as 0 for single-rater cells.
    pub fn std(&self) -> f64 {
        self.summary.std.unwrap_or(0.0)
    }

    /// `mean ± std` with 2 decimals.
    pub fn render(&self) -> String {
        format!("{} ± {}", fmt2(self.summary.mean), fmt2(self.std()))
    }
}

/// Cells sorted by role, variant, then criterion.
pub fn likert_summary(ratings: &[LikertRating]) -> Result<Vec<LikertCell>, ReportError> {
    if ratings.is_empty() {
        return Err(ReportError::EmptyRatings);
    }
    let mut groups: BTreeMap<(RaterRole, SystemId, Criterion), Vec<f64>> = BTreeMap::new();
    for r in ratings {
        groups
            .entry((r.rater_role, r.variant.clone(), r.criterion))
            .or_default()
            .push(f64::from(r.score));
    }
    groups
        .into_iter()
        .map(|((role, variant, criterion), scores)| {
            Ok(LikertCell {
                role,
                variant,
                criterion,
                summary: descriptive(&scores)?,
            })
        })
        .collect()
}

#[derive(Deserialize)]
struct RatingRow {
    role: String,
    variant: String,
    criterion: String,
    score: String,
}

/// Reads a `role,variant,criterion,score` CSV. Line numbers in errors count
/// the header as line 1.
pub fn load_likert_csv(path: &Path) -> Result<Vec<LikertRating>, ReportError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| ReportError::InvalidRating {
            line: 0,
            message: e.to_string(),
        })?;
    let mut out = Vec::new();
    for (idx, row) in reader.deserialize::<RatingRow>().enumerate() {
        let line = idx + 2;
        let bad = |message: String| ReportError::InvalidRating { line, message };
        let row = row.map_err(|e| bad(e.to_string()))?;
        let role = row.role.parse().map_err(bad)?;
        let variant: SystemId = row.variant.parse().map_err(|e| bad(format!("{e}")))?;
        let criterion = row.criterion.parse().map_err(bad)?;
        let score: u8 = row
            .score
            .parse()
            .map_err(|_| bad(format!("score \"{}\" is not an integer", row.score)))?;
        out.push(LikertRating::new(variant, criterion, role, score).map_err(bad)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopEmotions {
    pub system: String,
    /// `(label, percent of the system's responses)`, most frequent first.
    pub ranking: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSummary {
    pub metric: String,
    pub system: String,
    pub summary: DescriptiveSummary,
}

/// Raw per-record values per system, ready for a violin plot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViolinData {
    #[serde(skip)]
    pub metric: String,
    pub systems: Vec<String>,
    pub values: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NamedMatrix {
    pub metric: String,
    pub matrix: PairwiseMatrix,
}

/// Everything the report directory is built from.
///
/// `systems` lists every system including the physician. Sentiment,
/// emotion, readability tables and matrices must cover exactly that set;
/// fidelity tables and matrices cover it minus the physician.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportBundle {
    pub systems: Vec<String>,
    pub sentiment: Vec<SentimentShares>,
    pub top_emotions: Vec<TopEmotions>,
    pub readability: Vec<MetricSummary>,
    pub fidelity: Vec<MetricSummary>,
    pub matrices: Vec<NamedMatrix>,
    pub violins: Vec<ViolinData>,
    pub likert: Vec<LikertCell>,
    pub arrow_tolerance: f64,
    /// Pre-rendered files written verbatim, keyed by file name.
    pub extra: BTreeMap<String, Vec<u8>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Formats {
    pub csv: bool,
    pub json: bool,
}

impl Default for Formats {
    fn default() -> Self {
        Formats {
            csv: true,
            json: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Files written by one report run, sorted by path. `manifest.json` itself
/// is not listed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn digest(&self) -> String {
        bytes_hash(&manifest_bytes(self))
    }

    pub fn get(&self, path: &str) -> Option<&ManifestEntry> {
        self.files.iter().find(|f| f.path == path)
    }
}

fn manifest_bytes(m: &Manifest) -> Vec<u8> {
    let mut b = serde_json::to_vec_pretty(m).expect("manifest serializes");
    b.push(b'\n');
    b
}

fn check_set<'a>(
    table: &str,
    expected: &[&str],
    found: impl IntoIterator<Item = &'a str>,
) -> Result<(), ReportError> {
    let found: Vec<&str> = found.into_iter().collect();
    let missing: Vec<String> = expected
        .iter()
        .filter(|s| !found.contains(s))
        .map(|s| s.to_string())
        .collect();
    let unexpected: Vec<String> = found
        .iter()
        .filter(|s| !expected.contains(s))
        .map(|s| s.to_string())
        .collect();
    if missing.is_empty() && unexpected.is_empty() {
        Ok(())
    } else {
        Err(ReportError::Inconsistent {
            table: table.to_string(),
            missing,
            unexpected,
        })
    }
}

impl ReportBundle {
    fn model_systems(&self) -> Vec<&str> {
        self.systems
            .iter()
            .map(String::as_str)
            .filter(|s| *s != crate::corpus::PHYSICIAN_LABEL)
            .collect()
    }

    fn expected_for(&self, metric: &str) -> Vec<&str> {
        if metric == "fidelity" {
            self.model_systems()
        } else {
            self.systems.iter().map(String::as_str).collect()
        }
    }

    pub fn check_consistency(&self) -> Result<(), ReportError> {
        let all: Vec<&str> = self.systems.iter().map(String::as_str).collect();
        if !self.sentiment.is_empty() {
            let names: Vec<String> = self.sentiment.iter().map(|s| s.system.to_string()).collect();
            check_set("sentiment_table", &all, names.iter().map(String::as_str))?;
        }
        if !self.top_emotions.is_empty() {
            check_set("top_emotions", &all, self.top_emotions.iter().map(|t| t.system.as_str()))?;
        }
        let mut metrics: Vec<&str> = self.readability.iter().map(|m| m.metric.as_str()).collect();
        metrics.dedup();
        for metric in metrics {
            check_set(
                &format!("readability_summary[{metric}]"),
                &all,
                self.readability
                    .iter()
                    .filter(|m| m.metric == metric)
                    .map(|m| m.system.as_str()),
            )?;
        }
        if !self.fidelity.is_empty() {
            check_set(
                "fidelity_summary",
                &self.model_systems(),
                self.fidelity.iter().map(|m| m.system.as_str()),
            )?;
        }
        for m in &self.matrices {
            check_set(
                &format!("heatmap_{}", m.metric),
                &self.expected_for(&m.metric),
                m.matrix.labels.iter().map(String::as_str),
            )?;
        }
        for v in &self.violins {
            let table = format!("violin_{}", v.metric);
            let expected = self.expected_for(&v.metric);
            check_set(&table, &expected, v.systems.iter().map(String::as_str))?;
            check_set(&table, &expected, v.values.keys().map(String::as_str))?;
        }
        Ok(())
    }
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    w.into_inner().expect("flush")
}

fn json_bytes<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let mut b = serde_json::to_vec_pretty(value).expect("report data serializes");
    b.push(b'\n');
    b
}

fn sentiment_rows(bundle: &ReportBundle) -> Result<Vec<Vec<String>>, ReportError> {
    let baseline = bundle
        .sentiment
        .iter()
        .find(|s| s.system.is_physician())
        .ok_or(ReportError::MissingBaseline)?
        .rounded();
    Ok(bundle
        .sentiment
        .iter()
        .map(|s| {
            let shown = s.rounded();
            let mut row = vec![s.system.to_string()];
            row.extend(shown.iter().map(|v| fmt2(*v)));
            row.push(
                shown
                    .iter()
                    .zip(baseline)
                    .map(|(v, b)| comparison_arrow(*v, b, bundle.arrow_tolerance).as_char())
                    .collect(),
            );
            row
        })
        .collect())
}

fn summary_cells(s: &DescriptiveSummary) -> [String; 3] {
    [
        s.n.to_string(),
        fmt2(s.mean),
        s.std.map(fmt2).unwrap_or_default(),
    ]
}

/// Renders every artifact into memory, keyed by relative file name.
pub fn render_report(
    bundle: &ReportBundle,
    formats: Formats,
) -> Result<BTreeMap<String, Vec<u8>>, ReportError> {
    bundle.check_consistency()?;
    let mut files = BTreeMap::new();

    if !bundle.sentiment.is_empty() {
        let rows = sentiment_rows(bundle)?;
        if formats.csv {
            let mut header = vec!["system"];
            let names: Vec<String> = SentimentLabel::ALL
                .iter()
                .map(|l| l.display_name().to_lowercase().replace(' ', "_"))
                .collect();
            header.extend(names.iter().map(String::as_str));
            header.push("arrows");
            files.insert("sentiment_table.csv".into(), csv_bytes(&header, &rows));
        }
        if formats.json {
            files.insert("sentiment_table.json".into(), json_bytes(&bundle.sentiment));
        }
    }

    if !bundle.top_emotions.is_empty() {
        if formats.csv {
            let rows: Vec<Vec<String>> = bundle
                .top_emotions
                .iter()
                .flat_map(|t| {
                    t.ranking.iter().enumerate().map(move |(i, (label, share))| {
                        vec![t.system.clone(), (i + 1).to_string(), label.clone(), fmt2(*share)]
                    })
                })
                .collect();
            files.insert(
                "top_emotions.csv".into(),
                csv_bytes(&["system", "rank", "emotion", "percent"], &rows),
            );
        }
        if formats.json {
            files.insert("top_emotions.json".into(), json_bytes(&bundle.top_emotions));
        }
    }

    for (name, table) in [
        ("readability_summary", &bundle.readability),
        ("fidelity_summary", &bundle.fidelity),
    ] {
        if table.is_empty() {
            continue;
        }
        if formats.csv {
            let rows: Vec<Vec<String>> = table
                .iter()
                .map(|m| {
                    let mut row = vec![m.metric.clone(), m.system.clone()];
                    row.extend(summary_cells(&m.summary));
                    row
                })
                .collect();
            files.insert(
                format!("{name}.csv"),
                csv_bytes(&["metric", "system", "n", "mean", "std"], &rows),
            );
        }
        if formats.json {
            files.insert(format!("{name}.json"), json_bytes(table));
        }
    }

    // Plot bundles are JSON regardless of the table formats.
    for m in &bundle.matrices {
        if formats.csv {
            files.insert(format!("heatmap_{}.csv", m.metric), m.matrix.to_csv().into_bytes());
        }
        files.insert(format!("heatmap_{}.json", m.metric), json_bytes(&m.matrix));
    }
    for v in &bundle.violins {
        files.insert(format!("violin_{}.json", v.metric), json_bytes(v));
    }

    if !bundle.likert.is_empty() {
        if formats.csv {
            let rows: Vec<Vec<String>> = bundle
                .likert
                .iter()
                .map(|c| {
                    vec![
                        c.role.to_string(),
                        c.variant.to_string(),
                        c.criterion.to_string(),
                        c.summary.n.to_string(),
                        fmt2(c.summary.mean),
                        fmt2(c.std()),
                        if c.single_rater() { "single_rater" } else { "" }.to_string(),
                    ]
                })
                .collect();
            files.insert(
                "likert.csv".into(),
                csv_bytes(
                    &["role", "variant", "criterion", "n", "mean", "std", "flags"],
                    &rows,
                ),
            );
        }
        if formats.json {
            files.insert("likert.json".into(), json_bytes(&bundle.likert));
        }
    }
    for (name, bytes) in &bundle.extra {
        files.insert(name.clone(), bytes.clone());
    }
    Ok(files)
}

/// Writes the bundle into `out_dir` plus a `manifest.json` listing every
/// file with its SHA-256.
pub fn emit_report(
    bundle: &ReportBundle,
    out_dir: &Path,
    formats: Formats,
) -> Result<Manifest, ReportError> {
    write_files(&render_report(bundle, formats)?, out_dir)
}

/// Writes `files` into `out_dir` plus a `manifest.json` that lists them.
pub fn write_files(files: &BTreeMap<String, Vec<u8>>, out_dir: &Path) -> Result<Manifest, ReportError> {
    fs::create_dir_all(out_dir).map_err(|_| ReportError::Unwritable(out_dir.display().to_string()))?;
    let write = |path: PathBuf, bytes: &[u8]| {
        fs::write(&path, bytes).map_err(|source| {
            if source.kind() == std::io::ErrorKind::PermissionDenied {
                ReportError::Unwritable(out_dir.display().to_string())
            } else {
                ReportError::Io {
                    path: path.display().to_string(),
                    source,
                }
            }
        })
    };
    let mut entries = Vec::with_capacity(files.len());
    for (name, bytes) in files {
        write(out_dir.join(name), bytes)?;
        entries.push(ManifestEntry {
            path: name.clone(),
            sha256: bytes_hash(bytes),
            bytes: bytes.len(),
        });
    }
    let manifest = Manifest { files: entries };
    write(out_dir.join("manifest.json"), &manifest_bytes(&manifest))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SystemMode;
    use crate::stats::{pairwise_compare, CompareKind, ScoreTable};
    use proptest::prelude::*;

    fn sys(model: &str, mode: SystemMode) -> SystemId {
        SystemId::new(model, mode)
    }

    #[test]
    fn fmt2_rounding() {
        assert_eq!(fmt2(37.254901960784316), "37.25");
        assert_eq!(fmt2(13.725490196078432), "13.73");
        assert_eq!(fmt2(-0.001), "0.00");
        assert_eq!(fmt2(-0.0), "0.00");
        assert_eq!(fmt2(2.0), "2.00");
        assert_eq!(fmt2(-2.0), "-2.00");
    }

    #[test]
    fn arrow_examples() {
        let t = DEFAULT_ARROW_TOLERANCE;
        assert_eq!(comparison_arrow(13.73, 13.73, t), Arrow::Similar);
        assert_eq!(comparison_arrow(43.14, 37.25, t), Arrow::Up);
        assert_eq!(comparison_arrow(0.00, 37.25, t), Arrow::Down);
        assert_eq!(comparison_arrow(13.74, 13.73, t), Arrow::Up);
    }

    fn rating(role: RaterRole, c: Criterion, score: u8) -> LikertRating {
        LikertRating::new(SystemId::physician(), c, role, score).unwrap()
    }

    #[test]
    fn likert_examples() {
        let cells = likert_summary(&[
            rating(RaterRole::Expert, Criterion::Accuracy, 5),
            rating(RaterRole::Expert, Criterion::Accuracy, 5),
        ])
        .unwrap();
        assert_eq!(cells[0].render(), "5.00 ± 0.00");

        let cells = likert_summary(&[
            rating(RaterRole::Expert, Criterion::Accuracy, 3),
            rating(RaterRole::Expert, Criterion::Accuracy, 5),
        ])
        .unwrap();
        assert_eq!(cells[0].render(), "4.00 ± 1.41");

        let cells = likert_summary(
            &[4, 5, 4, 5].map(|s| rating(RaterRole::Patient, Criterion::Trust, s)),
        )
        .unwrap();
        assert_eq!(cells[0].render(), "4.50 ± 0.58");

        let cells = likert_summary(&[rating(RaterRole::Patient, Criterion::Style, 2)]).unwrap();
        assert!(cells[0].single_rater());
        assert_eq!(cells[0].render(), "2.00 ± 0.00");

        assert!(matches!(likert_summary(&[]), Err(ReportError::EmptyRatings)));
        assert!(LikertRating::new(SystemId::physician(), Criterion::Trust, RaterRole::Expert, 6).is_err());
    }

    #[test]
    fn likert_cells_are_grouped_and_sorted() {
        let m = sys("GPT-4", SystemMode::Empathy);
        let ratings = vec![
            LikertRating::new(m.clone(), Criterion::Trust, RaterRole::Patient, 4).unwrap(),
            rating(RaterRole::Expert, Criterion::Style, 3),
            LikertRating::new(m.clone(), Criterion::Trust, RaterRole::Patient, 2).unwrap(),
            rating(RaterRole::Expert, Criterion::Accuracy, 4),
        ];
        let cells = likert_summary(&ratings).unwrap();
        let keys: Vec<_> = cells
            .iter()
            .map(|c| (c.role, c.variant.to_string(), c.criterion))
            .collect();
        assert_eq!(
            keys,
            vec![
                (RaterRole::Expert, "Physician Answer".into(), Criterion::Accuracy),
                (RaterRole::Expert, "Physician Answer".into(), Criterion::Style),
                (RaterRole::Patient, "GPT-4_Empathy".into(), Criterion::Trust),
            ]
        );
    }

    #[test]
    fn likert_csv_loading() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        fs::write(
            &p,
            "role,variant,criterion,score\nexpert,Physician Answer,Accuracy,5\npatient,GPT-4_Base,Emotional Tone,3\n",
        )
        .unwrap();
        let r = load_likert_csv(&p).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[1].criterion, Criterion::EmotionalTone);
        assert_eq!(r[1].variant, sys("GPT-4", SystemMode::Base));

        fs::write(&p, "role,variant,criterion,score\nexpert,Physician Answer,Accuracy,7\n").unwrap();
        match load_likert_csv(&p) {
            Err(ReportError::InvalidRating { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn fixture_bundle() -> ReportBundle {
        let phys = SystemId::physician();
        let a = sys("Alpha", SystemMode::Base);
        let b = sys("Beta", SystemMode::Empathy);
        let systems: Vec<String> = [&phys, &a, &b].iter().map(|s| s.to_string()).collect();
        let mut fk = ScoreTable::new();
        for (s, vals) in [(&phys, [10.0, 11.0, 12.5]), (&a, [8.0, 9.5, 9.0]), (&b, [12.0, 13.0, 12.0])] {
            for (i, v) in vals.iter().enumerate() {
                fk.insert(&s.to_string(), &format!("r{i}"), *v);
            }
        }
        let matrix = pairwise_compare(&fk, CompareKind::TTest).unwrap();
        let violin = ViolinData {
            metric: "fkgl".into(),
            systems: systems.clone(),
            values: systems.iter().map(|s| (s.clone(), fk.values(s).unwrap())).collect(),
        };
        ReportBundle {
            systems: systems.clone(),
            sentiment: vec![
                SentimentShares::from_counts(phys.clone(), [19, 7, 25, 0, 0]).unwrap(),
                SentimentShares::from_counts(a.clone(), [22, 7, 22, 0, 0]).unwrap(),
                SentimentShares::from_counts(b.clone(), [0, 0, 40, 11, 0]).unwrap(),
            ],
            top_emotions: systems
                .iter()
                .map(|s| TopEmotions {
                    system: s.clone(),
                    ranking: vec![("neutral".into(), 60.0), ("caring".into(), 40.0)],
                })
                .collect(),
            readability: systems
                .iter()
                .map(|s| MetricSummary {
                    metric: "fkgl".into(),
                    system: s.clone(),
                    summary: descriptive(&fk.values(s).unwrap()).unwrap(),
                })
                .collect(),
            fidelity: vec![
                MetricSummary {
                    metric: "fidelity".into(),
                    system: a.to_string(),
                    summary: descriptive(&[0.9, 0.8]).unwrap(),
                },
                MetricSummary {
                    metric: "fidelity".into(),
                    system: b.to_string(),
                    summary: descriptive(&[0.7]).unwrap(),
                },
            ],
            matrices: vec![NamedMatrix {
                metric: "fkgl".into(),
                matrix,
            }],
            violins: vec![violin],
            likert: likert_summary(&[
                rating(RaterRole::Expert, Criterion::Accuracy, 3),
                rating(RaterRole::Expert, Criterion::Accuracy, 5),
            ])
            .unwrap(),
            arrow_tolerance: DEFAULT_ARROW_TOLERANCE,
            extra: BTreeMap::new(),
        }
    }

    #[test]
    fn sentiment_table_rows_and_arrows() {
        let files = render_report(&fixture_bundle(), Formats::default()).unwrap();
        let csv = String::from_utf8(files["sentiment_table.csv"].clone()).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(
            lines[0],
            "system,very_negative,negative,neutral,positive,very_positive,arrows"
        );
        assert_eq!(lines[1], "Physician Answer,37.25,13.73,49.02,0.00,0.00,sssss");
        assert_eq!(lines[2], "Alpha_Base,43.14,13.73,43.14,0.00,0.00,usdss");
        assert_eq!(lines[3], "Beta_Empathy,0.00,0.00,78.43,21.57,0.00,dduus");
    }

    #[test]
    fn emitted_directory_is_byte_stable() {
        let bundle = fixture_bundle();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let m1 = emit_report(&bundle, d1.path(), Formats::default()).unwrap();
        let m2 = emit_report(&bundle, d2.path(), Formats::default()).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(m1.digest(), m2.digest());
        for f in &m1.files {
            let bytes = fs::read(d1.path().join(&f.path)).unwrap();
            assert_eq!(bytes_hash(&bytes), f.sha256);
        }
        for name in [
            "sentiment_table.csv",
            "top_emotions.csv",
            "readability_summary.csv",
            "fidelity_summary.csv",
            "heatmap_fkgl.csv",
            "heatmap_fkgl.json",
            "violin_fkgl.json",
            "likert.csv",
        ] {
            assert!(m1.get(name).is_some(), "{name}");
        }
        assert!(d1.path().join("manifest.json").exists());
    }

    #[test]
    fn violin_schema() {
        let files = render_report(&fixture_bundle(), Formats::default()).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&files["violin_fkgl.json"]).unwrap();
        assert_eq!(v["systems"][0], "Physician Answer");
        assert_eq!(v["values"]["Alpha_Base"].as_array().unwrap().len(), 3);
    }

    #[test]
    fn missing_system_is_reported() {
        let mut bundle = fixture_bundle();
        bundle.top_emotions.pop();
        match render_report(&bundle, Formats::default()) {
            Err(ReportError::Inconsistent { table, missing, .. }) => {
                assert_eq!(table, "top_emotions");
                assert_eq!(missing, vec!["Beta_Empathy".to_string()]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_baseline_is_reported() {
        let mut bundle = fixture_bundle();
        bundle.systems.remove(0);
        bundle.sentiment.remove(0);
        bundle.top_emotions.remove(0);
        bundle.readability.remove(0);
        bundle.matrices.clear();
        bundle.violins.clear();
        assert!(matches!(
            render_report(&bundle, Formats::default()),
            Err(ReportError::MissingBaseline)
        ));
    }

    #[test]
    fn unwritable_directory() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, b"x").unwrap();
        let r = emit_report(&fixture_bundle(), &blocker.join("out"), Formats::default());
        assert!(matches!(r, Err(ReportError::Unwritable(_))));
    }

    #[test]
    fn csv_only_skips_table_json() {
        let files = render_report(&fixture_bundle(), Formats { csv: true, json: false }).unwrap();
        assert!(files.contains_key("sentiment_table.csv"));
        assert!(!files.contains_key("sentiment_table.json"));
        assert!(files.contains_key("heatmap_fkgl.json"));
    }

    proptest! {
        #[test]
        fn arrow_antisymmetry(v in -1e3f64..1e3, b in -1e3f64..1e3) {
            let fwd = comparison_arrow(v, b, DEFAULT_ARROW_TOLERANCE);
            let back = comparison_arrow(b, v, DEFAULT_ARROW_TOLERANCE);
            let expected = match fwd {
                Arrow::Up => Arrow::Down,
                Arrow::Down => Arrow::Up,
                Arrow::Similar => Arrow::Similar,
            };
            prop_assert_eq!(back, expected);
        }

        #[test]
        fn fmt2_reparse_is_stable(x in -1e6f64..1e6) {
            let s = fmt2(x);
            let dot = s.find('.').unwrap();
            prop_assert_eq!(s.len() - dot - 1, 2);
            prop_assert_eq!(fmt2(s.parse::<f64>().unwrap()), s);
        }

        #[test]
        fn likert_cells_within_bounds(scores in proptest::collection::vec(1u8..=5, 1..20)) {
            let ratings: Vec<_> = scores.iter().map(|s| rating(RaterRole::Patient, Criterion::Trust, *s)).collect();
            for c in likert_summary(&ratings).unwrap() {
                prop_assert!((1.0..=5.0).contains(&c.summary.mean));
                prop_assert!(c.std() >= 0.0 && c.std() <= 8f64.sqrt() + 1e-12);
            }
        }
    }
}
