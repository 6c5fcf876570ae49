//! Question–answer corpora with system-labeled response variants.
//!
//! A [`Corpus`] holds one physician reference answer per question and any
//! number of candidate answers keyed by [`SystemId`]. Corpora are loaded from
//! JSONL or CSV exports, responses are attached per system, and
//! [`Corpus::validate_alignment`] reports which systems are pair-complete.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: missing required field \"{field}\"")]
    MissingField { line: usize, field: String },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate record id: {0}")]
    DuplicateId(String),
    #[error("unknown record ids: {}", .0.join(", "))]
    UnknownIds(Vec<String>),
    #[error("responses for {system} already attached for ids: {}", .ids.join(", "))]
    Conflict { system: String, ids: Vec<String> },
    #[error("invalid system id \"{0}\"")]
    InvalidSystem(String),
    #[error("invalid severity label \"{0}\"")]
    InvalidSeverity(String),
    #[error("unsupported corpus format \"{0}\" (expected jsonl or csv)")]
    UnsupportedFormat(String),
}

/// Generation configuration a candidate answer was produced under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SystemMode {
    Physician,
    Base,
    Empathy,
    Rephrase,
}

impl SystemMode {
    fn as_str(self) -> &'static str {
        match self {
            SystemMode::Physician => "Physician",
            SystemMode::Base => "Base",
            SystemMode::Empathy => "Empathy",
            SystemMode::Rephrase => "Rephrase",
        }
    }
}

/// A model/configuration pair such as `GPT5_Base`.
///
/// The physician reference is represented by [`SystemId::physician`] and
/// renders as `Physician Answer`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SystemId {
    pub model: String,
    pub mode: SystemMode,
}

pub const PHYSICIAN_LABEL: &str = "Physician Answer";

impl SystemId {
    pub fn new(model: impl Into<String>, mode: SystemMode) -> Self {
        SystemId {
            model: model.into(),
            mode,
        }
    }

    pub fn physician() -> Self {
        SystemId {
            model: String::new(),
            mode: SystemMode::Physician,
        }
    }

    pub fn is_physician(&self) -> bool {
        self.mode == SystemMode::Physician
    }
}

impl fmt::Display for SystemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_physician() {
            f.write_str(PHYSICIAN_LABEL)
        } else {
            write!(f, "{}_{}", self.model, self.mode.as_str())
        }
    }
}

impl FromStr for SystemId {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.eq_ignore_ascii_case(PHYSICIAN_LABEL) {
            return Ok(SystemId::physician());
        }
        let (model, mode) = s
            .rsplit_once('_')
            .ok_or_else(|| CorpusError::InvalidSystem(s.to_string()))?;
        let mode = match mode.to_ascii_lowercase().as_str() {
            "base" => SystemMode::Base,
            "empathy" => SystemMode::Empathy,
            "rephrase" => SystemMode::Rephrase,
            _ => return Err(CorpusError::InvalidSystem(s.to_string())),
        };
        if model.is_empty() {
            return Err(CorpusError::InvalidSystem(s.to_string()));
        }
        Ok(SystemId::new(model, mode))
    }
}

// Physician first, then grouped by model, then Base < Empathy < Rephrase.
impl Ord for SystemId {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (!self.is_physician(), &self.model, self.mode).cmp(&(
            !other.is_physician(),
            &other.model,
            other.mode,
        ))
    }
}

impl PartialOrd for SystemId {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Serialize for SystemId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SystemId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Five-level triage label used to stratify consultation corpora.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SeverityLabel {
    White,
    Green,
    Yellow,
    Orange,
    Red,
}

impl SeverityLabel {
    pub const ALL: [SeverityLabel; 5] = [
        SeverityLabel::White,
        SeverityLabel::Green,
        SeverityLabel::Yellow,
        SeverityLabel::Orange,
        SeverityLabel::Red,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SeverityLabel::White => "White",
            SeverityLabel::Green => "Green",
            SeverityLabel::Yellow => "Yellow",
            SeverityLabel::Orange => "Orange",
            SeverityLabel::Red => "Red",
        }
    }
}

impl fmt::Display for SeverityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SeverityLabel {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        SeverityLabel::ALL
            .into_iter()
            .find(|l| l.as_str().eq_ignore_ascii_case(t))
            .ok_or_else(|| CorpusError::InvalidSeverity(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QARecord {
    pub id: String,
    pub question: String,
    pub reference_answer: String,
    pub source: String,
    pub severity: Option<SeverityLabel>,
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseVariant {
    pub record_id: String,
    pub system_id: SystemId,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Jsonl,
    Csv,
}

impl CorpusFormat {
    /// Picks the format from a file extension (`.jsonl`/`.json` or `.csv`).
    pub fn from_path(path: &Path) -> Result<Self, CorpusError> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .unwrap_or_default()
            .to_ascii_lowercase();
        ext.parse()
    }
}

impl FromStr for CorpusFormat {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Ok(CorpusFormat::Jsonl),
            "csv" => Ok(CorpusFormat::Csv),
            other => Err(CorpusError::UnsupportedFormat(other.to_string())),
        }
    }
}

/// Per-system coverage of the corpus record ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SystemCoverage {
    pub system: SystemId,
    pub covered: Vec<String>,
    pub missing: Vec<String>,
    pub pair_complete: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AlignmentReport {
    pub records: usize,
    pub systems: Vec<SystemCoverage>,
}

impl AlignmentReport {
    pub fn coverage(&self, system: &SystemId) -> Option<&SystemCoverage> {
        self.systems.iter().find(|c| &c.system == system)
    }

    pub fn is_pair_complete(&self, system: &SystemId) -> bool {
        system.is_physician() || self.coverage(system).is_some_and(|c| c.pair_complete)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub name: String,
    pub records: Vec<QARecord>,
    pub variants: Vec<ResponseVariant>,
}

#[derive(Deserialize)]
struct JsonRow {
    id: Option<String>,
    question: Option<String>,
    answer: Option<String>,
    source: Option<String>,
    severity: Option<String>,
    #[serde(default)]
    meta: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct JsonRowOut<'a> {
    id: &'a str,
    question: &'a str,
    answer: &'a str,
    source: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    severity: Option<&'static str>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    meta: &'a BTreeMap<String, String>,
}

#[derive(Deserialize)]
struct ResponseRow {
    id: Option<String>,
    system: Option<String>,
    text: Option<String>,
}

fn strip_bom(s: &str) -> &str {
    s.strip_prefix('\u{feff}').unwrap_or(s)
}

fn read_text(path: &Path) -> Result<String, CorpusError> {
    let raw = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(strip_bom(&raw).to_string())
}

fn required(value: Option<String>, line: usize, field: &str) -> Result<String, CorpusError> {
    value.ok_or_else(|| CorpusError::MissingField {
        line,
        field: field.to_string(),
    })
}

fn build_record(
    line: usize,
    id: Option<String>,
    question: Option<String>,
    answer: Option<String>,
    source: Option<String>,
    severity: Option<String>,
    metadata: BTreeMap<String, String>,
) -> Result<QARecord, CorpusError> {
    let id = required(id, line, "id")?.trim().to_string();
    let question = required(question, line, "question")?.trim().to_string();
    let answer = required(answer, line, "answer")?.trim().to_string();
    if id.is_empty() {
        return Err(CorpusError::Malformed {
            line,
            message: "empty id".into(),
        });
    }
    if answer.is_empty() {
        return Err(CorpusError::Malformed {
            line,
            message: format!("empty answer for record {id}"),
        });
    }
    let severity = match severity.as_deref().map(str::trim) {
        None | Some("") => None,
        Some(s) => Some(s.parse().map_err(|_| CorpusError::Malformed {
            line,
            message: format!("invalid severity label \"{s}\""),
        })?),
    };
    Ok(QARecord {
        id,
        question,
        reference_answer: answer,
        source: source.map(|s| s.trim().to_string()).unwrap_or_default(),
        severity,
        metadata,
    })
}

impl Corpus {
    pub fn new(name: impl Into<String>, records: Vec<QARecord>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(CorpusError::DuplicateId(r.id.clone()));
            }
        }
        Ok(Corpus {
            name: name.into(),
            records,
            variants: Vec::new(),
        })
    }

    /// Loads a corpus export. Record order follows the file.
    pub fn load(path: &Path, format: CorpusFormat) -> Result<Self, CorpusError> {
        let text = read_text(path)?;
        let records = match format {
            CorpusFormat::Jsonl => parse_jsonl(&text)?,
            CorpusFormat::Csv => parse_csv(&text)?,
        };
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("corpus")
            .to_string();
        Corpus::new(name, records)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let row = JsonRowOut {
                id: &r.id,
                question: &r.question,
                answer: &r.reference_answer,
                source: &r.source,
                severity: r.severity.map(SeverityLabel::as_str),
                meta: &r.metadata,
            };
            out.push_str(&serde_json::to_string(&row).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), CorpusError> {
        let mut f = fs::File::create(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        f.write_all(self.to_jsonl().as_bytes())
            .map_err(|source| CorpusError::Io {
                path: path.display().to_string(),
                source,
            })
    }

    pub fn record(&self, id: &str) -> Option<&QARecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Attaches one system's responses. Existing `(id, system)` pairs are
    /// never overwritten.
    pub fn attach_responses(
        mut self,
        system_id: SystemId,
        responses: BTreeMap<String, String>,
    ) -> Result<Self, CorpusError> {
        if system_id.is_physician() {
            return Err(CorpusError::InvalidSystem(system_id.to_string()));
        }
        let ids: HashSet<&str> = self.records.iter().map(|r| r.id.as_str()).collect();
        let unknown: Vec<String> = responses
            .keys()
            .filter(|k| !ids.contains(k.as_str()))
            .cloned()
            .collect();
        if !unknown.is_empty() {
            return Err(CorpusError::UnknownIds(unknown));
        }
        let existing: HashSet<&str> = self
            .variants
            .iter()
            .filter(|v| v.system_id == system_id)
            .map(|v| v.record_id.as_str())
            .collect();
        let conflicts: Vec<String> = responses
            .keys()
            .filter(|k| existing.contains(k.as_str()))
            .cloned()
            .collect();
        if !conflicts.is_empty() {
            return Err(CorpusError::Conflict {
                system: system_id.to_string(),
                ids: conflicts,
            });
        }
        self.variants
            .extend(responses.into_iter().map(|(record_id, text)| ResponseVariant {
                record_id,
                system_id: system_id.clone(),
                text: text.trim().to_string(),
            }));
        Ok(self)
    }

    /// Distinct non-physician systems, in [`SystemId`] order.
    pub fn systems(&self) -> Vec<SystemId> {
        let set: BTreeSet<&SystemId> = self.variants.iter().map(|v| &v.system_id).collect();
        set.into_iter().cloned().collect()
    }

    pub fn response(&self, record_id: &str, system: &SystemId) -> Option<&str> {
        if system.is_physician() {
            return self.record(record_id).map(|r| r.reference_answer.as_str());
        }
        self.variants
            .iter()
            .find(|v| v.record_id == record_id && &v.system_id == system)
            .map(|v| v.text.as_str())
    }

    /// Record id to response text for one system, for repeated lookups.
    pub fn responses_of(&self, system: &SystemId) -> HashMap<&str, &str> {
        if system.is_physician() {
            return self
                .records
                .iter()
                .map(|r| (r.id.as_str(), r.reference_answer.as_str()))
                .collect();
        }
        self.variants
            .iter()
            .filter(|v| &v.system_id == system)
            .map(|v| (v.record_id.as_str(), v.text.as_str()))
            .collect()
    }

    pub fn validate_alignment(&self) -> AlignmentReport {
        let mut by_system: BTreeMap<&SystemId, HashSet<&str>> = BTreeMap::new();
        for v in &self.variants {
            by_system
                .entry(&v.system_id)
                .or_default()
                .insert(v.record_id.as_str());
        }
        let systems = by_system
            .into_iter()
            .map(|(system, ids)| {
                let (covered, missing): (Vec<&QARecord>, Vec<&QARecord>) =
                    self.records.iter().partition(|r| ids.contains(r.id.as_str()));
                SystemCoverage {
                    system: system.clone(),
                    pair_complete: covered.len() == self.records.len(),
                    covered: covered.into_iter().map(|r| r.id.clone()).collect(),
                    missing: missing.into_iter().map(|r| r.id.clone()).collect(),
                }
            })
            .collect();
        AlignmentReport {
            records: self.records.len(),
            systems,
        }
    }

    /// Sub-corpus restricted to `ids`, keeping the original record order.
    pub fn restrict(&self, ids: &[String]) -> Corpus {
        let keep: HashSet<&str> = ids.iter().map(String::as_str).collect();
        Corpus {
            name: self.name.clone(),
            records: self
                .records
                .iter()
                .filter(|r| keep.contains(r.id.as_str()))
                .cloned()
                .collect(),
            variants: self
                .variants
                .iter()
                .filter(|v| keep.contains(v.record_id.as_str()))
                .cloned()
                .collect(),
        }
    }
}

fn parse_jsonl(text: &str) -> Result<Vec<QARecord>, CorpusError> {
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let row: JsonRow = serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        records.push(build_record(
            line_no,
            row.id,
            row.question,
            row.answer,
            row.source,
            row.severity,
            row.meta,
        )?);
    }
    Ok(records)
}

fn parse_csv(text: &str) -> Result<Vec<QARecord>, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| CorpusError::Malformed {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name))
    };
    let (id_col, q_col, a_col) = (column("id"), column("question"), column("answer"));
    let (src_col, sev_col) = (column("source"), column("severity"));
    for (col, name) in [(id_col, "id"), (q_col, "question"), (a_col, "answer")] {
        if col.is_none() {
            return Err(CorpusError::MissingField {
                line: 1,
                field: name.to_string(),
            });
        }
    }

    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| CorpusError::Malformed {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        let get = |col: Option<usize>| col.and_then(|c| row.get(c)).map(str::to_string);
        // A blank cell in a required column is as good as missing.
        let nonblank = |col: Option<usize>| get(col).filter(|v| !v.trim().is_empty());
        records.push(build_record(
            line,
            nonblank(id_col),
            get(q_col),
            nonblank(a_col),
            get(src_col),
            get(sev_col),
            BTreeMap::new(),
        )?);
    }
    Ok(records)
}

/// Reads a response file (`{"id", "system", "text"}` per line) grouped by
/// system.
pub fn load_responses(
    path: &Path,
) -> Result<BTreeMap<SystemId, BTreeMap<String, String>>, CorpusError> {
    let text = read_text(path)?;
    let mut out: BTreeMap<SystemId, BTreeMap<String, String>> = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let row: ResponseRow = serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        let id = required(row.id, line_no, "id")?;
        let system: SystemId = required(row.system, line_no, "system")?
            .parse()
            .map_err(|e: CorpusError| CorpusError::Malformed {
                line: line_no,
                message: e.to_string(),
            })?;
        let text = required(row.text, line_no, "text")?;
        let per_system = out.entry(system.clone()).or_default();
        if per_system.insert(id.clone(), text).is_some() {
            return Err(CorpusError::Conflict {
                system: system.to_string(),
                ids: vec![id],
            });
        }
    }
    Ok(out)
}
