//! Affective profiles: a five-class sentiment label plus a 28-emotion
//! distribution per response, and the per-system tables built from them.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, SystemId};
use crate::hashing::content_hash;
use crate::semantic::{ProviderError, DEFAULT_BATCH};

/// Emotion taxonomy, in the classifier's output order.
pub const EMOTION_LABELS: [&str; 28] = [
    "admiration",
    "amusement",
    "anger",
    "annoyance",
    "approval",
    "caring",
    "confusion",
    "curiosity",
    "desire",
    "disappointment",
    "disapproval",
    "disgust",
    "embarrassment",
    "excitement",
    "fear",
    "gratitude",
    "grief",
    "joy",
    "love",
    "nervousness",
    "optimism",
    "pride",
    "realization",
    "relief",
    "remorse",
    "sadness",
    "surprise",
    "neutral",
];

pub const NUM_EMOTIONS: usize = EMOTION_LABELS.len();

#[derive(Debug, Error)]
pub enum AffectError {
    #[error("system {0} is not pair-complete")]
    NotPairComplete(String),
    #[error("provider failed on batch {batch}: {source}")]
    Provider {
        batch: usize,
        #[source]
        source: ProviderError,
    },
    #[error("protocol error in batch {batch}: {message}")]
    Protocol { batch: usize, message: String },
    #[error("no profiles for system {0}")]
    NoProfiles(String),
    #[error("unknown sentiment label \"{0}\"")]
    UnknownSentiment(String),
    #[error("invalid emotion distribution: {0}")]
    InvalidDistribution(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SentimentLabel {
    VeryNegative,
    Negative,
    Neutral,
    Positive,
    VeryPositive,
}

impl SentimentLabel {
    pub const ALL: [SentimentLabel; 5] = [
        SentimentLabel::VeryNegative,
        SentimentLabel::Negative,
        SentimentLabel::Neutral,
        SentimentLabel::Positive,
        SentimentLabel::VeryPositive,
    ];

    pub fn display_name(self) -> &'static str {
        match self {
            SentimentLabel::VeryNegative => "Very Negative",
            SentimentLabel::Negative => "Negative",
            SentimentLabel::Neutral => "Neutral",
            SentimentLabel::Positive => "Positive",
            SentimentLabel::VeryPositive => "Very Positive",
        }
    }

    /// Position in display order, also used as the category code in
    /// contingency tests.
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for SentimentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

impl FromStr for SentimentLabel {
    type Err = AffectError;

    /// Accepts "Very Negative", "very_negative", "VeryNegative" and so on.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_alphanumeric())
            .collect::<String>()
            .to_lowercase();
        SentimentLabel::ALL
            .into_iter()
            .find(|l| l.display_name().replace(' ', "").to_lowercase() == key)
            .ok_or_else(|| AffectError::UnknownSentiment(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmotionDistribution {
    probs: Vec<f64>,
}

impl EmotionDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self, AffectError> {
        if probs.len() != NUM_EMOTIONS {
            return Err(AffectError::InvalidDistribution(format!(
                "expected {NUM_EMOTIONS} values, got {}",
                probs.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(AffectError::InvalidDistribution(format!(
                "probability {p} outside [0, 1]"
            )));
        }
        Ok(EmotionDistribution { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, label: &str) -> Option<f64> {
        emotion_index(label).map(|i| self.probs[i])
    }
}

pub fn emotion_index(label: &str) -> Option<usize> {
    EMOTION_LABELS.iter().position(|l| *l == label)
}

/// Label with the highest probability; ties go to the earlier label.
pub fn dominant_emotion(dist: &EmotionDistribution) -> &'static str {
    let mut best = 0;
    for (i, &p) in dist.probs.iter().enumerate() {
        if p > dist.probs[best] {
            best = i;
        }
    }
    EMOTION_LABELS[best]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AffectProfile {
    pub record_id: String,
    pub system_id: SystemId,
    pub sentiment: SentimentLabel,
    pub emotions: EmotionDistribution,
    pub dominant: &'static str,
}

/// Sentiment and emotion classifiers. Output order must follow input order.
///
/// `emotions` returns raw vectors; length checks happen in the caller so a
/// misbehaving provider surfaces as a protocol error.
pub trait ClassifierProvider: Sync {
    fn name(&self) -> &str;
    fn sentiment(&self, texts: &[&str]) -> Result<Vec<SentimentLabel>, ProviderError>;
    fn emotions(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, ProviderError>;
}

#[derive(Deserialize)]
struct LabelEntry {
    sha256: String,
    sentiment: String,
    emotions: Vec<f64>,
}

/// Precomputed classifier outputs keyed by content hash.
#[derive(Debug, Clone)]
pub struct FileLabelStore {
    name: String,
    entries: HashMap<String, (SentimentLabel, Vec<f64>)>,
}

impl FileLabelStore {
    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let store_err = |message: String| ProviderError::Store {
            path: path.display().to_string(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| store_err(e.to_string()))?;
        let mut entries = HashMap::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: LabelEntry = serde_json::from_str(line)
                .map_err(|err| store_err(format!("line {}: {err}", idx + 1)))?;
            let sentiment = e
                .sentiment
                .parse()
                .map_err(|err: AffectError| store_err(format!("line {}: {err}", idx + 1)))?;
            entries.insert(e.sha256.to_ascii_lowercase(), (sentiment, e.emotions));
        }
        Ok(FileLabelStore {
            name: format!("file:{}", path.display()),
            entries,
        })
    }

    fn lookup(&self, text: &str) -> Result<&(SentimentLabel, Vec<f64>), ProviderError> {
        let h = content_hash(text);
        self.entries.get(&h).ok_or(ProviderError::MissingEntry(h))
    }
}

impl ClassifierProvider for FileLabelStore {
    fn name(&self) -> &str {
        &self.name
    }

    fn sentiment(&self, texts: &[&str]) -> Result<Vec<SentimentLabel>, ProviderError> {
        texts.iter().map(|t| self.lookup(t).map(|e| e.0)).collect()
    }

    fn emotions(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, ProviderError> {
        texts.iter().map(|t| self.lookup(t).map(|e| e.1.clone())).collect()
    }
}

/// Profiles every (record, system) pair plus the reference answers under
/// the physician system. Output is sorted by record id, then system.
pub fn profile_corpus(
    corpus: &Corpus,
    provider: &dyn ClassifierProvider,
    systems: &[SystemId],
    allow_partial: bool,
) -> Result<Vec<AffectProfile>, AffectError> {
    let alignment = corpus.validate_alignment();
    if !allow_partial {
        if let Some(s) = systems.iter().find(|s| !alignment.is_pair_complete(s)) {
            return Err(AffectError::NotPairComplete(s.to_string()));
        }
    }
    let mut all_systems: Vec<SystemId> = vec![SystemId::physician()];
    all_systems.extend(systems.iter().filter(|s| !s.is_physician()).cloned());
    all_systems.sort();
    all_systems.dedup();

    let mut records: Vec<&str> = corpus.records.iter().map(|r| r.id.as_str()).collect();
    records.sort();

    let lookups: Vec<_> = all_systems.iter().map(|s| corpus.responses_of(s)).collect();
    let mut keys = Vec::new();
    let mut texts = Vec::new();
    for id in &records {
        for (s, lookup) in all_systems.iter().zip(&lookups) {
            if let Some(&t) = lookup.get(id) {
                keys.push((*id, s));
                texts.push(t);
            }
        }
    }

    let mut profiles = Vec::with_capacity(texts.len());
    let mut keys_iter = keys.into_iter();
    for (batch, chunk) in texts.chunks(DEFAULT_BATCH).enumerate() {
        let provider_err = |source| AffectError::Provider { batch, source };
        let labels = provider.sentiment(chunk).map_err(provider_err)?;
        let dists = provider.emotions(chunk).map_err(provider_err)?;
        if labels.len() != chunk.len() || dists.len() != chunk.len() {
            return Err(AffectError::Protocol {
                batch,
                message: format!(
                    "sent {} texts, got {} labels and {} distributions",
                    chunk.len(),
                    labels.len(),
                    dists.len()
                ),
            });
        }
        for (sentiment, raw) in labels.into_iter().zip(dists) {
            let emotions = EmotionDistribution::new(raw).map_err(|e| AffectError::Protocol {
                batch,
                message: e.to_string(),
            })?;
            let (record_id, system_id) = keys_iter.next().expect("one key per text");
            profiles.push(AffectProfile {
                record_id: record_id.to_string(),
                system_id: system_id.clone(),
                sentiment,
                dominant: dominant_emotion(&emotions),
                emotions,
            });
        }
    }
    Ok(profiles)
}

/// Sentiment distribution of one system.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SentimentShares {
    pub system: SystemId,
    pub total: usize,
    pub counts: [usize; 5],
    /// Unrounded `100·count/total`, in [`SentimentLabel::ALL`] order.
    pub percentages: [f64; 5],
}

impl SentimentShares {
    pub fn from_counts(system: SystemId, counts: [usize; 5]) -> Result<Self, AffectError> {
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(AffectError::NoProfiles(system.to_string()));
        }
        let percentages = counts.map(|c| 100.0 * c as f64 / total as f64);
        Ok(SentimentShares {
            system,
            total,
            counts,
            percentages,
        })
    }

    pub fn share(&self, label: SentimentLabel) -> f64 {
        self.percentages[label.index()]
    }

    /// Percentages rounded half away from zero to 2 decimals.
    pub fn rounded(&self) -> [f64; 5] {
        self.percentages.map(crate::report::round2)
    }
}

pub fn sentiment_share_table(
    profiles: &[AffectProfile],
    system: &SystemId,
) -> Result<SentimentShares, AffectError> {
    let mut counts = [0usize; 5];
    for p in profiles.iter().filter(|p| &p.system_id == system) {
        counts[p.sentiment.index()] += 1;
    }
    SentimentShares::from_counts(system.clone(), counts)
}

/// The `k` most frequent dominant emotions with their share of all profiles
/// of the system. Ties keep taxonomy order.
pub fn top_dominant_emotions(
    profiles: &[AffectProfile],
    system: &SystemId,
    k: usize,
) -> Result<Vec<(&'static str, f64)>, AffectError> {
    let mut counts = [0usize; NUM_EMOTIONS];
    let mut total = 0usize;
    for p in profiles.iter().filter(|p| &p.system_id == system) {
        counts[emotion_index(p.dominant).expect("dominant is a taxonomy label")] += 1;
        total += 1;
    }
    if total == 0 {
        return Err(AffectError::NoProfiles(system.to_string()));
    }
    let mut ranked: Vec<usize> = (0..NUM_EMOTIONS).filter(|&i| counts[i] > 0).collect();
    ranked.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    Ok(ranked
        .into_iter()
        .take(k)
        .map(|i| (EMOTION_LABELS[i], 100.0 * counts[i] as f64 / total as f64))
        .collect())
}
