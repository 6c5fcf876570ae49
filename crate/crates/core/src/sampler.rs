//! Subset selection: readability-driven k-means representatives, optionally
//! stratified by triage severity.
//!
//! The readability path runs extract → IQR filter → z-score → k-means++ →
//! nearest-to-centroid selection. All randomness comes from
//! [`SamplerConfig::seed`], and every step is independent of thread count.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, SeverityLabel};
use crate::textmetrics::{analyze_text, readability, word_tokens};

/// Feature columns, in row order.
pub const FEATURE_NAMES: [&str; 4] = ["fkgl", "gfi", "lexical_repr", "answer_length"];
const FKGL: usize = 0;
const GFI: usize = 1;

#[derive(Debug, Error, PartialEq)]
pub enum SamplerError {
    #[error("invalid sampler config: {0}")]
    InvalidConfig(String),
    #[error("no scorable records")]
    Empty,
    #[error("need at least {needed} records, have {available}")]
    TooFewRecords { needed: usize, available: usize },
    #[error("cannot form {k} clusters from {n} records")]
    TooFewForK { k: usize, n: usize },
    #[error("record {0} has no severity label")]
    MissingSeverity(String),
    #[error("severity class {class} has {available} records, quota is {quota}")]
    UndersizedClass {
        class: String,
        available: usize,
        quota: usize,
    },
}

/// Which text readability and lexical features are computed on. Length is
/// always measured on the answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureTarget {
    Question,
    #[default]
    Answer,
}

impl std::str::FromStr for FeatureTarget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "question" => Ok(FeatureTarget::Question),
            "answer" => Ok(FeatureTarget::Answer),
            _ => Err(format!("unknown feature target \"{s}\"")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub k: usize,
    pub seed: u64,
    pub iqr_multiplier: f64,
    pub max_iterations: usize,
    pub per_class_quota: usize,
    /// Apply IQR filtering inside each severity class.
    pub stratified_iqr: bool,
    pub target: FeatureTarget,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            k: 50,
            seed: 42,
            iqr_multiplier: 1.5,
            max_iterations: 300,
            per_class_quota: 10,
            stratified_iqr: false,
            target: FeatureTarget::Answer,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.k == 0 {
            return Err(SamplerError::InvalidConfig("k must be at least 1".into()));
        }
        if self.per_class_quota == 0 {
            return Err(SamplerError::InvalidConfig("quota must be at least 1".into()));
        }
        if !(self.iqr_multiplier > 0.0 && self.iqr_multiplier.is_finite()) {
            return Err(SamplerError::InvalidConfig("IQR multiplier must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(SamplerError::InvalidConfig("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// One row of 4 features per record, rows ordered by record id.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureMatrix {
    pub record_ids: Vec<String>,
    pub rows: Vec<[f64; 4]>,
    pub normalized: bool,
    /// Columns that had zero variance at normalization time.
    pub constant_columns: [bool; 4],
    /// Records dropped because readability was undefined for them.
    pub unscorable: Vec<String>,
}

impl FeatureMatrix {
    pub fn new(record_ids: Vec<String>, rows: Vec<[f64; 4]>) -> Self {
        assert_eq!(record_ids.len(), rows.len(), "one row per record");
        assert!(
            rows.iter().flatten().all(|v| v.is_finite()),
            "features must be finite"
        );
        FeatureMatrix {
            record_ids,
            rows,
            normalized: false,
            constant_columns: [false; 4],
            unscorable: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }

    fn keep(&self, keep: &[bool]) -> FeatureMatrix {
        let (record_ids, rows) = self
            .record_ids
            .iter()
            .zip(&self.rows)
            .zip(keep)
            .filter(|(_, k)| **k)
            .map(|((id, r), _)| (id.clone(), *r))
            .unzip();
        FeatureMatrix {
            record_ids,
            rows,
            normalized: self.normalized,
            constant_columns: self.constant_columns,
            unscorable: self.unscorable.clone(),
        }
    }
}

/// Sparse TF-IDF vectors, one per document, as sorted (term, weight) pairs.
fn tfidf(docs: &[Vec<String>]) -> (Vec<Vec<(usize, f64)>>, usize) {
    let mut vocab: BTreeMap<&str, usize> = BTreeMap::new();
    for d in docs {
        for t in d {
            vocab.entry(t.as_str()).or_insert(0);
        }
    }
    for (i, v) in vocab.values_mut().enumerate() {
        *v = i;
    }
    let mut df = vec![0usize; vocab.len()];
    let counts: Vec<BTreeMap<usize, usize>> = docs
        .iter()
        .map(|d| {
            let mut c = BTreeMap::new();
            for t in d {
                *c.entry(vocab[t.as_str()]).or_insert(0) += 1;
            }
            for term in c.keys() {
                df[*term] += 1;
            }
            c
        })
        .collect();
    let n = docs.len() as f64;
    let idf: Vec<f64> = df.iter().map(|&d| (n / d as f64).ln() + 1.0).collect();
    let vectors = counts
        .into_iter()
        .map(|c| c.into_iter().map(|(t, k)| (t, k as f64 * idf[t])).collect())
        .collect();
    (vectors, vocab.len())
}

/// Cosine similarity of each document's TF-IDF vector with the mean vector.
pub fn lexical_representativeness(docs: &[Vec<String>]) -> Vec<f64> {
    let (vectors, dim) = tfidf(docs);
    let mut centroid = vec![0.0; dim];
    for v in &vectors {
        for &(t, w) in v {
            centroid[t] += w;
        }
    }
    let n = vectors.len() as f64;
    centroid.iter_mut().for_each(|c| *c /= n);
    let centroid_norm = centroid.iter().map(|c| c * c).sum::<f64>().sqrt();
    vectors
        .iter()
        .map(|v| {
            let norm = v.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
            if norm == 0.0 || centroid_norm == 0.0 {
                return 0.0;
            }
            let dot: f64 = v.iter().map(|&(t, w)| w * centroid[t]).sum();
            (dot / (norm * centroid_norm)).clamp(-1.0, 1.0)
        })
        .collect()
}

/// Readability, lexical representativeness and answer length per record.
/// Records whose target text has no words or sentences are skipped and
/// listed in `unscorable`.
pub fn extract_features(corpus: &Corpus, target: FeatureTarget) -> Result<FeatureMatrix, SamplerError> {
    let mut records: Vec<_> = corpus.records.iter().collect();
    records.sort_by(|a, b| a.id.cmp(&b.id));

    let mut ids = Vec::new();
    let mut partial = Vec::new();
    let mut docs = Vec::new();
    let mut unscorable = Vec::new();
    for r in records {
        let text = match target {
            FeatureTarget::Question => &r.question,
            FeatureTarget::Answer => &r.reference_answer,
        };
        match readability(&analyze_text(text)) {
            Ok(s) => {
                let length = word_tokens(&r.reference_answer).len() as f64;
                ids.push(r.id.clone());
                partial.push((s.fkgl, s.gfi, length));
                docs.push(word_tokens(text));
            }
            Err(e) => {
                log::warn!("record {} excluded from features: {e}", r.id);
                unscorable.push(r.id.clone());
            }
        }
    }
    if ids.is_empty() {
        return Err(SamplerError::Empty);
    }
    let lexical = lexical_representativeness(&docs);
    let rows = partial
        .into_iter()
        .zip(lexical)
        .map(|((fk, gf, len), lex)| [fk, gf, lex, len])
        .collect();
    let mut m = FeatureMatrix::new(ids, rows);
    m.unscorable = unscorable;
    Ok(m)
}

/// Quantile of sorted data by linear interpolation between order statistics
/// (position `(n-1)·p`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `(lower, upper)` fences `Q1 - m·IQR`, `Q3 + m·IQR`.
pub fn iqr_fences(values: &[f64], multiplier: f64) -> (f64, f64) {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&s, 0.25);
    let q3 = quantile_sorted(&s, 0.75);
    let iqr = q3 - q1;
    (q1 - multiplier * iqr, q3 + multiplier * iqr)
}

/// Drops records outside the fences of either the FKGL or the GFI column.
/// Returns the survivors and the excluded ids.
pub fn iqr_filter(
    matrix: &FeatureMatrix,
    multiplier: f64,
) -> Result<(FeatureMatrix, Vec<String>), SamplerError> {
    if matrix.len() < 4 {
        return Err(SamplerError::TooFewRecords {
            needed: 4,
            available: matrix.len(),
        });
    }
    let mut keep = vec![true; matrix.len()];
    for col in [FKGL, GFI] {
        let (lo, hi) = iqr_fences(&matrix.column(col), multiplier);
        for (k, row) in keep.iter_mut().zip(&matrix.rows) {
            if row[col] < lo || row[col] > hi {
                *k = false;
            }
        }
    }
    let excluded = matrix
        .record_ids
        .iter()
        .zip(&keep)
        .filter(|(_, k)| !**k)
        .map(|(id, _)| id.clone())
        .collect();
    Ok((matrix.keep(&keep), excluded))
}

/// `(x - μ)/σ` with population σ. A constant column maps to zeros and
/// reports `true`.
pub fn zscore_column(values: &[f64]) -> (Vec<f64>, bool) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd == 0.0 || !sd.is_finite() {
        return (vec![0.0; values.len()], true);
    }
    (values.iter().map(|v| (v - mean) / sd).collect(), false)
}

pub fn zscore_normalize(matrix: &FeatureMatrix) -> Result<FeatureMatrix, SamplerError> {
    if matrix.len() < 2 {
        return Err(SamplerError::TooFewRecords {
            needed: 2,
            available: matrix.len(),
        });
    }
    let mut out = matrix.clone();
    for j in 0..4 {
        let (z, constant) = zscore_column(&matrix.column(j));
        for (row, v) in out.rows.iter_mut().zip(z) {
            row[j] = v;
        }
        out.constant_columns[j] = constant;
    }
    out.normalized = true;
    Ok(out)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    /// Means of the final clusters.
    pub centroids: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
}

impl KMeansResult {
    /// Within-cluster sum of squared distances.
    pub fn sse<P: AsRef<[f64]>>(&self, points: &[P]) -> f64 {
        points
            .iter()
            .zip(&self.assignments)
            .map(|(p, &c)| sq_dist(p.as_ref(), &self.centroids[c]))
            .sum()
    }
}

/// k-means++ seeding: first centre uniform, later centres drawn with
/// probability proportional to squared distance from the nearest centre.
fn seed_centroids<P: AsRef<[f64]>>(points: &[P], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.gen_range(0..n)].as_ref().to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p.as_ref(), &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let r = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > r {
                    chosen = Some(i);
                    break;
                }
            }
            // r can land on the final boundary through rounding
            chosen.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).expect("total > 0"))
        } else {
            rng.gen_range(0..n)
        };
        let c = points[pick].as_ref().to_vec();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p.as_ref(), &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Nearest centroid per point; ties go to the lower centroid index.
fn assign<P: AsRef<[f64]> + Sync>(points: &[P], centroids: &[Vec<f64>]) -> Vec<usize> {
    points
        .par_iter()
        .map(|p| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let d = sq_dist(p.as_ref(), centroid);
                if d < best_d {
                    best = c;
                    best_d = d;
                }
            }
            best
        })
        .collect()
}

fn means<P: AsRef<[f64]>>(points: &[P], assignments: &[usize], k: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &c) in points.iter().zip(assignments) {
        counts[c] += 1;
        for (s, v) in sums[c].iter_mut().zip(p.as_ref()) {
            *s += v;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        if n > 0 {
            s.iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    sums
}

/// Moves the point farthest from its centroid into each empty cluster,
/// taking only from clusters with more than one member.
fn fill_empty<P: AsRef<[f64]>>(points: &[P], assignments: &mut [usize], centroids: &mut [Vec<f64>]) {
    let k = centroids.len();
    loop {
        let mut counts = vec![0usize; k];
        for &c in assignments.iter() {
            counts[c] += 1;
        }
        let Some(empty) = counts.iter().position(|&n| n == 0) else {
            return;
        };
        let mut far = None;
        let mut far_d = -1.0;
        for (i, p) in points.iter().enumerate() {
            let c = assignments[i];
            if counts[c] < 2 {
                continue;
            }
            let d = sq_dist(p.as_ref(), &centroids[c]);
            if d > far_d {
                far = Some(i);
                far_d = d;
            }
        }
        let i = far.expect("n >= k leaves a cluster with two members");
        assignments[i] = empty;
        centroids[empty] = points[i].as_ref().to_vec();
    }
}

/// Lloyd iterations from a k-means++ start. Stops when assignments repeat or
/// after `max_iterations` updates. Every returned cluster is non-empty.
pub fn kmeans<P: AsRef<[f64]> + Sync>(
    points: &[P],
    k: usize,
    seed: u64,
    max_iterations: usize,
) -> Result<KMeansResult, SamplerError> {
    let n = points.len();
    if k == 0 {
        return Err(SamplerError::InvalidConfig("k must be at least 1".into()));
    }
    if n < k {
        return Err(SamplerError::TooFewForK { k, n });
    }
    let dim = points[0].as_ref().len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(points, k, &mut rng);
    let mut assignments = assign(points, &centroids);
    fill_empty(points, &mut assignments, &mut centroids);

    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iterations {
        iterations += 1;
        centroids = means(points, &assignments, k, dim);
        let mut next = assign(points, &centroids);
        fill_empty(points, &mut next, &mut centroids);
        if next == assignments {
            converged = true;
            break;
        }
        assignments = next;
    }
    Ok(KMeansResult {
        centroids: means(points, &assignments, k, dim),
        assignments,
        iterations,
        converged,
    })
}

/// k-means over the rows of a feature matrix.
pub fn kmeans_cluster(matrix: &FeatureMatrix, config: &SamplerConfig) -> Result<KMeansResult, SamplerError> {
    config.validate()?;
    kmeans(&matrix.rows, config.k, config.seed, config.max_iterations)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Selection {
    /// Sorted.
    pub chosen_ids: Vec<String>,
    pub cluster_assignment: BTreeMap<String, usize>,
    pub excluded_outliers: Vec<String>,
    pub unscorable: Vec<String>,
}

impl Selection {
    /// `{"chosen", "excluded_outliers", "clusters", "unscorable", "config"}`.
    pub fn to_json(&self, config: &SamplerConfig) -> String {
        let value = serde_json::json!({
            "chosen": self.chosen_ids,
            "excluded_outliers": self.excluded_outliers,
            "clusters": self.cluster_assignment,
            "unscorable": self.unscorable,
            "config": config,
        });
        let mut s = serde_json::to_string_pretty(&value).expect("selection serializes");
        s.push('\n');
        s
    }
}

/// Per cluster, the member nearest its centroid; ties go to the smaller id.
pub fn select_representatives(
    matrix: &FeatureMatrix,
    assignments: &[usize],
    centroids: &[Vec<f64>],
) -> Selection {
    let mut best: Vec<Option<(f64, &str)>> = vec![None; centroids.len()];
    for ((id, row), &c) in matrix.record_ids.iter().zip(&matrix.rows).zip(assignments) {
        let d = sq_dist(row, &centroids[c]);
        let better = match best[c] {
            None => true,
            Some((bd, bid)) => d < bd || (d == bd && id.as_str() < bid),
        };
        if better {
            best[c] = Some((d, id));
        }
    }
    let mut chosen_ids: Vec<String> = best.into_iter().flatten().map(|(_, id)| id.to_string()).collect();
    chosen_ids.sort();
    Selection {
        chosen_ids,
        cluster_assignment: matrix
            .record_ids
            .iter()
            .cloned()
            .zip(assignments.iter().copied())
            .collect(),
        excluded_outliers: Vec::new(),
        unscorable: matrix.unscorable.clone(),
    }
}

fn select_from(matrix: FeatureMatrix, k: usize, config: &SamplerConfig, seed: u64, iqr: bool) -> Result<Selection, SamplerError> {
    let (survivors, excluded) = if iqr {
        iqr_filter(&matrix, config.iqr_multiplier)?
    } else {
        (matrix, Vec::new())
    };
    if survivors.len() < k {
        return Err(SamplerError::TooFewForK { k, n: survivors.len() });
    }
    let normalized = if survivors.len() >= 2 {
        zscore_normalize(&survivors)?
    } else {
        survivors
    };
    let clusters = kmeans(&normalized.rows, k, seed, config.max_iterations)?;
    let mut sel = select_representatives(&normalized, &clusters.assignments, &clusters.centroids);
    sel.excluded_outliers = excluded;
    Ok(sel)
}

/// Readability-driven subset of `config.k` records.
pub fn representative_subset(corpus: &Corpus, config: &SamplerConfig) -> Result<Selection, SamplerError> {
    config.validate()?;
    let matrix = extract_features(corpus, config.target)?;
    select_from(matrix, config.k, config, config.seed, true)
}

/// `config.per_class_quota` representatives from each severity class, with
/// features and clustering computed within the class.
pub fn stratified_representatives(corpus: &Corpus, config: &SamplerConfig) -> Result<Selection, SamplerError> {
    config.validate()?;
    let mut by_class: HashMap<SeverityLabel, Vec<String>> = HashMap::new();
    for r in &corpus.records {
        let class = r
            .severity
            .ok_or_else(|| SamplerError::MissingSeverity(r.id.clone()))?;
        by_class.entry(class).or_default().push(r.id.clone());
    }
    let quota = config.per_class_quota;
    for class in SeverityLabel::ALL {
        let available = by_class.get(&class).map_or(0, Vec::len);
        if available < quota {
            return Err(SamplerError::UndersizedClass {
                class: class.as_str().to_string(),
                available,
                quota,
            });
        }
    }
    let per_class: Vec<Selection> = SeverityLabel::ALL
        .par_iter()
        .enumerate()
        .map(|(i, class)| {
            let sub = corpus.restrict(&by_class[class]);
            let matrix = extract_features(&sub, config.target)?;
            select_from(matrix, quota, config, config.seed.wrapping_add(i as u64), config.stratified_iqr)
        })
        .collect::<Result<_, _>>()?;

    let mut out = Selection::default();
    for (i, sel) in per_class.into_iter().enumerate() {
        out.chosen_ids.extend(sel.chosen_ids);
        out.excluded_outliers.extend(sel.excluded_outliers);
        out.unscorable.extend(sel.unscorable);
        // cluster ids are made unique across classes
        out.cluster_assignment
            .extend(sel.cluster_assignment.into_iter().map(|(id, c)| (id, i * quota + c)));
    }
    out.chosen_ids.sort();
    out.excluded_outliers.sort();
    out.unscorable.sort();
    Ok(out)
}
