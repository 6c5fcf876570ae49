use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::Serialize;

use super::{bh_adjust, chi_square_cramers_v, mean, paired_t_test, stars, StatsError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CompareKind {
    /// Paired t-tests on per-record scores.
    TTest,
    /// Chi-square on category codes (values are non-negative integers).
    Contingency,
}

/// Per-record values for an ordered list of systems.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    systems: Vec<String>,
    values: Vec<BTreeMap<String, f64>>,
}

impl ScoreTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records `value` for `(system, record)`; systems keep first-seen order.
    pub fn insert(&mut self, system: &str, record: &str, value: f64) {
        let idx = match self.systems.iter().position(|s| s == system) {
            Some(i) => i,
            None => {
                self.systems.push(system.to_string());
                self.values.push(BTreeMap::new());
                self.systems.len() - 1
            }
        };
        self.values[idx].insert(record.to_string(), value);
    }

    pub fn systems(&self) -> &[String] {
        &self.systems
    }

    /// Values for one system ordered by record id.
    pub fn values(&self, system: &str) -> Option<Vec<f64>> {
        let idx = self.systems.iter().position(|s| s == system)?;
        Some(self.values[idx].values().copied().collect())
    }

    fn record_set(&self, idx: usize) -> BTreeSet<&str> {
        self.values[idx].keys().map(String::as_str).collect()
    }
}

/// Pairwise comparison of systems. `mean_diff[i][j]` is row minus column;
/// `p_adj` is Benjamini–Hochberg adjusted over all unordered pairs of the
/// matrix jointly, and `stars` derive from `p_adj`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairwiseMatrix {
    pub kind: CompareKind,
    pub labels: Vec<String>,
    pub mean_diff: Vec<Vec<f64>>,
    pub p_raw: Vec<Vec<f64>>,
    pub p_adj: Vec<Vec<f64>>,
    pub stars: Vec<Vec<String>>,
    /// Cramér's V per pair (contingency matrices only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cramers_v: Option<Vec<Vec<f64>>>,
}

struct PairOutcome {
    diff: f64,
    p: f64,
    v: Option<f64>,
}

fn category_counts(
    system: &str,
    values: &[f64],
    categories: &[u64],
) -> Result<Vec<u64>, StatsError> {
    let mut counts = vec![0u64; categories.len()];
    for &v in values {
        let code = as_code(system, v)?;
        let pos = categories.binary_search(&code).expect("category collected");
        counts[pos] += 1;
    }
    Ok(counts)
}

fn as_code(system: &str, v: f64) -> Result<u64, StatsError> {
    if v.is_finite() && v >= 0.0 && v.fract() == 0.0 {
        Ok(v as u64)
    } else {
        Err(StatsError::InvalidCategory {
            system: system.to_string(),
            value: v,
        })
    }
}

pub fn pairwise_compare(
    table: &ScoreTable,
    kind: CompareKind,
) -> Result<PairwiseMatrix, StatsError> {
    let k = table.systems.len();
    if k < 2 {
        return Err(StatsError::TooFewSystems(k));
    }
    if table.values.iter().any(BTreeMap::is_empty) {
        return Err(StatsError::Empty);
    }
    if kind == CompareKind::TTest {
        let reference = table.record_set(0);
        let offending: Vec<String> = (1..k)
            .filter(|&i| table.record_set(i) != reference)
            .map(|i| table.systems[i].clone())
            .collect();
        if !offending.is_empty() {
            let mut names = vec![table.systems[0].clone()];
            names.extend(offending);
            return Err(StatsError::Misaligned(names));
        }
    }
    let columns: Vec<Vec<f64>> = table
        .values
        .iter()
        .map(|m| m.values().copied().collect())
        .collect();
    let categories: Vec<u64> = if kind == CompareKind::Contingency {
        let mut set = BTreeSet::new();
        for (sys, col) in table.systems.iter().zip(&columns) {
            for &v in col {
                set.insert(as_code(sys, v)?);
            }
        }
        set.into_iter().collect()
    } else {
        Vec::new()
    };

    let pairs: Vec<(usize, usize)> = (0..k)
        .flat_map(|i| ((i + 1)..k).map(move |j| (i, j)))
        .collect();
    let outcomes: Vec<PairOutcome> = pairs
        .par_iter()
        .map(|&(i, j)| match kind {
            CompareKind::TTest => {
                let r = paired_t_test(&columns[i], &columns[j])?;
                Ok(PairOutcome {
                    diff: r.mean_diff,
                    p: r.p_value,
                    v: None,
                })
            }
            CompareKind::Contingency => {
                // Two categories are needed for a table; pad with an empty one.
                let mut cats = categories.clone();
                if cats.len() < 2 {
                    cats.push(cats.last().map_or(0, |c| c + 1));
                }
                let rows = vec![
                    category_counts(&table.systems[i], &columns[i], &cats)?,
                    category_counts(&table.systems[j], &columns[j], &cats)?,
                ];
                let labels = [table.systems[i].clone(), table.systems[j].clone()];
                let r = chi_square_cramers_v(&labels, &rows)?;
                Ok(PairOutcome {
                    diff: mean(&columns[i]) - mean(&columns[j]),
                    p: r.p_value,
                    v: Some(r.cramers_v),
                })
            }
        })
        .collect::<Result<_, StatsError>>()?;

    let raw: Vec<f64> = outcomes.iter().map(|o| o.p).collect();
    let adjusted = bh_adjust(&raw)?;

    let mut mean_diff = vec![vec![0.0; k]; k];
    let mut p_raw = vec![vec![1.0; k]; k];
    let mut p_adj = vec![vec![1.0; k]; k];
    let mut star = vec![vec![String::new(); k]; k];
    let mut cramers = (kind == CompareKind::Contingency).then(|| vec![vec![0.0; k]; k]);
    for (((&(i, j), o), &pr), &pa) in pairs.iter().zip(&outcomes).zip(&raw).zip(&adjusted) {
        mean_diff[i][j] = o.diff;
        mean_diff[j][i] = -o.diff;
        p_raw[i][j] = pr;
        p_raw[j][i] = pr;
        p_adj[i][j] = pa;
        p_adj[j][i] = pa;
        star[i][j] = stars(pa).to_string();
        star[j][i] = star[i][j].clone();
        if let (Some(m), Some(v)) = (cramers.as_mut(), o.v) {
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    Ok(PairwiseMatrix {
        kind,
        labels: table.systems.clone(),
        mean_diff,
        p_raw,
        p_adj,
        stars: star,
        cramers_v: cramers,
    })
}

impl PairwiseMatrix {
    /// CSV with system labels on both axes and `diff|p_adj|stars` cells.
    /// Differences print with 2 decimals, adjusted p-values with 4.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["system".to_string()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header).expect("in-memory write");
        for (i, label) in self.labels.iter().enumerate() {
            let mut row = vec![label.clone()];
            for j in 0..self.labels.len() {
                row.push(format!(
                    "{}|{:.4}|{}",
                    crate::report::fmt2(self.mean_diff[i][j]),
                    self.p_adj[i][j],
                    self.stars[i][j]
                ));
            }
            w.write_record(&row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}
