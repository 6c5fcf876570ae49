//! Descriptive statistics, paired t-tests, Benjamini–Hochberg adjustment and
//! chi-square tests with Cramér's V.
//!
//! Standard deviations use the sample (n − 1) denominator throughout. The
//! Student-t and chi-square tails are evaluated in-crate through continued
//! fractions (see [`special`]).

mod pairwise;
pub mod special;

pub use pairwise::{pairwise_compare, CompareKind, PairwiseMatrix, ScoreTable};

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("empty input")]
    Empty,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("paired t-test needs at least 2 pairs, got {0}")]
    TooFewPairs(usize),
    #[error("p-value {0} outside [0, 1]")]
    InvalidPValue(f64),
    #[error("contingency table must be at least 2x2, got {rows}x{cols}")]
    TableShape { rows: usize, cols: usize },
    #[error("contingency row for {0} sums to zero")]
    ZeroRow(String),
    #[error("non-finite value in input")]
    NonFinite,
    #[error("pairwise comparison needs at least 2 systems, got {0}")]
    TooFewSystems(usize),
    #[error("record sets differ between systems: {}", .0.join(", "))]
    Misaligned(Vec<String>),
    #[error("category code {value} for {system} is not a non-negative integer")]
    InvalidCategory { system: String, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DescriptiveSummary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; `None` when `n < 2`.
    pub std: Option<f64>,
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn sample_std(values: &[f64], mean: f64) -> f64 {
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

pub fn descriptive(values: &[f64]) -> Result<DescriptiveSummary, StatsError> {
    if values.is_empty() {
        return Err(StatsError::Empty);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let m = mean(values);
    Ok(DescriptiveSummary {
        n: values.len(),
        mean: m,
        std: (values.len() >= 2).then(|| sample_std(values, m)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairedTestResult {
    pub t_stat: f64,
    pub p_value: f64,
    pub df: usize,
    pub mean_diff: f64,
    /// Set when every difference is the same nonzero value.
    pub degenerate: bool,
}

/// Two-sided paired t-test on `x − y`.
pub fn paired_t_test(x: &[f64], y: &[f64]) -> Result<PairedTestResult, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(StatsError::TooFewPairs(x.len()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let n = d.len();
    let df = n - 1;
    let mean_diff = mean(&d);
    let sd = sample_std(&d, mean_diff);

    if sd == 0.0 {
        return Ok(if mean_diff == 0.0 {
            PairedTestResult {
                t_stat: 0.0,
                p_value: 1.0,
                df,
                mean_diff,
                degenerate: false,
            }
        } else {
            PairedTestResult {
                t_stat: f64::INFINITY.copysign(mean_diff),
                p_value: 0.0,
                df,
                mean_diff,
                degenerate: true,
            }
        });
    }
    let t_stat = mean_diff / (sd / (n as f64).sqrt());
    Ok(PairedTestResult {
        t_stat,
        p_value: special::student_t_two_sided(t_stat, df as f64),
        df,
        mean_diff,
        degenerate: false,
    })
}

/// Benjamini–Hochberg step-up adjustment. Output order matches input order.
pub fn bh_adjust(p_values: &[f64]) -> Result<Vec<f64>, StatsError> {
    if let Some(&bad) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(StatsError::InvalidPValue(bad));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));

    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for (pos, &idx) in order.iter().enumerate().rev() {
        let rank = pos + 1;
        // m/rank >= 1 keeps every candidate >= its raw p under rounding
        let candidate = p_values[idx] * (m as f64 / rank as f64);
        running = running.min(candidate);
        adjusted[idx] = running;
    }
    Ok(adjusted)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContingencyResult {
    pub chi2: f64,
    pub p_value: f64,
    pub dof: usize,
    pub cramers_v: f64,
    pub n: u64,
    /// Columns kept after dropping all-zero columns.
    pub columns_used: usize,
    /// Some expected count fell below 5.
    pub low_expected: bool,
}

/// Pearson chi-square (no continuity correction) and Cramér's V for an r×c
/// table of counts. `labels` name the rows for error messages.
pub fn chi_square_cramers_v(
    labels: &[String],
    table: &[Vec<u64>],
) -> Result<ContingencyResult, StatsError> {
    let rows = table.len();
    let cols = table.first().map_or(0, Vec::len);
    if rows < 2 || cols < 2 || table.iter().any(|r| r.len() != cols) {
        return Err(StatsError::TableShape { rows, cols });
    }
    for (i, row) in table.iter().enumerate() {
        if row.iter().sum::<u64>() == 0 {
            let name = labels.get(i).cloned().unwrap_or_else(|| format!("row {i}"));
            return Err(StatsError::ZeroRow(name));
        }
    }
    let kept: Vec<usize> = (0..cols)
        .filter(|&c| table.iter().any(|r| r[c] > 0))
        .collect();
    let row_sums: Vec<u64> = table.iter().map(|r| r.iter().sum()).collect();
    let n: u64 = row_sums.iter().sum();

    // Every row concentrated in one shared column: identical distributions.
    if kept.len() < 2 {
        return Ok(ContingencyResult {
            chi2: 0.0,
            p_value: 1.0,
            dof: 0,
            cramers_v: 0.0,
            n,
            columns_used: kept.len(),
            low_expected: false,
        });
    }

    let col_sums: Vec<u64> = kept
        .iter()
        .map(|&c| table.iter().map(|r| r[c]).sum())
        .collect();
    let nf = n as f64;
    let mut chi2 = 0.0;
    let mut low_expected = false;
    for (row, &rs) in table.iter().zip(&row_sums) {
        for (&c, &cs) in kept.iter().zip(&col_sums) {
            let expected = rs as f64 * cs as f64 / nf;
            if expected < 5.0 {
                low_expected = true;
            }
            let diff = row[c] as f64 - expected;
            chi2 += diff * diff / expected;
        }
    }
    let dof = (rows - 1) * (kept.len() - 1);
    let min_dim = (rows - 1).min(kept.len() - 1) as f64;
    let cramers_v = ((chi2 / nf) / min_dim).sqrt().clamp(0.0, 1.0);
    Ok(ContingencyResult {
        chi2,
        p_value: special::chi_square_sf(chi2, dof as f64),
        dof,
        cramers_v,
        n,
        columns_used: kept.len(),
        low_expected,
    })
}

/// Significance marker: `***` below 0.001, `**` below 0.01, `*` below 0.05.
pub fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}
