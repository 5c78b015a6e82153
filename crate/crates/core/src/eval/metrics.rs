//! Evaluation metrics: retrieval hit rate at a cutoff and answer exact
//! match with numeric normalization.

use std::str::FromStr;

use thiserror::Error;

use crate::reasoning::Decimal;

/// Errors raised by metric computation.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("cannot compute metrics over zero records")]
    EmptyRecords,
    #[error("hit rate cutoff k must be at least 1")]
    ZeroCutoff,
}

/// One question's retrieval outcome for hit-rate computation.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingRecord {
    /// Ranked document ids, best first.
    pub ranking: Vec<String>,
    /// The single gold document for the question.
    pub gold_doc_id: String,
}

/// Fraction of records whose gold document appears in the first `k` ranked
/// documents. Errors on an empty record set or `k == 0`.
pub fn hit_at_k(records: &[RankingRecord], k: usize) -> Result<f64, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyRecords);
    }
    if k == 0 {
        return Err(MetricsError::ZeroCutoff);
    }
    let hits = records
        .iter()
        .filter(|r| r.ranking.iter().take(k).any(|d| *d == r.gold_doc_id))
        .count();
    Ok(hits as f64 / records.len() as f64)
}

/// Exact-match comparison between a predicted answer and the gold answer.
///
/// Both strings are normalized (trimmed, casefolded, internal whitespace
/// collapsed, `$` and thousands commas stripped). If both then read as plain
/// numbers — optional sign, optional fraction, optional trailing `%` — they
/// compare numerically, with the prediction rounded to the gold's number of
/// decimal places first; a `%` present on one side but not the other is a
/// mismatch. Otherwise the normalized strings must be equal.
pub fn exact_match(prediction: &str, gold: &str) -> bool {
    let p = normalize(prediction);
    let g = normalize(gold);
    match (read_numeric(&p), read_numeric(&g)) {
        (Some(pn), Some(gn)) => {
            if pn.percent != gn.percent {
                return false;
            }
            pn.value.round_dp_half_even(gn.decimal_places) == gn.value
        }
        _ => p == g,
    }
}

fn normalize(s: &str) -> String {
    let stripped: String = s.chars().filter(|c| !matches!(c, '$' | ',')).collect();
    stripped
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

struct NumericAnswer {
    value: Decimal,
    percent: bool,
    decimal_places: u32,
}

/// Read a normalized answer as one plain number, whitespace ignored
/// (`"9.29 %"` counts as `9.29%`). Anything with extra text is not numeric.
fn read_numeric(normalized: &str) -> Option<NumericAnswer> {
    let compact: String = normalized.chars().filter(|c| !c.is_whitespace()).collect();
    let (body, percent) = match compact.strip_suffix('%') {
        Some(rest) => (rest, true),
        None => (compact.as_str(), false),
    };
    if body.is_empty() {
        return None;
    }
    let digits = body.strip_prefix('-').unwrap_or(body);
    let valid = match digits.split_once('.') {
        Some((i, f)) => {
            !i.is_empty()
                && !f.is_empty()
                && i.bytes().all(|b| b.is_ascii_digit())
                && f.bytes().all(|b| b.is_ascii_digit())
        }
        None => !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()),
    };
    if !valid {
        return None;
    }
    let decimal_places = digits
        .split_once('.')
        .map(|(_, f)| f.len() as u32)
        .unwrap_or(0);
    let value = Decimal::from_str(body).ok()?;
    Some(NumericAnswer {
        value,
        percent,
        decimal_places,
    })
}
