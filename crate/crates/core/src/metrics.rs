//! Exact-match accuracy and token-level precision, recall and F1.
//!
//! Answers are canonicalized before comparison: surrounding whitespace is
//! trimmed, inner runs of whitespace collapse to one space, and text is
//! lowercased. Diacritics are kept, so distinct Vietnamese words never merge.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    #[serde(deserialize_with = "jsonl::id_string")]
    pub id: String,
    pub prediction: String,
    pub ground_truth: String,
}

impl PredictionRecord {
    pub fn new(id: impl Into<String>, prediction: impl Into<String>, ground_truth: impl Into<String>) -> Self {
        PredictionRecord {
            id: id.into(),
            prediction: prediction.into(),
            ground_truth: ground_truth.into(),
        }
    }
}

/// How repeated tokens count toward the overlap `|P ∩ GT|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenOverlap {
    /// Unique tokens only.
    #[default]
    Set,
    /// Each token counts min(count in P, count in GT) times.
    Multiset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Per-record scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordScores {
    pub exact: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn canonicalize(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn tokens(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_lowercase).collect()
}

fn counts(tokens: &[String], mode: TokenOverlap) -> BTreeMap<&str, usize> {
    let mut m = BTreeMap::new();
    for t in tokens {
        let c = m.entry(t.as_str()).or_insert(0);
        *c = match mode {
            TokenOverlap::Set => 1,
            TokenOverlap::Multiset => *c + 1,
        };
    }
    m
}

pub fn f1_of(p: f64, r: f64) -> f64 {
    if p == 0.0 && r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Scores one record. An empty ground truth is a data error; an empty
/// prediction has precision 0.
pub fn score_record(rec: &PredictionRecord, mode: TokenOverlap) -> Result<RecordScores> {
    let pred = tokens(&rec.prediction);
    let gt = tokens(&rec.ground_truth);
    if gt.is_empty() {
        return Err(Error::data(format!("record {:?} has an empty ground truth", rec.id)));
    }
    let pc = counts(&pred, mode);
    let gc = counts(&gt, mode);
    let overlap: usize = pc
        .iter()
        .map(|(t, n)| gc.get(t).map_or(0, |m| (*n).min(*m)))
        .sum();
    let p_total: usize = pc.values().sum();
    let g_total: usize = gc.values().sum();
    let precision = if p_total == 0 { 0.0 } else { overlap as f64 / p_total as f64 };
    let recall = overlap as f64 / g_total as f64;
    Ok(RecordScores {
        exact: if pred == gt { 1.0 } else { 0.0 },
        precision,
        recall,
        f1: f1_of(precision, recall),
    })
}

/// Mean that does not depend on record order: values are summed in ascending order.
fn order_free_mean(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

fn nonempty(records: &[PredictionRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::argument("metrics over an empty record set"));
    }
    Ok(())
}

pub fn accuracy(records: &[PredictionRecord]) -> Result<f64> {
    nonempty(records)?;
    let hits = records
        .iter()
        .filter(|r| canonicalize(&r.prediction) == canonicalize(&r.ground_truth))
        .count();
    Ok(hits as f64 / records.len() as f64)
}

fn mean_of(records: &[PredictionRecord], mode: TokenOverlap, pick: fn(&RecordScores) -> f64) -> Result<f64> {
    nonempty(records)?;
    let v = records
        .iter()
        .map(|r| score_record(r, mode).map(|s| pick(&s)))
        .collect::<Result<Vec<_>>>()?;
    Ok(order_free_mean(v))
}

pub fn precision(records: &[PredictionRecord], mode: TokenOverlap) -> Result<f64> {
    mean_of(records, mode, |s| s.precision)
}

pub fn recall(records: &[PredictionRecord], mode: TokenOverlap) -> Result<f64> {
    mean_of(records, mode, |s| s.recall)
}

pub fn f1(records: &[PredictionRecord], mode: TokenOverlap) -> Result<f64> {
    mean_of(records, mode, |s| s.f1)
}

/// All four metrics. Record ids must be unique.
pub fn evaluate(records: &[PredictionRecord], mode: TokenOverlap) -> Result<MetricsReport> {
    nonempty(records)?;
    let mut seen = BTreeSet::new();
    for r in records {
        if !seen.insert(r.id.as_str()) {
            return Err(Error::data(format!("duplicate record id {:?}", r.id)));
        }
    }
    let scores = records
        .iter()
        .map(|r| score_record(r, mode))
        .collect::<Result<Vec<_>>>()?;
    let col = |f: fn(&RecordScores) -> f64| order_free_mean(scores.iter().map(f).collect());
    Ok(MetricsReport {
        n: records.len(),
        accuracy: accuracy(records)?,
        precision: col(|s| s.precision),
        recall: col(|s| s.recall),
        f1: col(|s| s.f1),
    })
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    jsonl::read(path)
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    jsonl::write(path, records)
}
