//! SQuAD-style answer normalization, exact match, token F1 and dataset-level
//! aggregation.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use unicode_properties::{GeneralCategoryGroup, UnicodeGeneralCategory};

use crate::ingest::{PredictionSet, QaDataset};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("no gold answers to score against")]
    EmptyGolds,
    #[error("cannot evaluate against an empty dataset")]
    EmptyDataset,
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation() || c.general_category_group() == GeneralCategoryGroup::Punctuation
}

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Lowercases, strips punctuation (ASCII plus Unicode category P), drops
/// the articles "a", "an", "the" as whole tokens and collapses whitespace.
pub fn normalize_answer(text: &str) -> String {
    let stripped: String = text
        .to_lowercase()
        .chars()
        .filter(|&c| !is_punctuation(c))
        .collect();
    let mut out = String::with_capacity(stripped.len());
    for token in stripped
        .split_whitespace()
        .filter(|t| !ARTICLES.contains(t))
    {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(token);
    }
    out
}

pub fn exact_match<S: AsRef<str>>(prediction: &str, golds: &[S]) -> Result<u8, MetricsError> {
    if golds.is_empty() {
        return Err(MetricsError::EmptyGolds);
    }
    let pred = normalize_answer(prediction);
    Ok(golds.iter().any(|g| normalize_answer(g.as_ref()) == pred) as u8)
}

fn f1_against(pred_tokens: &[&str], gold: &str) -> f64 {
    let gold_norm = normalize_answer(gold);
    let gold_tokens: Vec<&str> = gold_norm.split_whitespace().collect();
    if pred_tokens.is_empty() && gold_tokens.is_empty() {
        return 1.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gold_tokens {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in pred_tokens {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / pred_tokens.len() as f64;
    let recall = overlap as f64 / gold_tokens.len() as f64;
    (2.0 * precision * recall) / (precision + recall)
}

/// Multiset token F1 between normalized strings, maximized over golds.
pub fn token_f1<S: AsRef<str>>(prediction: &str, golds: &[S]) -> Result<f64, MetricsError> {
    if golds.is_empty() {
        return Err(MetricsError::EmptyGolds);
    }
    let pred_norm = normalize_answer(prediction);
    let pred_tokens: Vec<&str> = pred_norm.split_whitespace().collect();
    Ok(golds
        .iter()
        .map(|g| f1_against(&pred_tokens, g.as_ref()))
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleScore {
    pub example_id: String,
    pub em: u8,
    pub f1: f64,
}

/// Per-example scores in dataset order, and aggregates on a 0–100 scale.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_example: Vec<ExampleScore>,
    pub aggregate_em: f64,
    pub aggregate_f1: f64,
    pub missing_predictions: Vec<String>,
}

/// Rounds to two decimals for display and serialized output.
pub fn round2(x: f64) -> f64 {
    let r = (x * 100.0).round() / 100.0;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

#[derive(Serialize)]
struct ReportJson<'a> {
    exact_match: f64,
    f1: f64,
    missing: &'a [String],
}

impl EvalReport {
    /// Aggregates over the given scores. F1 is summed in ascending id order
    /// so the result does not depend on the order of `per_example`.
    pub fn from_scores(per_example: Vec<ExampleScore>, missing_predictions: Vec<String>) -> Self {
        let n = per_example.len().max(1) as f64;
        let em_sum: u64 = per_example.iter().map(|s| s.em as u64).sum();
        let mut by_id: Vec<&ExampleScore> = per_example.iter().collect();
        by_id.sort_by(|a, b| a.example_id.cmp(&b.example_id));
        let f1_sum: f64 = by_id.iter().map(|s| s.f1).sum();
        Self {
            aggregate_em: 100.0 * em_sum as f64 / n,
            aggregate_f1: 100.0 * f1_sum / n,
            per_example,
            missing_predictions,
        }
    }

    pub fn len(&self) -> usize {
        self.per_example.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_example.is_empty()
    }

    pub fn score(&self, id: &str) -> Option<&ExampleScore> {
        self.per_example.iter().find(|s| s.example_id == id)
    }

    pub fn score_index(&self) -> HashMap<&str, &ExampleScore> {
        self.per_example
            .iter()
            .map(|s| (s.example_id.as_str(), s))
            .collect()
    }

    /// `{"exact_match": .., "f1": .., "missing": [..]}` with 2-decimal numbers.
    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(&ReportJson {
            exact_match: round2(self.aggregate_em),
            f1: round2(self.aggregate_f1),
            missing: &self.missing_predictions,
        })
        .expect("report serialization cannot fail");
        out.push(b'\n');
        out
    }

    /// Per-example CSV with header `id,em,f1`.
    pub fn per_example_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["id", "em", "f1"])
            .expect("in-memory csv write");
        for s in &self.per_example {
            w.write_record([
                s.example_id.clone(),
                s.em.to_string(),
                format!("{:.6}", s.f1),
            ])
            .expect("in-memory csv write");
        }
        w.into_inner().expect("in-memory csv flush")
    }
}

/// Scores every dataset example. Examples without a prediction score 0 on
/// both metrics and are listed in `missing_predictions`.
pub fn evaluate(preds: &PredictionSet, dataset: &QaDataset) -> Result<EvalReport, MetricsError> {
    if dataset.is_empty() {
        return Err(MetricsError::EmptyDataset);
    }
    let per_example = dataset
        .examples()
        .par_iter()
        .map(|e| {
            let golds: Vec<&str> = e.gold_texts().collect();
            let (em, f1) = match preds.get(&e.id) {
                Some(p) => (exact_match(p, &golds)?, token_f1(p, &golds)?),
                None => (0, 0.0),
            };
            Ok(ExampleScore {
                example_id: e.id.clone(),
                em,
                f1,
            })
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;
    let missing = dataset
        .examples()
        .iter()
        .filter(|e| preds.get(&e.id).is_none())
        .map(|e| e.id.clone())
        .collect();
    Ok(EvalReport::from_scores(per_example, missing))
}
