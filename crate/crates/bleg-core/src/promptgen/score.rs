//! Heuristic quality scoring on the paper's three dimensions, plus the
//! pluggable judge interface for a remote LLM judge.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::graphdata::BrainGraph;
use crate::models::tokenizer::word_tokens;

use super::backend::TextBackend;
use super::response::TextRecord;

const LEXICON: &str = include_str!("data/medical_terms.txt");
/// Distinct lexicon hits needed for a full professional-expression score.
const LEXICON_FULL_SCORE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityScore {
    pub professional_expression: f64,
    pub content_relevance: f64,
    pub repetition: f64,
    pub overall: f64,
}

impl QualityScore {
    fn new(professional_expression: f64, content_relevance: f64, repetition: f64) -> Self {
        let overall = (professional_expression + content_relevance + repetition) / 3.0;
        Self { professional_expression, content_relevance, repetition, overall }
    }

    pub fn floor() -> Self {
        Self::new(1.0, 1.0, 1.0)
    }
}

pub trait Judge {
    fn score(&self, record: &TextRecord, graph: &BrainGraph) -> QualityScore;
}

/// Repeated 4-gram mass: (total − distinct) / total four-grams.
fn repetition_fraction(tokens: &[String]) -> f64 {
    if tokens.len() < 4 {
        return 0.0;
    }
    let total = tokens.len() - 3;
    let distinct: HashSet<&[String]> = tokens.windows(4).collect();
    (total - distinct.len()) as f64 / total as f64
}

fn repetition_score(fraction: f64) -> f64 {
    if fraction <= 0.05 {
        5.0
    } else if fraction >= 0.40 {
        1.0
    } else {
        5.0 - 4.0 * (fraction - 0.05) / 0.35
    }
}

fn full_text(record: &TextRecord) -> String {
    let mut text = record.parsed.analysis.clone();
    for f in &record.parsed.key_features {
        text.push(' ');
        text.push_str(f);
    }
    text
}

/// Fraction of mentioned region names that are endpoints of actual edges.
/// (Every graph carries the full atlas name list, so bare membership in the
/// region list would score everything 5.)
fn relevance_score(text: &str, graph: &BrainGraph) -> f64 {
    let mut endpoints = HashSet::new();
    for (i, j) in graph.edges() {
        endpoints.insert(graph.regions[i].as_str());
        endpoints.insert(graph.regions[j].as_str());
    }
    let mentioned: Vec<&str> = graph
        .regions
        .iter()
        .map(String::as_str)
        .filter(|name| text.contains(*name))
        .collect();
    if mentioned.is_empty() {
        return 1.0;
    }
    let relevant = mentioned.iter().filter(|m| endpoints.contains(**m)).count();
    1.0 + 4.0 * relevant as f64 / mentioned.len() as f64
}

fn professional_score(text: &str) -> f64 {
    let lower = text.to_lowercase();
    let hits = LEXICON
        .lines()
        .map(str::trim)
        .filter(|term| !term.is_empty() && lower.contains(&term.to_lowercase()))
        .count();
    1.0 + 4.0 * (hits.min(LEXICON_FULL_SCORE) as f64 / LEXICON_FULL_SCORE as f64)
}

/// Heuristic scoring of one record against its graph. Total: every input
/// yields a score, degenerate text bottoms out at the 1.0 floor.
pub fn score_record(record: &TextRecord, graph: &BrainGraph) -> QualityScore {
    let analysis_tokens = word_tokens(&record.parsed.analysis);
    if analysis_tokens.is_empty() {
        return QualityScore::floor();
    }
    let text = full_text(record);
    QualityScore::new(
        professional_score(&text),
        relevance_score(&text, graph),
        repetition_score(repetition_fraction(&analysis_tokens)),
    )
}

#[derive(Default)]
pub struct HeuristicJudge;

impl Judge for HeuristicJudge {
    fn score(&self, record: &TextRecord, graph: &BrainGraph) -> QualityScore {
        score_record(record, graph)
    }
}

/// Judge that asks a backend LLM to grade the three dimensions. Scoring is
/// total: any transport or parse failure falls back to the heuristic.
pub struct RemoteJudge<'a, B: TextBackend> {
    backend: &'a B,
}

impl<'a, B: TextBackend> RemoteJudge<'a, B> {
    pub fn new(backend: &'a B) -> Self {
        Self { backend }
    }

    fn try_remote(&self, record: &TextRecord) -> Option<QualityScore> {
        let prompt = format!(
            "Grade the following brain-network analysis on three dimensions, each an integer 1-5: \
professional_expression, content_relevance, repetition (5 = no repetition). \
Respond with only a JSON object {{\"professional_expression\": n, \"content_relevance\": n, \"repetition\": n}}.\n\n{}",
            record.parsed.analysis
        );
        let raw = self.backend.complete(&prompt).ok()?;
        let v: serde_json::Value = serde_json::from_str(raw.trim()).ok()?;
        let dim = |name: &str| -> Option<f64> {
            let x = v.get(name)?.as_f64()?;
            (1.0..=5.0).contains(&x).then_some(x)
        };
        Some(QualityScore::new(
            dim("professional_expression")?,
            dim("content_relevance")?,
            dim("repetition")?,
        ))
    }
}

impl<B: TextBackend> Judge for RemoteJudge<'_, B> {
    fn score(&self, record: &TextRecord, graph: &BrainGraph) -> QualityScore {
        self.try_remote(record)
            .unwrap_or_else(|| score_record(record, graph))
    }
}
