//! Curation: score every generation, refine the weak ones once, and write
//! the text-graph dataset D′ (one JSON record per line) plus a quarantine
//! file for anything that never met the bar.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::graphdata::BrainGraph;

use super::backend::{complete_all, TextBackend};
use super::prompt::build_prompt;
use super::response::{parse_response, TextRecord};
use super::score::{Judge, QualityScore};
use super::{PromptGenError, Result};

/// One line of the curated D′ file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DPrimeRecord {
    pub graph_id: usize,
    pub prompt: String,
    pub response: super::response::ParsedResponse,
    pub quality: QualityScore,
    pub provenance: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Quarantined {
    Malformed { graph_id: usize, error: String },
    LowQuality { graph_id: usize, quality: QualityScore, response: super::response::ParsedResponse },
}

#[derive(Debug)]
pub struct CurationOutcome {
    pub passed: Vec<DPrimeRecord>,
    pub quarantined: Vec<Quarantined>,
    pub refinements_issued: usize,
}

fn refinement_prompt(assembled: &str, quality: &QualityScore) -> String {
    format!(
        "{assembled}\n\nYour previous analysis scored low on quality \
(professional expression {:.1}, content relevance {:.1}, repetition {:.1} on a 1-5 scale). \
Rewrite it: use precise neuroscientific terminology, reference only regions that appear in the \
connectivity data, and avoid repeating yourself. Respond with only the JSON object.",
        quality.professional_expression, quality.content_relevance, quality.repetition
    )
}

/// Generate, score, refine-once, and partition records for every graph.
/// Backend calls are batched through `complete_all` (bounded concurrency,
/// input-order results), so the outcome is deterministic for a
/// deterministic backend.
pub fn curate_dataset<B: TextBackend + ?Sized>(
    graphs: &[BrainGraph],
    backend: &B,
    judge: &dyn Judge,
    threshold: f64,
    concurrency: usize,
) -> Result<CurationOutcome> {
    let prompts: Vec<_> = graphs.iter().map(build_prompt).collect::<Result<Vec<_>>>()?;
    let assembled: Vec<String> = prompts.iter().map(|p| p.assembled.clone()).collect();
    let raw_results = complete_all(backend, &assembled, concurrency);

    // first pass: parse (with one structured JSON retry), score
    let mut outcome = CurationOutcome { passed: Vec::new(), quarantined: Vec::new(), refinements_issued: 0 };
    let mut pending_refine: Vec<(usize, QualityScore, String)> = Vec::new();
    let mut first_records: Vec<Option<TextRecord>> = Vec::with_capacity(graphs.len());

    for (id, raw) in raw_results.into_iter().enumerate() {
        let labels = &graphs[id].meta.label_names;
        let record = raw.and_then(|text| match parse_response(&text, labels) {
            Ok(parsed) => Ok(TextRecord {
                graph_id: id,
                raw: text,
                parsed,
                provenance: backend.name().to_string(),
                quality: None,
            }),
            Err(first_err) => {
                let retry = format!(
                    "{}\n\nYour previous response was rejected: {first_err}. \
Respond again with ONLY a valid JSON object matching the required schema.",
                    assembled[id]
                );
                let raw2 = backend.complete(&retry)?;
                let parsed = parse_response(&raw2, labels).map_err(|second| {
                    PromptGenError::MalformedResponse(format!("after one retry: {second}"))
                })?;
                Ok(TextRecord {
                    graph_id: id,
                    raw: raw2,
                    parsed,
                    provenance: backend.name().to_string(),
                    quality: None,
                })
            }
        });
        match record {
            Ok(mut rec) => {
                let q = judge.score(&rec, &graphs[id]);
                rec.quality = Some(q);
                if q.overall >= threshold {
                    first_records.push(Some(rec));
                } else {
                    pending_refine.push((id, q, refinement_prompt(&assembled[id], &q)));
                    first_records.push(Some(rec));
                }
            }
            Err(e) => {
                outcome
                    .quarantined
                    .push(Quarantined::Malformed { graph_id: id, error: e.to_string() });
                first_records.push(None);
            }
        }
    }

    // refinement pass: one regeneration with the critique appended
    let refine_prompts: Vec<String> = pending_refine.iter().map(|(_, _, p)| p.clone()).collect();
    let refine_results = complete_all(backend, &refine_prompts, concurrency);
    outcome.refinements_issued = refine_prompts.len();
    let mut refined: std::collections::BTreeMap<usize, Option<TextRecord>> = Default::default();
    for ((id, _, _), raw) in pending_refine.iter().zip(refine_results) {
        let labels = &graphs[*id].meta.label_names;
        let rec = raw.ok().and_then(|text| {
            parse_response(&text, labels).ok().map(|parsed| TextRecord {
                graph_id: *id,
                raw: text,
                parsed,
                provenance: format!("{}+refined", backend.name()),
                quality: None,
            })
        });
        refined.insert(*id, rec);
    }

    for rec in first_records.into_iter().flatten() {
        let id = rec.graph_id;
        let q = rec.quality.expect("scored above");
        if q.overall >= threshold {
            outcome.passed.push(to_dprime(&assembled[id], rec, q));
            continue;
        }
        // below threshold: prefer the refined record if it clears the bar
        let replacement = refined.remove(&id).flatten().and_then(|mut r| {
            let rq = judge.score(&r, &graphs[id]);
            r.quality = Some(rq);
            (rq.overall >= threshold).then_some((r, rq))
        });
        match replacement {
            Some((r, rq)) => outcome.passed.push(to_dprime(&assembled[id], r, rq)),
            None => outcome.quarantined.push(Quarantined::LowQuality {
                graph_id: id,
                quality: q,
                response: rec.parsed,
            }),
        }
    }
    outcome.passed.sort_by_key(|r| r.graph_id);
    Ok(outcome)
}

fn to_dprime(prompt: &str, rec: TextRecord, quality: QualityScore) -> DPrimeRecord {
    DPrimeRecord {
        graph_id: rec.graph_id,
        prompt: prompt.to_string(),
        response: rec.parsed,
        quality,
        provenance: rec.provenance,
    }
}

/// Write D′: one JSON record per line.
pub fn write_dprime(path: &Path, records: &[DPrimeRecord]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    for r in records {
        writeln!(f, "{}", serde_json::to_string(r)?)?;
    }
    Ok(())
}

pub fn read_dprime(path: &Path) -> Result<Vec<DPrimeRecord>> {
    let f = fs::File::open(path)?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

pub fn write_quarantine(path: &Path, records: &[Quarantined]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    for r in records {
        writeln!(f, "{}", serde_json::to_string(r)?)?;
    }
    Ok(())
}
