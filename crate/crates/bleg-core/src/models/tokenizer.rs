//! Word-level tokenizer with punctuation splitting, built once from the
//! curated text-graph corpus.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{ModelError, Result};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const CLS: &str = "<cls>";
pub const GRAPH: &str = "<graph>";

const SPECIALS: [&str; 6] = [PAD, UNK, BOS, EOS, CLS, GRAPH];

/// Split text into word tokens: maximal alphanumeric/underscore runs, plus
/// single punctuation characters. Whitespace separates, nothing else kept.
pub fn word_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() || ch == '_' {
            current.push(ch);
        } else {
            if !current.is_empty() {
                out.push(std::mem::take(&mut current));
            }
            if !ch.is_whitespace() {
                out.push(ch.to_string());
            }
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tokenizer {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Tokenizer {
    /// Build from a corpus. The vocabulary is the sorted set of distinct
    /// word tokens, so the result is independent of corpus ordering.
    pub fn build<'a>(corpus: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut words = BTreeSet::new();
        for text in corpus {
            for tok in word_tokens(text) {
                words.insert(tok);
            }
        }
        if words.is_empty() {
            return Err(ModelError::Config("empty corpus: cannot build a vocabulary".into()));
        }
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(words);
        Ok(Self::from_tokens(tokens))
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self { tokens, index }
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn pad_id(&self) -> u32 {
        0
    }
    pub fn unk_id(&self) -> u32 {
        1
    }
    pub fn bos_id(&self) -> u32 {
        2
    }
    pub fn eos_id(&self) -> u32 {
        3
    }
    pub fn cls_id(&self) -> u32 {
        4
    }
    pub fn graph_id(&self) -> u32 {
        5
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        word_tokens(text)
            .iter()
            .map(|t| self.index.get(t).copied().unwrap_or(1))
            .collect()
    }

    /// Reassemble token ids into text. Specials are skipped; punctuation is
    /// re-glued so serialized-graph lines round-trip exactly and prose comes
    /// back equal up to whitespace normalization.
    pub fn decode(&self, ids: &[u32]) -> String {
        let toks: Vec<&str> = ids
            .iter()
            .filter_map(|&id| {
                let t = self.tokens.get(id as usize)?;
                if SPECIALS.contains(&t.as_str()) {
                    None
                } else {
                    Some(t.as_str())
                }
            })
            .collect();
        let mut out = String::new();
        for (pos, tok) in toks.iter().enumerate() {
            if pos > 0 && needs_space(&toks[..pos], tok) {
                out.push(' ');
            }
            out.push_str(tok);
        }
        out
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(|s| s.as_str())
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.tokens)
            .map_err(|e| ModelError::Config(format!("vocab serialization: {e}")))?;
        std::fs::write(path, json + "\n").map_err(|e| ModelError::Config(format!("vocab write: {e}")))?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ModelError::Config(format!("vocab read: {e}")))?;
        let tokens: Vec<String> = serde_json::from_str(&text)
            .map_err(|e| ModelError::Config(format!("vocab parse: {e}")))?;
        if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()] != SPECIALS.map(String::from) {
            return Err(ModelError::Config("vocabulary file missing special tokens".into()));
        }
        Ok(Self::from_tokens(tokens))
    }
}

const GLUE_BOTH: [&str; 4] = ["[", "]", "-", "/"];
const GLUE_LEFT: [&str; 6] = [",", ";", ":", "!", "?", "."];

fn is_digits(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_digit())
}

fn needs_space(before: &[&str], next: &str) -> bool {
    let prev = before[before.len() - 1];
    if GLUE_BOTH.contains(&next) || GLUE_BOTH.contains(&prev) {
        return false;
    }
    if GLUE_LEFT.contains(&next) {
        return false;
    }
    // decimal point glues to a following digit run: "0" "." "42" -> "0.42"
    if prev == "." && is_digits(next) && before.len() >= 2 && is_digits(before[before.len() - 2]) {
        return false;
    }
    true
}
