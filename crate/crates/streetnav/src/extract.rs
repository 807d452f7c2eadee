//! Landmark phrase extraction from instruction text, with the
//! precision/recall/F1 scoring harness and a file protocol for plugging in
//! external extractors.
//!
//! The default extractor is rule-based: it scans for lexicon head nouns
//! (which may span several words), extends each match left over determiner,
//! number, and adjective modifiers, and returns the chunks in first-mention
//! order. External extractors exchange JSONL request/response files instead
//! and slot in behind the same [`LandmarkSet`] type.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum ExtractError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Ordered landmark phrases in first-mention order, deduplicated on the
/// normalized form, every phrase non-empty.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LandmarkSet {
    phrases: Vec<String>,
}

impl LandmarkSet {
    pub fn from_phrases(phrases: Vec<String>) -> Self {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for phrase in phrases {
            let cleaned = phrase.trim().to_lowercase();
            if cleaned.is_empty() {
                continue;
            }
            if seen.insert(normalize_phrase(&cleaned)) {
                out.push(cleaned);
            }
        }
        Self { phrases: out }
    }

    pub fn phrases(&self) -> &[String] {
        &self.phrases
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    pub fn get(&self, idx: usize) -> Option<&String> {
        self.phrases.get(idx)
    }
}

/// Precision, recall, and F1 of one extraction run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Head nouns the extractor anchors on. Multiword heads are matched longest
/// first.
#[derive(Clone, Debug)]
pub struct Lexicon {
    heads: Vec<Vec<String>>,
}

impl Lexicon {
    pub fn new<I, S>(heads: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut heads: Vec<Vec<String>> = heads
            .into_iter()
            .map(|h| {
                h.as_ref()
                    .split_whitespace()
                    .map(|t| t.to_lowercase())
                    .collect()
            })
            .filter(|h: &Vec<String>| !h.is_empty())
            .collect();
        heads.sort();
        heads.dedup();
        // longest heads first so "traffic light" beats "light"
        heads.sort_by_key(|h| std::cmp::Reverse(h.len()));
        Self { heads }
    }

    fn match_at(&self, tokens: &[String], pos: usize) -> Option<usize> {
        for head in &self.heads {
            if pos + head.len() <= tokens.len() && tokens[pos..pos + head.len()] == head[..] {
                return Some(head.len());
            }
        }
        None
    }
}

/// Function words that terminate leftward modifier extension. Determiners
/// and number words are absent on purpose: they belong to the chunk.
const BOUNDARY_WORDS: &[&str] = &[
    "after", "ahead", "along", "and", "are", "at", "be", "before", "behind", "by", "continue",
    "cross", "follow", "forward", "from", "go", "head", "if", "in", "into", "is", "it", "its",
    "keep", "left", "move", "next", "now", "of", "on", "onto", "or", "pass", "past", "proceed",
    "reach", "right", "see", "so", "stop", "straight", "take", "that", "then", "there", "this",
    "through", "to", "toward", "towards", "turn", "until", "walk", "when", "where", "which",
    "while", "will", "with", "you", "your",
];

const NUMBER_WORDS: &[&str] = &[
    "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven",
    "twelve",
];

fn is_determiner(token: &str) -> bool {
    matches!(token, "a" | "an" | "the")
}

fn is_number(token: &str) -> bool {
    NUMBER_WORDS.contains(&token)
        || (!token.is_empty() && token.chars().all(|c| c.is_ascii_digit()))
}

fn is_modifier(token: &str) -> bool {
    if is_determiner(token) || is_number(token) {
        return true;
    }
    // anything that is not a known function word counts as an adjective
    !BOUNDARY_WORDS.contains(&token)
}

/// Splits into lowercase tokens, remembering which tokens ended a sentence
/// so chunks never cross sentence boundaries.
fn tokenize(text: &str) -> (Vec<String>, Vec<bool>) {
    let mut tokens = Vec::new();
    let mut ends_sentence = Vec::new();
    for raw in text.split_whitespace() {
        let trimmed = raw.trim_matches(|c: char| !c.is_alphanumeric() && c != '-');
        if trimmed.is_empty() {
            continue;
        }
        tokens.push(trimmed.to_lowercase());
        ends_sentence.push(raw.ends_with(['.', '!', '?', ';', ',']));
    }
    (tokens, ends_sentence)
}

/// Extracts maximal noun chunks whose head noun is in the lexicon, extending
/// left over determiner/number/adjective modifiers, in first-mention order.
pub fn extract_landmarks(text: &str, lexicon: &Lexicon) -> LandmarkSet {
    let (tokens, ends_sentence) = tokenize(text);
    let mut phrases = Vec::new();
    let mut pos = 0;
    while pos < tokens.len() {
        if let Some(head_len) = lexicon.match_at(&tokens, pos) {
            let mut start = pos;
            while start > 0 && is_modifier(&tokens[start - 1]) && !ends_sentence[start - 1] {
                start -= 1;
            }
            phrases.push(tokens[start..pos + head_len].join(" "));
            pos += head_len;
        } else {
            pos += 1;
        }
    }
    LandmarkSet::from_phrases(phrases)
}

/// Lowercase, strip leading articles, collapse whitespace.
pub fn normalize_phrase(phrase: &str) -> String {
    let tokens: Vec<&str> = phrase.split_whitespace().collect();
    let mut start = 0;
    while start < tokens.len() && is_determiner(&tokens[start].to_lowercase()) {
        start += 1;
    }
    if start == tokens.len() {
        // the phrase is nothing but articles; keep it rather than vanish
        start = 0;
    }
    tokens[start..].join(" ").to_lowercase()
}

/// Exact-match precision/recall/F1 over normalized phrases. Both sides empty
/// scores 1.0 across the board.
pub fn score_extraction(predicted: &LandmarkSet, gold: &LandmarkSet) -> Prf1 {
    if predicted.is_empty() && gold.is_empty() {
        return Prf1 {
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
        };
    }
    let predicted_norm: BTreeSet<String> =
        predicted.phrases().iter().map(|p| normalize_phrase(p)).collect();
    let gold_norm: BTreeSet<String> = gold.phrases().iter().map(|p| normalize_phrase(p)).collect();
    let matched = predicted_norm.intersection(&gold_norm).count() as f64;
    let precision = if predicted_norm.is_empty() {
        0.0
    } else {
        matched / predicted_norm.len() as f64
    };
    let recall = if gold_norm.is_empty() {
        0.0
    } else {
        matched / gold_norm.len() as f64
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Prf1 {
        precision,
        recall,
        f1,
    }
}

// ---------------------------------------------------------------------------
// External extractor protocol
// ---------------------------------------------------------------------------

/// One line of the request file handed to an external extractor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractionRequest {
    pub id: String,
    pub text: String,
    pub prompt: String,
}

/// One line of the response file produced by an external extractor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractionResponse {
    pub id: String,
    pub phrases: Vec<String>,
}

pub fn write_requests(path: &Path, requests: &[ExtractionRequest]) -> Result<(), ExtractError> {
    let mut file = fs::File::create(path)?;
    for req in requests {
        serde_json::to_writer(&mut file, req).map_err(|e| ExtractError::Parse {
            line: 0,
            msg: e.to_string(),
        })?;
        writeln!(file)?;
    }
    Ok(())
}

pub fn read_responses(path: &Path) -> Result<Vec<ExtractionResponse>, ExtractError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let resp: ExtractionResponse =
            serde_json::from_str(&line).map_err(|e| ExtractError::Parse {
                line: idx + 1,
                msg: e.to_string(),
            })?;
        out.push(resp);
    }
    Ok(out)
}
