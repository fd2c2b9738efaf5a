//! Corpus ingestion, synthetic generation, and split conventions. Entries
//! are validated on the way in: sequences must parse and every pair must fit
//! the 12-primitive cap; offending lines are dropped and counted.

use crate::fsa::{random_valid_sequence, BranchProbs, GenError};
use crate::sem::{
    parse_model, serialize_model, tokens_from_text, validate_sequence, CadModel,
    Token,
};
use crate::tokenize::{segment_primitives, Variant};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    VqTrain,
    LlmTrain,
    Val,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Ingested,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusEntry {
    pub id: String,
    pub tokens: Vec<Token>,
    pub source: Source,
    pub split: Option<Split>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    pub entries: Vec<CorpusEntry>,
    /// Lines rejected during ingestion, with reasons.
    pub dropped: Vec<(usize, String)>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sequences(&self) -> Vec<Vec<Token>> {
        self.entries.iter().map(|e| e.tokens.clone()).collect()
    }

    pub fn of_split(&self, split: Split) -> Vec<&CorpusEntry> {
        self.entries
            .iter()
            .filter(|e| e.split == Some(split))
            .collect()
    }

    /// Canonical JSONL: `{"id": ..., "tokens": ["line", "10", ...]}`.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for entry in &self.entries {
            let symbols: Vec<String> = entry.tokens.iter().map(|t| t.symbol()).collect();
            out.push_str(
                &serde_json::json!({"id": entry.id, "tokens": symbols}).to_string(),
            );
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line} is not a recognizable corpus record")]
    MalformedLine { line: usize },
    #[error("split ratios must be non-negative and sum to 1")]
    BadRatios,
    #[error(transparent)]
    Budget(#[from] GenError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Deserialize)]
struct RawLine {
    id: String,
    #[serde(default)]
    tokens: Option<Vec<String>>,
    #[serde(default)]
    model: Option<CadModel>,
}

/// Checks the entry invariants: parses syntactically and every pair fits
/// the primitive cap at curve granularity (the strictest variant).
fn entry_reject_reason(tokens: &[Token]) -> Option<String> {
    let report = validate_sequence(tokens);
    if let Some(err) = report.error {
        return Some(format!("parse: {err}"));
    }
    let model = parse_model(tokens).expect("just validated");
    let mut offset = 0;
    for (sketch, _) in &model.pairs {
        let pair_len = tokens[offset..]
            .iter()
            .position(|&t| t == Token::EXTRUSION_END)
            .expect("validated model")
            + 1;
        if let Err(e) = segment_primitives(&tokens[offset..offset + pair_len], Variant::Curve) {
            return Some(format!("cap: {e}"));
        }
        let _ = sketch;
        offset += pair_len;
    }
    None
}

/// Streams a JSONL corpus. Records carry either a symbol list or a
/// structured model; invalid and over-cap entries are dropped with the
/// reason recorded.
pub fn ingest_jsonl_reader<R: Read>(reader: R) -> Result<Corpus, CorpusError> {
    let reader = BufReader::new(reader);
    let mut corpus = Corpus::default();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawLine = serde_json::from_str(&line)
            .map_err(|_| CorpusError::MalformedLine { line: line_no })?;
        let tokens = match (raw.tokens, raw.model) {
            (Some(symbols), _) => match tokens_from_text(&symbols.join(" ")) {
                Ok(tokens) => tokens,
                Err(e) => {
                    corpus.dropped.push((line_no, e.to_string()));
                    continue;
                }
            },
            (None, Some(model)) => {
                if !model.is_valid() {
                    corpus
                        .dropped
                        .push((line_no, "structured model violates invariants".to_string()));
                    continue;
                }
                serialize_model(&model)
            }
            (None, None) => return Err(CorpusError::MalformedLine { line: line_no }),
        };
        if let Some(reason) = entry_reject_reason(&tokens) {
            corpus.dropped.push((line_no, reason));
            continue;
        }
        corpus.entries.push(CorpusEntry {
            id: raw.id,
            tokens,
            source: Source::Ingested,
            split: None,
        });
    }
    Ok(corpus)
}

pub fn ingest_jsonl(path: &Path) -> Result<Corpus, CorpusError> {
    let file = std::fs::File::open(path)?;
    ingest_jsonl_reader(file)
}

/// Reads JSONL records without validating grammar or caps: evaluation
/// inputs legitimately contain invalid sequences. Symbols must still be
/// decodable.
pub fn read_jsonl_raw(path: &Path) -> Result<Vec<(String, Vec<Token>)>, CorpusError> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawLine = serde_json::from_str(&line)
            .map_err(|_| CorpusError::MalformedLine { line: line_no })?;
        let tokens = match (raw.tokens, raw.model) {
            (Some(symbols), _) => tokens_from_text(&symbols.join(" "))
                .map_err(|_| CorpusError::MalformedLine { line: line_no })?,
            (None, Some(model)) => serialize_model(&model),
            (None, None) => return Err(CorpusError::MalformedLine { line: line_no }),
        };
        out.push((raw.id, tokens));
    }
    Ok(out)
}

/// Synthesizes `n` valid entries, resampling the rare draws that fail
/// validation or the primitive cap.
pub fn synth_corpus(
    seed: u64,
    n: usize,
    budget: usize,
    probs: &BranchProbs,
) -> Result<Corpus, CorpusError> {
    assert!(n >= 1);
    let mut seeder = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        let mut tokens = None;
        for _retry in 0..16 {
            let entry_seed: u64 = seeder.random();
            let candidate = random_valid_sequence(entry_seed, budget, probs)?;
            if entry_reject_reason(&candidate).is_none() && validate_sequence(&candidate).valid {
                tokens = Some(candidate);
                break;
            }
        }
        let tokens = tokens.expect("grammar generator stays within its own constraints");
        entries.push(CorpusEntry {
            id: format!("synth-{seed}-{i}"),
            tokens,
            source: Source::Synthetic,
            split: None,
        });
    }
    Ok(Corpus {
        entries,
        dropped: Vec::new(),
    })
}

/// Seeded shuffle followed by partition into vq-train / llm-train / val /
/// test. The default ratios realize the train-half-for-the-codec
/// convention.
pub const DEFAULT_SPLIT_RATIOS: [f64; 4] = [0.45, 0.45, 0.05, 0.05];

pub fn split_corpus(
    corpus: &mut Corpus,
    seed: u64,
    ratios: [f64; 4],
) -> Result<(), CorpusError> {
    if ratios.iter().any(|&r| r < 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(CorpusError::BadRatios);
    }
    let n = corpus.entries.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Fisher-Yates, deterministic per seed.
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let splits = [Split::VqTrain, Split::LlmTrain, Split::Val, Split::Test];
    let mut cumulative = 0.0;
    let mut boundaries = [0usize; 4];
    for (i, &r) in ratios.iter().enumerate() {
        cumulative += r;
        boundaries[i] = (cumulative * n as f64).round() as usize;
    }
    boundaries[3] = n;
    let mut start = 0;
    for (split, &end) in splits.iter().zip(&boundaries) {
        for &idx in &order[start..end] {
            corpus.entries[idx].split = Some(*split);
        }
        start = end;
    }
    Ok(())
}

/// Sidecar manifest persisting a split assignment.
pub fn split_manifest(corpus: &Corpus, seed: u64, ratios: [f64; 4]) -> serde_json::Value {
    let assignments: BTreeMap<&str, Option<Split>> = corpus
        .entries
        .iter()
        .map(|e| (e.id.as_str(), e.split))
        .collect();
    serde_json::json!({
        "schema_version": 1,
        "seed": seed,
        "ratios": ratios,
        "assignments": assignments,
    })
}
