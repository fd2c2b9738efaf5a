//! Byte-pair encoding over the 77-symbol base vocabulary: greedy
//! most-frequent-pair merges with lexicographic tie-breaking, lossless by
//! construction.

use crate::sem::{Token, VOCAB_SIZE};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum BpeError {
    #[error("no symbol pair occurs twice after {merges_done} merges; cannot reach {requested}")]
    InsufficientCorpus { merges_done: usize, requested: usize },
    #[error("malformed merges line {line}")]
    MalformedMerges { line: usize },
}

/// Symbol id: 0..77 are the base tokens, 77.. name merged pairs in rank
/// order.
pub type SymbolId = u32;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BpeModel {
    /// Merge table in rank order.
    merges: Vec<(SymbolId, SymbolId)>,
    /// Lookup from pair to (rank, merged id).
    ranks: HashMap<(SymbolId, SymbolId), (usize, SymbolId)>,
}

impl BpeModel {
    pub fn merge_count(&self) -> usize {
        self.merges.len()
    }

    pub fn merges(&self) -> &[(SymbolId, SymbolId)] {
        &self.merges
    }

    /// Applies the trained merges greedily in rank order.
    pub fn encode(&self, tokens: &[Token]) -> Vec<SymbolId> {
        let mut symbols: Vec<SymbolId> = tokens.iter().map(|t| t.index() as SymbolId).collect();
        loop {
            // Lowest-rank applicable merge first, matching training order.
            let mut best: Option<(usize, usize, SymbolId)> = None;
            for i in 0..symbols.len().saturating_sub(1) {
                if let Some(&(rank, id)) = self.ranks.get(&(symbols[i], symbols[i + 1])) {
                    match best {
                        Some((r, _, _)) if r <= rank => {}
                        _ => best = Some((rank, i, id)),
                    }
                }
            }
            let Some((rank, _, id)) = best else { break };
            let (left, right) = self.merges[rank];
            let mut out = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && symbols[i] == left && symbols[i + 1] == right {
                    out.push(id);
                    i += 2;
                } else {
                    out.push(symbols[i]);
                    i += 1;
                }
            }
            symbols = out;
        }
        symbols
    }

    /// Expands merged symbols back to base tokens.
    pub fn decode(&self, symbols: &[SymbolId]) -> Vec<Token> {
        let mut out = Vec::new();
        for &s in symbols {
            self.expand(s, &mut out);
        }
        out
    }

    fn expand(&self, symbol: SymbolId, out: &mut Vec<Token>) {
        if (symbol as usize) < VOCAB_SIZE {
            out.push(Token::new(symbol as u8).expect("base symbol"));
        } else {
            let (left, right) = self.merges[symbol as usize - VOCAB_SIZE];
            self.expand(left, out);
            self.expand(right, out);
        }
    }

    /// One merge per line, rank order: `left_id right_id`.
    pub fn to_merges_text(&self) -> String {
        let mut text = String::new();
        for (left, right) in &self.merges {
            text.push_str(&format!("{left} {right}\n"));
        }
        text
    }

    pub fn from_merges_text(text: &str) -> Result<BpeModel, BpeError> {
        let mut merges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let left: SymbolId = parts
                .next()
                .and_then(|p| p.parse().ok())
                .ok_or(BpeError::MalformedMerges { line: i + 1 })?;
            let right: SymbolId = parts
                .next()
                .and_then(|p| p.parse().ok())
                .ok_or(BpeError::MalformedMerges { line: i + 1 })?;
            if parts.next().is_some() {
                return Err(BpeError::MalformedMerges { line: i + 1 });
            }
            merges.push((left, right));
        }
        Ok(BpeModel::from_merges(merges))
    }

    fn from_merges(merges: Vec<(SymbolId, SymbolId)>) -> BpeModel {
        let ranks = merges
            .iter()
            .enumerate()
            .map(|(rank, &pair)| (pair, (rank, (VOCAB_SIZE + rank) as SymbolId)))
            .collect();
        BpeModel { merges, ranks }
    }
}

/// Trains a BPE model: repeatedly merge the most frequent adjacent pair,
/// breaking frequency ties toward the numerically smallest pair.
pub fn bpe_fit(corpus: &[Vec<Token>], merge_count: usize) -> Result<BpeModel, BpeError> {
    assert!(!corpus.is_empty(), "BPE training needs a corpus");
    let mut sequences: Vec<Vec<SymbolId>> = corpus
        .iter()
        .map(|seq| seq.iter().map(|t| t.index() as SymbolId).collect())
        .collect();
    let mut merges: Vec<(SymbolId, SymbolId)> = Vec::with_capacity(merge_count);

    for rank in 0..merge_count {
        let mut pair_counts: HashMap<(SymbolId, SymbolId), u32> = HashMap::new();
        for seq in &sequences {
            for window in seq.windows(2) {
                *pair_counts.entry((window[0], window[1])).or_insert(0) += 1;
            }
        }
        let best = pair_counts
            .iter()
            .filter(|&(_, &count)| count >= 2)
            .map(|(&pair, &count)| (count, pair))
            .min_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let Some((_, pair)) = best else {
            return Err(BpeError::InsufficientCorpus {
                merges_done: rank,
                requested: merge_count,
            });
        };
        let new_id = (VOCAB_SIZE + rank) as SymbolId;
        merges.push(pair);
        for seq in &mut sequences {
            let mut out = Vec::with_capacity(seq.len());
            let mut i = 0;
            while i < seq.len() {
                if i + 1 < seq.len() && seq[i] == pair.0 && seq[i + 1] == pair.1 {
                    out.push(new_id);
                    i += 2;
                } else {
                    out.push(seq[i]);
                    i += 1;
                }
            }
            *seq = out;
        }
    }
    Ok(BpeModel::from_merges(merges))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fsa::{random_valid_sequence, BranchProbs};

    #[test]
    fn zero_merges_is_identity() {
        let corpus = vec![vec![Token::LINE, Token::CURVE_END, Token::LOOP_END]];
        let model = bpe_fit(&corpus, 0).unwrap();
        let encoded = model.encode(&corpus[0]);
        assert_eq!(encoded, vec![1, 4, 5]);
        assert_eq!(model.decode(&encoded), corpus[0]);
    }

    #[test]
    fn first_merge_is_the_repeated_pair() {
        let corpus = vec![vec![Token::CURVE_END, Token::LOOP_END]; 5];
        let model = bpe_fit(&corpus, 1).unwrap();
        assert_eq!(model.merges(), &[(4, 5)]);
        let encoded = model.encode(&corpus[0]);
        assert_eq!(encoded, vec![VOCAB_SIZE as SymbolId]);
    }

    #[test]
    fn frequency_ties_break_to_smallest_pair() {
        // (1 4) and (2 5) both occur twice; the smaller pair wins.
        let corpus = vec![
            vec![Token::LINE, Token::CURVE_END],
            vec![Token::LINE, Token::CURVE_END],
            vec![Token::ARC, Token::LOOP_END],
            vec![Token::ARC, Token::LOOP_END],
        ];
        let model = bpe_fit(&corpus, 1).unwrap();
        assert_eq!(model.merges(), &[(1, 4)]);
    }

    #[test]
    fn encode_decode_round_trips_training_set() {
        let corpus: Vec<Vec<Token>> = (0..80)
            .map(|s| random_valid_sequence(s, 96, &BranchProbs::default()).unwrap())
            .collect();
        let model = bpe_fit(&corpus, 200).unwrap();
        for seq in &corpus {
            let encoded = model.encode(seq);
            assert!(encoded.len() <= seq.len());
            assert_eq!(model.decode(&encoded), *seq);
        }
        // Held-out sequences round-trip too.
        let held_out = random_valid_sequence(5555, 96, &BranchProbs::default()).unwrap();
        assert_eq!(model.decode(&model.encode(&held_out)), held_out);
    }

    #[test]
    fn insufficient_corpus_reported() {
        let corpus = vec![vec![Token::LINE, Token::CURVE_END]];
        let err = bpe_fit(&corpus, 3).unwrap_err();
        assert_eq!(
            err,
            BpeError::InsufficientCorpus {
                merges_done: 0,
                requested: 3
            }
        );
    }

    #[test]
    fn merges_text_round_trips() {
        let corpus: Vec<Vec<Token>> = (0..40)
            .map(|s| random_valid_sequence(s, 64, &BranchProbs::default()).unwrap())
            .collect();
        let model = bpe_fit(&corpus, 50).unwrap();
        let text = model.to_merges_text();
        let reloaded = BpeModel::from_merges_text(&text).unwrap();
        assert_eq!(model, reloaded);
        assert!(BpeModel::from_merges_text("1 2 3\n").is_err());
    }
}
