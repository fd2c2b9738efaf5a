//! Additive-smoothed n-gram scorer: the hermetic stand-in for a trained
//! sequence model behind the [`Scorer`](super::Scorer) interface.

use super::Scorer;
use crate::sem::{Token, VOCAB_SIZE};
use std::collections::BTreeMap;

/// Conditional frequency table over fixed-length contexts with additive
/// smoothing. Contexts shorter than `order - 1` are padded with a
/// begin-of-sequence sentinel outside the vocabulary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NGramScorer {
    order: usize,
    vocab: usize,
    alpha_milli: u64,
    counts: BTreeMap<Vec<u16>, BTreeMap<u16, u32>>,
    context_totals: BTreeMap<Vec<u16>, u32>,
}

/// Sentinel id used to pad begin-of-sequence contexts.
fn bos(vocab: usize) -> u16 {
    vocab as u16
}

impl NGramScorer {
    /// Fits a scorer over arbitrary id sequences. When `eos` is given, each
    /// sequence is terminated with that id before counting so the model can
    /// learn to stop.
    pub fn fit_ids(
        sequences: &[Vec<u16>],
        vocab: usize,
        order: usize,
        alpha: f64,
        eos: Option<u16>,
    ) -> NGramScorer {
        assert!(order >= 1, "order must be at least 1");
        assert!(alpha > 0.0, "additive smoothing requires alpha > 0");
        assert!(!sequences.is_empty(), "empty corpus");
        let mut counts: BTreeMap<Vec<u16>, BTreeMap<u16, u32>> = BTreeMap::new();
        let mut context_totals: BTreeMap<Vec<u16>, u32> = BTreeMap::new();

        for seq in sequences {
            let mut ids: Vec<u16> = vec![bos(vocab); order - 1];
            ids.extend_from_slice(seq);
            if let Some(e) = eos {
                ids.push(e);
            }
            for window in ids.windows(order) {
                let (ctx, tok) = window.split_at(order - 1);
                counts
                    .entry(ctx.to_vec())
                    .or_default()
                    .entry(tok[0])
                    .and_modify(|c| *c += 1)
                    .or_insert(1);
                *context_totals.entry(ctx.to_vec()).or_default() += 1;
            }
        }

        NGramScorer {
            order,
            vocab,
            alpha_milli: (alpha * 1e6).round() as u64,
            counts,
            context_totals,
        }
    }

    fn alpha(&self) -> f64 {
        self.alpha_milli as f64 / 1e6
    }

    pub fn order(&self) -> usize {
        self.order
    }

    fn context_of(&self, prefix: &[u16]) -> Vec<u16> {
        let need = self.order - 1;
        let mut ctx = Vec::with_capacity(need);
        if prefix.len() < need {
            ctx.resize(need - prefix.len(), bos(self.vocab));
            ctx.extend_from_slice(prefix);
        } else {
            ctx.extend_from_slice(&prefix[prefix.len() - need..]);
        }
        ctx
    }

    /// Smoothed conditional probability of `token` after `prefix`.
    pub fn probability(&self, prefix: &[u16], token: u16) -> f64 {
        let ctx = self.context_of(prefix);
        let total = self.context_totals.get(&ctx).copied().unwrap_or(0) as f64;
        let count = self
            .counts
            .get(&ctx)
            .and_then(|m| m.get(&token))
            .copied()
            .unwrap_or(0) as f64;
        (count + self.alpha()) / (total + self.alpha() * self.vocab as f64)
    }

    /// Perplexity of a held-out sequence; finite for any sequence because
    /// smoothing keeps every probability positive.
    pub fn perplexity(&self, sequence: &[u16]) -> f64 {
        assert!(!sequence.is_empty());
        let mut log_sum = 0.0;
        for i in 0..sequence.len() {
            log_sum += self.probability(&sequence[..i], sequence[i]).ln();
        }
        (-log_sum / sequence.len() as f64).exp()
    }
}

impl Scorer for NGramScorer {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn logits(&self, prefix: &[u16]) -> Vec<f64> {
        let ctx = self.context_of(prefix);
        let total = self.context_totals.get(&ctx).copied().unwrap_or(0) as f64;
        let denom = (total + self.alpha() * self.vocab as f64).ln();
        let table = self.counts.get(&ctx);
        (0..self.vocab as u16)
            .map(|t| {
                let count = table.and_then(|m| m.get(&t)).copied().unwrap_or(0) as f64;
                (count + self.alpha()).ln() - denom
            })
            .collect()
    }
}

/// Fits an n-gram scorer on token sequences. Sequences are terminated with a
/// single pad token so decoding strategies can learn to stop.
pub fn ngram_fit(corpus: &[Vec<Token>], order: usize, alpha: f64) -> NGramScorer {
    let ids: Vec<Vec<u16>> = corpus
        .iter()
        .map(|seq| seq.iter().map(|t| t.index() as u16).collect())
        .collect();
    NGramScorer::fit_ids(&ids, VOCAB_SIZE, order, alpha, Some(Token::PAD.index() as u16))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fsa::{random_valid_sequence, BranchProbs};

    fn small_corpus() -> Vec<Vec<Token>> {
        (0..40)
            .map(|s| random_valid_sequence(s, 64, &BranchProbs::default()).unwrap())
            .collect()
    }

    #[test]
    fn unigram_probabilities_track_counts() {
        let corpus = small_corpus();
        let scorer = ngram_fit(&corpus, 1, 0.5);
        let mut counts = vec![0u32; VOCAB_SIZE];
        let mut total = 0u32;
        for seq in &corpus {
            for t in seq {
                counts[t.index() as usize] += 1;
            }
            counts[Token::PAD.index() as usize] += 1; // implicit terminator
            total += seq.len() as u32 + 1;
        }
        for idx in 0..VOCAB_SIZE as u16 {
            let expected =
                (counts[idx as usize] as f64 + 0.5) / (total as f64 + 0.5 * VOCAB_SIZE as f64);
            let actual = scorer.probability(&[], idx);
            assert!((expected - actual).abs() < 1e-12, "token {idx}");
        }
    }

    #[test]
    fn probabilities_normalize_per_context() {
        let corpus = small_corpus();
        for order in [1, 2, 3] {
            let scorer = ngram_fit(&corpus, order, 0.1);
            for prefix_len in [0usize, 1, 5] {
                let prefix: Vec<u16> = corpus[0]
                    .iter()
                    .take(prefix_len)
                    .map(|t| t.index() as u16)
                    .collect();
                let total: f64 = (0..VOCAB_SIZE as u16)
                    .map(|t| scorer.probability(&prefix, t))
                    .sum();
                assert!((total - 1.0).abs() < 1e-9, "order {order} prefix {prefix_len}");
            }
        }
    }

    #[test]
    fn held_out_perplexity_finite() {
        let corpus = small_corpus();
        let scorer = ngram_fit(&corpus, 3, 0.1);
        let held_out: Vec<u16> = random_valid_sequence(9999, 96, &BranchProbs::default())
            .unwrap()
            .iter()
            .map(|t| t.index() as u16)
            .collect();
        let ppl = scorer.perplexity(&held_out);
        assert!(ppl.is_finite() && ppl > 0.0);
    }

    #[test]
    fn refit_is_identical() {
        let corpus = small_corpus();
        let a = ngram_fit(&corpus, 3, 0.1);
        let b = ngram_fit(&corpus, 3, 0.1);
        assert_eq!(a, b);
    }
}
