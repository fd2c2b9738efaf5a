//! Frozen mock embedding/logit pair standing in for a pretrained backbone's
//! input and output layers. Seeded at construction and never trained.

use super::mat::Mat;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct MockBackbone {
    pub vocab: usize,
    pub d_tok: usize,
    /// vocab x d_tok embedding table.
    pub embed: Mat,
    /// d_tok x vocab logit map.
    pub logit: Mat,
}

impl MockBackbone {
    pub fn seeded(vocab: usize, d_tok: usize, seed: u64) -> MockBackbone {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (d_tok as f64).sqrt();
        MockBackbone {
            vocab,
            d_tok,
            embed: Mat::randn(vocab, d_tok, scale, &mut rng),
            logit: Mat::randn(d_tok, vocab, scale, &mut rng),
        }
    }

    pub(crate) fn from_parts(embed: Mat, logit: Mat) -> MockBackbone {
        assert_eq!(embed.cols, logit.rows);
        MockBackbone {
            vocab: embed.rows,
            d_tok: embed.cols,
            embed,
            logit,
        }
    }

    /// Numerical rank of the frozen logit map via Gaussian elimination with
    /// partial pivoting.
    pub fn logit_rank(&self, tolerance: f64) -> usize {
        let mut m = self.logit.clone();
        let rows = m.rows;
        let cols = m.cols;
        let mut rank = 0;
        let mut pivot_row = 0;
        for col in 0..cols {
            if pivot_row >= rows {
                break;
            }
            let mut best = pivot_row;
            for r in pivot_row + 1..rows {
                if m.get(r, col).abs() > m.get(best, col).abs() {
                    best = r;
                }
            }
            if m.get(best, col).abs() <= tolerance {
                continue;
            }
            if best != pivot_row {
                for c in 0..cols {
                    let tmp = m.get(pivot_row, c);
                    m.set(pivot_row, c, m.get(best, c));
                    m.set(best, c, tmp);
                }
            }
            let pivot = m.get(pivot_row, col);
            for r in pivot_row + 1..rows {
                let factor = m.get(r, col) / pivot;
                if factor == 0.0 {
                    continue;
                }
                for c in col..cols {
                    let v = m.get(r, c) - factor * m.get(pivot_row, c);
                    m.set(r, c, v);
                }
            }
            pivot_row += 1;
            rank += 1;
        }
        rank
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_backbone_is_frozen_and_reproducible() {
        let a = MockBackbone::seeded(128, 32, 5);
        let b = MockBackbone::seeded(128, 32, 5);
        assert_eq!(a, b);
        assert_ne!(a, MockBackbone::seeded(128, 32, 6));
    }

    #[test]
    fn random_logit_map_has_full_rank() {
        let backbone = MockBackbone::seeded(96, 24, 0);
        assert_eq!(backbone.logit_rank(1e-9), 24);
    }

    #[test]
    fn rank_detects_degeneracy() {
        let mut backbone = MockBackbone::seeded(64, 16, 1);
        // Duplicate half the rows: rank drops to 8.
        for r in 8..16 {
            let src: Vec<f64> = backbone.logit.row(r - 8).to_vec();
            backbone.logit.row_mut(r).copy_from_slice(&src);
        }
        assert_eq!(backbone.logit_rank(1e-9), 8);
    }
}
