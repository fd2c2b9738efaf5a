//! Vector-quantization codebook with exponential-moving-average updates and
//! usage accounting.

use super::mat::Mat;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    pub entries: Mat,
    /// EMA cluster sizes.
    ema_counts: Vec<f64>,
    /// EMA vector sums per entry.
    ema_sums: Mat,
    /// Lifetime assignment counts.
    pub usage: Vec<u64>,
    decay: f64,
}

impl Codebook {
    pub fn init(k: usize, dim: usize, decay: f64, rng: &mut ChaCha8Rng) -> Codebook {
        let entries = Mat::randn(k, dim, 1.0 / (dim as f64).sqrt(), rng);
        Codebook {
            ema_sums: entries.clone(),
            ema_counts: vec![1.0; k],
            usage: vec![0; k],
            entries,
            decay,
        }
    }

    /// Seeds entries from observed vectors (sampled without replacement,
    /// tiled with small noise when the pool is short). Matching the data
    /// scale up front keeps early assignments spread over the book.
    pub fn init_from_data(
        vectors: &[Vec<f64>],
        k: usize,
        dim: usize,
        decay: f64,
        rng: &mut ChaCha8Rng,
    ) -> Codebook {
        assert!(!vectors.is_empty());
        let mut order: Vec<usize> = (0..vectors.len()).collect();
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let noise_std = 0.01 / (dim as f64).sqrt();
        let mut entries = Mat::zeros(k, dim);
        for code in 0..k {
            let source = &vectors[order[code % order.len()]];
            let noise = if code < order.len() {
                None
            } else {
                Some(Mat::randn(1, dim, noise_std, rng))
            };
            for (c, e) in entries.row_mut(code).iter_mut().enumerate() {
                *e = source[c] + noise.as_ref().map_or(0.0, |n| n.data[c]);
            }
        }
        Codebook {
            ema_sums: entries.clone(),
            ema_counts: vec![1.0; k],
            usage: vec![0; k],
            entries,
            decay,
        }
    }

    /// Re-seeds an entry from an observed vector, clearing its EMA state.
    /// Used to revive codes that stopped winning assignments.
    pub fn restart_entry(&mut self, code: usize, vector: &[f64]) {
        self.entries.row_mut(code).copy_from_slice(vector);
        self.ema_sums.row_mut(code).copy_from_slice(vector);
        self.ema_counts[code] = 1.0;
    }

    pub fn size(&self) -> usize {
        self.entries.rows
    }

    pub fn dim(&self) -> usize {
        self.entries.cols
    }

    pub fn entry(&self, code: usize) -> &[f64] {
        self.entries.row(code)
    }

    /// Nearest entry by squared distance; ties resolve to the lowest index.
    pub fn quantize(&self, vector: &[f64]) -> usize {
        debug_assert_eq!(vector.len(), self.dim());
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for code in 0..self.size() {
            let mut dist = 0.0;
            for (v, e) in vector.iter().zip(self.entries.row(code)) {
                let d = v - e;
                dist += d * d;
            }
            if dist < best_dist {
                best_dist = dist;
                best = code;
            }
        }
        best
    }

    /// EMA update from one batch of (code, pooled vector) assignments, with
    /// Laplace-smoothed cluster sizes.
    pub fn ema_update(&mut self, assignments: &[(usize, Vec<f64>)]) {
        if assignments.is_empty() {
            return;
        }
        let k = self.size();
        let mut counts = vec![0.0f64; k];
        let mut sums = Mat::zeros(k, self.dim());
        for (code, vector) in assignments {
            counts[*code] += 1.0;
            for (s, &v) in sums.row_mut(*code).iter_mut().zip(vector) {
                *s += v;
            }
            self.usage[*code] += 1;
        }
        for code in 0..k {
            self.ema_counts[code] =
                self.decay * self.ema_counts[code] + (1.0 - self.decay) * counts[code];
            for (ema, &s) in self
                .ema_sums
                .row_mut(code)
                .iter_mut()
                .zip(sums.row(code))
            {
                *ema = self.decay * *ema + (1.0 - self.decay) * s;
            }
        }
        let total: f64 = self.ema_counts.iter().sum();
        let eps = 1e-5;
        for code in 0..k {
            let smoothed =
                (self.ema_counts[code] + eps) / (total + k as f64 * eps) * total;
            for (e, &s) in self
                .entries
                .row_mut(code)
                .iter_mut()
                .zip(self.ema_sums.row(code))
            {
                *e = s / smoothed;
            }
        }
    }

    /// Fraction of entries ever assigned.
    pub fn utilization(&self) -> f64 {
        self.usage.iter().filter(|&&u| u > 0).count() as f64 / self.size() as f64
    }

    /// Shannon entropy (nats) of the lifetime usage distribution.
    pub fn usage_entropy(&self) -> f64 {
        let total: u64 = self.usage.iter().sum();
        if total == 0 {
            return 0.0;
        }
        let mut entropy = 0.0;
        for &u in &self.usage {
            if u > 0 {
                let p = u as f64 / total as f64;
                entropy -= p * p.ln();
            }
        }
        entropy
    }

    pub(crate) fn ema_counts(&self) -> &[f64] {
        &self.ema_counts
    }

    pub(crate) fn ema_sums(&self) -> &Mat {
        &self.ema_sums
    }

    pub(crate) fn from_parts(
        entries: Mat,
        ema_counts: Vec<f64>,
        ema_sums: Mat,
        usage: Vec<u64>,
        decay: f64,
    ) -> Codebook {
        assert_eq!(entries.rows, ema_counts.len());
        assert_eq!((entries.rows, entries.cols), (ema_sums.rows, ema_sums.cols));
        Codebook {
            entries,
            ema_counts,
            ema_sums,
            usage,
            decay,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn quantize_matches_brute_force_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let book = Codebook::init(32, 8, 0.99, &mut rng);
        for _ in 0..50 {
            let v: Vec<f64> = (0..8).map(|_| {
                use rand::Rng;
                rng.random::<f64>() * 2.0 - 1.0
            }).collect();
            let code = book.quantize(&v);
            // Brute-force scan over all entries.
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for k in 0..book.size() {
                let d: f64 = v
                    .iter()
                    .zip(book.entry(k))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            assert_eq!(code, best);
        }
    }

    #[test]
    fn quantize_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let book = Codebook::init(16, 4, 0.99, &mut rng);
        for code in 0..book.size() {
            let entry: Vec<f64> = book.entry(code).to_vec();
            let requantized = book.quantize(&entry);
            // The entry's nearest neighbor is itself (or an exact duplicate
            // at a lower index, which random init rules out).
            assert_eq!(requantized, code);
        }
    }

    #[test]
    fn ema_pulls_entries_toward_assigned_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut book = Codebook::init(4, 2, 0.5, &mut rng);
        let target = vec![5.0, -3.0];
        let code = book.quantize(&target);
        let before: Vec<f64> = book.entry(code).to_vec();
        for _ in 0..40 {
            book.ema_update(&[(code, target.clone())]);
        }
        let after: Vec<f64> = book.entry(code).to_vec();
        let dist = |a: &[f64], b: &[f64]| -> f64 {
            a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
        };
        assert!(dist(&after, &target) < dist(&before, &target));
        assert!(dist(&after, &target) < 1e-4);
        assert!(book.usage[code] == 40);
        assert!(book.utilization() <= 1.0);
        assert!(book.usage_entropy() >= 0.0);
    }
}
