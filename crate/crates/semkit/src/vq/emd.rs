//! Squared earth mover's distance on the ordered symbol line: the codec's
//! reconstruction loss, exposed standalone for scoring and testing.

use super::VqError;
use crate::sem::VOCAB_SIZE;

/// Squared 1-D EMD between a predicted distribution over the 77 ordered
/// symbols and a one-hot target: the sum of squared CDF gaps.
pub fn emd_loss(predicted: &[f64], target: usize) -> Result<f64, VqError> {
    assert_eq!(predicted.len(), VOCAB_SIZE, "distribution over the vocabulary");
    assert!(target < VOCAB_SIZE, "target token index in range");
    let total: f64 = predicted.iter().sum();
    if (total - 1.0).abs() > 1e-6 || predicted.iter().any(|&p| p < -1e-9) {
        return Err(VqError::Unnormalized { mass: total });
    }
    let mut cdf = 0.0;
    let mut loss = 0.0;
    for (i, &p) in predicted.iter().enumerate() {
        cdf += p;
        let target_cdf = if i >= target { 1.0 } else { 0.0 };
        let gap = cdf - target_cdf;
        loss += gap * gap;
    }
    Ok(loss)
}

/// Squared EMD between two arbitrary distributions on the symbol line.
pub fn emd_between(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len());
    let mut cp = 0.0;
    let mut cq = 0.0;
    let mut loss = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        cp += pi;
        cq += qi;
        let gap = cp - cq;
        loss += gap * gap;
    }
    loss
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot(i: usize) -> Vec<f64> {
        let mut v = vec![0.0; VOCAB_SIZE];
        v[i] = 1.0;
        v
    }

    #[test]
    fn matching_one_hot_scores_zero() {
        for t in [0, 13, 76] {
            assert_eq!(emd_loss(&one_hot(t), t).unwrap(), 0.0);
        }
    }

    #[test]
    fn adjacent_one_hot_scores_one() {
        assert_eq!(emd_loss(&one_hot(14), 13).unwrap(), 1.0);
        assert_eq!(emd_loss(&one_hot(12), 13).unwrap(), 1.0);
    }

    #[test]
    fn split_between_neighbors_scores_half() {
        let target = 30;
        let mut pred = vec![0.0; VOCAB_SIZE];
        pred[target - 1] = 0.5;
        pred[target + 1] = 0.5;
        assert!((emd_loss(&pred, target).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn one_hots_score_their_index_distance() {
        // The CDF gap is 1 on exactly |a - b| positions, so the squared-gap
        // sum equals the index distance (bounded by the vocabulary span).
        for (a, b) in [(0usize, 76usize), (10, 30), (40, 41)] {
            let d = (a as f64 - b as f64).abs();
            assert_eq!(emd_loss(&one_hot(a), b).unwrap(), d);
            assert!(d <= 76.0 * 76.0);
        }
    }

    #[test]
    fn unnormalized_distribution_rejected() {
        let mut pred = one_hot(5);
        pred[6] = 0.1;
        assert!(matches!(
            emd_loss(&pred, 5),
            Err(VqError::Unnormalized { .. })
        ));
    }

    #[test]
    fn symmetric_between() {
        let mut p = vec![0.0; VOCAB_SIZE];
        let mut q = vec![0.0; VOCAB_SIZE];
        p[3] = 0.5;
        p[20] = 0.5;
        q[10] = 1.0;
        assert_eq!(emd_between(&p, &q), emd_between(&q, &p));
        assert_eq!(emd_between(&p, &p), 0.0);
    }
}
