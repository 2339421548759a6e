//! Embedding-based similarity scoring.
//!
//! Bootstrap filtering compares step answers against gold responses with
//! cosine similarity over a [`crate::backend::TextEmbedder`]. Thresholds
//! are per step: a trace passes only if every step's score strictly
//! exceeds its threshold. The same strict comparison doubles as the
//! indicator reward used to score a filtered dataset.

use crate::backend::{BackendError, TextEmbedder};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimilarityError {
    #[error("embedding dimensions differ: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("cannot score a zero-magnitude embedding")]
    ZeroNorm,
    #[error("threshold {value} at step {step} is outside (0, 1)")]
    ThresholdOutOfRange { step: usize, value: f64 },
    #[error("threshold count {got} does not match chain length {want}")]
    ThresholdCount { got: usize, want: usize },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Cosine similarity of two equal-length vectors, clamped to [-1, 1] to
/// absorb floating-point drift. Zero-magnitude inputs are an error since
/// the angle is undefined.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, SimilarityError> {
    if a.len() != b.len() {
        return Err(SimilarityError::DimensionMismatch { left: a.len(), right: b.len() });
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(SimilarityError::ZeroNorm);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Embed two texts and return their cosine similarity.
pub fn sim_text(
    embedder: &dyn TextEmbedder,
    left: &str,
    right: &str,
) -> Result<f64, SimilarityError> {
    let a = embedder.embed(left)?;
    let b = embedder.embed(right)?;
    cosine(&a, &b)
}

/// Per-step similarity thresholds, one per chain step, each in (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdVector(Vec<f64>);

impl ThresholdVector {
    pub fn new(values: Vec<f64>) -> Result<Self, SimilarityError> {
        for (step, &value) in values.iter().enumerate() {
            if !(value > 0.0 && value < 1.0) {
                return Err(SimilarityError::ThresholdOutOfRange { step, value });
            }
        }
        Ok(ThresholdVector(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Confirm the vector covers a chain of `chain_len` steps.
    pub fn check_len(&self, chain_len: usize) -> Result<(), SimilarityError> {
        if self.0.len() != chain_len {
            return Err(SimilarityError::ThresholdCount { got: self.0.len(), want: chain_len });
        }
        Ok(())
    }
}

/// Indicator reward: 1.0 when the score strictly exceeds the threshold,
/// else 0.0. Equality does not pass.
pub fn indicator_reward(score: f64, threshold: f64) -> f64 {
    if score > threshold {
        1.0
    } else {
        0.0
    }
}

/// Whether every step score strictly exceeds its threshold. Score and
/// threshold counts must match.
pub fn all_steps_pass(scores: &[f64], thresholds: &ThresholdVector) -> Result<bool, SimilarityError> {
    thresholds.check_len(scores.len())?;
    Ok(scores
        .iter()
        .zip(thresholds.values())
        .all(|(&s, &t)| indicator_reward(s, t) == 1.0))
}

/// Sum of indicator rewards over final-step scores: how many kept traces
/// cleared the final-step bar.
pub fn dataset_reward(final_scores: &[f64], final_threshold: f64) -> f64 {
    final_scores.iter().map(|&s| indicator_reward(s, final_threshold)).sum()
}

/// The most mutually similar candidate pair and its score.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistentPair {
    pub left: usize,
    pub right: usize,
    pub score: f64,
}

/// Find the candidate pair with the highest cosine similarity, or `None`
/// when fewer than two candidates exist. Pairs are scanned in
/// lexicographic index order and replaced only on a strictly greater
/// score, so ties resolve to the earliest pair.
pub fn most_consistent_pair(
    embeddings: &[Vec<f64>],
) -> Result<Option<ConsistentPair>, SimilarityError> {
    let mut best: Option<ConsistentPair> = None;
    for i in 0..embeddings.len() {
        for j in (i + 1)..embeddings.len() {
            let score = cosine(&embeddings[i], &embeddings[j])?;
            if best.as_ref().map_or(true, |b| score > b.score) {
                best = Some(ConsistentPair { left: i, right: j, score });
            }
        }
    }
    Ok(best)
}

/// Pick the pair member whose mean cosine similarity to every other
/// candidate is higher; on a tie the earlier index wins. This is the
/// representative written to the filtered dataset.
pub fn representative_of_pair(
    embeddings: &[Vec<f64>],
    pair: &ConsistentPair,
) -> Result<usize, SimilarityError> {
    let mean_to_others = |idx: usize| -> Result<f64, SimilarityError> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (other, emb) in embeddings.iter().enumerate() {
            if other != idx {
                sum += cosine(&embeddings[idx], emb)?;
                n += 1;
            }
        }
        Ok(if n == 0 { 0.0 } else { sum / n as f64 })
    };
    let left_mean = mean_to_others(pair.left)?;
    let right_mean = mean_to_others(pair.right)?;
    Ok(if right_mean > left_mean { pair.right } else { pair.left })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cosine_identical_is_one() {
        let v = vec![1.0, 2.0, 3.0];
        assert_eq!(cosine(&v, &v).unwrap(), 1.0);
    }

    #[test]
    fn cosine_orthogonal_is_zero() {
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn cosine_opposite_is_minus_one() {
        let got = cosine(&[1.0, 2.0], &[-1.0, -2.0]).unwrap();
        assert!((got + 1.0).abs() < 1e-12);
        assert!(got >= -1.0, "clamp holds");
    }

    #[test]
    fn cosine_hand_value() {
        // (3,4)·(4,3) = 24, norms are both 5, so 24/25.
        let got = cosine(&[3.0, 4.0], &[4.0, 3.0]).unwrap();
        assert!((got - 0.96).abs() < 1e-12);
    }

    #[test]
    fn cosine_rejects_mismatch_and_zero() {
        assert!(matches!(
            cosine(&[1.0], &[1.0, 2.0]),
            Err(SimilarityError::DimensionMismatch { left: 1, right: 2 })
        ));
        assert!(matches!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(SimilarityError::ZeroNorm)));
    }

    #[test]
    fn thresholds_must_be_open_interval() {
        assert!(ThresholdVector::new(vec![0.75, 0.8, 0.65]).is_ok());
        assert!(matches!(
            ThresholdVector::new(vec![0.5, 1.0]),
            Err(SimilarityError::ThresholdOutOfRange { step: 1, .. })
        ));
        assert!(ThresholdVector::new(vec![0.0]).is_err());
        assert!(ThresholdVector::new(vec![-0.1]).is_err());
    }

    #[test]
    fn indicator_is_strict() {
        assert_eq!(indicator_reward(0.81, 0.8), 1.0);
        assert_eq!(indicator_reward(0.8, 0.8), 0.0);
        assert_eq!(indicator_reward(0.79, 0.8), 0.0);
    }

    #[test]
    fn all_steps_pass_requires_every_step() {
        let t = ThresholdVector::new(vec![0.75, 0.8, 0.65]).unwrap();
        assert!(all_steps_pass(&[0.76, 0.81, 0.66], &t).unwrap());
        assert!(!all_steps_pass(&[0.76, 0.80, 0.66], &t).unwrap());
        assert!(!all_steps_pass(&[0.74, 0.81, 0.66], &t).unwrap());
        assert!(matches!(
            all_steps_pass(&[0.9, 0.9], &t),
            Err(SimilarityError::ThresholdCount { got: 3, want: 2 })
        ));
    }

    #[test]
    fn dataset_reward_counts_passes() {
        assert_eq!(dataset_reward(&[0.9, 0.7, 0.81, 0.8], 0.8), 2.0);
        assert_eq!(dataset_reward(&[], 0.8), 0.0);
    }

    #[test]
    fn most_consistent_pair_hand_case() {
        // (3,4) vs (4,3) scores 0.96; pairs with (0,1) score 0.8 and 0.6.
        let embs = vec![vec![3.0, 4.0], vec![4.0, 3.0], vec![0.0, 1.0]];
        let pair = most_consistent_pair(&embs).unwrap().unwrap();
        assert_eq!((pair.left, pair.right), (0, 1));
        assert!((pair.score - 0.96).abs() < 1e-12);
    }

    #[test]
    fn most_consistent_pair_tie_takes_earliest() {
        // (1,0)-(1,1) and (1,1)-(0,1) both score 1/sqrt(2); (1,0)-(0,1) is 0.
        let embs = vec![vec![1.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0]];
        let pair = most_consistent_pair(&embs).unwrap().unwrap();
        assert_eq!((pair.left, pair.right), (0, 1));
    }

    #[test]
    fn most_consistent_pair_under_two_is_none() {
        assert_eq!(most_consistent_pair(&[]).unwrap(), None);
        assert_eq!(most_consistent_pair(&[vec![1.0]]).unwrap(), None);
    }

    #[test]
    fn most_consistent_pair_identical_answers() {
        let embs = vec![vec![3.0, 4.0], vec![3.0, 4.0]];
        let pair = most_consistent_pair(&embs).unwrap().unwrap();
        assert_eq!((pair.left, pair.right), (0, 1));
        assert_eq!(pair.score, 1.0);
    }

    #[test]
    fn representative_prefers_higher_mean() {
        // c is close to b but far from a, so within pair (b, c) the member
        // b sits nearer the rest of the set.
        let a = vec![1.0, 0.0];
        let b = vec![0.6, 0.8];
        let c = vec![0.5, 0.9];
        let embs = vec![a, b, c];
        let pair = most_consistent_pair(&embs).unwrap().unwrap();
        assert_eq!((pair.left, pair.right), (1, 2));
        assert_eq!(representative_of_pair(&embs, &pair).unwrap(), 1);
    }

    #[test]
    fn representative_tie_takes_left() {
        // Symmetric pair: both members have the same mean to others.
        let embs = vec![vec![1.0, 0.0], vec![1.0, 0.0]];
        let pair = most_consistent_pair(&embs).unwrap().unwrap();
        assert_eq!(representative_of_pair(&embs, &pair).unwrap(), 0);
    }

    fn arb_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-10.0f64..10.0, dim..=dim)
            .prop_filter("nonzero", |v| v.iter().any(|&x| x.abs() > 1e-6))
    }

    proptest! {
        #[test]
        fn cosine_is_bounded_and_symmetric(a in arb_vec(4), b in arb_vec(4)) {
            let ab = cosine(&a, &b).unwrap();
            let ba = cosine(&b, &a).unwrap();
            prop_assert!((-1.0..=1.0).contains(&ab));
            prop_assert!((ab - ba).abs() < 1e-12);
        }

        #[test]
        fn cosine_is_scale_invariant(a in arb_vec(4), b in arb_vec(4), k in 0.001f64..100.0) {
            let scaled: Vec<f64> = a.iter().map(|x| x * k).collect();
            let plain = cosine(&a, &b).unwrap();
            let scaled_score = cosine(&scaled, &b).unwrap();
            prop_assert!((plain - scaled_score).abs() < 1e-9);
        }

        #[test]
        fn best_pair_matches_brute_force(
            embs in proptest::collection::vec(arb_vec(3), 2..9)
        ) {
            let got = most_consistent_pair(&embs).unwrap().unwrap();
            let mut best_score = f64::NEG_INFINITY;
            let mut best_pair = (0, 0);
            for i in 0..embs.len() {
                for j in (i + 1)..embs.len() {
                    let s = cosine(&embs[i], &embs[j]).unwrap();
                    if s > best_score {
                        best_score = s;
                        best_pair = (i, j);
                    }
                }
            }
            prop_assert_eq!((got.left, got.right), best_pair);
            prop_assert!((got.score - best_score).abs() < 1e-12);
        }

        #[test]
        fn dataset_reward_monotone_in_threshold(
            scores in proptest::collection::vec(0.0f64..1.0, 0..20),
            lo in 0.1f64..0.5,
            hi in 0.5f64..0.9,
        ) {
            prop_assert!(dataset_reward(&scores, lo) >= dataset_reward(&scores, hi));
        }
    }
}
