//! Exact similarity ranking over stored MRs.
//!
//! Results are ordered by cosine similarity (descending), then execution
//! count (ascending), then index (ascending). The order is total, so a
//! ranking never depends on input order.

use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::mr::MetamorphicRelation;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RetrievalError {
    #[error("embedding dimension {found} does not match store dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("top_k must be at least 1")]
    ZeroTopK,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredMr {
    pub index: u32,
    pub mr: MetamorphicRelation,
    /// Unit-norm embedding of the rendered Gherkin text.
    pub embedding: Vec<f32>,
    pub execution_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalQuery {
    pub text: alloc::string::String,
    pub top_k: usize,
}

pub fn dot<T: Copy + Into<f64>>(a: &[T], b: &[T]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x.into() * y.into()).sum()
}

/// Cosine similarity, clamped to [-1, 1]. Zero vectors have similarity 0.
pub fn cosine<T: Copy + Into<f64>>(a: &[T], b: &[T]) -> f64 {
    // sqrt(fl(d * d)) == d, so identical vectors score exactly 1.
    let norms = libm::sqrt(dot(a, a) * dot(b, b));
    if norms == 0.0 || !norms.is_finite() {
        return 0.0;
    }
    // `+ 0.0` folds -0.0 into 0.0 so it ties with 0.0 in the ranking.
    (dot(a, b) / norms).clamp(-1.0, 1.0) + 0.0
}

/// The ranking comparator: `Less` means `a` ranks ahead of `b`.
pub fn rank_order(a: (&StoredMr, f64), b: (&StoredMr, f64)) -> Ordering {
    b.1.total_cmp(&a.1)
        .then(a.0.execution_count.cmp(&b.0.execution_count))
        .then(a.0.index.cmp(&b.0.index))
}

/// The `min(top_k, entries.len())` best entries for `query`.
pub fn rank<'a>(
    entries: &'a [StoredMr],
    query: &[f32],
    top_k: usize,
) -> Result<Vec<(&'a StoredMr, f64)>, RetrievalError> {
    if top_k == 0 {
        return Err(RetrievalError::ZeroTopK);
    }
    let mut scored = Vec::with_capacity(entries.len());
    for entry in entries {
        if entry.embedding.len() != query.len() {
            return Err(RetrievalError::DimensionMismatch {
                expected: entry.embedding.len(),
                found: query.len(),
            });
        }
        scored.push((entry, cosine(&entry.embedding, query)));
    }
    scored.sort_by(|a, b| rank_order(*a, *b));
    scored.truncate(top_k);
    Ok(scored)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ontology::Verb;
    use alloc::string::String;
    use alloc::vec;

    fn entry(index: u32, embedding: Vec<f32>, execution_count: u64) -> StoredMr {
        StoredMr {
            index,
            mr: MetamorphicRelation {
                road_type: "any roads".into(),
                verb: Verb::Adds,
                manipulation: "a vehicle on the road".into(),
                expected_behavior: "slow down".into(),
                source_rule: String::new(),
                region: "DE".into(),
                hallucination_score: 0.0,
            },
            embedding,
            execution_count,
        }
    }

    #[test]
    fn identical_vector_ranks_first() {
        let store = vec![entry(0, vec![0.0, 1.0], 0), entry(1, vec![1.0, 0.0], 0)];
        let ranked = rank(&store, &[1.0, 0.0], 5).unwrap();
        assert_eq!(ranked.len(), 2);
        assert_eq!(ranked[0].0.index, 1);
        assert_eq!(ranked[0].1, 1.0);
        assert_eq!(ranked[1].1, 0.0);
    }

    #[test]
    fn diagonal_similarity() {
        let h = core::f64::consts::FRAC_1_SQRT_2;
        let oracle = 1.0 * h + 0.0 * h;
        let sim = cosine(&[1.0f64, 0.0], &[h, h]);
        assert!((sim - oracle).abs() < 1e-12);
    }

    #[test]
    fn ties_prefer_lower_count_then_index() {
        let store = vec![entry(0, vec![1.0, 0.0], 3), entry(1, vec![1.0, 0.0], 1), entry(2, vec![1.0, 0.0], 1)];
        let order: Vec<u32> = rank(&store, &[1.0, 0.0], 3).unwrap().iter().map(|(e, _)| e.index).collect();
        assert_eq!(order, [1, 2, 0]);
    }

    #[test]
    fn truncates_and_validates() {
        let store = vec![entry(0, vec![1.0, 0.0], 0), entry(1, vec![0.0, 1.0], 0)];
        assert_eq!(rank(&store, &[1.0, 0.0], 1).unwrap().len(), 1);
        assert_eq!(rank(&store, &[1.0, 0.0], 0), Err(RetrievalError::ZeroTopK));
        assert_eq!(
            rank(&store, &[1.0, 0.0, 0.0], 1),
            Err(RetrievalError::DimensionMismatch { expected: 2, found: 3 })
        );
    }

    #[test]
    fn negative_zero_ties_with_zero() {
        assert_eq!(cosine(&[1.0f64, 0.0], &[-0.0, 1.0]).to_bits(), 0.0f64.to_bits());
    }
}
