//! Sparse binary feature vectors and the per-transition union of two of them.

use crate::error::LearnerError;

/// A binary feature vector stored as its sorted set of active indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FeatureVector {
    active: Vec<u32>,
    len: usize,
}

impl FeatureVector {
    /// Builds a vector from active indices. Indices must be strictly
    /// increasing and below `len`.
    pub fn new(active: Vec<u32>, len: usize) -> Result<Self, LearnerError> {
        for pair in active.windows(2) {
            if pair[0] >= pair[1] {
                return Err(LearnerError::InvalidConfig(format!(
                    "active indices not strictly increasing at {} -> {}",
                    pair[0], pair[1]
                )));
            }
        }
        if let Some(&last) = active.last() {
            if last as usize >= len {
                return Err(LearnerError::FeatureOutOfRange {
                    index: last as usize,
                    len,
                });
            }
        }
        Ok(Self { active, len })
    }

    /// Sorts and deduplicates `indices` before validating them.
    pub fn from_unsorted(mut indices: Vec<u32>, len: usize) -> Result<Self, LearnerError> {
        indices.sort_unstable();
        indices.dedup();
        Self::new(indices, len)
    }

    pub(crate) fn from_sorted_unchecked(active: Vec<u32>, len: usize) -> Self {
        debug_assert!(active.windows(2).all(|p| p[0] < p[1]));
        debug_assert!(active.last().map_or(true, |&i| (i as usize) < len));
        Self { active, len }
    }

    pub fn active(&self) -> &[u32] {
        &self.active
    }

    /// Number of active features.
    pub fn cardinality(&self) -> usize {
        self.active.len()
    }

    /// Logical length `n` of the dense vector.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn contains(&self, index: u32) -> bool {
        self.active.binary_search(&index).is_ok()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut dense = vec![0.0; self.len];
        for &i in &self.active {
            dense[i as usize] = 1.0;
        }
        dense
    }

    /// Sum of `weights` over the active indices.
    #[inline]
    pub fn dot(&self, weights: &[f64]) -> f64 {
        self.active.iter().map(|&i| weights[i as usize]).sum()
    }
}

/// One entry of `active(x_t) ∪ active(x_next)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnionEntry {
    pub index: u32,
    pub in_current: bool,
    pub in_next: bool,
}

impl UnionEntry {
    /// `γ·x_next,i − x_t,i`, the per-feature TD gradient direction.
    #[inline]
    pub fn gradient(&self, discount: f64) -> f64 {
        discount * f64::from(u8::from(self.in_next)) - f64::from(u8::from(self.in_current))
    }

    #[inline]
    pub fn current(&self) -> f64 {
        f64::from(u8::from(self.in_current))
    }
}

/// A transition `(x_t, x_next)` with its sorted union precomputed, so that
/// many learners stepping on the same features share the merge.
#[derive(Debug, Clone)]
pub struct FeaturePair<'a> {
    current: &'a FeatureVector,
    next: &'a FeatureVector,
    union: Vec<UnionEntry>,
}

impl<'a> FeaturePair<'a> {
    pub fn new(current: &'a FeatureVector, next: &'a FeatureVector) -> Self {
        let (a, b) = (current.active(), next.active());
        let mut union = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() || j < b.len() {
            let entry = match (a.get(i), b.get(j)) {
                (Some(&x), Some(&y)) if x == y => {
                    i += 1;
                    j += 1;
                    UnionEntry { index: x, in_current: true, in_next: true }
                }
                (Some(&x), Some(&y)) if x < y => {
                    i += 1;
                    UnionEntry { index: x, in_current: true, in_next: false }
                }
                (Some(&x), None) => {
                    i += 1;
                    UnionEntry { index: x, in_current: true, in_next: false }
                }
                (_, Some(&y)) => {
                    j += 1;
                    UnionEntry { index: y, in_current: false, in_next: true }
                }
                (None, None) => unreachable!(),
            };
            union.push(entry);
        }
        Self { current, next, union }
    }

    pub fn current(&self) -> &FeatureVector {
        self.current
    }

    pub fn next(&self) -> &FeatureVector {
        self.next
    }

    pub fn union(&self) -> &[UnionEntry] {
        &self.union
    }

    pub(crate) fn check_len(&self, expected: usize) -> Result<(), LearnerError> {
        for x in [self.current, self.next] {
            if x.len() != expected {
                return Err(LearnerError::LengthMismatch {
                    expected,
                    got: x.len(),
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unsorted_and_out_of_range() {
        assert!(FeatureVector::new(vec![2, 1], 4).is_err());
        assert!(FeatureVector::new(vec![1, 1], 4).is_err());
        assert!(matches!(
            FeatureVector::new(vec![0, 4], 4),
            Err(LearnerError::FeatureOutOfRange { index: 4, len: 4 })
        ));
        assert_eq!(
            FeatureVector::from_unsorted(vec![3, 0, 3], 4).unwrap().active(),
            &[0, 3]
        );
    }

    #[test]
    fn union_merges_with_membership_flags() {
        let a = FeatureVector::new(vec![0, 2, 5], 8).unwrap();
        let b = FeatureVector::new(vec![2, 3, 7], 8).unwrap();
        let pair = FeaturePair::new(&a, &b);
        let got: Vec<_> = pair
            .union()
            .iter()
            .map(|e| (e.index, e.in_current, e.in_next))
            .collect();
        assert_eq!(
            got,
            vec![
                (0, true, false),
                (2, true, true),
                (3, false, true),
                (5, true, false),
                (7, false, true)
            ]
        );
        let g: Vec<f64> = pair.union().iter().map(|e| e.gradient(0.5)).collect();
        assert_eq!(g, vec![-1.0, -0.5, 0.5, -1.0, 0.5]);
    }

    #[test]
    fn dot_matches_dense() {
        let x = FeatureVector::new(vec![1, 3], 4).unwrap();
        let w = [0.5, 1.5, -2.0, 4.0];
        let dense: f64 = x.to_dense().iter().zip(&w).map(|(a, b)| a * b).sum();
        assert_eq!(x.dot(&w), dense);
    }
}
