//! Support tracking for accumulating eligibility traces.
//!
//! Learners keep each feature's trace value next to its other per-feature
//! state; [`TraceSupport`] holds the sorted list of indices where the trace
//! is nonzero, so per-step work scales with the support instead of `n`.

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TraceSupport {
    support: Vec<u32>,
    scratch: Vec<u32>,
}

impl TraceSupport {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sorted indices with a nonzero trace.
    pub fn indices(&self) -> &[u32] {
        &self.support
    }

    /// `z ← decay·z + x` for binary `x` given by `active` (sorted), where
    /// `z(state)` selects the trace value inside a feature's state.
    ///
    /// Entries that decay to a magnitude at or below `cutoff` are zeroed and
    /// leave the support; with `cutoff = 0` only exact zeros are dropped and
    /// the result equals the dense update.
    pub fn accumulate<S>(
        &mut self,
        states: &mut [S],
        z: fn(&mut S) -> &mut f64,
        decay: f64,
        active: &[u32],
        cutoff: f64,
    ) {
        let old = std::mem::take(&mut self.support);
        let mut next = std::mem::take(&mut self.scratch);
        next.clear();
        let (mut i, mut j) = (0, 0);
        while i < old.len() || j < active.len() {
            let (idx, is_active) = match (old.get(i), active.get(j)) {
                (Some(&a), Some(&b)) if a == b => {
                    i += 1;
                    j += 1;
                    (a, true)
                }
                (Some(&a), Some(&b)) if a < b => {
                    i += 1;
                    (a, false)
                }
                (Some(&a), None) => {
                    i += 1;
                    (a, false)
                }
                (_, Some(&b)) => {
                    j += 1;
                    (b, true)
                }
                (None, None) => unreachable!(),
            };
            let value = z(&mut states[idx as usize]);
            if is_active {
                *value = *value * decay + 1.0;
                next.push(idx);
            } else {
                *value *= decay;
                if value.abs() > cutoff {
                    next.push(idx);
                } else {
                    *value = 0.0;
                }
            }
        }
        self.support = next;
        self.scratch = old;
    }

    pub fn memory_bytes(&self) -> usize {
        (self.support.capacity() + self.scratch.capacity()) * 4
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn itself(z: &mut f64) -> &mut f64 {
        z
    }

    #[test]
    fn matches_dense_update() {
        let mut support = TraceSupport::new();
        let mut trace = vec![0.0; 6];
        let mut dense = vec![0.0; 6];
        let steps: [&[u32]; 4] = [&[0, 2], &[2, 3], &[5], &[0, 5]];
        for active in steps {
            support.accumulate(&mut trace, itself, 0.5, active, 0.0);
            for (i, z) in dense.iter_mut().enumerate() {
                let x = if active.contains(&(i as u32)) { 1.0 } else { 0.0 };
                *z = *z * 0.5 + x;
            }
            assert_eq!(trace, dense);
        }
        assert_eq!(support.indices(), &[0, 2, 3, 5]);
    }

    #[test]
    fn zero_decay_keeps_only_current() {
        let mut support = TraceSupport::new();
        let mut trace = vec![0.0; 4];
        support.accumulate(&mut trace, itself, 0.0, &[0, 1], 0.0);
        support.accumulate(&mut trace, itself, 0.0, &[3], 0.0);
        assert_eq!(trace, [0.0, 0.0, 0.0, 1.0]);
        assert_eq!(support.indices(), &[3]);
    }

    #[test]
    fn cutoff_prunes_small_entries() {
        let mut support = TraceSupport::new();
        let mut trace = vec![0.0; 3];
        support.accumulate(&mut trace, itself, 0.1, &[1], 0.05);
        support.accumulate(&mut trace, itself, 0.1, &[2], 0.05);
        assert_eq!(support.indices(), &[1, 2]);
        support.accumulate(&mut trace, itself, 0.1, &[2], 0.05);
        assert_eq!(support.indices(), &[2]);
        assert_eq!(trace[1], 0.0);
    }
}
