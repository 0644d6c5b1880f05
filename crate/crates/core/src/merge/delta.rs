use crate::lti::NO_NEIGHBOR;

/// Out-edges of the new points and the reverse edges they induce.
///
/// `forward` holds `R` slots per new point (padded with the sentinel), so a
/// position divided by `R` is the new point's index. The reverse edges are
/// the forward positions sorted by target: 4 bytes per edge on top of the
/// 4 bytes of the forward entry.
#[derive(Debug, Clone)]
pub struct DeltaMap {
    r: usize,
    base: u32,
    forward: Vec<u32>,
    by_target: Vec<u32>,
}

impl DeltaMap {
    /// `base` is the first slot number given to new points.
    pub fn new(r: usize, base: u32, forward: Vec<u32>) -> Self {
        let mut by_target: Vec<u32> = (0..forward.len() as u32)
            .filter(|&k| forward[k as usize] != NO_NEIGHBOR)
            .collect();
        by_target.sort_unstable_by_key(|&k| (forward[k as usize], k));
        DeltaMap {
            r,
            base,
            forward,
            by_target,
        }
    }

    pub fn base(&self) -> u32 {
        self.base
    }

    /// Number of new points.
    pub fn len(&self) -> usize {
        self.forward.len() / self.r.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Total reverse edges, at most `len() · R`.
    pub fn entries(&self) -> usize {
        self.by_target.len()
    }

    /// Out-edges of new point `i`, as slots (new points at `base + j`).
    pub fn neighbors(&self, i: usize) -> &[u32] {
        let row = &self.forward[i * self.r..(i + 1) * self.r];
        let n = row.iter().position(|&x| x == NO_NEIGHBOR).unwrap_or(self.r);
        &row[..n]
    }

    /// Indices of the new points linking to `target`.
    pub fn back_edges(&self, target: u32) -> impl Iterator<Item = u32> + '_ {
        let lo = self
            .by_target
            .partition_point(|&k| self.forward[k as usize] < target);
        self.by_target[lo..]
            .iter()
            .take_while(move |&&k| self.forward[k as usize] == target)
            .map(move |&k| k / self.r as u32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reverse_edges_by_target() {
        const X: u32 = NO_NEIGHBOR;
        let d = DeltaMap::new(3, 10, vec![4, 1, X, 1, X, X, 10, 4, 2]);
        assert_eq!(d.len(), 3);
        assert_eq!(d.entries(), 6);
        assert_eq!(d.neighbors(0), &[4, 1]);
        assert_eq!(d.neighbors(1), &[1]);
        assert_eq!(d.back_edges(1).collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(d.back_edges(4).collect::<Vec<_>>(), vec![0, 2]);
        assert_eq!(d.back_edges(10).collect::<Vec<_>>(), vec![2]);
        assert_eq!(d.back_edges(3).count(), 0);
    }

    #[test]
    fn empty() {
        let d = DeltaMap::new(4, 0, Vec::new());
        assert!(d.is_empty());
        assert_eq!(d.entries(), 0);
    }
}
