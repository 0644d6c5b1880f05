//! α-relaxed neighbor selection.
//!
//! Candidates are visited in order of distance to `p`. Each selected
//! candidate `s` removes every remaining `c` with `α · d(s, c) ≤ d(p, c)`.
//! Distances are squared here, so the test becomes `α² · d²(s, c) ≤ d²(p, c)`.
//!
//! Selection runs in rounds of increasing relaxation up to `α`, so that when
//! the degree bound cuts the list short the survivors are the candidates
//! that a stricter prune would also keep.

/// A prune candidate: squared distance to the point being pruned, the
/// external id used for tie-breaking, and an opaque handle passed back to the
/// pairwise distance callback.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PruneCandidate {
    pub dist: f32,
    pub id: u64,
    pub handle: u32,
}

/// Runs the prune over `candidates` and returns the selected handles in
/// selection order. `pair_dist(a, b)` returns the squared distance between
/// two candidates. Duplicate handles are collapsed; the caller is expected to
/// have removed the pruned point itself.
pub fn robust_prune<F>(
    candidates: &mut Vec<PruneCandidate>,
    alpha: f32,
    max_degree: usize,
    mut pair_dist: F,
) -> Vec<u32>
where
    F: FnMut(u32, u32) -> f32,
{
    candidates.sort_by(|a, b| a.dist.total_cmp(&b.dist).then(a.id.cmp(&b.id)));
    candidates.dedup_by_key(|c| c.handle);
    // `dedup_by_key` only removes adjacent duplicates; equal handles always
    // share a distance and id, so after the sort they are adjacent.

    let mut selected = Vec::with_capacity(max_degree.min(candidates.len()));
    if max_degree == 0 {
        return selected;
    }
    // Smallest squared distance from each candidate to a closer selected one.
    let mut nearest_kept = vec![f32::INFINITY; candidates.len()];
    let mut taken = vec![false; candidates.len()];
    for level in alpha_schedule(alpha) {
        let level_sq = level * level;
        for i in 0..candidates.len() {
            if taken[i] || level_sq * nearest_kept[i] <= candidates[i].dist {
                continue;
            }
            let chosen = candidates[i];
            taken[i] = true;
            selected.push(chosen.handle);
            if selected.len() == max_degree {
                return selected;
            }
            for j in i + 1..candidates.len() {
                if !taken[j] {
                    let d = pair_dist(chosen.handle, candidates[j].handle);
                    if d < nearest_kept[j] {
                        nearest_kept[j] = d;
                    }
                }
            }
        }
    }
    selected
}

/// Relaxation levels 1, 1.2, 1.44, ... ending exactly at `alpha`.
///
/// Without the degree bound the last level alone decides the result, since
/// a candidate's fate depends only on the closer selected candidates. When
/// the bound is hit, the earlier levels make the kept edges the most
/// diverse ones rather than the closest ones.
fn alpha_schedule(alpha: f32) -> Vec<f32> {
    let mut levels = Vec::new();
    let mut a = 1.0f32;
    while a < alpha {
        levels.push(a);
        a *= 1.2;
    }
    levels.push(alpha);
    levels
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn prune_1d(p: f32, xs: &[f32], alpha: f32, r: usize) -> Vec<f32> {
        let mut cands: Vec<PruneCandidate> = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| PruneCandidate {
                dist: (x - p) * (x - p),
                id: i as u64,
                handle: i as u32,
            })
            .collect();
        robust_prune(&mut cands, alpha, r, |a, b| {
            let d = xs[a as usize] - xs[b as usize];
            d * d
        })
        .into_iter()
        .map(|h| xs[h as usize])
        .collect()
    }

    #[test]
    fn single_candidate() {
        assert_eq!(prune_1d(0.0, &[3.0], 1.0, 4), vec![3.0]);
        assert_eq!(prune_1d(0.0, &[3.0], 5.0, 4), vec![3.0]);
    }

    #[test]
    fn alpha_controls_density() {
        // 1.2 · 1.1 = 1.32 ≤ 2.1 removes 2.1; 2.0 · 1.1 = 2.2 > 2.1 keeps it.
        assert_eq!(prune_1d(0.0, &[1.0, 2.1], 1.2, 4), vec![1.0]);
        assert_eq!(prune_1d(0.0, &[1.0, 2.1], 2.0, 4), vec![1.0, 2.1]);
    }

    #[test]
    fn empty_and_zero_degree() {
        assert!(prune_1d(0.0, &[], 1.2, 4).is_empty());
        assert!(prune_1d(0.0, &[1.0], 1.2, 0).is_empty());
    }

    #[test]
    fn degree_cap() {
        // Points on both sides never dominate each other.
        let got = prune_1d(0.0, &[-1.0, 1.0, -2.0, 2.0], 1.0, 1);
        assert_eq!(got, vec![-1.0]);
    }

    #[test]
    fn duplicates_collapse() {
        let mut c = vec![
            PruneCandidate { dist: 1.0, id: 5, handle: 5 },
            PruneCandidate { dist: 1.0, id: 5, handle: 5 },
        ];
        assert_eq!(robust_prune(&mut c, 1.0, 4, |_, _| 0.0), vec![5]);
    }

    proptest! {
        #[test]
        fn certificate_holds(xs in proptest::collection::vec((-20.0f32..20.0, -20.0f32..20.0), 0..40),
                             alpha in 1.0f32..2.5, r in 1usize..10) {
            let pts: Vec<[f32; 2]> = xs.iter().map(|&(a, b)| [a, b]).collect();
            let d2 = |a: &[f32; 2], b: &[f32; 2]| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
            let origin = [0.0, 0.0];
            let mut cands: Vec<PruneCandidate> = pts.iter().enumerate()
                .map(|(i, p)| PruneCandidate { dist: d2(&origin, p), id: i as u64, handle: i as u32 })
                .collect();
            let sel = robust_prune(&mut cands, alpha, r, |a, b| d2(&pts[a as usize], &pts[b as usize]));
            prop_assert!(sel.len() <= r);
            if sel.len() < r {
                for c in &cands {
                    if sel.contains(&c.handle) { continue; }
                    let dominated = sel.iter().any(|&s| alpha * alpha * d2(&pts[s as usize], &pts[c.handle as usize]) <= c.dist);
                    prop_assert!(dominated);
                }
            }
        }
    }
}
