use serde::{Deserialize, Serialize};

use crate::lti::IoCounters;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DeleteCost {
    pub expected_candidates: f64,
    pub expected_total_ops: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares of `y` on `x`. `None` with fewer than two
/// distinct `x` values.
pub fn linear_fit(points: &[(f64, f64)]) -> Option<LinearFit> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return None;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(LinearFit {
        slope,
        intercept: my - slope * mx,
        r2,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: usize,
    pub hi: usize,
    pub count: usize,
}

/// Prune calls with exactly `candidates` candidates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PruneBin {
    pub candidates: usize,
    pub calls: usize,
    pub mean_nanos: f64,
    #[serde(default)]
    pub median_nanos: f64,
}

/// CPU time consumed by the calling thread, so that prune timings exclude
/// time spent preempted.
#[cfg(unix)]
pub(crate) fn thread_cpu_nanos() -> u64 {
    let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
    // SAFETY: `ts` is a valid, writable timespec.
    unsafe { libc::clock_gettime(libc::CLOCK_THREAD_CPUTIME_ID, &mut ts) };
    ts.tv_sec as u64 * 1_000_000_000 + ts.tv_nsec as u64
}

#[cfg(not(unix))]
pub(crate) fn thread_cpu_nanos() -> u64 {
    static BASE: std::sync::OnceLock<std::time::Instant> = std::sync::OnceLock::new();
    BASE.get_or_init(std::time::Instant::now).elapsed().as_nanos() as u64
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct PruneCall {
    /// Candidate multiset size before removing duplicates.
    pub raw: usize,
    /// Distinct candidates and prune time, when the neighborhood was rebuilt.
    pub pruned: Option<(usize, u64)>,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct CandidateStats {
    pub deleted: usize,
    undeleted: usize,
    raw_sum: u64,
    calls: Vec<(u32, u64)>,
}

impl CandidateStats {
    pub fn record(&mut self, call: PruneCall) {
        self.undeleted += 1;
        self.raw_sum += call.raw as u64;
        if let Some((c, nanos)) = call.pruned {
            self.calls.push((c as u32, nanos));
        }
    }

    pub fn summary(&self, expected: DeleteCost) -> CandidateReport {
        const WIDTH: usize = 16;
        let mut histogram: Vec<HistogramBin> = Vec::new();
        let mut sizes: Vec<u32> = self.calls.iter().map(|c| c.0).collect();
        sizes.sort_unstable();
        for &s in &sizes {
            let lo = s as usize / WIDTH * WIDTH;
            match histogram.last_mut() {
                Some(b) if b.lo == lo => b.count += 1,
                _ => histogram.push(HistogramBin {
                    lo,
                    hi: lo + WIDTH,
                    count: 1,
                }),
            }
        }
        let mut bins: Vec<PruneBin> = Vec::new();
        let mut calls = self.calls.clone();
        calls.sort_unstable();
        for group in calls.chunk_by(|a, b| a.0 == b.0) {
            let n = group.len();
            let mid = (group[(n - 1) / 2].1 + group[n / 2].1) as f64 / 2.0;
            bins.push(PruneBin {
                candidates: group[0].0 as usize,
                calls: n,
                mean_nanos: group.iter().map(|c| c.1 as f64).sum::<f64>() / n as f64,
                median_nanos: mid,
            });
        }
        let mean = |sum: f64, n: usize| if n == 0 { 0.0 } else { sum / n as f64 };
        CandidateReport {
            undeleted: self.undeleted,
            pruned_nodes: self.calls.len(),
            mean_raw_candidates: mean(self.raw_sum as f64, self.undeleted),
            mean_pruned_candidates: mean(sizes.iter().map(|&s| s as f64).sum(), sizes.len()),
            expected,
            histogram,
            prune_time_fit: prune_fit(&bins),
            prune_bins: bins,
        }
    }
}

/// Per candidate size, the bin with the lowest median time across repeated
/// runs of the same merge. Repeats filter out stretches where the host ran
/// slow.
pub fn fastest_bins(runs: &[Vec<PruneBin>]) -> Vec<PruneBin> {
    let mut best: Vec<PruneBin> = runs.iter().flatten().copied().collect();
    best.sort_by(|a, b| a.candidates.cmp(&b.candidates).then(a.median_nanos.total_cmp(&b.median_nanos)));
    best.dedup_by_key(|b| b.candidates);
    best
}

/// Fit over per-size median times. Sizes seen fewer than 20 times are left
/// out unless that leaves under three sizes, in which case the cut is 3.
pub fn prune_fit(bins: &[PruneBin]) -> Option<LinearFit> {
    let points = |min_calls: usize| -> Vec<(f64, f64)> {
        bins.iter()
            .filter(|b| b.calls >= min_calls)
            .map(|b| (b.candidates as f64, b.median_nanos))
            .collect()
    };
    let mut pts = points(20);
    if pts.len() < 3 {
        pts = points(3);
    }
    linear_fit(&pts)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub undeleted: usize,
    pub pruned_nodes: usize,
    /// Mean candidate multiset size over every undeleted point, counting
    /// `|N_out(p) \ D|` for points with no deleted neighbor.
    pub mean_raw_candidates: f64,
    /// Mean distinct candidates over rebuilt neighborhoods.
    pub mean_pruned_candidates: f64,
    pub expected: DeleteCost,
    pub histogram: Vec<HistogramBin>,
    pub prune_bins: Vec<PruneBin>,
    pub prune_time_fit: Option<LinearFit>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MemoryReport {
    pub peak_aux_bytes: usize,
    /// `8 · |N| · R`.
    pub delta_bound_bytes: usize,
    pub codes_bytes: usize,
    /// Block buffers, the deleted-slot bitmap and 1 MiB of scratch.
    pub fixed_overhead_bytes: usize,
}

impl MemoryReport {
    pub fn bound_bytes(&self) -> usize {
        self.delta_bound_bytes + self.codes_bytes + self.fixed_overhead_bytes
    }

    pub fn within_bound(&self) -> bool {
        self.peak_aux_bytes <= self.bound_bytes()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MergeReport {
    pub input_points: usize,
    pub deleted: usize,
    pub inserted: usize,
    pub output_points: usize,
    pub delete_secs: f64,
    pub insert_secs: f64,
    pub patch_secs: f64,
    pub total_secs: f64,
    pub delta_entries: usize,
    /// Patched neighborhoods that overflowed `R` and were pruned.
    pub patched_prunes: usize,
    pub io: IoCounters,
    pub memory: MemoryReport,
    pub candidates: CandidateReport,
    /// The index was rebuilt from scratch rather than patched in passes.
    #[serde(default)]
    pub rebuilt: bool,
}

impl MergeReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let f = linear_fit(&[(1.0, 3.0), (2.0, 5.0), (4.0, 9.0)]).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!((f.intercept - 1.0).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
        assert!(linear_fit(&[(1.0, 1.0), (1.0, 2.0)]).is_none());
    }

    #[test]
    fn prune_fit_uses_well_sampled_sizes() {
        let bin = |candidates: usize, calls: usize, median_nanos: f64| PruneBin {
            candidates,
            calls,
            mean_nanos: median_nanos,
            median_nanos,
        };
        let mut bins: Vec<PruneBin> = (50..60).map(|c| bin(c, 40, 100.0 + 20.0 * c as f64)).collect();
        bins.extend((80..90).map(|c| bin(c, 40, 100.0 + 20.0 * c as f64)));
        bins.push(bin(70, 4, 1e6));
        let f = prune_fit(&bins).unwrap();
        assert!((f.slope - 20.0).abs() < 1e-9 && f.r2 > 0.999, "{f:?}");
        let sparse = [bin(10, 3, 300.0), bin(20, 5, 500.0), bin(30, 2, 9e9), bin(40, 4, 900.0)];
        let f = prune_fit(&sparse).unwrap();
        assert!((f.slope - 20.0).abs() < 1e-9, "{f:?}");
        assert!(prune_fit(&sparse[2..3]).is_none());
    }

    #[test]
    fn fastest_bins_takes_per_size_minimum() {
        let bin = |candidates: usize, median_nanos: f64| PruneBin {
            candidates,
            calls: 30,
            mean_nanos: median_nanos,
            median_nanos,
        };
        let runs = vec![vec![bin(5, 50.0), bin(6, 90.0)], vec![bin(5, 70.0), bin(6, 60.0), bin(7, 1.0)]];
        assert_eq!(fastest_bins(&runs), vec![bin(5, 50.0), bin(6, 60.0), bin(7, 1.0)]);
    }

    #[test]
    fn summary_bins() {
        let mut s = CandidateStats::default();
        s.record(PruneCall { raw: 10, pruned: None });
        s.record(PruneCall { raw: 30, pruned: Some((20, 100)) });
        s.record(PruneCall { raw: 30, pruned: Some((20, 300)) });
        s.record(PruneCall { raw: 30, pruned: Some((20, 5000)) });
        let r = s.summary(DeleteCost::default());
        assert_eq!(r.undeleted, 4);
        assert_eq!(r.pruned_nodes, 3);
        assert!((r.mean_raw_candidates - 25.0).abs() < 1e-12);
        let bin = PruneBin {
            candidates: 20,
            calls: 3,
            mean_nanos: 1800.0,
            median_nanos: 300.0,
        };
        assert_eq!(r.prune_bins, vec![bin]);
        assert_eq!(r.histogram, vec![HistogramBin { lo: 16, hi: 32, count: 3 }]);
    }
}
