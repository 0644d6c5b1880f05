//! Repeated merges into a long-term index.
//!
//! Each cycle deletes a random fraction of the indexed points and inserts
//! the same number of new points from a pool with one merge, then measures
//! recall against the exact neighbors over the new point set.

use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::VectorSet;
use crate::error::{Error, Result};
use crate::graph::GraphParams;
use crate::lti::{sidecar_path, LtiIndex};
use crate::merge::{merge, MergeJob, MergeReport};
use crate::recall::{compute_ground_truth, recall_report, GroundTruth};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiskCycleSpec {
    pub cycles: usize,
    /// Fraction of the current points deleted per cycle; as many new
    /// points are inserted.
    pub fraction: f64,
    pub k: usize,
    pub search_list: usize,
    pub beam_width: usize,
    pub threads: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiskCycleRow {
    /// 0 is the index before any merge.
    pub cycle: usize,
    pub recall: f64,
    pub mean_ios: f64,
    pub points: usize,
    pub report: Option<MergeReport>,
}

/// Mean recall@k of beam search and the mean sector reads per query.
pub fn disk_recall(
    lti: &LtiIndex,
    queries: &VectorSet,
    truth: &GroundTruth,
    k: usize,
    list_size: usize,
    beam_width: usize,
) -> Result<(f64, f64)> {
    let results = (0..queries.len())
        .into_par_iter()
        .map(|i| {
            lti.beam_search(queries.vector(i), k, list_size, beam_width, |_| false)
                .map(|(r, s)| (r.ids(), s.ios))
        })
        .collect::<Result<Vec<_>>>()?;
    let ios = results.iter().map(|r| r.1 as f64).sum::<f64>() / results.len().max(1) as f64;
    let ids: Vec<Vec<u64>> = results.into_iter().map(|r| r.0).collect();
    Ok((recall_report(&ids, truth, k)?.mean, ios))
}

fn remove_index(path: &Path) {
    let _ = fs::remove_file(path);
    for ext in ["pq", "pqcb", "ids"] {
        let _ = fs::remove_file(sidecar_path(path, ext));
    }
}

/// Runs the cycles starting from `lti`, whose points are `live`. New points
/// come from `pool` in order and must have ids unused by `live`. Merged
/// indices are written to `dir`; each is removed once superseded, except
/// that `lti` itself is left in place. Returns the final index and its points.
pub fn run_disk_cycles(
    lti: LtiIndex,
    live: &VectorSet,
    pool: &VectorSet,
    queries: &VectorSet,
    params: GraphParams,
    spec: &DiskCycleSpec,
    dir: &Path,
) -> Result<(LtiIndex, VectorSet, Vec<DiskCycleRow>)> {
    if !(0.0..=1.0).contains(&spec.fraction) {
        return Err(Error::invalid("fraction must be in [0, 1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut live = live.clone();
    let truth = compute_ground_truth(&live, queries, spec.k)?;
    let (recall, mean_ios) = disk_recall(&lti, queries, &truth, spec.k, spec.search_list, spec.beam_width)?;
    let mut rows = vec![DiskCycleRow {
        cycle: 0,
        recall,
        mean_ios,
        points: lti.len(),
        report: None,
    }];
    let mut current = lti;
    let mut owned = false;
    let mut next_pool = 0;
    for cycle in 1..=spec.cycles {
        let count = (live.len() as f64 * spec.fraction).round() as usize;
        if next_pool + count > pool.len() {
            return Err(Error::invalid("insert pool exhausted"));
        }
        let victims = sample(&mut rng, live.len(), count).into_vec();
        let deletes: Vec<u64> = victims.iter().map(|&i| live.id(i)).collect();
        let inserts = pool.select(&(next_pool..next_pool + count).collect::<Vec<_>>());
        next_pool += count;
        let mut job = MergeJob::new(&inserts, &deletes, params);
        job.options.threads = spec.threads;
        job.options.beam_width = spec.beam_width;
        let out = dir.join(format!("cycle-{cycle}.fda"));
        let (next, report) = merge(&current, &job, &out)?;
        if owned {
            remove_index(current.path());
        }
        current = next;
        owned = true;

        let mut gone = vec![false; live.len()];
        for &i in &victims {
            gone[i] = true;
        }
        let keep: Vec<usize> = (0..live.len()).filter(|&i| !gone[i]).collect();
        let mut updated = live.select(&keep);
        for (id, v) in inserts.iter() {
            updated.push(id, v)?;
        }
        live = updated;
        let truth = compute_ground_truth(&live, queries, spec.k)?;
        let (recall, mean_ios) = disk_recall(&current, queries, &truth, spec.k, spec.search_list, spec.beam_width)?;
        rows.push(DiskCycleRow {
            cycle,
            recall,
            mean_ios,
            points: current.len(),
            report: Some(report),
        });
    }
    Ok((current, live, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::synthetic::{generate, generate_with_offset, SyntheticSpec};
    use crate::merge::build_lti;
    use crate::pq::train;

    #[test]
    fn cycles_keep_size_and_recall() {
        let dir = tempfile::tempdir().unwrap();
        let data = SyntheticSpec::new(1500, 16, 8, 2);
        let base = generate(&data);
        let pool = generate_with_offset(&data, 600, 1_000_000, 5);
        let queries = generate_with_offset(&data, 40, 0, 6);
        let params = GraphParams::new(16, 32, 1.2);
        let cb = train(&base, 8, 6, 1).unwrap();
        let lti = build_lti(&base, params, &cb, dir.path().join("base.fda")).unwrap();
        let spec = DiskCycleSpec {
            cycles: 3,
            fraction: 0.1,
            k: 5,
            search_list: 40,
            beam_width: 4,
            threads: 1,
            seed: 1,
        };
        let (last, live, rows) = run_disk_cycles(lti, &base, &pool, &queries, params, &spec, dir.path()).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.points == 1500));
        assert_eq!(live.len(), 1500);
        assert!(rows.iter().all(|r| r.recall > 0.85), "{rows:?}");
        let report = rows[1].report.as_ref().unwrap();
        assert_eq!((report.io.read_passes, report.io.write_passes), (2, 2));
        last.validate().unwrap();
        assert!(dir.path().join("base.fda").exists());
        assert!(!dir.path().join("cycle-1.fda").exists());
    }
}
