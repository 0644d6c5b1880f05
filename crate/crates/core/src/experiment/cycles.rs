//! Delete/re-insert cycles over an in-memory graph.
//!
//! Each cycle deletes a random fraction of the points, consolidates the
//! deletes under the chosen policy, and re-inserts the same points. The
//! point set is identical after every cycle, so with a fixed search list
//! size a stable update rule keeps recall flat.

use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::VectorSet;
use crate::error::{Error, Result};
use crate::graph::{DeletePolicy, DynGraph};
use crate::recall::{recall_report, GroundTruth};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleSpec {
    pub cycles: usize,
    pub delete_fraction: f64,
    pub policy: DeletePolicy,
    pub k: usize,
    pub search_list: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRow {
    /// 0 is the index before any update.
    pub cycle: usize,
    pub recall: f64,
    pub mean_degree: f64,
    pub deleted: usize,
    pub mean_candidates: f64,
    pub consolidate_secs: f64,
    pub insert_secs: f64,
}

/// Mean recall@k of filtered greedy search with list size `list_size`.
pub fn graph_recall(graph: &DynGraph, queries: &VectorSet, truth: &GroundTruth, k: usize, list_size: usize) -> Result<f64> {
    let results = (0..queries.len())
        .into_par_iter()
        .map(|i| graph.greedy_search(queries.vector(i), k, list_size, true).map(|r| r.ids()))
        .collect::<Result<Vec<_>>>()?;
    Ok(recall_report(&results, truth, k)?.mean)
}

/// Smallest list size from `candidates` (ascending) whose recall reaches
/// `target`, with that recall.
pub fn tune_search_list(
    graph: &DynGraph,
    queries: &VectorSet,
    truth: &GroundTruth,
    k: usize,
    target: f64,
    candidates: &[usize],
) -> Result<Option<(usize, f64)>> {
    for &l in candidates.iter().filter(|&&l| l >= k) {
        let r = graph_recall(graph, queries, truth, k, l)?;
        if r >= target {
            return Ok(Some((l, r)));
        }
    }
    Ok(None)
}

/// Runs the cycles. `data` must hold exactly the points in `graph`.
pub fn run_cycles(
    graph: &mut DynGraph,
    data: &VectorSet,
    queries: &VectorSet,
    truth: &GroundTruth,
    spec: &CycleSpec,
) -> Result<Vec<CycleRow>> {
    if !(0.0..=1.0).contains(&spec.delete_fraction) {
        return Err(Error::invalid("delete fraction must be in [0, 1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut rows = vec![CycleRow {
        cycle: 0,
        recall: graph_recall(graph, queries, truth, spec.k, spec.search_list)?,
        mean_degree: graph.mean_out_degree(),
        deleted: 0,
        mean_candidates: 0.0,
        consolidate_secs: 0.0,
        insert_secs: 0.0,
    }];
    let count = (data.len() as f64 * spec.delete_fraction).round() as usize;
    for cycle in 1..=spec.cycles {
        let victims = sample(&mut rng, data.len(), count).into_vec();
        for &i in &victims {
            graph.delete(data.id(i))?;
        }
        let t = Instant::now();
        let stats = graph.consolidate_deletes(spec.policy);
        let consolidate_secs = t.elapsed().as_secs_f64();
        let t = Instant::now();
        for &i in &victims {
            graph.insert(data.id(i), data.vector(i))?;
        }
        let insert_secs = t.elapsed().as_secs_f64();
        let mean_candidates = if stats.candidate_sizes.is_empty() {
            0.0
        } else {
            stats.candidate_sizes.iter().sum::<usize>() as f64 / stats.candidate_sizes.len() as f64
        };
        rows.push(CycleRow {
            cycle,
            recall: graph_recall(graph, queries, truth, spec.k, spec.search_list)?,
            mean_degree: graph.mean_out_degree(),
            deleted: stats.deleted,
            mean_candidates,
            consolidate_secs,
            insert_secs,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::synthetic::{generate, generate_with_offset, SyntheticSpec};
    use crate::graph::{build_static, GraphParams};
    use crate::recall::compute_ground_truth;

    #[test]
    fn zero_fraction_is_flat() {
        let spec = SyntheticSpec::new(600, 8, 4, 3);
        let data = generate(&spec);
        let queries = generate_with_offset(&spec, 30, 0, 77);
        let truth = compute_ground_truth(&data, &queries, 5).unwrap();
        let mut g = build_static(&data, GraphParams::new(12, 30, 1.2), 1).unwrap();
        let rows = run_cycles(
            &mut g,
            &data,
            &queries,
            &truth,
            &CycleSpec {
                cycles: 3,
                delete_fraction: 0.0,
                policy: DeletePolicy::FreshVamana,
                k: 5,
                search_list: 20,
                seed: 1,
            },
        )
        .unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.recall == rows[0].recall));
    }

    #[test]
    fn fresh_cycles_keep_all_points() {
        let spec = SyntheticSpec::new(800, 8, 4, 5);
        let data = generate(&spec);
        let queries = generate_with_offset(&spec, 30, 0, 78);
        let truth = compute_ground_truth(&data, &queries, 5).unwrap();
        let mut g = build_static(&data, GraphParams::new(12, 30, 1.2), 1).unwrap();
        let rows = run_cycles(
            &mut g,
            &data,
            &queries,
            &truth,
            &CycleSpec {
                cycles: 3,
                delete_fraction: 0.1,
                policy: DeletePolicy::FreshVamana,
                k: 5,
                search_list: 30,
                seed: 2,
            },
        )
        .unwrap();
        assert_eq!(g.len(), 800);
        g.check_invariants().unwrap();
        assert!(rows[1..].iter().all(|r| r.deleted == 80));
        assert!(rows.last().unwrap().recall > 0.8);
    }
}
