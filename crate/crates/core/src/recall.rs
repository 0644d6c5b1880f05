//! Exact k-NN oracle and recall accounting.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::VectorSet;
use crate::distance::l2_squared;
use crate::error::{Error, Result};

/// A neighbor reported by any search path. `distance` is Euclidean (not squared).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Neighbor {
    pub id: u64,
    pub distance: f32,
}

impl Neighbor {
    /// Orders by distance, then by id.
    pub fn cmp_by_distance(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.id.cmp(&other.id))
    }
}

/// The true nearest neighbors of one query, closest first.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthRow {
    pub ids: Vec<u64>,
    pub distances: Vec<f32>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    pub rows: Vec<GroundTruthRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecallReport {
    pub k: usize,
    pub per_query: Vec<f64>,
    pub mean: f64,
}

#[derive(PartialEq)]
struct HeapEntry(f32, u64);

impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

/// Exhaustive k-NN; ties are broken by ascending id.
pub fn brute_force_knn(set: &VectorSet, q: &[f32], k: usize) -> Result<GroundTruthRow> {
    if q.len() != set.dim() {
        return Err(Error::DimensionMismatch {
            expected: set.dim(),
            actual: q.len(),
        });
    }
    if k > set.len() {
        return Err(Error::invalid(format!("k = {k} exceeds set size {}", set.len())));
    }
    let mut heap = BinaryHeap::with_capacity(k + 1);
    for (id, v) in set.iter() {
        let entry = HeapEntry(l2_squared(q, v), id);
        if heap.len() < k {
            heap.push(entry);
        } else if let Some(top) = heap.peek() {
            if entry < *top {
                heap.pop();
                heap.push(entry);
            }
        }
    }
    let sorted = heap.into_sorted_vec();
    Ok(GroundTruthRow {
        ids: sorted.iter().map(|e| e.1).collect(),
        distances: sorted.iter().map(|e| e.0.sqrt()).collect(),
    })
}

/// Ground truth for a batch of queries, computed in parallel.
pub fn compute_ground_truth(set: &VectorSet, queries: &VectorSet, k: usize) -> Result<GroundTruth> {
    let rows = (0..queries.len())
        .into_par_iter()
        .map(|i| brute_force_knn(set, queries.vector(i), k))
        .collect::<Result<Vec<_>>>()?;
    Ok(GroundTruth { rows })
}

/// `|first_k(result) ∩ first_k(truth)| / k`.
pub fn recall_at_k(result: &[u64], truth: &[u64], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("recall requires k > 0"));
    }
    if truth.len() < k {
        return Err(Error::invalid(format!(
            "ground truth has {} entries, need {k}",
            truth.len()
        )));
    }
    let truth: HashSet<u64> = truth[..k].iter().copied().collect();
    let hits = result
        .iter()
        .take(k)
        .collect::<HashSet<_>>()
        .into_iter()
        .filter(|id| truth.contains(id))
        .count();
    Ok(hits as f64 / k as f64)
}

/// Mean recall@k over a batch of results.
pub fn recall_report(results: &[Vec<u64>], truth: &GroundTruth, k: usize) -> Result<RecallReport> {
    if results.len() != truth.rows.len() {
        return Err(Error::invalid(format!(
            "{} results for {} ground-truth rows",
            results.len(),
            truth.rows.len()
        )));
    }
    let per_query = results
        .iter()
        .zip(&truth.rows)
        .map(|(r, t)| recall_at_k(r, &t.ids, k))
        .collect::<Result<Vec<_>>>()?;
    let mean = if per_query.is_empty() {
        0.0
    } else {
        per_query.iter().sum::<f64>() / per_query.len() as f64
    };
    Ok(RecallReport { k, per_query, mean })
}
