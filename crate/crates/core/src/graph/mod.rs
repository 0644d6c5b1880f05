//! In-memory dynamic graph index.
//!
//! Nodes live in fixed-capacity slots. A slot's vector is written once when
//! the point is inserted and stays immutable until the slot is freed by
//! [`DynGraph::consolidate_deletes`], which requires exclusive access.
//! Adjacency lists are individually locked, so inserts and searches can run
//! concurrently through `&DynGraph`.
//!
//! Deletes are lazy: a deleted node stays in the graph and keeps serving as a
//! waypoint for navigation, but is filtered from results until a
//! consolidation rewires its in-neighbors and frees the slot.

mod candidates;
pub mod prune;
mod snapshot;

use std::sync::atomic::{AtomicU32, AtomicU8, AtomicUsize, Ordering};
use std::sync::OnceLock;

use parking_lot::{Mutex, RwLock};
use rand::seq::index::sample;
use rand::SeedableRng;
use rayon::prelude::*;
use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};

use crate::dataset::VectorSet;
use crate::distance::l2_squared;
use crate::error::{Error, Result};
use crate::recall::Neighbor;

pub(crate) use candidates::{Candidate, CandidateList};
pub use prune::{robust_prune, PruneCandidate};
pub use snapshot::{parse_snapshot, read_snapshot, snapshot_bytes, write_snapshot, SNAPSHOT_MAGIC};

pub(crate) const NO_SLOT: u32 = u32::MAX;

const FREE: u8 = 0;
const LIVE: u8 = 1;
const DELETED: u8 = 2;

/// Sample size cap for the medoid computation.
const MEDOID_SAMPLE: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphParams {
    /// Out-degree bound `R`.
    pub max_degree: usize,
    /// Pruning relaxation `α ≥ 1`.
    pub alpha: f32,
    /// Candidate list size `L_c` used while inserting.
    pub build_list_size: usize,
}

impl GraphParams {
    pub fn new(max_degree: usize, build_list_size: usize, alpha: f32) -> Self {
        GraphParams {
            max_degree,
            alpha,
            build_list_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_degree == 0 {
            return Err(Error::invalid("max degree must be positive"));
        }
        if self.build_list_size == 0 {
            return Err(Error::invalid("build list size must be positive"));
        }
        if !(self.alpha >= 1.0) {
            return Err(Error::invalid(format!("alpha must be >= 1, got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeletePolicy {
    /// Reconnect in-neighbors of deleted nodes through their out-neighbors,
    /// then α-prune.
    FreshVamana,
    /// Drop every edge touching a deleted node and add nothing back.
    PolicyA,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SearchResult {
    pub top_k: Vec<Neighbor>,
    /// Ids of the nodes whose neighborhoods were expanded, in expansion order.
    pub visited: Vec<u64>,
    pub comparisons: usize,
}

impl SearchResult {
    pub fn ids(&self) -> Vec<u64> {
        self.top_k.iter().map(|n| n.id).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConsolidateStats {
    pub deleted: usize,
    /// Live nodes whose neighborhood was rebuilt.
    pub pruned_nodes: usize,
    /// Distinct candidates handed to the prune, per rebuilt node.
    pub candidate_sizes: Vec<usize>,
}

struct Point {
    id: u64,
    vector: Box<[f32]>,
}

pub(crate) struct Trace {
    pub list: CandidateList,
    pub expanded: Vec<Candidate>,
    pub comparisons: usize,
}

pub struct DynGraph {
    dim: usize,
    params: GraphParams,
    points: Vec<OnceLock<Point>>,
    adjacency: Vec<RwLock<Vec<u32>>>,
    state: Vec<AtomicU8>,
    id_map: RwLock<FxHashMap<u64, u32>>,
    free_slots: Mutex<Vec<u32>>,
    next_slot: AtomicUsize,
    start: AtomicU32,
    deleted: AtomicUsize,
}

impl std::fmt::Debug for DynGraph {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DynGraph")
            .field("dim", &self.dim)
            .field("params", &self.params)
            .field("capacity", &self.capacity())
            .field("len", &self.len())
            .field("deleted", &self.deleted_count())
            .finish()
    }
}

impl DynGraph {
    pub fn new(dim: usize, capacity: usize, params: GraphParams) -> Result<Self> {
        params.validate()?;
        if dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        if capacity >= NO_SLOT as usize {
            return Err(Error::invalid("capacity exceeds the slot space"));
        }
        Ok(DynGraph {
            dim,
            params,
            points: (0..capacity).map(|_| OnceLock::new()).collect(),
            adjacency: (0..capacity).map(|_| RwLock::new(Vec::new())).collect(),
            state: (0..capacity).map(|_| AtomicU8::new(FREE)).collect(),
            id_map: RwLock::new(FxHashMap::default()),
            free_slots: Mutex::new(Vec::new()),
            next_slot: AtomicUsize::new(0),
            start: AtomicU32::new(NO_SLOT),
            deleted: AtomicUsize::new(0),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> GraphParams {
        self.params
    }

    pub fn capacity(&self) -> usize {
        self.points.len()
    }

    /// Nodes present in the graph, including lazily deleted ones.
    pub fn len(&self) -> usize {
        self.id_map.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn deleted_count(&self) -> usize {
        self.deleted.load(Ordering::Relaxed)
    }

    pub fn live_count(&self) -> usize {
        self.len().saturating_sub(self.deleted_count())
    }

    pub fn contains(&self, id: u64) -> bool {
        self.id_map.read().contains_key(&id)
    }

    pub fn is_deleted(&self, id: u64) -> bool {
        self.slot_of(id)
            .map(|s| self.state[s as usize].load(Ordering::Acquire) == DELETED)
            .unwrap_or(false)
    }

    pub fn start_id(&self) -> Option<u64> {
        let s = self.start.load(Ordering::Acquire);
        self.point(s).map(|p| p.id)
    }

    pub fn vector(&self, id: u64) -> Option<&[f32]> {
        self.slot_of(id).and_then(|s| self.point(s)).map(|p| &*p.vector)
    }

    /// Out-neighbors of `id` as external ids.
    pub fn neighbors(&self, id: u64) -> Option<Vec<u64>> {
        let slot = self.slot_of(id)?;
        let nbrs = self.adjacency[slot as usize].read().clone();
        Some(nbrs.into_iter().filter_map(|s| self.point(s).map(|p| p.id)).collect())
    }

    /// All ids in the graph, sorted. Includes lazily deleted ids.
    pub fn ids(&self) -> Vec<u64> {
        let mut ids: Vec<u64> = self.id_map.read().keys().copied().collect();
        ids.sort_unstable();
        ids
    }

    /// Lazily deleted ids, sorted.
    pub fn delete_list(&self) -> Vec<u64> {
        let map = self.id_map.read();
        let mut ids: Vec<u64> = map
            .iter()
            .filter(|(_, &s)| self.state[s as usize].load(Ordering::Acquire) == DELETED)
            .map(|(&id, _)| id)
            .collect();
        ids.sort_unstable();
        ids
    }

    pub fn max_out_degree(&self) -> usize {
        self.used_slots()
            .map(|s| self.adjacency[s as usize].read().len())
            .max()
            .unwrap_or(0)
    }

    pub fn mean_out_degree(&self) -> f64 {
        let (mut sum, mut n) = (0usize, 0usize);
        for s in self.used_slots() {
            sum += self.adjacency[s as usize].read().len();
            n += 1;
        }
        if n == 0 {
            0.0
        } else {
            sum as f64 / n as f64
        }
    }

    fn slot_of(&self, id: u64) -> Option<u32> {
        self.id_map.read().get(&id).copied()
    }

    #[inline]
    fn point(&self, slot: u32) -> Option<&Point> {
        self.points.get(slot as usize).and_then(|p| p.get())
    }

    fn used_slots(&self) -> impl Iterator<Item = u32> + '_ {
        let hi = self.next_slot.load(Ordering::Acquire).min(self.capacity());
        (0..hi as u32).filter(move |&s| self.state[s as usize].load(Ordering::Acquire) != FREE)
    }

    fn check_dim(&self, v: &[f32]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: v.len(),
            });
        }
        Ok(())
    }

    fn reserve_slot(&self, id: u64) -> Result<u32> {
        let mut map = self.id_map.write();
        if map.contains_key(&id) {
            return Err(Error::DuplicateId(id));
        }
        let slot = match self.free_slots.lock().pop() {
            Some(s) => s,
            None => {
                let s = self.next_slot.fetch_add(1, Ordering::AcqRel);
                if s >= self.capacity() {
                    self.next_slot.fetch_sub(1, Ordering::AcqRel);
                    return Err(Error::CapacityExceeded(self.capacity()));
                }
                s as u32
            }
        };
        map.insert(id, slot);
        Ok(slot)
    }

    /// Best-first search from the start node keeping the `list_size` closest
    /// candidates. Distances in the trace are squared.
    pub(crate) fn search_trace(&self, q: &[f32], list_size: usize) -> Trace {
        let mut list = CandidateList::new(list_size);
        let mut expanded = Vec::new();
        let mut comparisons = 0;
        let start = self.start.load(Ordering::Acquire);
        if let Some(p) = self.point(start) {
            list.insert(l2_squared(q, &p.vector), p.id, start);
            comparisons += 1;
        }
        let mut seen = FxHashSet::default();
        seen.insert(start);
        let mut buf: Vec<u32> = Vec::with_capacity(self.params.max_degree);
        while let Some(c) = list.next_unexpanded() {
            expanded.push(c);
            buf.clear();
            buf.extend_from_slice(&self.adjacency[c.slot as usize].read());
            for &n in &buf {
                if !seen.insert(n) {
                    continue;
                }
                if let Some(p) = self.point(n) {
                    comparisons += 1;
                    list.insert(l2_squared(q, &p.vector), p.id, n);
                }
            }
        }
        Trace {
            list,
            expanded,
            comparisons,
        }
    }

    /// Greedy search returning the `k` closest nodes found.
    ///
    /// With `filter_deleted`, lazily deleted nodes are still traversed but
    /// never reported.
    pub fn greedy_search(
        &self,
        q: &[f32],
        k: usize,
        list_size: usize,
        filter_deleted: bool,
    ) -> Result<SearchResult> {
        if filter_deleted {
            self.search_with_filter(q, k, list_size, |_| false)
        } else {
            self.search_impl(q, k, list_size, false, |_| false)
        }
    }

    /// Greedy search that also excludes ids for which `exclude` returns true.
    /// Lazily deleted nodes are always excluded.
    pub fn search_with_filter<F>(&self, q: &[f32], k: usize, list_size: usize, exclude: F) -> Result<SearchResult>
    where
        F: Fn(u64) -> bool,
    {
        self.search_impl(q, k, list_size, true, exclude)
    }

    fn search_impl<F>(
        &self,
        q: &[f32],
        k: usize,
        list_size: usize,
        filter_deleted: bool,
        exclude: F,
    ) -> Result<SearchResult>
    where
        F: Fn(u64) -> bool,
    {
        self.check_dim(q)?;
        if k > list_size {
            return Err(Error::invalid(format!("k = {k} exceeds list size {list_size}")));
        }
        if self.start.load(Ordering::Acquire) == NO_SLOT {
            return Err(Error::Empty("graph has no nodes"));
        }
        let trace = self.search_trace(q, list_size);
        // Pool the final list with every expanded node.
        let mut pool: Vec<Candidate> = trace.list.items().to_vec();
        pool.extend_from_slice(&trace.expanded);
        pool.sort_by(|a, b| a.dist.total_cmp(&b.dist).then(a.id.cmp(&b.id)));
        pool.dedup_by_key(|c| c.slot);
        let top_k = pool
            .iter()
            .filter(|c| {
                !(filter_deleted && self.state[c.slot as usize].load(Ordering::Acquire) == DELETED)
                    && !exclude(c.id)
            })
            .take(k)
            .map(|c| Neighbor {
                id: c.id,
                distance: c.dist.sqrt(),
            })
            .collect();
        Ok(SearchResult {
            top_k,
            visited: trace.expanded.iter().map(|c| c.id).collect(),
            comparisons: trace.comparisons,
        })
    }

    fn prune_slot_candidates(&self, candidates: &mut Vec<PruneCandidate>) -> Vec<u32> {
        robust_prune(candidates, self.params.alpha, self.params.max_degree, |a, b| {
            match (self.point(a), self.point(b)) {
                (Some(x), Some(y)) => l2_squared(&x.vector, &y.vector),
                _ => f32::INFINITY,
            }
        })
    }

    fn candidates_for(&self, x: &[f32], slot: u32, slots: impl IntoIterator<Item = u32>) -> Vec<PruneCandidate> {
        slots
            .into_iter()
            .filter(|&s| s != slot)
            .filter_map(|s| {
                self.point(s).map(|p| PruneCandidate {
                    dist: l2_squared(x, &p.vector),
                    id: p.id,
                    handle: s,
                })
            })
            .collect()
    }

    /// Sets `slot`'s out-neighbors from `candidates` and adds the reverse edges.
    fn link(&self, slot: u32, mut candidates: Vec<PruneCandidate>) {
        let nbrs = self.prune_slot_candidates(&mut candidates);
        *self.adjacency[slot as usize].write() = nbrs.clone();
        for j in nbrs {
            self.add_back_edge(j, slot);
        }
    }

    fn add_back_edge(&self, j: u32, from: u32) {
        let overflow = {
            let mut list = self.adjacency[j as usize].write();
            if list.contains(&from) {
                return;
            }
            if list.len() < self.params.max_degree {
                list.push(from);
                return;
            }
            let mut all = list.clone();
            all.push(from);
            all
        };
        // Prune outside the lock; a concurrent edit to `j` in between is
        // overwritten, which only drops an edge.
        let Some(pj) = self.point(j) else { return };
        let mut cands = self.candidates_for(&pj.vector, j, overflow);
        let pruned = self.prune_slot_candidates(&mut cands);
        *self.adjacency[j as usize].write() = pruned;
    }

    /// Inserts a new point and wires it into the graph.
    pub fn insert(&self, id: u64, x: &[f32]) -> Result<()> {
        self.check_dim(x)?;
        let slot = self.reserve_slot(id)?;
        let stored = self.points[slot as usize].set(Point {
            id,
            vector: x.into(),
        });
        debug_assert!(stored.is_ok(), "reserved slot already held a point");
        self.state[slot as usize].store(LIVE, Ordering::Release);
        if self
            .start
            .compare_exchange(NO_SLOT, slot, Ordering::AcqRel, Ordering::Acquire)
            .is_ok()
        {
            return Ok(());
        }
        let trace = self.search_trace(x, self.params.build_list_size);
        let cands = self.candidates_for(x, slot, trace.expanded.iter().map(|c| c.slot));
        self.link(slot, cands);
        Ok(())
    }

    /// Recomputes `id`'s neighborhood from a fresh search, as in a second
    /// build pass.
    pub fn refine(&self, id: u64) -> Result<()> {
        let slot = self.slot_of(id).ok_or(Error::UnknownId(id))?;
        let x = &*self.point(slot).ok_or(Error::UnknownId(id))?.vector;
        let trace = self.search_trace(x, self.params.build_list_size);
        let current = self.adjacency[slot as usize].read().clone();
        let cands = self.candidates_for(
            x,
            slot,
            trace.expanded.iter().map(|c| c.slot).chain(current),
        );
        self.link(slot, cands);
        Ok(())
    }

    /// Prunes `id`'s neighborhood against `candidates ∪ N_out(id)` and
    /// installs the result. Returns the new neighbor ids.
    pub fn prune_neighbors(&self, id: u64, candidates: &[u64], alpha: f32, max_degree: usize) -> Result<Vec<u64>> {
        if !(alpha >= 1.0) {
            return Err(Error::invalid("alpha must be >= 1"));
        }
        let max_degree = max_degree.min(self.params.max_degree);
        let slot = self.slot_of(id).ok_or(Error::UnknownId(id))?;
        let x = &*self.point(slot).ok_or(Error::UnknownId(id))?.vector;
        let mut slots: Vec<u32> = candidates.iter().filter_map(|&c| self.slot_of(c)).collect();
        slots.extend_from_slice(&self.adjacency[slot as usize].read());
        let mut cands = self.candidates_for(x, slot, slots);
        let nbrs = robust_prune(&mut cands, alpha, max_degree, |a, b| match (self.point(a), self.point(b)) {
            (Some(p), Some(q)) => l2_squared(&p.vector, &q.vector),
            _ => f32::INFINITY,
        });
        *self.adjacency[slot as usize].write() = nbrs.clone();
        Ok(nbrs.into_iter().filter_map(|s| self.point(s).map(|p| p.id)).collect())
    }

    /// Marks `id` deleted without touching the graph.
    pub fn delete(&self, id: u64) -> Result<()> {
        let slot = self.slot_of(id).ok_or(Error::UnknownId(id))?;
        match self.state[slot as usize].compare_exchange(LIVE, DELETED, Ordering::AcqRel, Ordering::Acquire) {
            Ok(_) => {
                self.deleted.fetch_add(1, Ordering::Relaxed);
                Ok(())
            }
            Err(DELETED) => Err(Error::AlreadyDeleted(id)),
            Err(_) => Err(Error::UnknownId(id)),
        }
    }

    /// Removes every lazily deleted node, repairing the graph per `policy`.
    pub fn consolidate_deletes(&mut self, policy: DeletePolicy) -> ConsolidateStats {
        let hi = self.next_slot.load(Ordering::Acquire).min(self.capacity());
        let is_deleted: Vec<bool> = (0..hi)
            .map(|s| self.state[s].load(Ordering::Acquire) == DELETED)
            .collect();
        let deleted_slots: Vec<u32> = (0..hi as u32).filter(|&s| is_deleted[s as usize]).collect();
        let mut stats = ConsolidateStats {
            deleted: deleted_slots.len(),
            ..Default::default()
        };
        if deleted_slots.is_empty() {
            return stats;
        }

        let this = &*self;
        let live: Vec<u32> = (0..hi as u32)
            .filter(|&s| this.state[s as usize].load(Ordering::Acquire) == LIVE)
            .collect();
        let updates: Vec<(u32, Vec<u32>, Option<usize>)> = live
            .par_iter()
            .filter_map(|&p| {
                let nbrs = this.adjacency[p as usize].read().clone();
                if !nbrs.iter().any(|&n| is_deleted[n as usize]) {
                    return None;
                }
                match policy {
                    DeletePolicy::PolicyA => {
                        let kept = nbrs.into_iter().filter(|&n| !is_deleted[n as usize]).collect();
                        Some((p, kept, None))
                    }
                    DeletePolicy::FreshVamana => {
                        let mut pool: Vec<u32> = Vec::with_capacity(nbrs.len() * 2);
                        for &n in &nbrs {
                            if is_deleted[n as usize] {
                                pool.extend(this.adjacency[n as usize].read().iter().copied());
                            } else {
                                pool.push(n);
                            }
                        }
                        pool.retain(|&c| !is_deleted[c as usize] && c != p);
                        pool.sort_unstable();
                        pool.dedup();
                        let size = pool.len();
                        let x = &this.point(p).expect("live slot has a point").vector;
                        let mut cands = this.candidates_for(x, p, pool);
                        Some((p, this.prune_slot_candidates(&mut cands), Some(size)))
                    }
                }
            })
            .collect();
        for (p, nbrs, size) in updates {
            *self.adjacency[p as usize].write() = nbrs;
            if let Some(size) = size {
                stats.pruned_nodes += 1;
                stats.candidate_sizes.push(size);
            }
        }

        let old_start = self.start.load(Ordering::Acquire);
        if old_start != NO_SLOT && is_deleted[old_start as usize] {
            let anchor = self.point(old_start).expect("start has a point").vector.clone();
            let replacement = live
                .iter()
                .filter_map(|&s| self.point(s).map(|p| (l2_squared(&anchor, &p.vector), p.id, s)))
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .map(|(_, _, s)| s)
                .unwrap_or(NO_SLOT);
            self.start.store(replacement, Ordering::Release);
        }

        let map = self.id_map.get_mut();
        let free = self.free_slots.get_mut();
        for &s in &deleted_slots {
            self.adjacency[s as usize].get_mut().clear();
            if let Some(p) = self.points[s as usize].take() {
                map.remove(&p.id);
            }
            *self.state[s as usize].get_mut() = FREE;
            free.push(s);
        }
        // Pop lowest slots first.
        free.sort_unstable_by(|a, b| b.cmp(a));
        *self.deleted.get_mut() = 0;
        stats
    }

    /// Checks the structural invariants and returns a description of the
    /// first violation.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let r = self.params.max_degree;
        let map = self.id_map.read();
        for (&id, &s) in map.iter() {
            let st = self.state[s as usize].load(Ordering::Acquire);
            if st == FREE {
                return Err(format!("id {id} maps to free slot {s}"));
            }
            let nbrs = self.adjacency[s as usize].read();
            if nbrs.len() > r {
                return Err(format!("id {id} has degree {} > {r}", nbrs.len()));
            }
            for &n in nbrs.iter() {
                if n == s {
                    return Err(format!("id {id} has a self-loop"));
                }
                if self.point(n).is_none() || self.state[n as usize].load(Ordering::Acquire) == FREE {
                    return Err(format!("id {id} points at dangling slot {n}"));
                }
            }
        }
        let start = self.start.load(Ordering::Acquire);
        if map.is_empty() {
            return Ok(());
        }
        match self.point(start) {
            Some(p) if map.get(&p.id) == Some(&start) => Ok(()),
            _ => Err("start node missing".into()),
        }
    }

    /// A deep copy with identical slot layout.
    pub fn duplicate(&self) -> DynGraph {
        let out = DynGraph::new(self.dim, self.capacity(), self.params).expect("params already validated");
        for s in 0..self.capacity() {
            if let Some(p) = self.points[s].get() {
                let _ = out.points[s].set(Point {
                    id: p.id,
                    vector: p.vector.clone(),
                });
            }
            *out.adjacency[s].write() = self.adjacency[s].read().clone();
            out.state[s].store(self.state[s].load(Ordering::Acquire), Ordering::Relaxed);
        }
        *out.id_map.write() = self.id_map.read().clone();
        *out.free_slots.lock() = self.free_slots.lock().clone();
        out.next_slot.store(self.next_slot.load(Ordering::Acquire), Ordering::Relaxed);
        out.start.store(self.start.load(Ordering::Acquire), Ordering::Relaxed);
        out.deleted.store(self.deleted_count(), Ordering::Relaxed);
        out
    }

    /// Builds a graph with explicit edges. `edges[i]` lists positions in
    /// `set` that point `i` links to; `start` is a position.
    pub fn from_edges(set: &VectorSet, params: GraphParams, edges: &[Vec<usize>], start: usize) -> Result<DynGraph> {
        if edges.len() != set.len() {
            return Err(Error::invalid(format!("{} edge lists for {} points", edges.len(), set.len())));
        }
        if start >= set.len() {
            return Err(Error::invalid(format!("start {start} outside {} points", set.len())));
        }
        let g = DynGraph::new(set.dim(), set.len(), params)?;
        for (id, v) in set.iter() {
            let slot = g.reserve_slot(id)?;
            let _ = g.points[slot as usize].set(Point { id, vector: v.into() });
            g.state[slot as usize].store(LIVE, Ordering::Release);
        }
        for (i, list) in edges.iter().enumerate() {
            if list.len() > params.max_degree {
                return Err(Error::DegreeBound {
                    degree: list.len(),
                    bound: params.max_degree,
                });
            }
            if let Some(&bad) = list.iter().find(|&&t| t >= set.len() || t == i) {
                return Err(Error::invalid(format!("edge {i} -> {bad} is out of range or a self loop")));
            }
            *g.adjacency[i].write() = list.iter().map(|&t| t as u32).collect();
        }
        g.start.store(start as u32, Ordering::Release);
        Ok(g)
    }

    /// Every point linked to every other; needs `max_degree ≥ n − 1`.
    pub fn complete(set: &VectorSet, params: GraphParams) -> Result<DynGraph> {
        let n = set.len();
        let edges: Vec<Vec<usize>> = (0..n).map(|i| (0..n).filter(|&j| j != i).collect()).collect();
        DynGraph::from_edges(set, params, &edges, 0)
    }

    /// Iterates `(id, vector)` over every node, lazily deleted ones included,
    /// in slot order.
    pub fn points(&self) -> impl Iterator<Item = (u64, &[f32])> + '_ {
        self.used_slots()
            .filter_map(move |s| self.point(s).map(|p| (p.id, &*p.vector)))
    }

    pub(crate) fn raw_slot(&self, id: u64) -> Option<u32> {
        self.slot_of(id)
    }
}

/// Index of the point minimizing the summed distance to a sample of at most
/// 10k points. Candidates are drawn from the same sample.
pub fn medoid(set: &VectorSet, seed: u64) -> Result<usize> {
    if set.is_empty() {
        return Err(Error::Empty("medoid of an empty set"));
    }
    let positions: Vec<usize> = if set.len() <= MEDOID_SAMPLE {
        (0..set.len()).collect()
    } else {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut s = sample(&mut rng, set.len(), MEDOID_SAMPLE).into_vec();
        s.sort_unstable();
        s
    };
    let best = positions
        .par_iter()
        .map(|&i| {
            let v = set.vector(i);
            let total: f64 = positions
                .iter()
                .map(|&j| l2_squared(v, set.vector(j)).sqrt() as f64)
                .sum();
            (total, set.id(i), i)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .expect("non-empty sample");
    Ok(best.2)
}

/// Builds a graph over `set` by inserting every point, starting from the
/// medoid. `passes = 2` adds a refinement pass over all nodes.
pub fn build_static(set: &VectorSet, params: GraphParams, passes: usize) -> Result<DynGraph> {
    build_static_with_capacity(set, params, passes, set.len())
}

pub fn build_static_with_capacity(
    set: &VectorSet,
    params: GraphParams,
    passes: usize,
    capacity: usize,
) -> Result<DynGraph> {
    if set.is_empty() {
        return Err(Error::Empty("cannot build a graph over an empty set"));
    }
    if passes == 0 {
        return Err(Error::invalid("at least one build pass is required"));
    }
    let graph = DynGraph::new(set.dim(), capacity.max(set.len()), params)?;
    let m = medoid(set, 0x5eed)?;
    graph.insert(set.id(m), set.vector(m))?;
    for (i, (id, v)) in set.iter().enumerate() {
        if i != m {
            graph.insert(id, v)?;
        }
    }
    for _ in 1..passes {
        for &id in set.ids() {
            graph.refine(id)?;
        }
    }
    Ok(graph)
}
