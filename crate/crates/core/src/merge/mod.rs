//! Streaming merge of inserts and deletes into a long-term index.
//!
//! Three phases, each internally parallel:
//! - delete: one sequential pass over the input body, rewriting the
//!   neighborhoods of nodes that lost neighbors and tombstoning deleted
//!   slots into an intermediate body with the same slot numbering;
//! - insert: a beam search per new point on the intermediate index, whose
//!   pruned visited set becomes the point's out-edges; the reverse edges
//!   are collected in memory;
//! - patch: one sequential pass over the intermediate body that merges the
//!   collected reverse edges in, drops tombstones, renumbers slots and
//!   appends the new points.
//!
//! When the inserts number at least half the surviving points, the output is
//! instead built from scratch over survivors and inserts.
//!
//! Prune distances use full precision for the node being pruned and PQ
//! reconstructions for its candidates, since only the codes are resident.
//! Outputs go to fresh paths; the input index is never modified.

mod delta;
mod report;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::dataset::VectorSet;
use crate::distance::l2_squared;
use crate::error::{Error, Result};
use crate::graph::{build_static, robust_prune, DynGraph, GraphParams, PruneCandidate};
use crate::lti::{
    sidecar_path, write_lti, IoStats, LtiIndex, LtiWriter, NodeRecord, IDS_MAGIC, NO_NEIGHBOR,
};
use crate::pq::{PqCodebook, PqCodes, CODES_MAGIC};

pub use delta::DeltaMap;
pub use report::{
    fastest_bins, linear_fit, prune_fit, CandidateReport, DeleteCost, HistogramBin, LinearFit, MemoryReport, MergeReport,
    PruneBin,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergeOptions {
    /// Candidate list size of the insert-phase search.
    pub search_list: usize,
    pub beam_width: usize,
    pub block_sectors: usize,
    /// Worker threads; 0 uses the global pool.
    pub threads: usize,
    /// Also take candidates from searches over the temp graphs, so new
    /// points can link to each other.
    pub union_temp_candidates: bool,
}

impl MergeOptions {
    pub fn new(params: &GraphParams) -> Self {
        MergeOptions {
            search_list: params.build_list_size,
            beam_width: 4,
            block_sectors: crate::lti::DEFAULT_BLOCK_SECTORS,
            threads: 0,
            union_temp_candidates: false,
        }
    }
}

pub struct MergeJob<'a> {
    /// Points to add. Ids listed in `deletes` are skipped.
    pub inserts: &'a VectorSet,
    pub deletes: &'a [u64],
    pub params: GraphParams,
    pub options: MergeOptions,
    /// Graphs holding the inserts, used only with `union_temp_candidates`.
    pub temp_graphs: Vec<&'a DynGraph>,
}

impl<'a> MergeJob<'a> {
    pub fn new(inserts: &'a VectorSet, deletes: &'a [u64], params: GraphParams) -> Self {
        MergeJob {
            inserts,
            deletes,
            params,
            options: MergeOptions::new(&params),
            temp_graphs: Vec::new(),
        }
    }
}

/// `R(1−β) + R²β(1−β)` expected candidates per rebuilt neighborhood and
/// `n·R·(1−β)²·(1+Rβ)` expected candidate work for a delete phase.
pub fn estimate_delete_cost(n: usize, max_degree: usize, beta: f64) -> Result<DeleteCost> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::invalid(format!("beta must be in [0, 1], got {beta}")));
    }
    let r = max_degree as f64;
    Ok(DeleteCost {
        expected_candidates: r * (1.0 - beta) + r * r * beta * (1.0 - beta),
        expected_total_ops: n as f64 * r * (1.0 - beta).powi(2) * (1.0 + r * beta),
    })
}

/// Current and peak bytes held by the merge's auxiliary structures.
#[derive(Debug, Default)]
pub(crate) struct MemTracker {
    current: AtomicUsize,
    peak: AtomicUsize,
}

impl MemTracker {
    pub fn charge(&self, bytes: usize) {
        let now = self.current.fetch_add(bytes, Ordering::AcqRel) + bytes;
        self.peak.fetch_max(now, Ordering::AcqRel);
    }

    pub fn release(&self, bytes: usize) {
        self.current.fetch_sub(bytes, Ordering::AcqRel);
    }

    pub fn peak(&self) -> usize {
        self.peak.load(Ordering::Acquire)
    }
}

/// Deleted-slot bitmap with a per-word rank directory.
pub(crate) struct DeletedSlots {
    bits: Vec<u64>,
    rank: Vec<u32>,
    count: usize,
}

impl DeletedSlots {
    fn new(slots: usize, deleted: &[u32]) -> Self {
        let mut bits = vec![0u64; slots.div_ceil(64)];
        for &s in deleted {
            bits[s as usize / 64] |= 1 << (s % 64);
        }
        let mut rank = Vec::with_capacity(bits.len());
        let mut acc = 0u32;
        for w in &bits {
            rank.push(acc);
            acc += w.count_ones();
        }
        DeletedSlots {
            bits,
            rank,
            count: acc as usize,
        }
    }

    #[inline]
    fn contains(&self, s: u32) -> bool {
        self.bits[s as usize / 64] >> (s % 64) & 1 == 1
    }

    /// Deleted slots strictly below `s`.
    #[inline]
    fn before(&self, s: u32) -> u32 {
        let w = s as usize / 64;
        let mask = (1u64 << (s % 64)) - 1;
        self.rank[w] + (self.bits[w] & mask).count_ones()
    }

    fn bytes(&self) -> usize {
        8 * self.bits.len() + 4 * self.rank.len()
    }
}

/// The points a merge appends, in insertion order, with their codes.
pub(crate) struct NewPoints {
    /// Positions in `job.inserts`.
    positions: Vec<usize>,
    index_of: FxHashMap<u64, u32>,
    codes: PqCodes,
}

impl NewPoints {
    fn len(&self) -> usize {
        self.positions.len()
    }
}

/// Full-precision `x` against the reconstructions of `slots`, pruned.
/// `recon` receives the reconstructions, `dim` floats per candidate.
fn pq_prune<'c>(
    x: &[f32],
    slots: &[u32],
    code_of: impl Fn(u32) -> &'c [u8],
    codebook: &PqCodebook,
    alpha: f32,
    max_degree: usize,
    recon: &mut Vec<f32>,
) -> Vec<u32> {
    let dim = codebook.dim();
    recon.clear();
    for &s in slots {
        codebook.decode_extend(code_of(s), recon);
    }
    let mut cands: Vec<PruneCandidate> = slots
        .iter()
        .enumerate()
        .map(|(i, &s)| PruneCandidate {
            dist: l2_squared(x, &recon[i * dim..(i + 1) * dim]),
            id: s as u64,
            handle: i as u32,
        })
        .collect();
    let recon = &*recon;
    robust_prune(&mut cands, alpha, max_degree, |a, b| {
        let (a, b) = (a as usize * dim, b as usize * dim);
        l2_squared(&recon[a..a + dim], &recon[b..b + dim])
    })
    .into_iter()
    .map(|h| slots[h as usize])
    .collect()
}

fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Output of the delete phase.
pub struct Intermediate {
    pub index: LtiIndex,
    pub(crate) deleted: DeletedSlots,
    pub(crate) candidates: report::CandidateStats,
}

impl Intermediate {
    /// Slots tombstoned by the delete phase.
    pub fn deleted_count(&self) -> usize {
        self.deleted.count
    }

    pub fn live_count(&self) -> usize {
        self.index.slots() - self.deleted.count
    }
}

pub(crate) struct MergeCtx {
    io: Arc<IoStats>,
    mem: MemTracker,
}

impl MergeCtx {
    fn new() -> Self {
        MergeCtx {
            io: IoStats::new(),
            mem: MemTracker::default(),
        }
    }

    /// Bytes held by a block read buffer plus its decoded records.
    fn block_bytes(&self, lti: &LtiIndex, block_sectors: usize) -> usize {
        let l = lti.layout();
        let sectors = block_sectors.max(l.sectors_per_record);
        let records = sectors / l.sectors_per_record * l.records_per_sector;
        sectors * crate::lti::SECTOR_SIZE + records * (l.record_size + 2 * std::mem::size_of::<Vec<u8>>())
    }
}

/// Rewrites the neighborhoods around deleted nodes into `path`.
pub(crate) fn delete_phase(lti: &LtiIndex, job: &MergeJob, path: &Path, ctx: &MergeCtx) -> Result<Intermediate> {
    let params = &job.params;
    let r = lti.max_degree();
    let dim = lti.dim();
    let mut del_slots: Vec<u32> = job.deletes.iter().filter_map(|&id| lti.slot_of(id)).collect();
    del_slots.sort_unstable();
    del_slots.dedup();
    let deleted = DeletedSlots::new(lti.slots(), &del_slots);
    ctx.mem.charge(deleted.bytes());

    // Neighborhoods of deleted nodes, fetched before the scan.
    let mut cache: FxHashMap<u32, Vec<u32>> = FxHashMap::default();
    cache.reserve(del_slots.len());
    let mut start_vector = None;
    let start = lti.start_slot();
    for &d in &del_slots {
        let rec = lti.read_record_counted(d, &ctx.io)?;
        if Some(d) == start {
            start_vector = Some(rec.vector.clone());
        }
        cache.insert(d, rec.neighbors);
    }
    let cache_bytes = del_slots.len() * (4 * r + 48);
    ctx.mem.charge(cache_bytes);

    let codes = lti.codes();
    let codebook = lti.codebook();
    let block_bytes = ctx.block_bytes(lti, job.options.block_sectors);
    ctx.mem.charge(2 * block_bytes);
    let mut stats = report::CandidateStats::default();
    let mut writer = LtiWriter::create(path, dim, r, ctx.io.clone())?;
    let mut scan = lti.scanner(job.options.block_sectors, ctx.io.clone());
    while let Some(block) = scan.next_block()? {
        let first = block.first_slot as u32;
        let out: Vec<(NodeRecord, Option<report::PruneCall>)> = block
            .records
            .into_par_iter()
            .enumerate()
            .map_init(Vec::new, |recon, (i, rec)| {
                let slot = first + i as u32;
                if deleted.contains(slot) {
                    return (NodeRecord::tombstone(dim), None);
                }
                if !rec.neighbors.iter().any(|&n| deleted.contains(n)) {
                    let raw = rec.neighbors.len();
                    return (rec, Some(report::PruneCall { raw, pruned: None }));
                }
                let mut pool = Vec::with_capacity(rec.neighbors.len() * 2);
                for &n in &rec.neighbors {
                    if deleted.contains(n) {
                        if let Some(nn) = cache.get(&n) {
                            pool.extend(nn.iter().copied().filter(|&c| !deleted.contains(c)));
                        }
                    } else {
                        pool.push(n);
                    }
                }
                let raw = pool.len();
                pool.retain(|&c| c != slot);
                pool.sort_unstable();
                pool.dedup();
                let t = report::thread_cpu_nanos();
                let nbrs = pq_prune(
                    &rec.vector,
                    &pool,
                    |s| codes.get(s as usize),
                    codebook,
                    params.alpha,
                    r,
                    recon,
                );
                let nanos = report::thread_cpu_nanos() - t;
                (
                    NodeRecord::new(rec.vector, nbrs),
                    Some(report::PruneCall {
                        raw,
                        pruned: Some((pool.len(), nanos)),
                    }),
                )
            })
            .collect();
        for (rec, call) in out {
            writer.push(&rec)?;
            if let Some(call) = call {
                stats.record(call);
            }
        }
    }
    ctx.mem.release(2 * block_bytes);
    ctx.mem.release(cache_bytes);
    drop(cache);

    let new_start = match start {
        Some(s) if deleted.contains(s) => {
            let anchor = start_vector.expect("deleted start was cached");
            let table = codebook.lookup_table(&anchor)?;
            (0..lti.slots() as u32)
                .filter(|&c| !deleted.contains(c))
                .map(|c| (table.distance_sq(codes.get(c as usize)), c))
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .map(|(_, c)| c)
        }
        s => s,
    };
    let header = writer.finish(new_start.unwrap_or(0) as u64)?;
    stats.deleted = deleted.count;
    Ok(Intermediate {
        index: lti.with_body(path, header)?,
        deleted,
        candidates: stats,
    })
}

fn new_points(lti: &LtiIndex, job: &MergeJob) -> Result<NewPoints> {
    let deleted: rustc_hash::FxHashSet<u64> = job.deletes.iter().copied().collect();
    let mut positions = Vec::new();
    let mut index_of = FxHashMap::default();
    for (i, &id) in job.inserts.ids().iter().enumerate() {
        if deleted.contains(&id) {
            continue;
        }
        if lti.contains(id) || index_of.insert(id, positions.len() as u32).is_some() {
            return Err(Error::DuplicateId(id));
        }
        positions.push(i);
    }
    let m = lti.codebook().subspaces();
    let mut raw = vec![0u8; positions.len() * m];
    raw.par_chunks_mut(m)
        .zip(positions.par_iter())
        .for_each(|(c, &p)| lti.codebook().encode_into(job.inserts.vector(p), c));
    Ok(NewPoints {
        positions,
        index_of,
        codes: PqCodes::from_raw(m, raw).unwrap_or_else(|_| PqCodes::new(m)),
    })
}

/// Searches the intermediate index for every new point and stages its
/// out-edges and the matching reverse edges.
pub(crate) fn insert_phase(
    inter: &Intermediate,
    job: &MergeJob,
    new: &NewPoints,
    ctx: &MergeCtx,
) -> Result<DeltaMap> {
    let index = &inter.index;
    let r = index.max_degree();
    let base = index.slots() as u32;
    let mut forward = vec![NO_NEIGHBOR; new.len() * r];
    ctx.mem.charge(4 * forward.len());
    if inter.live_count() == 0 {
        return Ok(DeltaMap::new(r, base, forward));
    }
    let codes = index.codes();
    let codebook = index.codebook();
    let list = job.options.search_list.max(1);
    let ios = AtomicUsize::new(0);
    forward
        .par_chunks_mut(r.max(1))
        .enumerate()
        .try_for_each_init(Vec::new, |recon, (i, out)| -> Result<()> {
            let x = job.inserts.vector(new.positions[i]);
            let trace = index.beam_trace(x, list, job.options.beam_width)?;
            ios.fetch_add(trace.stats.ios as usize, Ordering::Relaxed);
            let mut pool: Vec<u32> = trace.expanded.iter().map(|e| e.slot).collect();
            if job.options.union_temp_candidates {
                for g in &job.temp_graphs {
                    for c in g.search_trace(x, list).expanded {
                        if let Some(&j) = new.index_of.get(&c.id) {
                            if j as usize != i {
                                pool.push(base + j);
                            }
                        }
                    }
                }
            }
            pool.sort_unstable();
            pool.dedup();
            let nbrs = pq_prune(
                x,
                &pool,
                |s| {
                    if s >= base {
                        new.codes.get((s - base) as usize)
                    } else {
                        codes.get(s as usize)
                    }
                },
                codebook,
                job.params.alpha,
                r,
                recon,
            );
            out[..nbrs.len()].copy_from_slice(&nbrs);
            Ok(())
        })?;
    ctx.io.add_random_sectors(ios.into_inner() as u64);
    let delta = DeltaMap::new(r, base, forward);
    ctx.mem.charge(4 * delta.entries());
    Ok(delta)
}

/// Streams a codes or ids sidecar whose count is known up front.
struct SidecarWriter {
    out: BufWriter<File>,
}

impl SidecarWriter {
    fn codes(path: &Path, count: usize, m: usize) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(CODES_MAGIC)?;
        out.write_all(&(count as u64).to_le_bytes())?;
        out.write_all(&(m as u32).to_le_bytes())?;
        Ok(SidecarWriter { out })
    }

    fn ids(path: &Path, count: usize) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(IDS_MAGIC)?;
        out.write_all(&(count as u64).to_le_bytes())?;
        Ok(SidecarWriter { out })
    }

    fn put(&mut self, bytes: &[u8]) -> Result<()> {
        self.out.write_all(bytes)?;
        Ok(())
    }

    fn finish(self) -> Result<()> {
        let file = self.out.into_inner().map_err(|e| e.into_error())?;
        file.sync_all()?;
        Ok(())
    }
}

/// Merges the staged edges into the intermediate body, compacts it and
/// appends the new points at `out`.
pub(crate) fn patch_phase(
    inter: &Intermediate,
    job: &MergeJob,
    new: &NewPoints,
    delta: &DeltaMap,
    out: &Path,
    ctx: &MergeCtx,
) -> Result<(LtiIndex, usize)> {
    let index = &inter.index;
    let r = index.max_degree();
    let dim = index.dim();
    let base = delta.base();
    let deleted = &inter.deleted;
    let live_old = inter.live_count() as u32;
    let map = |s: u32| -> u32 {
        if s >= base {
            live_old + (s - base)
        } else {
            s - deleted.before(s)
        }
    };
    let codes = index.codes();
    let codebook = index.codebook();
    let code_of = |s: u32| -> &[u8] {
        if s >= base {
            new.codes.get((s - base) as usize)
        } else {
            codes.get(s as usize)
        }
    };
    let total = live_old as usize + new.len();
    let m = codebook.subspaces();
    let mut code_out = SidecarWriter::codes(&sidecar_path(out, "pq"), total, m)?;
    let mut id_out = SidecarWriter::ids(&sidecar_path(out, "ids"), total)?;
    let pruned = AtomicUsize::new(0);
    let block_bytes = ctx.block_bytes(index, job.options.block_sectors);
    ctx.mem.charge(2 * block_bytes);

    let patch = |recon: &mut Vec<f32>, x: &[f32], mut nbrs: Vec<u32>| -> Vec<u32> {
        if nbrs.len() > r {
            pruned.fetch_add(1, Ordering::Relaxed);
            nbrs = pq_prune(x, &nbrs, code_of, codebook, job.params.alpha, r, recon);
        }
        nbrs.into_iter().map(map).collect()
    };

    let mut writer = LtiWriter::create(out, dim, r, ctx.io.clone())?;
    let mut scan = index.scanner(job.options.block_sectors, ctx.io.clone());
    while let Some(block) = scan.next_block()? {
        let first = block.first_slot as u32;
        let recs: Vec<Option<NodeRecord>> = block
            .records
            .into_par_iter()
            .enumerate()
            .map_init(Vec::new, |recon, (i, rec)| {
                if rec.tombstone {
                    return None;
                }
                let slot = first + i as u32;
                let mut nbrs = rec.neighbors;
                for j in delta.back_edges(slot) {
                    let v = base + j;
                    if !nbrs.contains(&v) {
                        nbrs.push(v);
                    }
                }
                let nbrs = patch(recon, &rec.vector, nbrs);
                Some(NodeRecord::new(rec.vector, nbrs))
            })
            .collect();
        for (i, rec) in recs.into_iter().enumerate() {
            if let Some(rec) = rec {
                let slot = first + i as u32;
                writer.push(&rec)?;
                code_out.put(codes.get(slot as usize))?;
                id_out.put(&index.id_of(slot).to_le_bytes())?;
            }
        }
    }
    ctx.mem.release(2 * block_bytes);

    let appended: Vec<NodeRecord> = (0..new.len())
        .into_par_iter()
        .map_init(Vec::new, |recon, i| {
            let x = job.inserts.vector(new.positions[i]);
            let mut nbrs = delta.neighbors(i).to_vec();
            for j in delta.back_edges(base + i as u32) {
                let v = base + j;
                if !nbrs.contains(&v) {
                    nbrs.push(v);
                }
            }
            NodeRecord::new(x.to_vec(), patch(recon, x, nbrs))
        })
        .collect();
    for (i, rec) in appended.iter().enumerate() {
        writer.push(rec)?;
        code_out.put(new.codes.get(i))?;
        id_out.put(&job.inserts.id(new.positions[i]).to_le_bytes())?;
    }
    drop(appended);

    let start = match index.start_slot() {
        Some(s) if inter.live_count() > 0 => map(s),
        _ => 0,
    };
    writer.finish(start as u64)?;
    code_out.finish()?;
    id_out.finish()?;
    codebook.save(sidecar_path(out, "pqcb"))?;
    Ok((LtiIndex::open(out)?, pruned.into_inner()))
}

fn intermediate_path(out: &Path) -> PathBuf {
    sidecar_path(out, "merging")
}

/// Merges `job` into `lti`, writing the result at `out` (a path distinct
/// from the input).
pub fn merge(lti: &LtiIndex, job: &MergeJob, out: impl AsRef<Path>) -> Result<(LtiIndex, MergeReport)> {
    let out = out.as_ref();
    job.params.validate()?;
    if out == lti.path() {
        return Err(Error::invalid("merge output must not overwrite its input"));
    }
    if job.inserts.dim() != lti.dim() {
        return Err(Error::DimensionMismatch {
            expected: lti.dim(),
            actual: job.inserts.dim(),
        });
    }
    if job.params.max_degree != lti.max_degree() {
        return Err(Error::invalid(format!(
            "merge degree {} differs from the index degree {}",
            job.params.max_degree,
            lti.max_degree()
        )));
    }
    with_pool(job.options.threads, || merge_impl(lti, job, out))?
}

fn merge_impl(lti: &LtiIndex, job: &MergeJob, out: &Path) -> Result<(LtiIndex, MergeReport)> {
    let total = Instant::now();
    let ctx = MergeCtx::new();
    let new = new_points(lti, job)?;
    ctx.mem.charge(new.codes.size_bytes());
    let tmp = intermediate_path(out);

    let t = Instant::now();
    let inter = delete_phase(lti, job, &tmp, &ctx)?;
    let delete_secs = t.elapsed().as_secs_f64();

    if 2 * new.len() >= inter.live_count() {
        // Back edges into a small index get pruned away faster than they
        // connect the new points; index everything from scratch instead.
        let survivors = inter.index.load_points()?;
        let deleted = inter.deleted.count;
        drop(inter);
        let _ = fs::remove_file(&tmp);
        let (index, mut report) = rebuild(lti.codebook(), job, &new, survivors, out, total, delete_secs)?;
        report.input_points = lti.len();
        report.deleted = deleted;
        return Ok((index, report));
    }

    let t = Instant::now();
    let delta = insert_phase(&inter, job, &new, &ctx)?;
    let insert_secs = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let (index, patched) = patch_phase(&inter, job, &new, &delta, out, &ctx)?;
    let patch_secs = t.elapsed().as_secs_f64();
    drop(inter.index);
    let _ = fs::remove_file(&tmp);

    let r = lti.max_degree();
    let codes_bytes = index.codes().size_bytes();
    let fixed = 2 * ctx.block_bytes(lti, job.options.block_sectors) + inter.deleted.bytes() + (1 << 20);
    let report = MergeReport {
        input_points: lti.len(),
        deleted: inter.deleted.count,
        inserted: new.len(),
        output_points: index.len(),
        delete_secs,
        insert_secs,
        patch_secs,
        total_secs: total.elapsed().as_secs_f64(),
        delta_entries: delta.entries(),
        patched_prunes: patched,
        io: ctx.io.snapshot(),
        memory: MemoryReport {
            peak_aux_bytes: ctx.mem.peak(),
            delta_bound_bytes: 8 * new.len() * r,
            codes_bytes,
            fixed_overhead_bytes: fixed,
        },
        candidates: inter.candidates.summary(estimate_delete_cost(
            lti.len(),
            r,
            inter.deleted.count as f64 / lti.len().max(1) as f64,
        )?),
        rebuilt: false,
    };
    Ok((index, report))
}

fn rebuild(
    codebook: &PqCodebook,
    job: &MergeJob,
    new: &NewPoints,
    survivors: VectorSet,
    out: &Path,
    total: Instant,
    delete_secs: f64,
) -> Result<(LtiIndex, MergeReport)> {
    let t = Instant::now();
    let mut set = survivors;
    for &i in &new.positions {
        set.push(job.inserts.id(i), job.inserts.vector(i))?;
    }
    let index = if set.is_empty() {
        write_lti(&DynGraph::new(set.dim(), 1, job.params)?, codebook, out)?
    } else {
        write_lti(&build_static(&set, job.params, 1)?, codebook, out)?
    };
    let report = MergeReport {
        inserted: new.len(),
        output_points: index.len(),
        delete_secs,
        insert_secs: t.elapsed().as_secs_f64(),
        total_secs: total.elapsed().as_secs_f64(),
        rebuilt: true,
        ..MergeReport::default()
    };
    Ok((index, report))
}

/// Builds a long-term index over `set` from scratch.
pub fn build_lti(set: &VectorSet, params: GraphParams, codebook: &PqCodebook, out: impl AsRef<Path>) -> Result<LtiIndex> {
    let graph = build_static(set, params, 1)?;
    write_lti(&graph, codebook, out)
}

#[cfg(test)]
mod tests;
