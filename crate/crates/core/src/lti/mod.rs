//! SSD-resident long-term index: fixed-size node records packed into 4 KB
//! sectors, plus in-memory PQ codes and the slot → id map.
//!
//! Files for an index at `path`:
//! - `path`: header sector and node records (see [`layout`])
//! - `path.pq`: PQ codes, one per slot
//! - `path.pqcb`: PQ codebook
//! - `path.ids`: `"FID1" | count u64 | count × id u64`
//!
//! Searches read records with positional reads, so any number of threads
//! can search one index.

pub mod io;
pub mod layout;

use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rustc_hash::{FxHashMap, FxHashSet};

use crate::dataset::VectorSet;
use crate::distance::l2_squared;
use crate::error::{Error, Result};
use crate::graph::{CandidateList, DynGraph, SearchResult};
use crate::io_util::Cursor;
use crate::pq::{PqCodebook, PqCodes};
use crate::recall::Neighbor;

pub use io::{Block, BlockScanner, IoCounters, IoStats, LtiWriter, SectorSource};
pub use layout::{Layout, LtiHeader, NodeRecord, HEADER_SIZE, NO_NEIGHBOR, SECTOR_SIZE};

pub const IDS_MAGIC: &[u8; 4] = b"FID1";
/// Id stored for tombstoned slots.
pub const TOMBSTONE_ID: u64 = u64::MAX;
/// Default sectors per sequential block.
pub const DEFAULT_BLOCK_SECTORS: usize = 256;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BeamStats {
    /// Sectors read.
    pub ios: u64,
    /// PQ distance evaluations.
    pub comparisons: usize,
    /// Expansion rounds.
    pub hops: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Expanded {
    pub slot: u32,
    pub exact_sq: f32,
}

pub(crate) struct BeamTrace {
    pub expanded: Vec<Expanded>,
    pub stats: BeamStats,
}

pub fn sidecar_path(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

pub fn ids_to_bytes(ids: &[u64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * ids.len());
    out.extend_from_slice(IDS_MAGIC);
    out.extend_from_slice(&(ids.len() as u64).to_le_bytes());
    for id in ids {
        out.extend_from_slice(&id.to_le_bytes());
    }
    out
}

pub fn ids_from_bytes(bytes: &[u8]) -> Result<Vec<u64>> {
    const WHAT: &str = "id map";
    let mut c = Cursor::new(bytes, WHAT);
    if c.take(4)? != IDS_MAGIC {
        return Err(Error::format(WHAT, "bad magic"));
    }
    let n = c.u64()? as usize;
    if bytes.len() != 12 + 8 * n {
        return Err(Error::format(WHAT, format!("{} bytes for {n} ids", bytes.len())));
    }
    (0..n).map(|_| c.u64()).collect()
}

/// Writes the codes, codebook and id sidecars for the index at `path`.
pub(crate) fn write_sidecars(path: &Path, codebook: &PqCodebook, codes: &PqCodes, ids: &[u64]) -> Result<()> {
    codes.save(sidecar_path(path, "pq"))?;
    codebook.save(sidecar_path(path, "pqcb"))?;
    fs::write(sidecar_path(path, "ids"), ids_to_bytes(ids))?;
    Ok(())
}

pub struct LtiIndex {
    path: PathBuf,
    header: LtiHeader,
    layout: Layout,
    source: Arc<dyn SectorSource>,
    codebook: Arc<PqCodebook>,
    codes: Arc<PqCodes>,
    ids: Arc<Vec<u64>>,
    slot_of: Arc<FxHashMap<u64, u32>>,
    stats: Arc<IoStats>,
}

impl std::fmt::Debug for LtiIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LtiIndex")
            .field("path", &self.path)
            .field("header", &self.header)
            .finish_non_exhaustive()
    }
}

/// Writes `graph` as a long-term index at `path`. Slots are assigned in the
/// graph's slot order; the graph must have no pending deletes.
pub fn write_lti(graph: &DynGraph, codebook: &PqCodebook, path: impl AsRef<Path>) -> Result<LtiIndex> {
    let path = path.as_ref();
    if graph.deleted_count() > 0 {
        return Err(Error::invalid("consolidate deletes before writing a long-term index"));
    }
    if codebook.dim() != graph.dim() {
        return Err(Error::DimensionMismatch {
            expected: graph.dim(),
            actual: codebook.dim(),
        });
    }
    let points: Vec<(u64, &[f32])> = graph.points().collect();
    let dense: FxHashMap<u64, u32> = points.iter().enumerate().map(|(i, p)| (p.0, i as u32)).collect();
    let stats = IoStats::new();
    let max_degree = graph.params().max_degree;
    let mut writer = LtiWriter::create(path, graph.dim(), max_degree, stats)?;
    let mut codes = PqCodes::new(codebook.subspaces());
    let mut code = vec![0u8; codebook.subspaces()];
    for &(id, v) in &points {
        let nbrs = graph
            .neighbors(id)
            .unwrap_or_default()
            .into_iter()
            .filter_map(|n| dense.get(&n).copied())
            .collect();
        writer.push(&NodeRecord::new(v.to_vec(), nbrs))?;
        codebook.encode_into(v, &mut code);
        codes.push(&code);
    }
    let start = graph.start_id().and_then(|s| dense.get(&s)).copied().unwrap_or(0) as u64;
    writer.finish(start)?;
    let ids: Vec<u64> = points.iter().map(|p| p.0).collect();
    write_sidecars(path, codebook, &codes, &ids)?;
    LtiIndex::open(path)
}

impl LtiIndex {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let file = File::open(path.as_ref())?;
        Self::open_with_source(path, Arc::new(file))
    }

    /// Opens the index reading records through `source` instead of the file.
    pub fn open_with_source(path: impl AsRef<Path>, source: Arc<dyn SectorSource>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut head = vec![0u8; SECTOR_SIZE];
        source.read_at(0, &mut head)?;
        let header = LtiHeader::parse(&head)?;
        let layout = header.layout();
        let size = fs::metadata(&path)?.len();
        if size != layout.file_size(header.count) {
            return Err(Error::format(
                "lti file",
                format!("{size} bytes, expected {}", layout.file_size(header.count)),
            ));
        }
        let codebook = PqCodebook::load(sidecar_path(&path, "pqcb"))?;
        let codes = PqCodes::load(sidecar_path(&path, "pq"))?;
        let ids = ids_from_bytes(&fs::read(sidecar_path(&path, "ids"))?)?;
        let n = header.count as usize;
        if codes.len() != n || ids.len() != n {
            return Err(Error::format(
                "lti sidecars",
                format!("{} codes and {} ids for {n} records", codes.len(), ids.len()),
            ));
        }
        if codebook.dim() != header.dim as usize || codes.subspaces() != codebook.subspaces() {
            return Err(Error::format("lti sidecars", "codebook does not match the index"));
        }
        let mut slot_of = FxHashMap::default();
        slot_of.reserve(n);
        for (slot, &id) in ids.iter().enumerate() {
            if id != TOMBSTONE_ID && slot_of.insert(id, slot as u32).is_some() {
                return Err(Error::DuplicateId(id));
            }
        }
        Ok(LtiIndex {
            path,
            header,
            layout,
            source,
            codebook: Arc::new(codebook),
            codes: Arc::new(codes),
            ids: Arc::new(ids),
            slot_of: Arc::new(slot_of),
            stats: IoStats::new(),
        })
    }

    /// A handle on a rewritten body at `path` that keeps this index's slot
    /// numbering, codes and id map. Tombstoned records in the new body are
    /// skipped by searches.
    pub(crate) fn with_body(&self, path: &Path, header: LtiHeader) -> Result<LtiIndex> {
        if header.count != self.header.count || header.layout() != self.layout {
            return Err(Error::invalid("rewritten body does not match the index layout"));
        }
        Ok(LtiIndex {
            path: path.to_path_buf(),
            header,
            layout: self.layout,
            source: Arc::new(File::open(path)?),
            codebook: self.codebook.clone(),
            codes: self.codes.clone(),
            ids: self.ids.clone(),
            slot_of: self.slot_of.clone(),
            stats: IoStats::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn header(&self) -> &LtiHeader {
        &self.header
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    pub fn max_degree(&self) -> usize {
        self.layout.max_degree
    }

    /// Number of slots, tombstones included.
    pub fn slots(&self) -> usize {
        self.ids.len()
    }

    /// Number of live points.
    pub fn len(&self) -> usize {
        self.slot_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slot_of.is_empty()
    }

    pub fn contains(&self, id: u64) -> bool {
        self.slot_of.contains_key(&id)
    }

    pub fn slot_of(&self, id: u64) -> Option<u32> {
        self.slot_of.get(&id).copied()
    }

    pub fn id_of(&self, slot: u32) -> u64 {
        self.ids[slot as usize]
    }

    /// Slot → id map; tombstoned slots hold [`TOMBSTONE_ID`].
    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn start_slot(&self) -> Option<u32> {
        (self.header.count > 0).then_some(self.header.start as u32)
    }

    pub fn start_id(&self) -> Option<u64> {
        self.start_slot().map(|s| self.id_of(s))
    }

    pub fn codebook(&self) -> &Arc<PqCodebook> {
        &self.codebook
    }

    pub fn codes(&self) -> &PqCodes {
        &self.codes
    }

    /// Cumulative I/O of searches and record reads on this handle.
    pub fn io_stats(&self) -> IoCounters {
        self.stats.snapshot()
    }

    /// Random read of one record.
    pub fn read_record(&self, slot: u32) -> Result<NodeRecord> {
        let mut buf = vec![0u8; self.layout.read_span()];
        self.read_record_into(slot, &mut buf)
    }

    /// Random read counted on `stats` as well as on this handle.
    pub(crate) fn read_record_counted(&self, slot: u32, stats: &IoStats) -> Result<NodeRecord> {
        let rec = self.read_record(slot)?;
        stats.random_read(self.layout.sectors_per_record as u64);
        Ok(rec)
    }

    fn read_record_into(&self, slot: u32, buf: &mut [u8]) -> Result<NodeRecord> {
        if slot as u64 >= self.header.count {
            return Err(Error::invalid(format!("slot {slot} outside {} records", self.header.count)));
        }
        let l = &self.layout;
        let sector = l.sector_of(slot as u64);
        self.source
            .read_at(HEADER_SIZE + sector * SECTOR_SIZE as u64, buf)?;
        self.stats.random_read(l.sectors_per_record as u64);
        let off = l.offset_in_sector(slot as u64);
        NodeRecord::decode(l, &buf[off..off + l.record_size])
    }

    /// Sequential scanner over all records, counted on `stats`.
    pub fn scanner(&self, block_sectors: usize, stats: Arc<IoStats>) -> BlockScanner<'_> {
        BlockScanner::new(&*self.source, &self.header, block_sectors, stats)
    }

    /// Best-first search driven by PQ distances, expanding up to `beam_width`
    /// candidates per round. Expanded nodes are re-ranked by exact distance.
    pub(crate) fn beam_trace(&self, q: &[f32], list_size: usize, beam_width: usize) -> Result<BeamTrace> {
        if q.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: q.len(),
            });
        }
        let mut stats = BeamStats::default();
        let mut expanded = Vec::new();
        let Some(start) = self.start_slot() else {
            return Ok(BeamTrace { expanded, stats });
        };
        let table = self.codebook.lookup_table(q)?;
        let mut list = CandidateList::new(list_size.max(1));
        let mut seen = FxHashSet::default();
        seen.insert(start);
        list.insert(table.distance_sq(self.codes.get(start as usize)), start as u64, start);
        stats.comparisons += 1;
        let mut round = Vec::with_capacity(beam_width);
        let mut buf = vec![0u8; self.layout.read_span()];
        loop {
            list.take_unexpanded(beam_width.max(1), &mut round);
            if round.is_empty() {
                break;
            }
            stats.hops += 1;
            for c in &round {
                let rec = self.read_record_into(c.slot, &mut buf)?;
                stats.ios += self.layout.sectors_per_record as u64;
                if rec.tombstone {
                    continue;
                }
                expanded.push(Expanded {
                    slot: c.slot,
                    exact_sq: l2_squared(q, &rec.vector),
                });
                for &n in &rec.neighbors {
                    if (n as usize) < self.ids.len() && seen.insert(n) {
                        stats.comparisons += 1;
                        list.insert(table.distance_sq(self.codes.get(n as usize)), n as u64, n);
                    }
                }
            }
        }
        Ok(BeamTrace { expanded, stats })
    }

    /// Top-`k` ids by exact distance among the expanded nodes, skipping ids
    /// for which `exclude` returns true.
    pub fn beam_search<F>(
        &self,
        q: &[f32],
        k: usize,
        list_size: usize,
        beam_width: usize,
        exclude: F,
    ) -> Result<(SearchResult, BeamStats)>
    where
        F: Fn(u64) -> bool,
    {
        if k > list_size {
            return Err(Error::invalid(format!("k = {k} exceeds list size {list_size}")));
        }
        let trace = self.beam_trace(q, list_size, beam_width)?;
        let mut ranked: Vec<(f32, u64)> = trace
            .expanded
            .iter()
            .map(|e| (e.exact_sq, self.id_of(e.slot)))
            .filter(|&(_, id)| id != TOMBSTONE_ID && !exclude(id))
            .collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let top_k = ranked
            .iter()
            .take(k)
            .map(|&(d, id)| Neighbor {
                id,
                distance: d.sqrt(),
            })
            .collect();
        Ok((
            SearchResult {
                top_k,
                visited: trace.expanded.iter().map(|e| self.id_of(e.slot)).collect(),
                comparisons: trace.stats.comparisons,
            },
            trace.stats,
        ))
    }

    /// Live points in slot order.
    pub fn load_points(&self) -> Result<VectorSet> {
        let mut set = VectorSet::new(self.dim());
        let mut scan = self.scanner(DEFAULT_BLOCK_SECTORS, IoStats::new());
        while let Some(block) = scan.next_block()? {
            for (i, rec) in block.records.into_iter().enumerate() {
                let id = self.ids[block.first_slot as usize + i];
                if !rec.tombstone && id != TOMBSTONE_ID {
                    set.push(id, &rec.vector)?;
                }
            }
        }
        Ok(set)
    }

    /// Out-neighbor ids of every live point, in slot order.
    pub fn adjacency(&self) -> Result<Vec<(u64, Vec<u64>)>> {
        let mut out = Vec::with_capacity(self.len());
        let mut scan = self.scanner(DEFAULT_BLOCK_SECTORS, IoStats::new());
        while let Some(block) = scan.next_block()? {
            for (i, rec) in block.records.into_iter().enumerate() {
                let id = self.ids[block.first_slot as usize + i];
                if !rec.tombstone {
                    out.push((id, rec.neighbors.iter().map(|&n| self.ids[n as usize]).collect()));
                }
            }
        }
        Ok(out)
    }

    /// Checks every record: degree ≤ R, neighbor slots in range and live, no
    /// self loops, tombstones consistent with the id map, live start.
    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| Err(Error::format("lti record", detail));
        let n = self.header.count;
        if n > 0 && self.ids[self.header.start as usize] == TOMBSTONE_ID {
            return bad("start slot is a tombstone".into());
        }
        let mut scan = self.scanner(DEFAULT_BLOCK_SECTORS, IoStats::new());
        while let Some(block) = scan.next_block()? {
            for (i, rec) in block.records.iter().enumerate() {
                let slot = block.first_slot + i as u64;
                let dead = self.ids[slot as usize] == TOMBSTONE_ID;
                if rec.tombstone != dead {
                    return bad(format!("slot {slot} tombstone flag disagrees with the id map"));
                }
                for &nb in &rec.neighbors {
                    if nb as u64 >= n {
                        return bad(format!("slot {slot} points outside the index ({nb})"));
                    }
                    if nb as u64 == slot {
                        return bad(format!("slot {slot} has a self loop"));
                    }
                    if self.ids[nb as usize] == TOMBSTONE_ID {
                        return bad(format!("slot {slot} points at tombstone {nb}"));
                    }
                }
            }
        }
        Ok(())
    }
}
