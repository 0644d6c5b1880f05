//! The full index: an in-memory read-write temp index, frozen read-only temp
//! indices, an SSD-resident long-term index and a delete list, behind one
//! insert/delete/search API.
//!
//! Inserts go to the read-write temp index. Once it holds the snapshot
//! threshold of points it is frozen into a read-only temp index and written
//! to disk. When the read-only indices together reach `M` points a merge
//! folds them and the delete list into a new long-term index, which then
//! replaces the old one.
//!
//! Every update is written to a redo log before it is applied and is
//! acknowledged once the log is flushed. The manifest records which files
//! make up the state and the log offset they cover; recovery loads those
//! files and replays the rest of the log.
//!
//! Lock order: manifest, views, delete order, delete list.

pub mod log;
pub mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex, RwLock};
use rustc_hash::FxHashSet;
use serde::{Deserialize, Serialize};

use crate::dataset::VectorSet;
use crate::error::{Error, Result};
use crate::graph::{read_snapshot, write_snapshot, DynGraph, GraphParams};
use crate::lti::{sidecar_path, LtiIndex};
use crate::merge::{build_lti, merge, MergeJob, MergeReport};
use crate::pq::{train, TrainConfig};
use crate::recall::Neighbor;

use self::log::{recover_log, FlushPolicy, LogOp, RedoLog};
use self::manifest::{Manifest, MANIFEST_NAME};

pub const LOG_NAME: &str = "redo.log";
/// Training set size past which the codebook is kept for good.
const SETTLED_CODEBOOK: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub dim: usize,
    pub params: GraphParams,
    /// `M`: read-only temp points that trigger a merge.
    pub temp_cap: usize,
    /// Read-write temp points that trigger a freeze.
    pub snapshot_threshold: usize,
    /// PQ bytes per vector for the long-term index.
    pub pq_subspaces: usize,
    pub beam_width: usize,
    pub merge_threads: usize,
    /// Run merges on a background thread and hold back inserts while the
    /// temp indices hold `2M` points.
    pub background_merge: bool,
    pub union_temp_candidates: bool,
    pub flush: FlushPolicy,
    pub seed: u64,
}

impl SystemConfig {
    pub fn new(dim: usize, params: GraphParams, temp_cap: usize) -> Self {
        SystemConfig {
            dim,
            params,
            temp_cap,
            snapshot_threshold: (temp_cap / 6).max(1),
            pq_subspaces: 16.min(dim.max(1)),
            beam_width: 4,
            merge_threads: 1,
            background_merge: false,
            union_temp_candidates: true,
            flush: FlushPolicy::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        if self.temp_cap == 0 || self.snapshot_threshold == 0 {
            return Err(Error::invalid("temp index limits must be positive"));
        }
        if self.pq_subspaces == 0 || self.pq_subspaces > self.dim {
            return Err(Error::invalid(format!(
                "cannot split dim {} into {} subspaces",
                self.dim, self.pq_subspaces
            )));
        }
        if self.beam_width == 0 {
            return Err(Error::invalid("beam width must be positive"));
        }
        Ok(())
    }
}

/// Where a point currently lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Lti,
    ReadOnly(usize),
    ReadWrite,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SystemStats {
    pub inserts: u64,
    pub deletes: u64,
    pub freezes: u64,
    pub merges: u64,
    pub rw_points: usize,
    pub ro_temps: usize,
    pub ro_points: usize,
    pub lti_points: usize,
    pub delete_list: usize,
}

/// A completed merge, timed from system start.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MergeEvent {
    pub start_secs: f64,
    pub end_secs: f64,
    pub report: MergeReport,
}

#[derive(Debug, Clone, Default)]
pub struct SystemSearch {
    pub neighbors: Vec<Neighbor>,
    /// Sector reads issued against the long-term index.
    pub ios: usize,
}

#[derive(Clone)]
struct RoTemp {
    name: String,
    graph: Arc<DynGraph>,
}

#[derive(Clone)]
struct Views {
    rw: Arc<DynGraph>,
    ro: Vec<RoTemp>,
    lti: Option<Arc<LtiIndex>>,
}

impl Views {
    fn temps(&self) -> impl Iterator<Item = &Arc<DynGraph>> {
        std::iter::once(&self.rw).chain(self.ro.iter().map(|t| &t.graph))
    }

    fn locate(&self, id: u64) -> Option<Location> {
        if self.rw.contains(id) {
            return Some(Location::ReadWrite);
        }
        if let Some(i) = self.ro.iter().position(|t| t.graph.contains(id)) {
            return Some(Location::ReadOnly(i));
        }
        match &self.lti {
            Some(l) if l.contains(id) => Some(Location::Lti),
            _ => None,
        }
    }

    fn ro_points(&self) -> usize {
        self.ro.iter().map(|t| t.graph.len()).sum()
    }
}

#[derive(Default)]
struct Counters {
    inserts: AtomicU64,
    deletes: AtomicU64,
    freezes: AtomicU64,
    merges: AtomicU64,
}

struct Inner {
    dir: PathBuf,
    cfg: SystemConfig,
    views: RwLock<Views>,
    /// Slots handed out in the current read-write temp index.
    rw_reserved: AtomicUsize,
    deletes: RwLock<FxHashSet<u64>>,
    delete_order: Mutex<()>,
    manifest: Mutex<Manifest>,
    merge_lock: Mutex<()>,
    log: RedoLog,
    next_id: AtomicU64,
    next_file: AtomicU64,
    stopping: AtomicBool,
    crashed: AtomicBool,
    counters: Counters,
    merge_signal: (Mutex<()>, Condvar),
    space: (Mutex<()>, Condvar),
    events: Mutex<Vec<MergeEvent>>,
    started: Instant,
}

pub struct FreshSystem {
    inner: Arc<Inner>,
    merger: Mutex<Option<JoinHandle<()>>>,
}

impl FreshSystem {
    /// Opens the system stored in `dir`, creating it if the directory holds
    /// no manifest, and replays the redo log past the last checkpoint.
    pub fn open(dir: impl AsRef<Path>, cfg: SystemConfig) -> Result<Self> {
        cfg.validate()?;
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let log_path = dir.join(LOG_NAME);
        let contents = recover_log(&log_path, cfg.dim)?;
        let manifest = match Manifest::load(&dir)? {
            Some(m) => m,
            None => {
                let m = Manifest::new(cfg.dim, cfg.params, log::LOG_HEADER_LEN);
                m.store(&dir)?;
                m
            }
        };
        if manifest.dim != cfg.dim {
            return Err(Error::DimensionMismatch {
                expected: manifest.dim,
                actual: cfg.dim,
            });
        }
        if manifest.params.max_degree != cfg.params.max_degree {
            return Err(Error::invalid("degree bound differs from the stored index"));
        }
        if manifest.checkpoint > contents.valid_len {
            return Err(Error::format("redo log", "shorter than the manifest checkpoint"));
        }
        remove_orphans(&dir, &manifest)?;

        let lti = match &manifest.lti {
            Some(name) => Some(Arc::new(LtiIndex::open(dir.join(name))?)),
            None => None,
        };
        let mut ro = Vec::with_capacity(manifest.ro.len());
        for name in &manifest.ro {
            let graph = read_snapshot(dir.join(name), None)?;
            if graph.dim() != cfg.dim {
                return Err(Error::DimensionMismatch {
                    expected: cfg.dim,
                    actual: graph.dim(),
                });
            }
            ro.push(RoTemp {
                name: name.clone(),
                graph: Arc::new(graph),
            });
        }
        let rw = Arc::new(DynGraph::new(cfg.dim, cfg.snapshot_threshold, cfg.params)?);
        let log = RedoLog::open(&log_path, contents.valid_len, cfg.flush)?;
        let inner = Arc::new(Inner {
            dir,
            cfg,
            views: RwLock::new(Views { rw, ro, lti }),
            rw_reserved: AtomicUsize::new(0),
            deletes: RwLock::new(manifest.deletes.iter().copied().collect()),
            delete_order: Mutex::new(()),
            next_id: AtomicU64::new(manifest.next_id),
            next_file: AtomicU64::new(manifest.next_file),
            manifest: Mutex::new(manifest),
            merge_lock: Mutex::new(()),
            log,
            stopping: AtomicBool::new(false),
            crashed: AtomicBool::new(false),
            counters: Counters::default(),
            merge_signal: (Mutex::new(()), Condvar::new()),
            space: (Mutex::new(()), Condvar::new()),
            events: Mutex::new(Vec::new()),
            started: Instant::now(),
        });

        let checkpoint = inner.manifest.lock().checkpoint;
        for entry in contents.entries.iter().filter(|e| e.end > checkpoint) {
            inner.replay(&entry.op, entry.end)?;
        }

        let merger = if cfg.background_merge {
            let bg = inner.clone();
            Some(
                std::thread::Builder::new()
                    .name("merger".into())
                    .spawn(move || bg.merge_loop())?,
            )
        } else {
            None
        };
        Ok(FreshSystem {
            inner,
            merger: Mutex::new(merger),
        })
    }

    pub fn config(&self) -> &SystemConfig {
        &self.inner.cfg
    }

    pub fn dir(&self) -> &Path {
        &self.inner.dir
    }

    /// Inserts `x` under a fresh id and returns it once the insert is durable.
    pub fn insert(&self, x: &[f32]) -> Result<u64> {
        self.inner.insert(x)
    }

    /// Adds `id` to the delete list and returns once the delete is durable.
    pub fn delete(&self, id: u64) -> Result<()> {
        self.inner.delete(id)
    }

    pub fn search(&self, q: &[f32], k: usize, list_size: usize) -> Result<SystemSearch> {
        self.inner.search(q, k, list_size)
    }

    /// Freezes the read-write temp index. Returns false if it was empty.
    pub fn freeze_rw(&self) -> Result<bool> {
        self.inner.freeze(true, None)
    }

    /// Merges the read-only temp indices and the delete list into a new
    /// long-term index. Returns `None` when there was nothing to merge.
    pub fn run_merge(&self) -> Result<Option<MergeReport>> {
        self.inner.run_merge()
    }

    pub fn locate(&self, id: u64) -> Option<Location> {
        self.inner.views.read().locate(id)
    }

    pub fn is_deleted(&self, id: u64) -> bool {
        self.inner.deletes.read().contains(&id)
    }

    /// Ids not yet handed out are at or above this value.
    pub fn next_id(&self) -> u64 {
        self.inner.next_id.load(Ordering::Acquire)
    }

    /// Points held by the temp indices, counting in-flight inserts.
    pub fn temp_points(&self) -> usize {
        self.inner.temp_points()
    }

    pub fn stats(&self) -> SystemStats {
        let i = &self.inner;
        let v = i.views.read();
        SystemStats {
            inserts: i.counters.inserts.load(Ordering::Relaxed),
            deletes: i.counters.deletes.load(Ordering::Relaxed),
            freezes: i.counters.freezes.load(Ordering::Relaxed),
            merges: i.counters.merges.load(Ordering::Relaxed),
            rw_points: v.rw.len(),
            ro_temps: v.ro.len(),
            ro_points: v.ro_points(),
            lti_points: v.lti.as_ref().map_or(0, |l| l.len()),
            delete_list: i.deletes.read().len(),
        }
    }

    pub fn merge_events(&self) -> Vec<MergeEvent> {
        self.inner.events.lock().clone()
    }

    /// Checks the temp index invariants and that no point is held twice.
    pub fn audit(&self) -> std::result::Result<(), String> {
        let v = self.inner.views.read();
        for g in v.temps() {
            g.check_invariants()?;
        }
        let mut seen = FxHashSet::default();
        for g in v.temps() {
            for id in g.ids() {
                if !seen.insert(id) || v.lti.as_ref().is_some_and(|l| l.contains(id)) {
                    return Err(format!("id {id} is held by two indices"));
                }
            }
        }
        Ok(())
    }

    /// [`audit`](Self::audit) plus a full check of the long-term index
    /// records, degree bounds included.
    pub fn audit_full(&self) -> std::result::Result<(), String> {
        self.audit()?;
        let lti = self.inner.views.read().lti.clone();
        match lti {
            Some(l) => l.validate().map_err(|e| e.to_string()),
            None => Ok(()),
        }
    }

    /// Flushes the log and stops background work.
    pub fn close(self) -> Result<()> {
        self.stop();
        self.inner.log.flush()
    }

    /// Stops as a crash would: buffered log records are dropped and no
    /// further files are written. A merge in progress is abandoned.
    pub fn simulate_crash(self) {
        self.inner.crashed.store(true, Ordering::Release);
        self.inner.log.close(false);
        self.stop();
    }

    fn stop(&self) {
        self.inner.stopping.store(true, Ordering::Release);
        self.inner.merge_signal.1.notify_all();
        self.inner.space.1.notify_all();
        if let Some(h) = self.merger.lock().take() {
            let _ = h.join();
        }
    }
}

impl Drop for FreshSystem {
    fn drop(&mut self) {
        self.stop();
    }
}

impl Inner {
    fn check_running(&self) -> Result<()> {
        if self.stopping.load(Ordering::Acquire) {
            Err(Error::Shutdown)
        } else {
            Ok(())
        }
    }

    fn check_dim(&self, x: &[f32]) -> Result<()> {
        if x.len() != self.cfg.dim {
            return Err(Error::DimensionMismatch {
                expected: self.cfg.dim,
                actual: x.len(),
            });
        }
        Ok(())
    }

    fn temp_points(&self) -> usize {
        let v = self.views.read();
        let rw = self.rw_reserved.load(Ordering::Acquire).min(self.cfg.snapshot_threshold);
        rw + v.ro_points()
    }

    fn wait_for_space(&self) -> Result<()> {
        if !self.cfg.background_merge {
            return Ok(());
        }
        let limit = 2 * self.cfg.temp_cap;
        let (lock, cv) = &self.space;
        let mut g = lock.lock();
        while self.temp_points() >= limit {
            self.check_running()?;
            self.merge_signal.1.notify_all();
            cv.wait_for(&mut g, Duration::from_millis(20));
        }
        Ok(())
    }

    fn insert(&self, x: &[f32]) -> Result<u64> {
        self.check_dim(x)?;
        self.check_running()?;
        self.wait_for_space()?;
        let threshold = self.cfg.snapshot_threshold;
        loop {
            let views = self.views.read();
            let r = self.rw_reserved.fetch_add(1, Ordering::AcqRel);
            if r >= threshold {
                drop(views);
                self.freeze(false, None)?;
                continue;
            }
            let id = self.next_id.fetch_add(1, Ordering::AcqRel);
            let offset = self.log.append(&LogOp::Insert { id, vector: x.to_vec() })?;
            let res = views.rw.insert(id, x);
            drop(views);
            res?;
            if r + 1 == threshold {
                self.freeze(false, None)?;
            }
            self.log.wait_durable(offset)?;
            self.counters.inserts.fetch_add(1, Ordering::Relaxed);
            return Ok(id);
        }
    }

    fn delete(&self, id: u64) -> Result<()> {
        self.check_running()?;
        if self.views.read().locate(id).is_none() {
            return Err(Error::UnknownId(id));
        }
        let offset = {
            let _order = self.delete_order.lock();
            if self.deletes.read().contains(&id) {
                return Err(Error::AlreadyDeleted(id));
            }
            let offset = self.log.append(&LogOp::Delete { id })?;
            self.deletes.write().insert(id);
            offset
        };
        self.log.wait_durable(offset)?;
        self.counters.deletes.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    fn search(&self, q: &[f32], k: usize, list_size: usize) -> Result<SystemSearch> {
        self.check_dim(q)?;
        if k > list_size {
            return Err(Error::invalid(format!("k = {k} exceeds list size {list_size}")));
        }
        let views = self.views.read();
        let deletes = self.deletes.read();
        let exclude = |id: u64| deletes.contains(&id);
        let mut out = SystemSearch::default();
        let mut any = false;
        if let Some(lti) = views.lti.as_ref().filter(|l| !l.is_empty()) {
            let (res, stats) = lti.beam_search(q, k, list_size, self.cfg.beam_width, exclude)?;
            out.neighbors.extend(res.top_k);
            out.ios = stats.ios as usize;
            any = true;
        }
        for g in views.temps().filter(|g| !g.is_empty()) {
            out.neighbors.extend(g.search_with_filter(q, k, list_size, exclude)?.top_k);
            any = true;
        }
        if !any {
            return Err(Error::Empty("system holds no points"));
        }
        out.neighbors.sort_by(|a, b| a.cmp_by_distance(b));
        let mut seen = FxHashSet::default();
        out.neighbors.retain(|n| seen.insert(n.id));
        out.neighbors.truncate(k);
        Ok(out)
    }

    /// Freezes the read-write temp index if `force` is set or it is full.
    /// During replay `checkpoint` is the log offset reached so far.
    fn freeze(&self, force: bool, checkpoint: Option<u64>) -> Result<bool> {
        let mut man = self.manifest.lock();
        if self.crashed.load(Ordering::Acquire) {
            return Err(Error::Shutdown);
        }
        let mut views = self.views.write();
        let full = self.rw_reserved.load(Ordering::Acquire) >= self.cfg.snapshot_threshold;
        if views.rw.is_empty() || !(force || full) {
            return Ok(false);
        }
        let (checkpoint, deletes) = {
            let _order = self.delete_order.lock();
            let cp = checkpoint.unwrap_or_else(|| self.log.appended());
            let mut d: Vec<u64> = self.deletes.read().iter().copied().collect();
            d.sort_unstable();
            (cp, d)
        };
        let fresh = Arc::new(DynGraph::new(self.cfg.dim, self.cfg.snapshot_threshold, self.cfg.params)?);
        let frozen = std::mem::replace(&mut views.rw, fresh);
        self.rw_reserved.store(0, Ordering::Release);
        let name = format!("ro-{}.fvg", self.next_file.fetch_add(1, Ordering::AcqRel));
        views.ro.push(RoTemp {
            name: name.clone(),
            graph: frozen.clone(),
        });
        drop(views);
        self.counters.freezes.fetch_add(1, Ordering::Relaxed);
        self.merge_signal.1.notify_all();

        write_snapshot(&frozen, self.dir.join(&name))?;
        self.log.flush()?;
        man.ro.push(name);
        man.deletes = deletes;
        man.checkpoint = checkpoint;
        self.store_manifest(&mut man)?;
        Ok(true)
    }

    fn store_manifest(&self, man: &mut Manifest) -> Result<()> {
        man.next_id = man.next_id.max(self.next_id.load(Ordering::Acquire));
        man.next_file = self.next_file.load(Ordering::Acquire);
        man.store(&self.dir)
    }

    fn run_merge(&self) -> Result<Option<MergeReport>> {
        let _merging = self.merge_lock.lock();
        let start = self.started.elapsed().as_secs_f64();
        let (ro, lti) = {
            let v = self.views.read();
            (v.ro.clone(), v.lti.clone())
        };
        let purge: Vec<u64> = {
            let d = self.deletes.read();
            let mut p: Vec<u64> = d
                .iter()
                .copied()
                .filter(|&id| lti.as_ref().is_some_and(|l| l.contains(id)) || ro.iter().any(|t| t.graph.contains(id)))
                .collect();
            p.sort_unstable();
            p
        };
        if ro.is_empty() && purge.is_empty() {
            return Ok(None);
        }
        let mut inserts = VectorSet::new(self.cfg.dim);
        for t in &ro {
            for (id, v) in t.graph.points() {
                inserts.push(id, v)?;
            }
        }
        let name = format!("lti-{}.fda", self.next_file.fetch_add(1, Ordering::AcqRel));
        let out = self.dir.join(&name);
        let codebook_points = self.manifest.lock().codebook_points;
        let result = self.merge_into(lti.as_deref(), &ro, &inserts, &purge, &out, codebook_points);
        let (new_lti, report, trained) = match result {
            Ok(r) => r,
            Err(e) => {
                remove_lti_files(&out);
                return Err(e);
            }
        };

        let mut man = self.manifest.lock();
        if self.crashed.load(Ordering::Acquire) {
            return Err(Error::Shutdown);
        }
        {
            let mut views = self.views.write();
            debug_assert!(views.ro.iter().zip(&ro).all(|(a, b)| a.name == b.name));
            views.ro.drain(..ro.len());
            views.lti = new_lti.map(Arc::new);
            let mut d = self.deletes.write();
            for id in &purge {
                d.remove(id);
            }
        }
        self.log.flush()?;
        let old_lti = std::mem::replace(&mut man.lti, report.1.clone());
        man.ro.retain(|n| !ro.iter().any(|t| &t.name == n));
        man.deletes.retain(|id| purge.binary_search(id).is_err());
        if let Some(n) = trained {
            man.codebook_points = n;
        }
        self.store_manifest(&mut man)?;
        drop(man);

        if let Some(old) = old_lti {
            remove_lti_files(&self.dir.join(old));
        }
        for t in &ro {
            let _ = fs::remove_file(self.dir.join(&t.name));
        }
        if report.1.is_none() {
            remove_lti_files(&out);
        }
        self.counters.merges.fetch_add(1, Ordering::Relaxed);
        self.space.1.notify_all();
        let report = report.0;
        self.events.lock().push(MergeEvent {
            start_secs: start,
            end_secs: self.started.elapsed().as_secs_f64(),
            report: report.clone(),
        });
        Ok(Some(report))
    }

    /// Produces the next long-term index, or `None` if no points survive.
    /// The report is paired with the file name to record, and with the
    /// training set size when a new codebook was trained.
    ///
    /// A codebook trained on few points reconstructs too coarsely to prune
    /// with, so while it is young the index is rebuilt with a fresh codebook
    /// each time it doubles.
    #[allow(clippy::type_complexity)]
    fn merge_into(
        &self,
        lti: Option<&LtiIndex>,
        ro: &[RoTemp],
        inserts: &VectorSet,
        purge: &[u64],
        out: &Path,
        codebook_points: usize,
    ) -> Result<(Option<LtiIndex>, (MergeReport, Option<String>), Option<usize>)> {
        let name = out.file_name().map(|n| n.to_string_lossy().into_owned());
        let t = Instant::now();
        let mut live = VectorSet::new(self.cfg.dim);
        let mut report = MergeReport::default();
        if let Some(lti) = lti {
            let total = lti.len() + inserts.len();
            if codebook_points >= SETTLED_CODEBOOK || total < 2 * codebook_points.max(1) {
                let mut job = MergeJob::new(inserts, purge, self.cfg.params);
                job.options.threads = self.cfg.merge_threads;
                job.options.beam_width = self.cfg.beam_width;
                job.options.union_temp_candidates = self.cfg.union_temp_candidates;
                job.temp_graphs = ro.iter().map(|t| &*t.graph).collect();
                let (index, report) = merge(lti, &job, out)?;
                return Ok((Some(index), (report, name), None));
            }
            let old = lti.load_points()?;
            report.input_points = old.len();
            for i in 0..old.len() {
                if purge.binary_search(&old.id(i)).is_err() {
                    live.push(old.id(i), old.vector(i))?;
                }
            }
            report.deleted = old.len() - live.len();
            report.rebuilt = true;
        }
        let before = live.len();
        for i in 0..inserts.len() {
            if purge.binary_search(&inserts.id(i)).is_err() {
                live.push(inserts.id(i), inserts.vector(i))?;
            }
        }
        report.inserted = live.len() - before;
        report.deleted += inserts.len() - report.inserted;
        report.output_points = live.len();
        if live.is_empty() {
            return Ok((None, (report, None), None));
        }
        let cfg = TrainConfig {
            seed: self.cfg.seed,
            ..TrainConfig::new(self.cfg.pq_subspaces)
        };
        let codebook = train(&live, cfg.subspaces, cfg.iterations, cfg.seed)?;
        let index = build_lti(&live, self.cfg.params, &codebook, out)?;
        report.insert_secs = t.elapsed().as_secs_f64();
        report.total_secs = report.insert_secs;
        Ok((Some(index), (report, name), Some(live.len())))
    }

    fn merge_loop(&self) {
        loop {
            {
                let (lock, cv) = &self.merge_signal;
                let mut g = lock.lock();
                if self.stopping.load(Ordering::Acquire) {
                    return;
                }
                cv.wait_for(&mut g, Duration::from_millis(50));
            }
            if self.stopping.load(Ordering::Acquire) {
                return;
            }
            let due = self.views.read().ro_points() >= self.cfg.temp_cap;
            if due {
                if let Err(e) = self.run_merge() {
                    ::log::error!("background merge failed: {e}");
                }
            }
        }
    }

    fn replay(&self, op: &LogOp, end: u64) -> Result<()> {
        self.next_id.fetch_max(op.id().saturating_add(1), Ordering::AcqRel);
        match op {
            LogOp::Insert { id, vector } => {
                if self.views.read().locate(*id).is_some() {
                    return Ok(());
                }
                if self.rw_reserved.load(Ordering::Acquire) >= self.cfg.snapshot_threshold {
                    // Everything before this record is now in memory.
                    let before = end - op.encode().len() as u64;
                    self.freeze(false, Some(before))?;
                }
                self.rw_reserved.fetch_add(1, Ordering::AcqRel);
                self.views.read().rw.insert(*id, vector)?;
            }
            LogOp::Delete { id } => {
                if self.views.read().locate(*id).is_some() {
                    self.deletes.write().insert(*id);
                }
            }
        }
        Ok(())
    }
}

fn remove_lti_files(path: &Path) {
    let _ = fs::remove_file(path);
    for ext in ["pq", "pqcb", "ids", "merging"] {
        let _ = fs::remove_file(sidecar_path(path, ext));
    }
}

/// Deletes index files left behind by an interrupted freeze or merge.
fn remove_orphans(dir: &Path, manifest: &Manifest) -> Result<()> {
    let keep: FxHashSet<&str> = manifest.files().collect();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name == MANIFEST_NAME || name == LOG_NAME {
            continue;
        }
        let base = name.split('.').take(2).collect::<Vec<_>>().join(".");
        let ours = name.starts_with("lti-") || name.starts_with("ro-") || name.starts_with("MANIFEST");
        if ours && !keep.contains(base.as_str()) {
            fs::remove_file(entry.path())?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests;
