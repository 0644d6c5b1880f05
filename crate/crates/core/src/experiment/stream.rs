//! Concurrent update and search streams against a [`FreshSystem`].
//!
//! The run has two phases. During ramp-up only inserts are issued, until
//! `ramp_to` points from the pool have been inserted. In steady state
//! deleters remove random live points at the rate inserters add new ones.
//! Searchers issue query batches throughout. Recall is evaluated after the
//! run for sampled batches, against the points that were live when the
//! batch started.

use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::dataset::VectorSet;
use crate::error::{Error, Result};
use crate::experiment::report::{summarize, BatchRecord, LatencySummary, LogRecord, MergeRecord, OpKind};
use crate::experiment::spec::Workers;
use crate::recall::{brute_force_knn, recall_at_k};
use crate::system::FreshSystem;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSpec {
    /// Pool points inserted before steady state begins.
    pub ramp_to: usize,
    /// Inserts issued in steady state; deletes match them one for one.
    pub steady_inserts: usize,
    pub workers: Workers,
    /// Operations per recorded batch.
    pub batch: usize,
    pub k: usize,
    pub search_list: usize,
    /// Evaluate recall on every n-th search batch of each searcher; 0 never.
    pub recall_every: usize,
    /// Stop issuing updates after this many seconds.
    pub max_secs: Option<f64>,
    /// Check system invariants while the run is in progress.
    pub audit: bool,
    pub seed: u64,
}

impl StreamSpec {
    pub fn new(ramp_to: usize, steady_inserts: usize, workers: Workers) -> Self {
        StreamSpec {
            ramp_to,
            steady_inserts,
            workers,
            batch: 100,
            k: 5,
            search_list: 40,
            recall_every: 10,
            max_secs: None,
            audit: false,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StreamSummary {
    pub ramp_secs: f64,
    pub steady_secs: f64,
    pub inserts: u64,
    pub deletes: u64,
    pub searches: u64,
    pub insert_rate: f64,
    pub delete_rate: f64,
    pub search_rate: f64,
    pub search_latency: LatencySummary,
    pub merges: usize,
    pub max_temp_points: usize,
    pub temp_limit: usize,
    pub mean_recall: Option<f64>,
    pub min_recall: Option<f64>,
    pub live_points: usize,
    pub violations: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct StreamOutcome {
    pub records: Vec<LogRecord>,
    pub summary: StreamSummary,
}

const RAMP: &str = "ramp";
const STEADY: &str = "steady";

struct Live {
    ids: Vec<u64>,
    /// Pool index of each live id.
    vector_of: FxHashMap<u64, usize>,
}

impl Live {
    fn add(&mut self, id: u64, pool_index: usize) {
        self.ids.push(id);
        self.vector_of.insert(id, pool_index);
    }

    fn remove_random(&mut self, rng: &mut impl Rng) -> Option<u64> {
        if self.ids.is_empty() {
            return None;
        }
        let i = rng.gen_range(0..self.ids.len());
        let id = self.ids.swap_remove(i);
        self.vector_of.remove(&id);
        Some(id)
    }
}

struct RecallSample {
    record: usize,
    queries: Vec<usize>,
    results: Vec<Vec<u64>>,
    live: Vec<(u64, usize)>,
}

struct Shared<'a> {
    sys: &'a FreshSystem,
    pool: &'a VectorSet,
    queries: &'a VectorSet,
    spec: &'a StreamSpec,
    start: Instant,
    cursor: AtomicUsize,
    steady_acked: AtomicU64,
    deletes_done: AtomicU64,
    searches: AtomicU64,
    steady_start: Mutex<Option<Instant>>,
    updates_done: AtomicBool,
    all_done: AtomicBool,
    live: Mutex<Live>,
    /// Acknowledgement time of every delete.
    deleted_at: Mutex<FxHashMap<u64, Instant>>,
    records: Mutex<Vec<LogRecord>>,
    samples: Mutex<Vec<RecallSample>>,
    violations: Mutex<Vec<String>>,
    max_temp: AtomicUsize,
}

impl Shared<'_> {
    fn secs(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    fn timed_out(&self) -> bool {
        self.spec.max_secs.is_some_and(|m| self.secs() >= m)
    }

    fn violation(&self, v: String) {
        let mut all = self.violations.lock();
        if all.len() < 100 {
            all.push(v);
        }
    }

    fn push_batch(&self, phase: &str, op: OpKind, worker: usize, lat: &mut Vec<f64>, ios: Option<f64>) -> usize {
        let mut recs = self.records.lock();
        recs.push(LogRecord::Batch(BatchRecord {
            t: self.secs(),
            phase: phase.to_string(),
            op,
            worker,
            latencies_ms: std::mem::take(lat),
            recall: None,
            mean_ios: ios,
        }));
        recs.len() - 1
    }

    fn inserter(&self, worker: usize) -> Result<()> {
        let mut lat = Vec::new();
        let mut phase = RAMP;
        let end = self.spec.ramp_to + self.spec.steady_inserts;
        loop {
            if self.timed_out() {
                break;
            }
            let i = self.cursor.fetch_add(1, Ordering::AcqRel);
            if i >= end.min(self.pool.len()) {
                break;
            }
            let this_phase = if i < self.spec.ramp_to { RAMP } else { STEADY };
            if this_phase != phase {
                if !lat.is_empty() {
                    self.push_batch(phase, OpKind::Insert, worker, &mut lat, None);
                }
                phase = this_phase;
                self.steady_start.lock().get_or_insert_with(Instant::now);
            }
            let t = Instant::now();
            let id = self.sys.insert(self.pool.vector(i))?;
            lat.push(t.elapsed().as_secs_f64() * 1e3);
            self.live.lock().add(id, i);
            if phase == STEADY {
                self.steady_acked.fetch_add(1, Ordering::AcqRel);
            }
            self.max_temp.fetch_max(self.sys.temp_points(), Ordering::Relaxed);
            if lat.len() >= self.spec.batch {
                self.push_batch(phase, OpKind::Insert, worker, &mut lat, None);
            }
        }
        if !lat.is_empty() {
            self.push_batch(phase, OpKind::Insert, worker, &mut lat, None);
        }
        Ok(())
    }

    fn deleter(&self, worker: usize) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed ^ (0xDE1E_7E00 + worker as u64));
        let mut lat = Vec::new();
        loop {
            let finished = self.updates_done.load(Ordering::Acquire);
            let owed = self.steady_acked.load(Ordering::Acquire) > self.deletes_done.load(Ordering::Acquire);
            if !owed {
                if finished {
                    break;
                }
                std::thread::sleep(Duration::from_micros(200));
                continue;
            }
            if self.deletes_done.fetch_add(1, Ordering::AcqRel) >= self.steady_acked.load(Ordering::Acquire) {
                self.deletes_done.fetch_sub(1, Ordering::AcqRel);
                continue;
            }
            let Some(id) = self.live.lock().remove_random(&mut rng) else {
                self.deletes_done.fetch_sub(1, Ordering::AcqRel);
                if finished {
                    break;
                }
                continue;
            };
            let t = Instant::now();
            self.sys.delete(id)?;
            lat.push(t.elapsed().as_secs_f64() * 1e3);
            self.deleted_at.lock().insert(id, Instant::now());
            if lat.len() >= self.spec.batch {
                self.push_batch(STEADY, OpKind::Delete, worker, &mut lat, None);
            }
        }
        if !lat.is_empty() {
            self.push_batch(STEADY, OpKind::Delete, worker, &mut lat, None);
        }
        Ok(())
    }

    fn searcher(&self, worker: usize) -> Result<()> {
        let spec = self.spec;
        let nq = self.queries.len();
        let mut next = (worker * 7919) % nq.max(1);
        let mut batch_no = 0usize;
        while !self.all_done.load(Ordering::Acquire) {
            let sample = spec.recall_every > 0 && batch_no % spec.recall_every == 0;
            let live: Vec<(u64, usize)> = if sample {
                let l = self.live.lock();
                l.ids.iter().map(|id| (*id, l.vector_of[id])).collect()
            } else {
                Vec::new()
            };
            let mut lat = Vec::with_capacity(spec.batch);
            let mut ios = 0usize;
            let mut queries = Vec::new();
            let mut results = Vec::new();
            for _ in 0..spec.batch {
                let qi = next;
                next = (next + 1) % nq;
                let t = Instant::now();
                let res = match self.sys.search(self.queries.vector(qi), spec.k, spec.search_list) {
                    Ok(r) => r,
                    Err(Error::Empty(_)) => {
                        std::thread::sleep(Duration::from_millis(1));
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                lat.push(t.elapsed().as_secs_f64() * 1e3);
                ios += res.ios;
                if spec.audit {
                    let dels = self.deleted_at.lock();
                    for n in &res.neighbors {
                        if dels.get(&n.id).is_some_and(|&at| at < t) {
                            self.violation(format!("deleted id {} returned by a later search", n.id));
                        }
                    }
                }
                if sample {
                    queries.push(qi);
                    results.push(res.neighbors.iter().map(|n| n.id).collect());
                }
            }
            if lat.is_empty() {
                continue;
            }
            self.searches.fetch_add(lat.len() as u64, Ordering::Relaxed);
            let mean_ios = ios as f64 / lat.len() as f64;
            let phase = if self.steady_start.lock().is_some() { STEADY } else { RAMP };
            let record = self.push_batch(phase, OpKind::Search, worker, &mut lat, Some(mean_ios));
            if sample && live.len() >= spec.k {
                self.samples.lock().push(RecallSample {
                    record,
                    queries,
                    results,
                    live,
                });
            }
            batch_no += 1;
        }
        Ok(())
    }

    fn monitor(&self) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed ^ 0x3017);
        while !self.all_done.load(Ordering::Acquire) {
            self.max_temp.fetch_max(self.sys.temp_points(), Ordering::Relaxed);
            if self.spec.audit {
                if let Err(e) = self.sys.audit() {
                    self.violation(e);
                }
                let live = self.live.lock();
                for _ in 0..20.min(live.ids.len()) {
                    let id = live.ids[rng.gen_range(0..live.ids.len())];
                    if self.sys.locate(id).is_none() {
                        self.violation(format!("acknowledged id {id} is not held by any index"));
                    }
                }
            }
            std::thread::sleep(Duration::from_millis(50));
        }
    }
}

/// Drives `sys` with the streams in `spec`. Vectors are taken from `pool`
/// in order; the system assigns their ids.
pub fn run_stream(sys: &FreshSystem, pool: &VectorSet, queries: &VectorSet, spec: &StreamSpec) -> Result<StreamOutcome> {
    if queries.is_empty() && spec.workers.search > 0 {
        return Err(Error::Empty("query set"));
    }
    if spec.k == 0 || spec.k > spec.search_list || spec.batch == 0 {
        return Err(Error::invalid("stream needs 0 < k <= search list and a positive batch"));
    }
    let shared = Shared {
        sys,
        pool,
        queries,
        spec,
        start: Instant::now(),
        cursor: AtomicUsize::new(0),
        steady_acked: AtomicU64::new(0),
        deletes_done: AtomicU64::new(0),
        searches: AtomicU64::new(0),
        steady_start: Mutex::new(None),
        updates_done: AtomicBool::new(false),
        all_done: AtomicBool::new(false),
        live: Mutex::new(Live {
            ids: Vec::new(),
            vector_of: FxHashMap::default(),
        }),
        deleted_at: Mutex::new(FxHashMap::default()),
        records: Mutex::new(Vec::new()),
        samples: Mutex::new(Vec::new()),
        violations: Mutex::new(Vec::new()),
        max_temp: AtomicUsize::new(0),
    };
    let w = spec.workers;
    let failures: Mutex<Vec<Error>> = Mutex::new(Vec::new());
    let mut ramp_end = None;
    std::thread::scope(|s| {
        let sh = &shared;
        let fail = &failures;
        let report = move |r: Result<()>| {
            if let Err(e) = r {
                fail.lock().push(e);
                sh.updates_done.store(true, Ordering::Release);
                sh.all_done.store(true, Ordering::Release);
            }
        };
        let inserters: Vec<_> = (0..w.insert).map(|i| s.spawn(move || report(sh.inserter(i)))).collect();
        let deleters: Vec<_> = (0..w.delete).map(|i| s.spawn(move || report(sh.deleter(i)))).collect();
        let searchers: Vec<_> = (0..w.search).map(|i| s.spawn(move || report(sh.searcher(i)))).collect();
        let monitor = s.spawn(move || sh.monitor());
        for h in inserters {
            let _ = h.join();
        }
        ramp_end = *sh.steady_start.lock();
        sh.updates_done.store(true, Ordering::Release);
        for h in deleters {
            let _ = h.join();
        }
        // Let searchers observe the final state for at least one batch.
        std::thread::sleep(Duration::from_millis(20));
        sh.all_done.store(true, Ordering::Release);
        for h in searchers {
            let _ = h.join();
        }
        let _ = monitor.join();
    });
    if let Some(e) = failures.into_inner().into_iter().next() {
        return Err(e);
    }

    let total = shared.secs();
    let mut records = shared.records.into_inner();
    let samples = shared.samples.into_inner();
    let recalls: Vec<(usize, f64)> = samples
        .par_iter()
        .map(|s| {
            let set = VectorSet::from_rows(&s.live.iter().map(|&(_, i)| pool.vector(i)).collect::<Vec<_>>())?;
            let mut sum = 0.0;
            for (qi, res) in s.queries.iter().zip(&s.results) {
                let truth = brute_force_knn(&set, queries.vector(*qi), spec.k)?;
                let truth: Vec<u64> = truth.ids.iter().map(|&p| s.live[p as usize].0).collect();
                sum += recall_at_k(res, &truth, spec.k)?;
            }
            Ok((s.record, sum / s.queries.len().max(1) as f64))
        })
        .collect::<Result<Vec<_>>>()?;
    for &(i, r) in &recalls {
        if let LogRecord::Batch(b) = &mut records[i] {
            b.recall = Some(r);
        }
    }
    let merge_threads = sys.config().merge_threads;
    for e in sys.merge_events() {
        records.push(LogRecord::Merge(MergeRecord {
            start_secs: e.start_secs,
            end_secs: e.end_secs,
            threads: merge_threads,
            report: e.report,
        }));
    }

    let mut violations = shared.violations.into_inner();
    let live = shared.live.into_inner();
    if spec.audit {
        if let Err(e) = sys.audit_full() {
            violations.push(e);
        }
        for &id in &live.ids {
            if sys.locate(id).is_none() || sys.is_deleted(id) {
                violations.push(format!("live id {id} is not searchable"));
                break;
            }
        }
    }
    let search_lat: Vec<f64> = records
        .iter()
        .filter_map(|r| match r {
            LogRecord::Batch(b) if b.op == OpKind::Search => Some(b.latencies_ms.iter().copied()),
            _ => None,
        })
        .flatten()
        .collect();
    let inserts = shared.cursor.load(Ordering::Acquire).min(spec.ramp_to + spec.steady_inserts).min(pool.len()) as u64;
    let deletes = shared.deletes_done.load(Ordering::Acquire);
    let searches = shared.searches.load(Ordering::Acquire);
    let ramp_secs = ramp_end.map_or(total, |t| (t - shared.start).as_secs_f64());
    let rate = |n: u64| if total > 0.0 { n as f64 / total } else { 0.0 };
    let rv: Vec<f64> = recalls.iter().map(|r| r.1).collect();
    let summary = StreamSummary {
        ramp_secs,
        steady_secs: (total - ramp_secs).max(0.0),
        inserts,
        deletes,
        searches,
        insert_rate: rate(inserts),
        delete_rate: rate(deletes),
        search_rate: rate(searches),
        search_latency: summarize(&search_lat),
        merges: sys.merge_events().len(),
        max_temp_points: shared.max_temp.load(Ordering::Acquire),
        temp_limit: 2 * sys.config().temp_cap,
        mean_recall: (!rv.is_empty()).then(|| rv.iter().sum::<f64>() / rv.len() as f64),
        min_recall: rv.iter().copied().reduce(f64::min),
        live_points: live.ids.len(),
        violations,
    };
    Ok(StreamOutcome { records, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::synthetic::{generate, generate_with_offset, SyntheticSpec};
    use crate::graph::GraphParams;
    use crate::system::SystemConfig;

    #[test]
    fn ramp_then_steady_with_merges() {
        let dir = tempfile::tempdir().unwrap();
        let data = SyntheticSpec::new(3000, 16, 8, 1);
        let pool = generate(&data);
        let queries = generate_with_offset(&data, 50, 0, 9);
        let mut cfg = SystemConfig::new(16, GraphParams::new(16, 32, 1.2), 600);
        cfg.pq_subspaces = 8;
        cfg.background_merge = true;
        let sys = FreshSystem::open(dir.path(), cfg).unwrap();
        let mut spec = StreamSpec::new(
            2000,
            800,
            Workers {
                insert: 2,
                delete: 1,
                search: 2,
            },
        );
        spec.audit = true;
        spec.batch = 20;
        spec.recall_every = 5;
        let out = run_stream(&sys, &pool, &queries, &spec).unwrap();
        let s = &out.summary;
        assert!(s.violations.is_empty(), "{:?}", s.violations);
        assert_eq!(s.inserts, 2800);
        assert_eq!(s.deletes, 800);
        assert_eq!(s.live_points, 2000);
        assert!(s.merges >= 3, "{} merges", s.merges);
        assert!(s.max_temp_points <= s.temp_limit);
        assert!(s.mean_recall.unwrap() > 0.8, "{:?}", s.mean_recall);
        assert!(s.search_latency.p50 <= s.search_latency.p99);
        assert!(out.records.iter().any(|r| matches!(r, LogRecord::Merge(_))));
    }
}
