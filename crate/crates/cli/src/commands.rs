use std::fs;
use std::io::BufReader;
use std::path::Path;
use std::time::Instant;

use log::info;
use rand_free::sample_positions;
use streamann::experiment::cycles::{run_cycles, tune_search_list, CycleSpec};
use streamann::experiment::report::{build_tables, read_log, summarize, write_log, LogRecord, MergeRecord, SweepRow};
use streamann::experiment::stream::{run_stream, StreamSpec};
use streamann::experiment::synthetic::{generate, generate_with_offset};
use streamann::experiment::{DataSource, ExperimentSpec, RunReport};
use streamann::graph::write_snapshot;
use streamann::merge::build_lti;
use streamann::pq::train;
use streamann::recall::{compute_ground_truth, recall_report, GroundTruth};
use streamann::system::SystemConfig;
use streamann::{build_static, load_vectors, merge as merge_lti, DynGraph, Error, FreshSystem, LtiIndex, MergeJob, Result, VectorSet};

use crate::args::{BuildArgs, CyclesArgs, MergeArgs, ReportArgs, SearchArgs, StreamArgs};

/// Seeded position sampling without pulling a RNG crate into the binary.
mod rand_free {
    /// `count` distinct positions below `n`, from a splitmix64 stream.
    pub fn sample_positions(n: usize, count: usize, seed: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        let mut state = seed;
        let count = count.min(n);
        for i in 0..count {
            state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^= z >> 31;
            let j = i + (z % (n - i) as u64) as usize;
            order.swap(i, j);
        }
        order.truncate(count);
        order
    }
}

struct Workload {
    data: VectorSet,
    queries: VectorSet,
}

fn load_workload(spec: &ExperimentSpec, query_file: Option<&Path>) -> Result<Workload> {
    let (data, queries) = match &spec.data {
        DataSource::File { path, format } => {
            let data = load_vectors(path, *format)?;
            let queries = match query_file {
                Some(q) => load_vectors(q, *format)?,
                None => data.select(&sample_positions(data.len(), spec.queries, spec.seed)),
            };
            (data, queries)
        }
        DataSource::Synthetic(s) => {
            let queries = match query_file {
                Some(q) => load_vectors(q, streamann::VectorFormat::Fvecs)?,
                None => generate_with_offset(s, spec.queries, 0, s.seed ^ 0x9E37_79B9),
            };
            (generate(s), queries)
        }
    };
    if data.is_empty() {
        return Err(Error::Empty("data set"));
    }
    if queries.dim() != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: data.dim(),
            actual: queries.dim(),
        });
    }
    info!("{} points, {} queries, dim {}", data.len(), queries.len(), data.dim());
    Ok(Workload { data, queries })
}

fn prepare_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    Ok(())
}

fn save(out: &Path, report: &RunReport, records: &[LogRecord]) -> Result<()> {
    fs::write(out.join("report.json"), report.to_json())?;
    write_log(records, fs::File::create(out.join("run.jsonl"))?)?;
    for t in build_tables(records) {
        if !t.rows.is_empty() {
            fs::write(out.join(format!("{}.csv", t.name)), t.to_csv())?;
        }
    }
    if let Err(e) = report.check() {
        log::warn!("report check failed: {e}");
    }
    Ok(())
}

fn print_tables(records: &[LogRecord]) {
    for t in build_tables(records) {
        if !t.rows.is_empty() {
            println!("\n## {}\n\n{}", t.name, t.to_markdown());
        }
    }
}

fn graph_sweep(graph: &DynGraph, w: &Workload, truth: &GroundTruth, k: usize, lists: &[usize]) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &l in lists.iter().filter(|&&l| l >= k) {
        let mut lat = Vec::with_capacity(w.queries.len());
        let mut ids = Vec::with_capacity(w.queries.len());
        for i in 0..w.queries.len() {
            let t = Instant::now();
            let r = graph.greedy_search(w.queries.vector(i), k, l, true)?;
            lat.push(t.elapsed().as_secs_f64() * 1e3);
            ids.push(r.ids());
        }
        rows.push(SweepRow {
            index: "memory".into(),
            search_list: l,
            recall: recall_report(&ids, truth, k)?.mean,
            mean_latency_ms: summarize(&lat).mean,
            mean_ios: None,
        });
    }
    Ok(rows)
}

fn disk_sweep(
    lti: &LtiIndex,
    queries: &VectorSet,
    truth: &GroundTruth,
    k: usize,
    lists: &[usize],
    beam_width: usize,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &l in lists.iter().filter(|&&l| l >= k) {
        let mut lat = Vec::with_capacity(queries.len());
        let mut ids = Vec::with_capacity(queries.len());
        let mut ios = 0u64;
        for i in 0..queries.len() {
            let t = Instant::now();
            let (r, s) = lti.beam_search(queries.vector(i), k, l, beam_width, |_| false)?;
            lat.push(t.elapsed().as_secs_f64() * 1e3);
            ios += s.ios;
            ids.push(r.ids());
        }
        rows.push(SweepRow {
            index: "disk".into(),
            search_list: l,
            recall: recall_report(&ids, truth, k)?.mean,
            mean_latency_ms: summarize(&lat).mean,
            mean_ios: Some(ios as f64 / queries.len().max(1) as f64),
        });
    }
    Ok(rows)
}

pub fn build(a: &BuildArgs) -> Result<()> {
    let spec = a.common.spec();
    spec.validate()?;
    let out = &a.common.out;
    prepare_out(out)?;
    let w = load_workload(&spec, a.common.query_file.as_deref())?;
    let k = spec.k.min(w.data.len());
    let t = Instant::now();
    let graph = build_static(&w.data, spec.params(), a.passes)?;
    let build_secs = t.elapsed().as_secs_f64();
    info!("built in {build_secs:.2}s, mean degree {:.2}", graph.mean_out_degree());
    write_snapshot(&graph, out.join("index.fvg"))?;
    let truth = compute_ground_truth(&w.data, &w.queries, k)?;
    let mut sweep = graph_sweep(&graph, &w, &truth, k, &spec.search_lists)?;
    if a.disk {
        let codebook = train(&w.data, spec.pq_bytes.min(w.data.dim()), 12, spec.seed)?;
        let lti = streamann::write_lti(&graph, &codebook, out.join("index.fda"))?;
        sweep.extend(disk_sweep(&lti, &w.queries, &truth, k, &spec.search_lists, 4)?);
    }
    let records: Vec<LogRecord> = sweep.iter().cloned().map(LogRecord::Sweep).collect();
    let mut report = RunReport::new("build", spec);
    report.build_secs = Some(build_secs);
    report.sweep = sweep;
    save(out, &report, &records)?;
    println!("build_secs {build_secs:.3}");
    print_tables(&records);
    Ok(())
}

pub fn cycles(a: &CyclesArgs) -> Result<()> {
    let spec = a.common.spec();
    spec.validate()?;
    let out = &a.common.out;
    prepare_out(out)?;
    let w = load_workload(&spec, a.common.query_file.as_deref())?;
    let k = spec.k.min(w.data.len());
    let t = Instant::now();
    let mut graph = build_static(&w.data, spec.params(), 1)?;
    let build_secs = t.elapsed().as_secs_f64();
    let truth = compute_ground_truth(&w.data, &w.queries, k)?;
    let search_list = match a.target_recall {
        Some(target) => match tune_search_list(&graph, &w.queries, &truth, k, target, &spec.search_lists)? {
            Some((l, r)) => {
                info!("search list {l} reaches recall {r:.4}");
                l
            }
            None => {
                let l = *spec.search_lists.iter().max().unwrap_or(&spec.search_list());
                log::warn!("no search list reaches {target}; using {l}");
                l
            }
        },
        None => spec.search_list(),
    };
    let rows = run_cycles(
        &mut graph,
        &w.data,
        &w.queries,
        &truth,
        &CycleSpec {
            cycles: spec.cycles,
            delete_fraction: spec.delete_fraction,
            policy: spec.policy,
            k,
            search_list,
            seed: spec.seed,
        },
    )?;
    let records: Vec<LogRecord> = rows.iter().cloned().map(LogRecord::Cycle).collect();
    let mut report = RunReport::new("cycles", spec);
    report.build_secs = Some(build_secs);
    report.search_list = Some(search_list);
    report.cycles = rows;
    save(out, &report, &records)?;
    println!("search_list {search_list}");
    print_tables(&records);
    Ok(())
}

pub fn stream(a: &StreamArgs) -> Result<()> {
    let spec = a.common.spec();
    spec.validate()?;
    let out = &a.common.out;
    prepare_out(out)?;
    let w = load_workload(&spec, a.common.query_file.as_deref())?;
    let n = w.data.len();
    let ramp_to = a.ramp_to.unwrap_or(n * 4 / 5).min(n);
    let steady = a.steady.unwrap_or(n - ramp_to).min(n - ramp_to);
    let dir = out.join("system");
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    let mut cfg = SystemConfig::new(w.data.dim(), spec.params(), spec.temp_cap);
    cfg.pq_subspaces = spec.pq_bytes.min(w.data.dim());
    cfg.merge_threads = spec.merge_threads;
    cfg.background_merge = true;
    cfg.seed = spec.seed;
    let sys = FreshSystem::open(&dir, cfg)?;
    let mut ss = StreamSpec::new(ramp_to, steady, spec.workers);
    ss.batch = a.batch;
    ss.k = spec.k;
    ss.search_list = spec.search_list();
    ss.max_secs = a.max_secs;
    ss.audit = a.audit;
    ss.seed = spec.seed;
    let outcome = run_stream(&sys, &w.data, &w.queries, &ss)?;
    let mut report = RunReport::new("stream", spec);
    report.search_list = Some(ss.search_list);
    report.search_latency = Some(outcome.summary.search_latency);
    report.merges = sys.merge_events().into_iter().map(|e| e.report).collect();
    report.stream = Some(outcome.summary.clone());
    sys.close()?;
    save(out, &report, &outcome.records)?;
    println!("{}", serde_json::to_string_pretty(&outcome.summary).map_err(Error::from)?);
    Ok(())
}

fn read_ids(path: &Path) -> Result<Vec<u64>> {
    fs::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| l.parse::<u64>().map_err(|e| Error::InvalidArgument(format!("{l:?}: {e}"))))
        .collect()
}

pub fn merge(a: &MergeArgs) -> Result<()> {
    let spec = a.common.spec();
    spec.validate()?;
    let out = &a.common.out;
    prepare_out(out)?;
    let lti = match &a.lti {
        Some(p) => LtiIndex::open(p)?,
        None => {
            let w = load_workload(&spec, None)?;
            let codebook = train(&w.data, spec.pq_bytes.min(w.data.dim()), 12, spec.seed)?;
            build_lti(&w.data, spec.params(), &codebook, out.join("base.fda"))?
        }
    };
    let next_id = lti.ids().iter().filter(|&&id| id != u64::MAX).max().map_or(0, |m| m + 1);
    let live: Vec<u64> = lti.ids().iter().copied().filter(|&id| id != u64::MAX).collect();
    let count = (live.len() as f64 * spec.insert_fraction).round() as usize;
    let inserts = match (&a.inserts, &spec.data) {
        (Some(p), _) => {
            let raw = load_vectors(p, a.common.format)?;
            let mut set = VectorSet::new(raw.dim());
            for (i, (_, v)) in raw.iter().enumerate() {
                set.push(next_id + i as u64, v)?;
            }
            set
        }
        (None, DataSource::Synthetic(s)) => generate_with_offset(s, count, next_id, s.seed.wrapping_add(1)),
        (None, DataSource::File { .. }) => VectorSet::new(lti.dim()),
    };
    let deletes = match &a.deletes {
        Some(p) => read_ids(p)?,
        None => {
            let n = (live.len() as f64 * spec.delete_fraction).round() as usize;
            sample_positions(live.len(), n, spec.seed).into_iter().map(|i| live[i]).collect()
        }
    };
    let temp = if a.union_temp && !inserts.is_empty() {
        Some(build_static(&inserts, spec.params(), 1)?)
    } else {
        None
    };
    let mut job = MergeJob::new(&inserts, &deletes, spec.params());
    job.options.threads = spec.merge_threads;
    job.options.union_temp_candidates = a.union_temp;
    job.temp_graphs = temp.iter().collect();
    let target = out.join("merged.fda");
    let (merged, report) = merge_lti(&lti, &job, &target)?;
    info!("merged into {} ({} points)", target.display(), merged.len());
    fs::write(out.join("merge.json"), report.to_json())?;
    let records = vec![LogRecord::Merge(MergeRecord {
        start_secs: 0.0,
        end_secs: report.total_secs,
        threads: spec.merge_threads,
        report: report.clone(),
    })];
    write_log(&records, fs::File::create(out.join("run.jsonl"))?)?;
    println!("{}", report.to_json());
    Ok(())
}

pub fn search(a: &SearchArgs) -> Result<()> {
    let spec = a.common.spec();
    spec.validate()?;
    let lti = LtiIndex::open(&a.lti)?;
    let points = lti.load_points()?;
    if points.is_empty() {
        return Err(Error::Empty("index holds no points"));
    }
    let queries = match &a.common.query_file {
        Some(q) => load_vectors(q, a.common.format)?,
        None => points.select(&sample_positions(points.len(), spec.queries, spec.seed)),
    };
    let k = spec.k.min(points.len());
    let truth = compute_ground_truth(&points, &queries, k)?;
    let sweep = disk_sweep(&lti, &queries, &truth, k, &spec.search_lists, a.beam_width)?;
    let records: Vec<LogRecord> = sweep.into_iter().map(LogRecord::Sweep).collect();
    print_tables(&records);
    let out = &a.common.out;
    prepare_out(out)?;
    write_log(&records, fs::File::create(out.join("search.jsonl"))?)?;
    Ok(())
}

pub fn report(a: &ReportArgs) -> Result<()> {
    let mut records = Vec::new();
    for p in &a.logs {
        records.extend(read_log(BufReader::new(fs::File::open(p)?))?);
    }
    let tables = build_tables(&records);
    match &a.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            for t in &tables {
                fs::write(dir.join(format!("{}.csv", t.name)), t.to_csv())?;
            }
        }
        None => {
            for t in &tables {
                println!("## {}\n\n{}", t.name, t.to_markdown());
            }
        }
    }
    Ok(())
}
