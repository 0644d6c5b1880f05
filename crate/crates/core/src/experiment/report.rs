//! Run logs, latency percentiles and the tables built from them.
//!
//! A run log is JSON lines, one [`LogRecord`] per line. [`build_tables`]
//! turns a log into three tables: recall per cycle, latency over time, and
//! merge timings.

use std::fmt::Write as _;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::cycles::CycleRow;
use crate::experiment::disk_cycles::DiskCycleRow;
use crate::experiment::spec::ExperimentSpec;
use crate::experiment::stream::StreamSummary;
use crate::merge::MergeReport;

/// Latency percentiles in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub count: usize,
    pub mean: f64,
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
}

/// Nearest-rank percentile of an ascending slice: the smallest value with at
/// least `p` percent of the samples at or below it.
pub fn percentile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() || !(0.0..=100.0).contains(&p) {
        return None;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

pub fn summarize(samples: &[f64]) -> LatencySummary {
    if samples.is_empty() {
        return LatencySummary::default();
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    LatencySummary {
        count: s.len(),
        mean: s.iter().sum::<f64>() / s.len() as f64,
        p50: percentile(&s, 50.0).unwrap_or(0.0),
        p90: percentile(&s, 90.0).unwrap_or(0.0),
        p99: percentile(&s, 99.0).unwrap_or(0.0),
    }
}

/// Summary of one CLI run, written as JSON next to the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub spec: ExperimentSpec,
    /// Search list size used for the recall figures.
    pub search_list: Option<usize>,
    pub build_secs: Option<f64>,
    pub cycles: Vec<CycleRow>,
    pub disk_cycles: Vec<DiskCycleRow>,
    pub sweep: Vec<SweepRow>,
    pub search_latency: Option<LatencySummary>,
    pub stream: Option<StreamSummary>,
    pub merges: Vec<MergeReport>,
}

impl RunReport {
    pub fn new(command: &str, spec: ExperimentSpec) -> Self {
        RunReport {
            command: command.to_string(),
            spec,
            search_list: None,
            build_secs: None,
            cycles: Vec::new(),
            disk_cycles: Vec::new(),
            sweep: Vec::new(),
            search_latency: None,
            stream: None,
            merges: Vec::new(),
        }
    }

    /// Recall values lie in `[0, 1]` and percentiles are ordered.
    pub fn check(&self) -> std::result::Result<(), String> {
        let recalls = self
            .cycles
            .iter()
            .map(|c| c.recall)
            .chain(self.disk_cycles.iter().map(|c| c.recall))
            .chain(self.sweep.iter().map(|s| s.recall))
            .chain(self.stream.iter().flat_map(|s| s.mean_recall));
        for r in recalls {
            if !(0.0..=1.0).contains(&r) {
                return Err(format!("recall {r} outside [0, 1]"));
            }
        }
        let lats = self
            .search_latency
            .iter()
            .chain(self.stream.iter().map(|s| &s.search_latency));
        for l in lats {
            if !(l.p50 <= l.p90 && l.p90 <= l.p99) {
                return Err(format!("unordered percentiles {l:?}"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Insert,
    Delete,
    Search,
}

impl OpKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            OpKind::Insert => "insert",
            OpKind::Delete => "delete",
            OpKind::Search => "search",
        }
    }
}

/// A batch of operations issued by one worker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    /// Seconds since the start of the run when the batch completed.
    pub t: f64,
    pub phase: String,
    pub op: OpKind,
    pub worker: usize,
    /// Per-operation latencies in milliseconds.
    pub latencies_ms: Vec<f64>,
    pub recall: Option<f64>,
    pub mean_ios: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeRecord {
    pub start_secs: f64,
    pub end_secs: f64,
    pub threads: usize,
    pub report: MergeReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// "memory" or "disk".
    pub index: String,
    pub search_list: usize,
    pub recall: f64,
    pub mean_latency_ms: f64,
    pub mean_ios: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LogRecord {
    Cycle(CycleRow),
    Batch(BatchRecord),
    Merge(MergeRecord),
    Sweep(SweepRow),
}

pub fn write_log(records: &[LogRecord], mut out: impl std::io::Write) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Parses a run log; blank lines are skipped.
pub fn read_log(input: impl BufRead) -> Result<Vec<LogRecord>> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::format("run log", format!("line {}: {e}", n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: &'static str,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &'static str, columns: &[&'static str]) -> Self {
        Table {
            name,
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }

    pub fn to_markdown(&self) -> String {
        let mut s = format!("| {} |\n|", self.columns.join(" | "));
        for _ in &self.columns {
            s.push_str("---|");
        }
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(s, "| {} |", r.join(" | "));
        }
        s
    }
}

pub const CYCLE_COLUMNS: &[&str] = &[
    "cycle",
    "recall",
    "mean_degree",
    "deleted",
    "mean_candidates",
    "consolidate_secs",
    "insert_secs",
];
pub const LATENCY_COLUMNS: &[&str] = &[
    "t", "phase", "op", "worker", "count", "mean_ms", "p50_ms", "p90_ms", "p99_ms", "recall", "mean_ios",
];
pub const MERGE_COLUMNS: &[&str] = &[
    "start_secs",
    "end_secs",
    "threads",
    "input_points",
    "deleted",
    "inserted",
    "output_points",
    "delete_secs",
    "insert_secs",
    "patch_secs",
    "total_secs",
    "read_passes",
    "write_passes",
    "peak_aux_bytes",
];
pub const SWEEP_COLUMNS: &[&str] = &["index", "search_list", "recall", "mean_latency_ms", "mean_ios"];

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

/// Recall per cycle, latency over time, merge timings and the search list
/// sweep, in that order. Every table is present even if empty.
pub fn build_tables(records: &[LogRecord]) -> Vec<Table> {
    let mut cycles = Table::new("cycles", CYCLE_COLUMNS);
    let mut latency = Table::new("latency", LATENCY_COLUMNS);
    let mut merges = Table::new("merges", MERGE_COLUMNS);
    let mut sweep = Table::new("sweep", SWEEP_COLUMNS);
    for r in records {
        match r {
            LogRecord::Cycle(c) => cycles.rows.push(vec![
                c.cycle.to_string(),
                format!("{:.4}", c.recall),
                format!("{:.3}", c.mean_degree),
                c.deleted.to_string(),
                format!("{:.2}", c.mean_candidates),
                format!("{:.3}", c.consolidate_secs),
                format!("{:.3}", c.insert_secs),
            ]),
            LogRecord::Batch(b) => {
                let s = summarize(&b.latencies_ms);
                latency.rows.push(vec![
                    format!("{:.3}", b.t),
                    b.phase.clone(),
                    b.op.as_str().to_string(),
                    b.worker.to_string(),
                    s.count.to_string(),
                    format!("{:.4}", s.mean),
                    format!("{:.4}", s.p50),
                    format!("{:.4}", s.p90),
                    format!("{:.4}", s.p99),
                    opt(b.recall),
                    opt(b.mean_ios),
                ]);
            }
            LogRecord::Merge(m) => {
                let r = &m.report;
                merges.rows.push(vec![
                    format!("{:.3}", m.start_secs),
                    format!("{:.3}", m.end_secs),
                    m.threads.to_string(),
                    r.input_points.to_string(),
                    r.deleted.to_string(),
                    r.inserted.to_string(),
                    r.output_points.to_string(),
                    format!("{:.3}", r.delete_secs),
                    format!("{:.3}", r.insert_secs),
                    format!("{:.3}", r.patch_secs),
                    format!("{:.3}", r.total_secs),
                    r.io.read_passes.to_string(),
                    r.io.write_passes.to_string(),
                    r.memory.peak_aux_bytes.to_string(),
                ]);
            }
            LogRecord::Sweep(s) => sweep.rows.push(vec![
                s.index.clone(),
                s.search_list.to_string(),
                format!("{:.4}", s.recall),
                format!("{:.4}", s.mean_latency_ms),
                opt(s.mean_ios),
            ]),
        }
    }
    vec![cycles, latency, merges, sweep]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive(samples: &[f64], p: f64) -> f64 {
        let mut s = samples.to_vec();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // Smallest sample x with count(≤ x) ≥ p% of n.
        let n = s.len() as f64;
        *s.iter()
            .find(|&&x| s.iter().filter(|&&y| y <= x).count() as f64 >= p / 100.0 * n)
            .unwrap()
    }

    #[test]
    fn percentiles_match_full_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let samples: Vec<f64> = (0..10_000).map(|_| rng.gen_range(0.0..50.0f64).powi(2)).collect();
        let s = summarize(&samples);
        assert_eq!(s.count, 10_000);
        assert_eq!(s.p50, naive(&samples, 50.0));
        assert_eq!(s.p90, naive(&samples, 90.0));
        assert_eq!(s.p99, naive(&samples, 99.0));
        assert!(s.p50 <= s.p90 && s.p90 <= s.p99);
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        assert!((s.mean - mean).abs() < 1e-9 * mean);
    }

    #[test]
    fn percentile_edges() {
        assert_eq!(percentile(&[], 50.0), None);
        assert_eq!(percentile(&[3.0], 99.0), Some(3.0));
        assert_eq!(percentile(&[1.0, 2.0], 0.0), Some(1.0));
        assert_eq!(percentile(&[1.0, 2.0], 50.0), Some(1.0));
        assert_eq!(percentile(&[1.0, 2.0], 100.0), Some(2.0));
        assert_eq!(summarize(&[]), LatencySummary::default());
    }

    #[test]
    fn empty_log_gives_headers_only() {
        let tables = build_tables(&read_log(&b""[..]).unwrap());
        assert_eq!(tables.len(), 4);
        for t in &tables {
            assert!(t.rows.is_empty());
            assert_eq!(t.to_csv().lines().count(), 1);
        }
        assert_eq!(tables[0].to_csv(), format!("{}\n", CYCLE_COLUMNS.join(",")));
    }

    #[test]
    fn single_batch_gives_one_row() {
        let rec = LogRecord::Batch(BatchRecord {
            t: 1.5,
            phase: "steady".into(),
            op: OpKind::Search,
            worker: 0,
            latencies_ms: vec![1.0, 2.0, 3.0],
            recall: Some(0.9),
            mean_ios: None,
        });
        let mut buf = Vec::new();
        write_log(&[rec.clone()], &mut buf).unwrap();
        let back = read_log(&buf[..]).unwrap();
        assert_eq!(back, vec![rec]);
        let tables = build_tables(&back);
        assert_eq!(tables[1].rows.len(), 1);
        assert_eq!(tables[1].rows[0][4], "3");
        assert_eq!(tables[1].rows[0][6], "2.0000");
        assert!(tables[1].to_markdown().contains("| search |"));
    }

    #[test]
    fn malformed_log_is_rejected() {
        let err = read_log(&b"{\"type\":\"nope\"}\n"[..]).unwrap_err();
        assert!(err.to_string().contains("line 1"));
    }
}
