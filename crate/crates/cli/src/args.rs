use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use streamann::experiment::synthetic::SyntheticSpec;
use streamann::experiment::{DataSource, ExperimentSpec, Workers};
use streamann::{DeletePolicy, VectorFormat};

#[derive(Parser, Debug)]
#[command(name = "streamann", version, about = "Fresh ANN index experiments", args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build a static index and sweep the search list size.
    Build(BuildArgs),
    /// Delete and re-insert a fraction of the points repeatedly.
    Cycles(CyclesArgs),
    /// Drive the full system with concurrent update and search streams.
    Stream(StreamArgs),
    /// Merge inserts and deletes into a long-term index.
    Merge(MergeArgs),
    /// Query a long-term index.
    Search(SearchArgs),
    /// Turn run logs into CSV or markdown tables.
    Report(ReportArgs),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Vector file; synthetic data is used when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "fvecs")]
    pub format: VectorFormat,
    /// Query file in the same format as --data.
    #[arg(long)]
    pub query_file: Option<PathBuf>,
    /// Synthetic data as n,dim,clusters,seed.
    #[arg(long, default_value = "100000,64,64,1")]
    pub synthetic: SyntheticArg,
    #[arg(long = "R", default_value_t = 32)]
    pub r: usize,
    #[arg(long = "Lc", default_value_t = 50)]
    pub lc: usize,
    #[arg(long, default_value_t = 1.2)]
    pub alpha: f32,
    /// PQ bytes per vector.
    #[arg(long = "B", default_value_t = 16)]
    pub b: usize,
    /// Temp index point cap.
    #[arg(long = "M", default_value_t = 10_000)]
    pub m: usize,
    /// Search list sizes, comma separated.
    #[arg(long = "Ls", value_delimiter = ',', default_value = "20,30,40,60,80,100")]
    pub ls: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 1000)]
    pub queries: usize,
    #[arg(long, default_value_t = 20)]
    pub cycles: usize,
    #[arg(long = "delete-frac", default_value_t = 0.1)]
    pub delete_frac: f64,
    /// Defaults to the delete fraction.
    #[arg(long = "insert-frac")]
    pub insert_frac: Option<f64>,
    /// fresh, alpha1 (fresh with alpha = 1) or policy-a.
    #[arg(long, default_value = "fresh")]
    pub policy: PolicyArg,
    /// Worker counts as insert,delete,search.
    #[arg(long, default_value = "1,1,1")]
    pub workers: WorkersArg,
    #[arg(long = "merge-threads", default_value_t = 1)]
    pub merge_threads: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// key=value file supplying defaults for any of these flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl Common {
    pub fn spec(&self) -> ExperimentSpec {
        let alpha = if self.policy.0 == PolicyKind::Alpha1 { 1.0 } else { self.alpha };
        let data = match &self.data {
            Some(p) => DataSource::File {
                path: p.display().to_string(),
                format: self.format,
            },
            None => DataSource::Synthetic(self.synthetic.0),
        };
        ExperimentSpec {
            data,
            max_degree: self.r,
            build_list_size: self.lc,
            alpha,
            pq_bytes: self.b,
            temp_cap: self.m,
            cycles: self.cycles,
            delete_fraction: self.delete_frac,
            insert_fraction: self.insert_frac.unwrap_or(self.delete_frac),
            policy: self.policy.policy(),
            k: self.k,
            search_lists: self.ls.clone(),
            queries: self.queries,
            workers: self.workers.0,
            merge_threads: self.merge_threads,
            seed: self.seed,
        }
    }
}

#[derive(Args, Debug)]
pub struct BuildArgs {
    #[command(flatten)]
    pub common: Common,
    /// Build passes; 2 adds a refinement pass.
    #[arg(long, default_value_t = 1)]
    pub passes: usize,
    /// Also write and sweep an SSD-resident index.
    #[arg(long)]
    pub disk: bool,
}

#[derive(Args, Debug)]
pub struct CyclesArgs {
    #[command(flatten)]
    pub common: Common,
    /// Tune the search list to the smallest --Ls value reaching this recall.
    #[arg(long)]
    pub target_recall: Option<f64>,
}

#[derive(Args, Debug)]
pub struct StreamArgs {
    #[command(flatten)]
    pub common: Common,
    /// Points inserted during ramp-up; defaults to 80% of the data.
    #[arg(long)]
    pub ramp_to: Option<usize>,
    /// Steady-state inserts, matched by deletes; defaults to the rest.
    #[arg(long)]
    pub steady: Option<usize>,
    /// Operations per recorded batch.
    #[arg(long, default_value_t = 100)]
    pub batch: usize,
    /// Stop issuing updates after this many seconds.
    #[arg(long)]
    pub max_secs: Option<f64>,
    /// Check invariants during the run.
    #[arg(long)]
    pub audit: bool,
}

#[derive(Args, Debug)]
pub struct MergeArgs {
    #[command(flatten)]
    pub common: Common,
    /// Long-term index to merge into; built from the data when absent.
    #[arg(long)]
    pub lti: Option<PathBuf>,
    /// Vectors to insert, with ids following the index's largest id.
    #[arg(long)]
    pub inserts: Option<PathBuf>,
    /// Text file with one id to delete per line.
    #[arg(long)]
    pub deletes: Option<PathBuf>,
    /// Also use temp-graph searches for insert candidates.
    #[arg(long)]
    pub union_temp: bool,
}

#[derive(Args, Debug)]
pub struct SearchArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub lti: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub beam_width: usize,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Run logs (JSON lines) to tabulate.
    #[arg(required = true)]
    pub logs: Vec<PathBuf>,
    /// Directory for the CSV files; markdown goes to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy)]
pub struct SyntheticArg(pub SyntheticSpec);

impl FromStr for SyntheticArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(format!("expected n,dim,clusters,seed, got {s:?}"));
        }
        let num = |i: usize| parts[i].parse::<u64>().map_err(|e| format!("{:?}: {e}", parts[i]));
        Ok(SyntheticArg(SyntheticSpec::new(
            num(0)? as usize,
            num(1)? as usize,
            num(2)? as usize,
            num(3)?,
        )))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct WorkersArg(pub Workers);

impl FromStr for WorkersArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let n: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
            .collect::<Result<_, _>>()?;
        match n[..] {
            [insert, delete, search] => Ok(WorkersArg(Workers { insert, delete, search })),
            _ => Err(format!("expected insert,delete,search, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Fresh,
    Alpha1,
    PolicyA,
}

#[derive(Debug, Clone, Copy)]
pub struct PolicyArg(pub PolicyKind);

impl PolicyArg {
    pub fn policy(&self) -> DeletePolicy {
        match self.0 {
            PolicyKind::Fresh | PolicyKind::Alpha1 => DeletePolicy::FreshVamana,
            PolicyKind::PolicyA => DeletePolicy::PolicyA,
        }
    }
}

impl FromStr for PolicyArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fresh" => Ok(PolicyArg(PolicyKind::Fresh)),
            "alpha1" => Ok(PolicyArg(PolicyKind::Alpha1)),
            "policy-a" | "a" => Ok(PolicyArg(PolicyKind::PolicyA)),
            _ => Err(format!("unknown policy {s:?}; expected fresh, alpha1 or policy-a")),
        }
    }
}

/// Splices `key=value` lines from the `--config` file in front of the
/// user's own flags, so explicit flags win. Blank lines and `#` comments are
/// ignored; keys are flag names without the leading dashes.
pub fn expand_config(args: Vec<String>) -> Result<Vec<String>, String> {
    let Some(pos) = args.iter().position(|a| a == "--config" || a.starts_with("--config=")) else {
        return Ok(args);
    };
    let path = match args[pos].strip_prefix("--config=") {
        Some(p) => p.to_string(),
        None => args.get(pos + 1).cloned().ok_or("--config needs a path")?,
    };
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{path}: {e}"))?;
    let mut injected = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("{path}:{}: expected key=value", n + 1))?;
        let (k, v) = (k.trim(), v.trim().trim_matches('"'));
        if v == "true" {
            injected.push(format!("--{k}"));
        } else if v != "false" {
            injected.push(format!("--{k}={v}"));
        }
    }
    // Flags belong after the subcommand name.
    let sub = args.iter().skip(1).position(|a| !a.starts_with('-')).map_or(1, |i| i + 2);
    let mut out = args[..sub.min(args.len())].to_vec();
    out.extend(injected);
    out.extend_from_slice(&args[sub.min(args.len())..]);
    Ok(out)
}
