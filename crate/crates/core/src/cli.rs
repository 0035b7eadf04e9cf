//! Command-line harness: single simulations, benchmark sweeps and the
//! unique-table, cache-scope and processing-order experiments.
//!
//! Sweeps write one CSV row per run to `--csv` (stdout when absent) and a
//! median summary to stderr. A run that times out or exhausts memory becomes
//! a `TIMEOUT` or `OOM` row and the sweep moves on.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::cache::CacheScope;
use crate::circuit::{build_grover, parse_circuit, random_circuit, Circuit, OracleSpec};
use crate::dd::{Kind, Package, PackageConfig, TableScope};
use crate::engine::{processing_order_experiment, simulate, EngineConfig, ProcessingOrder, RunMetrics, Strategy};
use crate::error::DdError;

/// Exact CSV header shared by every subcommand.
pub const CSV_HEADER: &str =
    "benchmark,n,depth,strategy,cache,unique,workers,seed,wall_s,mul_hit,add_hit,idle_frac,peak_nodes,success_p,status";

/// Exit code for an out-of-memory run.
pub const EXIT_OOM: i32 = 3;
/// Exit code for a timed-out run.
pub const EXIT_TIMEOUT: i32 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunStatus {
    #[serde(rename = "ok")]
    Ok,
    #[serde(rename = "OOM")]
    Oom,
    #[serde(rename = "TIMEOUT")]
    Timeout,
}

/// One CSV row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub benchmark: String,
    pub n: usize,
    pub depth: usize,
    pub strategy: String,
    pub cache: String,
    pub unique: String,
    pub workers: usize,
    pub seed: u64,
    pub wall_s: f64,
    pub mul_hit: f64,
    pub add_hit: f64,
    pub idle_frac: f64,
    pub peak_nodes: u64,
    /// Probability of the marked state; empty for non-Grover runs.
    pub success_p: Option<f64>,
    pub status: RunStatus,
}

#[derive(Parser, Debug)]
#[command(name = "fiberdd", version, about = "Decision-diagram quantum circuit simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate a circuit file from |0…0⟩ and print metrics.
    Simulate(SimulateArgs),
    /// Sweep Grover's algorithm over qubit counts and configurations.
    BenchGrover(BenchArgs),
    /// Sweep random circuits over qubit counts and configurations.
    BenchRandom(BenchRandomArgs),
    /// Run one of the comparison experiments.
    Experiment(ExperimentArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CacheArg {
    None,
    Local,
    Global,
}

impl From<CacheArg> for CacheScope {
    fn from(c: CacheArg) -> Self {
        match c {
            CacheArg::None => CacheScope::None,
            CacheArg::Local => CacheScope::Local,
            CacheArg::Global => CacheScope::Global,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum UniqueArg {
    Global,
    Worker,
}

impl From<UniqueArg> for TableScope {
    fn from(u: UniqueArg) -> Self {
        match u {
            UniqueArg::Global => TableScope::Global,
            UniqueArg::Worker => TableScope::PerWorker,
        }
    }
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    Strategy::from_name(s).ok_or_else(|| {
        let names: Vec<_> = Strategy::ALL.iter().map(|s| s.name()).collect();
        format!("unknown strategy `{s}`, expected one of {}", names.join(", "))
    })
}

/// `a..b` (inclusive) or a single number.
fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let num = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("`{t}`: {e}"));
    let (lo, hi) = match s.split_once("..") {
        Some((a, b)) => (num(a)?, num(b.trim_start_matches('='))?),
        None => (num(s)?, num(s)?),
    };
    if lo > hi {
        return Err(format!("empty range {s}"));
    }
    Ok((lo, hi))
}

/// Knobs shared by every subcommand.
#[derive(Args, Debug, Clone)]
pub struct EngineArgs {
    /// Unique table scope; `worker` is only accepted by `experiment`.
    #[arg(long, value_enum, default_value = "global")]
    pub unique: UniqueArg,
    /// Lowest DD level at which inner strategies split work (default n−3).
    #[arg(long)]
    pub spawn_threshold: Option<usize>,
    /// Gates per batch of the reduce task graph.
    #[arg(long)]
    pub reduce_batch: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-run time limit in seconds.
    #[arg(long)]
    pub timeout: Option<f64>,
    /// Pin workers to cores where supported.
    #[arg(long)]
    pub pin: bool,
    /// Node budget per run; exceeding it records OOM.
    #[arg(long)]
    pub max_nodes: Option<u64>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    pub file: PathBuf,
    #[arg(long, value_parser = parse_strategy, default_value = "sequential")]
    pub strategy: Strategy,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long, value_enum, default_value = "global")]
    pub cache: CacheArg,
    /// Print the k most probable basis states.
    #[arg(long, value_name = "K")]
    pub amplitudes: Option<usize>,
    /// Also write the run as a CSV row.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub engine: EngineArgs,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Qubit counts, `lo..hi` inclusive or a single value.
    #[arg(long, value_parser = parse_range, default_value = "10..12")]
    pub n: (usize, usize),
    #[arg(long, value_parser = parse_strategy, value_delimiter = ',', default_value = "sequential,inner-fibers")]
    pub strategy: Vec<Strategy>,
    #[arg(long, value_delimiter = ',', default_value = "8")]
    pub workers: Vec<usize>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "global")]
    pub cache: Vec<CacheArg>,
    /// Repetitions per configuration.
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub engine: EngineArgs,
}

#[derive(Args, Debug)]
pub struct BenchRandomArgs {
    #[command(flatten)]
    pub bench: BenchArgs,
    #[arg(long, default_value_t = 200)]
    pub depth: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ExperimentName {
    UniqueTable,
    CacheScope,
    ProcessingOrder,
}

#[derive(Args, Debug)]
pub struct ExperimentArgs {
    pub name: ExperimentName,
    /// Qubits (defaults: 20, 14 and 12 for the three experiments).
    #[arg(long)]
    pub n: Option<usize>,
    /// Random circuit gates for `unique-table`.
    #[arg(long, default_value_t = 100)]
    pub depth: usize,
    #[arg(long, value_parser = parse_strategy, default_value = "inner-fibers")]
    pub strategy: Strategy,
    #[arg(long, default_value_t = 8)]
    pub workers: usize,
    /// Task graph segments for `processing-order`.
    #[arg(long, default_value_t = 8)]
    pub segments: usize,
    /// log2 of the multiplication cache size for `processing-order`.
    #[arg(long, default_value_t = 8)]
    pub cache_bits: u32,
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub engine: EngineArgs,
}

/// Marked state used by Grover sweeps for a given seed.
pub fn marked_state(n: usize, seed: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    if n >= 64 {
        z
    } else {
        z & ((1u64 << n) - 1)
    }
}

/// What a row describes apart from its engine configuration.
#[derive(Clone, Debug)]
pub struct Workload {
    pub benchmark: String,
    pub circuit: Circuit,
    pub depth: usize,
    pub seed: u64,
    pub marked: Option<u64>,
}

impl Workload {
    pub fn grover(n: usize, seed: u64) -> Result<Self, DdError> {
        let marked = marked_state(n, seed);
        let circuit = build_grover(n, OracleSpec { marked })?;
        Ok(Workload {
            benchmark: "grover".into(),
            depth: circuit.gates.len(),
            circuit,
            seed,
            marked: Some(marked),
        })
    }

    pub fn random(n: usize, depth: usize, seed: u64) -> Result<Self, DdError> {
        Ok(Workload {
            benchmark: "random".into(),
            circuit: random_circuit(n, depth, seed)?,
            depth,
            seed,
            marked: None,
        })
    }
}

fn package_for(max_nodes: Option<u64>) -> Package {
    let mut cfg = PackageConfig::default();
    if let Some(m) = max_nodes {
        cfg.node_limit = m;
    }
    Package::with_config(cfg)
}

fn record(w: &Workload, cfg: &EngineConfig, m: Option<&RunMetrics>, success: Option<f64>, status: RunStatus) -> BenchRecord {
    BenchRecord {
        benchmark: w.benchmark.clone(),
        n: w.circuit.n,
        depth: w.depth,
        strategy: cfg.strategy.name().into(),
        cache: cfg.cache.scope.name().into(),
        unique: match cfg.unique_scope {
            TableScope::Global => "global".into(),
            TableScope::PerWorker => "worker".into(),
        },
        workers: if cfg.strategy == Strategy::Sequential { 1 } else { cfg.workers },
        seed: w.seed,
        wall_s: m.map_or(0.0, |m| m.wall_time.as_secs_f64()),
        mul_hit: m.map_or(0.0, RunMetrics::mul_hit_ratio),
        add_hit: m.map_or(0.0, RunMetrics::add_hit_ratio),
        idle_frac: m.map_or(0.0, RunMetrics::mean_idle),
        peak_nodes: m.map_or(0, |m| m.peak_nodes),
        success_p: success,
        status,
    }
}

/// Runs `w` once on a fresh package. Timeouts and memory exhaustion become
/// rows; every other error is returned.
pub fn run_workload(w: &Workload, cfg: &EngineConfig, max_nodes: Option<u64>) -> Result<BenchRecord, DdError> {
    let pkg = package_for(max_nodes);
    let input = pkg.vector_dd_from_basis(w.circuit.n, 0)?;
    match simulate(&pkg, &w.circuit, input, cfg) {
        Ok((out, m)) => {
            let success = match w.marked {
                Some(b) => Some(pkg.amplitude(out, w.circuit.n, b)?.norm_sqr()),
                None => None,
            };
            Ok(record(w, cfg, Some(&m), success, RunStatus::Ok))
        }
        Err(e) => failure_record(w, cfg, e),
    }
}

fn failure_record(w: &Workload, cfg: &EngineConfig, e: DdError) -> Result<BenchRecord, DdError> {
    match e {
        DdError::Timeout => Ok(record(w, cfg, None, None, RunStatus::Timeout)),
        DdError::OutOfMemory { .. } => Ok(record(w, cfg, None, None, RunStatus::Oom)),
        e => Err(e),
    }
}

/// Record with the median wall time among successful runs, or the first
/// failure when no run succeeded.
pub fn median_record(rows: &[BenchRecord]) -> Option<&BenchRecord> {
    let mut ok: Vec<&BenchRecord> = rows.iter().filter(|r| r.status == RunStatus::Ok).collect();
    if ok.is_empty() {
        return rows.first();
    }
    ok.sort_by(|a, b| a.wall_s.total_cmp(&b.wall_s));
    Some(ok[ok.len() / 2])
}

fn engine_config(
    strategy: Strategy,
    workers: usize,
    cache: CacheScope,
    a: &EngineArgs,
    experiment: bool,
) -> Result<EngineConfig, DdError> {
    let mut cfg = EngineConfig::new(strategy, workers).with_cache(cache);
    cfg.unique_scope = a.unique.into();
    cfg.spawn_threshold = a.spawn_threshold;
    cfg.reduce_batch = a.reduce_batch;
    cfg.pin_workers = a.pin;
    cfg.experiment_mode = experiment;
    cfg.timeout = match a.timeout {
        Some(t) if !(t.is_finite() && t > 0.0) => {
            return Err(DdError::Config(format!("timeout must be positive, got {t}")));
        }
        t => t.map(Duration::from_secs_f64),
    };
    cfg.normalized()
}

/// Failure of a whole command, as opposed to one run of a sweep.
#[derive(Debug)]
pub enum CliError {
    Dd(DdError),
    Io(std::io::Error),
    Input(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Dd(DdError::OutOfMemory { .. }) => EXIT_OOM,
            CliError::Dd(DdError::Timeout) => EXIT_TIMEOUT,
            _ => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Dd(DdError::OutOfMemory { what }) => write!(f, "OOM: {what} exhausted"),
            CliError::Dd(DdError::Timeout) => f.write_str("TIMEOUT"),
            CliError::Dd(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "{e}"),
            CliError::Input(s) => f.write_str(s),
        }
    }
}

impl From<DdError> for CliError {
    fn from(e: DdError) -> Self {
        CliError::Dd(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.into())
    }
}

/// CSV sink that flushes after every row so partial sweeps survive.
pub struct RowWriter {
    inner: csv::Writer<Box<dyn Write>>,
}

impl RowWriter {
    pub fn open(path: Option<&Path>) -> Result<Self, CliError> {
        let sink: Box<dyn Write> = match path {
            Some(p) => Box::new(std::fs::File::create(p)?),
            None => Box::new(std::io::stdout()),
        };
        Ok(RowWriter {
            inner: csv::WriterBuilder::new().has_headers(false).from_writer(sink),
        })
    }

    pub fn header(&mut self) -> Result<(), CliError> {
        self.inner.write_record(CSV_HEADER.split(','))?;
        self.inner.flush()?;
        Ok(())
    }

    pub fn row(&mut self, r: &BenchRecord) -> Result<(), CliError> {
        self.inner.serialize(r)?;
        self.inner.flush()?;
        Ok(())
    }
}

/// Reads rows written by [`RowWriter`], checking the header.
pub fn read_records(text: &str) -> Result<Vec<BenchRecord>, CliError> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = rd.headers()?.iter().map(str::to_owned).collect();
    if header.join(",") != CSV_HEADER {
        return Err(CliError::Input(format!("unexpected header {}", header.join(","))));
    }
    rd.deserialize().map(|r| r.map_err(CliError::from)).collect()
}

fn summarize(rows: &[BenchRecord]) {
    if let Some(r) = median_record(rows) {
        let p = r.success_p.map(|p| format!(" success={p:.4}")).unwrap_or_default();
        eprintln!(
            "{} n={} {} cache={} unique={} workers={}: {:.4}s mul={:.4} add={:.4} idle={:.3} peak={}{p} [{:?}]",
            r.benchmark,
            r.n,
            r.strategy,
            r.cache,
            r.unique,
            r.workers,
            r.wall_s,
            r.mul_hit,
            r.add_hit,
            r.idle_frac,
            r.peak_nodes,
            r.status
        );
    }
}

/// Repeats a configuration, writing each row. Stops repeating after a
/// failure, since timeouts and OOM recur.
fn repeat(
    out: &mut RowWriter,
    reps: usize,
    mut once: impl FnMut() -> Result<BenchRecord, DdError>,
) -> Result<Vec<BenchRecord>, CliError> {
    let mut rows = Vec::new();
    for _ in 0..reps.max(1) {
        let r = once()?;
        out.row(&r)?;
        let failed = r.status != RunStatus::Ok;
        rows.push(r);
        if failed {
            break;
        }
    }
    summarize(&rows);
    Ok(rows)
}

fn sweep(args: &BenchArgs, make: impl Fn(usize) -> Result<Workload, DdError>) -> Result<Vec<BenchRecord>, CliError> {
    if args.engine.unique == UniqueArg::Worker {
        return Err(CliError::Input("--unique worker is only available to `experiment`".into()));
    }
    let mut out = RowWriter::open(args.csv.as_deref())?;
    out.header()?;
    let mut all = Vec::new();
    for n in args.n.0..=args.n.1 {
        let w = make(n)?;
        for &strategy in &args.strategy {
            for &cache in &args.cache {
                for &workers in &args.workers {
                    if strategy == Strategy::Sequential && workers != args.workers[0] {
                        continue;
                    }
                    let cfg = engine_config(strategy, workers, cache.into(), &args.engine, false)?;
                    all.extend(repeat(&mut out, args.reps, || run_workload(&w, &cfg, args.engine.max_nodes))?);
                }
            }
        }
    }
    Ok(all)
}

pub fn cmd_bench_grover(args: &BenchArgs) -> Result<Vec<BenchRecord>, CliError> {
    sweep(args, |n| Workload::grover(n, args.engine.seed))
}

pub fn cmd_bench_random(args: &BenchRandomArgs) -> Result<Vec<BenchRecord>, CliError> {
    sweep(&args.bench, |n| Workload::random(n, args.depth, args.bench.engine.seed))
}

pub fn cmd_experiment(args: &ExperimentArgs) -> Result<Vec<BenchRecord>, CliError> {
    let mut out = RowWriter::open(args.csv.as_deref())?;
    out.header()?;
    let e = &args.engine;
    let mut all = Vec::new();
    match args.name {
        ExperimentName::UniqueTable => {
            let w = Workload::random(args.n.unwrap_or(20), args.depth, e.seed)?;
            for unique in [UniqueArg::Global, UniqueArg::Worker] {
                let a = EngineArgs { unique, ..e.clone() };
                let cfg = engine_config(args.strategy, args.workers, CacheScope::Global, &a, true)?;
                all.extend(repeat(&mut out, args.reps, || run_workload(&w, &cfg, e.max_nodes))?);
            }
        }
        ExperimentName::CacheScope => {
            let w = Workload::grover(args.n.unwrap_or(14), e.seed)?;
            let mut medians = Vec::new();
            for scope in [CacheScope::Local, CacheScope::Global] {
                let cfg = engine_config(args.strategy, args.workers, scope, e, true)?;
                let rows = repeat(&mut out, args.reps, || run_workload(&w, &cfg, e.max_nodes))?;
                medians.push(median_record(&rows).map_or(0.0, |r| r.mul_hit));
                all.extend(rows);
            }
            eprintln!("global-local mul hit ratio gap: {:.4}", (medians[1] - medians[0]).abs());
        }
        ExperimentName::ProcessingOrder => {
            let w = Workload::grover(args.n.unwrap_or(12), e.seed)?;
            let mut cfg = engine_config(Strategy::OuterAssoc, 1, CacheScope::Global, e, true)?;
            cfg.cache.mul_entries = 1usize
                .checked_shl(args.cache_bits)
                .filter(|_| args.cache_bits <= 30)
                .ok_or_else(|| CliError::Input(format!("--cache-bits {} out of range", args.cache_bits)))?;
            for order in [ProcessingOrder::Sequential, ProcessingOrder::Random] {
                let mut rep = 0u64;
                let rows = repeat(&mut out, args.reps, || {
                    let seed = e.seed + rep;
                    rep += 1;
                    run_order(&w, order, args.segments, seed, &cfg, e.max_nodes)
                })?;
                all.extend(rows);
            }
        }
    }
    Ok(all)
}

/// One single-worker task-graph run of the processing-order experiment.
pub fn run_order(
    w: &Workload,
    order: ProcessingOrder,
    segments: usize,
    seed: u64,
    cfg: &EngineConfig,
    max_nodes: Option<u64>,
) -> Result<BenchRecord, DdError> {
    let pkg = package_for(max_nodes);
    let input = pkg.vector_dd_from_basis(w.circuit.n, 0)?;
    let mut rec = match processing_order_experiment(&pkg, &w.circuit, input, segments, order, seed, cfg) {
        Ok((out, m)) => {
            let success = match w.marked {
                Some(b) => Some(pkg.amplitude(out, w.circuit.n, b)?.norm_sqr()),
                None => None,
            };
            record(w, cfg, Some(&m), success, RunStatus::Ok)
        }
        Err(err) => failure_record(w, cfg, err)?,
    };
    rec.benchmark = format!(
        "{}-{}-order",
        w.benchmark,
        match order {
            ProcessingOrder::Sequential => "sequential",
            ProcessingOrder::Random => "random",
        }
    );
    rec.workers = 1;
    rec.seed = seed;
    Ok(rec)
}

/// Basis states sorted by decreasing probability, at most `k` of them.
pub fn top_amplitudes(pkg: &Package, out: crate::dd::Edge, n: usize, k: usize) -> Result<Vec<(u64, num_complex::Complex64)>, DdError> {
    const DENSE_LIMIT: usize = 24;
    let dense = pkg.reconstruct_with_cap(out, n, Kind::Vector, DENSE_LIMIT)?;
    let mut amps: Vec<(u64, num_complex::Complex64)> = dense
        .data
        .iter()
        .enumerate()
        .filter(|(_, a)| a.norm_sqr() > 0.0)
        .map(|(i, a)| (i as u64, *a))
        .collect();
    amps.sort_by(|a, b| b.1.norm_sqr().total_cmp(&a.1.norm_sqr()).then(a.0.cmp(&b.0)));
    amps.truncate(k);
    Ok(amps)
}

pub fn cmd_simulate(args: &SimulateArgs, stdout: &mut dyn Write) -> Result<BenchRecord, CliError> {
    if args.engine.unique == UniqueArg::Worker {
        return Err(CliError::Input("--unique worker is only available to `experiment`".into()));
    }
    let text = std::fs::read_to_string(&args.file)
        .map_err(|e| CliError::Input(format!("{}: {e}", args.file.display())))?;
    let circuit = parse_circuit(&text).map_err(|e| CliError::Input(format!("{}: {e}", args.file.display())))?;
    let cfg = engine_config(args.strategy, args.workers, args.cache.into(), &args.engine, false)?;
    let pkg = package_for(args.engine.max_nodes);
    let n = circuit.n;
    let input = pkg.vector_dd_from_basis(n, 0)?;
    let (out, m) = simulate(&pkg, &circuit, input, &cfg)?;
    let name = args.file.file_stem().map_or("circuit".into(), |s| s.to_string_lossy().into_owned());
    let w = Workload {
        benchmark: name,
        depth: circuit.gates.len(),
        circuit,
        seed: args.engine.seed,
        marked: None,
    };
    let rec = record(&w, &cfg, Some(&m), None, RunStatus::Ok);
    writeln!(
        stdout,
        "{} qubits, {} gates, {}: {:.6}s",
        n,
        w.depth,
        cfg.strategy,
        m.wall_time.as_secs_f64()
    )?;
    writeln!(
        stdout,
        "mul hit {:.4}, add hit {:.4}, idle {:.3}, peak nodes {}, result nodes {}, gc runs {}",
        rec.mul_hit, rec.add_hit, rec.idle_frac, m.peak_nodes, m.final_nodes, m.gc_runs
    )?;
    if let Some(k) = args.amplitudes {
        for (bits, a) in top_amplitudes(&pkg, out, n, k)? {
            writeln!(
                stdout,
                "|{:0width$b}> {:+.6}{:+.6}i p={:.6}",
                bits,
                a.re,
                a.im,
                a.norm_sqr(),
                width = n
            )?;
        }
    }
    if let Some(p) = &args.csv {
        let mut w = RowWriter::open(Some(p))?;
        w.header()?;
        w.row(&rec)?;
    }
    Ok(rec)
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a, &mut std::io::stdout()).map(|_| ()),
        Command::BenchGrover(a) => cmd_bench_grover(a).map(|_| ()),
        Command::BenchRandom(a) => cmd_bench_random(a).map(|_| ()),
        Command::Experiment(a) => cmd_experiment(a).map(|_| ()),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_matches_record_fields() {
        let w = Workload::random(3, 4, 1).unwrap();
        let cfg = EngineConfig::default();
        let r = record(&w, &cfg, None, None, RunStatus::Timeout);
        let mut wr = csv::Writer::from_writer(Vec::new());
        wr.serialize(&r).unwrap();
        let text = String::from_utf8(wr.into_inner().unwrap()).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
        assert_eq!(read_records(&text).unwrap(), vec![r]);
    }

    #[test]
    fn ranges() {
        assert_eq!(parse_range("10..15"), Ok((10, 15)));
        assert_eq!(parse_range("7"), Ok((7, 7)));
        assert!(parse_range("5..3").is_err());
    }

    #[test]
    fn median_prefers_successful_runs() {
        let w = Workload::random(3, 4, 1).unwrap();
        let cfg = EngineConfig::default();
        let mut rows: Vec<_> = [0.3, 0.1, 0.2]
            .into_iter()
            .map(|t| {
                let mut r = record(&w, &cfg, None, None, RunStatus::Ok);
                r.wall_s = t;
                r
            })
            .collect();
        assert_eq!(median_record(&rows).unwrap().wall_s, 0.2);
        rows.push(record(&w, &cfg, None, None, RunStatus::Oom));
        assert_eq!(median_record(&rows).unwrap().status, RunStatus::Ok);
        assert_eq!(median_record(&rows[3..]).unwrap().status, RunStatus::Oom);
    }
}
