//! Circuit execution under the six strategies.
//!
//! `Sequential` applies gates one by one on the calling thread. The three
//! `Outer*` strategies build a task graph over the gate list and run whole DD
//! operations as tasks. `InnerThreads` and `InnerFibers` apply gates in order
//! and split each multiplication near the root across the pool.

mod inner;
mod pool;
mod taskgraph;

use std::collections::HashMap;
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::cache::{CacheConfig, CacheScope, CacheStats, OpCache, SharedCache};
use crate::circuit::{gate_dd_r, Circuit};
use crate::dd::{Edge, Package, TableScope, UniqueTable, ABORT_TIMEOUT};
use crate::error::DdError;
use crate::ops::{InnerFork, MulKind, OpContext};

pub use taskgraph::{
    build_assoc_taskgraph, build_linear_taskgraph, build_reduce_taskgraph, NodeKind, Operand, ProcessingOrder,
    TaskGraph, TaskNode, TaskTrace,
};

use inner::{fiber_mul, spawn_fiber, ThreadsFork};
use pool::{with_ctx, Pool, Task, WorkerReport};

/// Default for [`EngineConfig::assoc_max_segment`].
pub const DEFAULT_ASSOC_MAX_SEGMENT: usize = 8;

/// Batch size of the reduce graph when none is configured.
pub const DEFAULT_REDUCE_BATCH: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Strategy {
    #[default]
    Sequential,
    OuterLinear,
    OuterAssoc,
    OuterReduce,
    InnerThreads,
    InnerFibers,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::Sequential,
        Strategy::OuterLinear,
        Strategy::OuterAssoc,
        Strategy::OuterReduce,
        Strategy::InnerThreads,
        Strategy::InnerFibers,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Sequential => "sequential",
            Strategy::OuterLinear => "outer-linear",
            Strategy::OuterAssoc => "outer-assoc",
            Strategy::OuterReduce => "outer-reduce",
            Strategy::InnerThreads => "inner-threads",
            Strategy::InnerFibers => "inner-fibers",
        }
    }

    pub fn from_name(s: &str) -> Option<Strategy> {
        let s = s.to_ascii_lowercase().replace('_', "-");
        Strategy::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn is_outer(self) -> bool {
        matches!(self, Strategy::OuterLinear | Strategy::OuterAssoc | Strategy::OuterReduce)
    }

    pub fn is_inner(self) -> bool {
        matches!(self, Strategy::InnerThreads | Strategy::InnerFibers)
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EngineConfig {
    pub strategy: Strategy,
    pub workers: usize,
    pub cache: CacheConfig,
    pub unique_scope: TableScope,
    /// Lowest level at which inner strategies split work; `None` means `n − 3`.
    pub spawn_threshold: Option<usize>,
    /// Gates per batch of the reduce graph; `None` means [`DEFAULT_REDUCE_BATCH`].
    pub reduce_batch: Option<usize>,
    /// Segments of the associative graph; `None` means one per worker.
    pub assoc_segments: Option<usize>,
    /// Longest gate range multiplied out by one associative segment. Long
    /// products of generic gates are dense operators, so longer circuits get
    /// more segments than workers.
    pub assoc_max_segment: usize,
    pub pin_workers: bool,
    pub timeout: Option<Duration>,
    /// Allows configurations that only make sense for experiments, such as
    /// per-worker unique tables.
    pub experiment_mode: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            strategy: Strategy::Sequential,
            workers: 1,
            cache: CacheConfig::default(),
            unique_scope: TableScope::Global,
            spawn_threshold: None,
            reduce_batch: None,
            assoc_segments: None,
            assoc_max_segment: DEFAULT_ASSOC_MAX_SEGMENT,
            pin_workers: false,
            timeout: None,
            experiment_mode: false,
        }
    }
}

impl EngineConfig {
    pub fn new(strategy: Strategy, workers: usize) -> Self {
        EngineConfig {
            strategy,
            workers,
            ..Default::default()
        }
    }

    pub fn with_cache(mut self, scope: CacheScope) -> Self {
        self.cache.scope = scope;
        self
    }

    /// Checks the configuration and returns it with defaults applied.
    /// Sequential runs always use one worker.
    pub fn normalized(&self) -> Result<EngineConfig, DdError> {
        let mut cfg = self.clone();
        if cfg.workers == 0 {
            return Err(DdError::Config("workers must be at least 1".into()));
        }
        if cfg.strategy == Strategy::Sequential {
            cfg.workers = 1;
        }
        if cfg.unique_scope == TableScope::PerWorker && !cfg.experiment_mode {
            return Err(DdError::Config("per-worker unique tables are only allowed in experiment mode".into()));
        }
        if cfg.reduce_batch == Some(0) {
            return Err(DdError::Config("reduce batch must be at least 1".into()));
        }
        if cfg.assoc_segments == Some(0) || cfg.assoc_max_segment == 0 {
            return Err(DdError::Config("associative graph needs at least one segment".into()));
        }
        cfg.cache.validate()?;
        Ok(cfg)
    }

    pub fn spawn_threshold_for(&self, n: usize) -> usize {
        self.spawn_threshold.unwrap_or(n.saturating_sub(3))
    }
}

/// Measurements of one run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunMetrics {
    pub wall_time: Duration,
    /// Summed over all workers' caches.
    pub cache: CacheStats,
    /// Fraction of the pool's lifetime each worker spent without a task.
    pub idle_fraction: Vec<f64>,
    pub peak_nodes: u64,
    /// Nodes in the output diagram.
    pub final_nodes: usize,
    pub spawned_tasks: u64,
    pub gc_runs: u64,
    pub tasks_run: u64,
}

impl RunMetrics {
    pub fn mul_hit_ratio(&self) -> f64 {
        self.cache.mul().hit_ratio()
    }

    pub fn add_hit_ratio(&self) -> f64 {
        self.cache.add().hit_ratio()
    }

    pub fn mean_idle(&self) -> f64 {
        if self.idle_fraction.is_empty() {
            0.0
        } else {
            self.idle_fraction.iter().sum::<f64>() / self.idle_fraction.len() as f64
        }
    }
}

/// Folds worker reports into metrics.
pub fn collect_metrics(reports: &[WorkerSummary], pool_time: Duration) -> RunMetrics {
    let mut m = RunMetrics::default();
    let wall = pool_time.as_secs_f64();
    for r in reports {
        m.cache.merge(&r.stats);
        m.spawned_tasks += r.spawned;
        m.tasks_run += r.tasks;
        let f = if wall > 0.0 { r.idle.as_secs_f64() / wall } else { 0.0 };
        m.idle_fraction.push(f.clamp(0.0, 1.0));
    }
    m
}

/// Per-worker totals at the end of a run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WorkerSummary {
    pub idle: Duration,
    pub tasks: u64,
    pub stats: CacheStats,
    pub spawned: u64,
}

impl From<WorkerReport> for WorkerSummary {
    fn from(r: WorkerReport) -> Self {
        WorkerSummary {
            idle: r.idle,
            tasks: r.busy_tasks,
            stats: r.stats,
            spawned: r.spawned,
        }
    }
}

// ---- run setup ----

/// Gate DDs of a circuit, one per distinct gate, kept alive for the run.
struct GateSet {
    pkg: Package,
    per_gate: Arc<Vec<Edge>>,
    distinct: Vec<Edge>,
}

impl GateSet {
    fn build(pkg: &Package, c: &Circuit) -> Result<GateSet, DdError> {
        // private cache so gate construction does not show up in run metrics
        let mut ctx = OpContext::with_parts(pkg, pkg.global_table(), OpCache::local(1 << 14, 1 << 14));
        let mut memo = HashMap::new();
        let mut per_gate = Vec::with_capacity(c.gates.len());
        let mut distinct = Vec::new();
        for g in &c.gates {
            let e = match memo.get(&g.key()) {
                Some(&e) => e,
                None => {
                    let e = ctx.guarded(|ctx| {
                        let r = gate_dd_r(ctx, g, c.n);
                        ctx.to_edge(r)
                    })?;
                    pkg.inc_ref(e);
                    distinct.push(e);
                    memo.insert(g.key(), e);
                    e
                }
            };
            per_gate.push(e);
        }
        Ok(GateSet {
            pkg: pkg.clone(),
            per_gate: Arc::new(per_gate),
            distinct,
        })
    }
}

impl Drop for GateSet {
    fn drop(&mut self) {
        for e in &self.distinct {
            self.pkg.dec_ref(*e);
        }
    }
}

/// Holds an inc_ref on an edge for its lifetime.
struct KeepAlive(Package, Edge);

impl Drop for KeepAlive {
    fn drop(&mut self) {
        self.0.dec_ref(self.1);
    }
}

/// Sets the timeout abort flag unless stopped first.
struct Watchdog {
    stop: Arc<(Mutex<bool>, Condvar)>,
    handle: Option<JoinHandle<()>>,
}

impl Watchdog {
    fn start(pkg: &Package, timeout: Option<Duration>) -> Watchdog {
        let stop = Arc::new((Mutex::new(false), Condvar::new()));
        let handle = timeout.map(|t| {
            let (pkg, stop) = (pkg.clone(), Arc::clone(&stop));
            std::thread::spawn(move || {
                let deadline = Instant::now() + t;
                let mut done = stop.0.lock().unwrap();
                while !*done {
                    let now = Instant::now();
                    if now >= deadline {
                        pkg.set_abort(ABORT_TIMEOUT);
                        return;
                    }
                    done = stop.1.wait_timeout(done, deadline - now).unwrap().0;
                }
            })
        });
        Watchdog { stop, handle }
    }
}

impl Drop for Watchdog {
    fn drop(&mut self) {
        *self.stop.0.lock().unwrap() = true;
        self.stop.1.notify_all();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn worker_contexts(pkg: &Package, cfg: &EngineConfig) -> Result<Vec<OpContext>, DdError> {
    let tables: Vec<Arc<UniqueTable>> = match cfg.unique_scope {
        TableScope::Global => vec![pkg.global_table(); cfg.workers],
        TableScope::PerWorker => pkg.worker_tables(cfg.workers)?,
    };
    let shared = (cfg.cache.scope == CacheScope::Global)
        .then(|| Arc::new(SharedCache::new(cfg.cache.mul_entries, cfg.cache.add_entries)));
    Ok(tables
        .into_iter()
        .map(|t| OpContext::with_parts(pkg, t, OpCache::for_config(&cfg.cache, shared.as_ref())))
        .collect())
}

/// Returns the pending abort as an error and resets the package for reuse.
fn take_abort(pkg: &Package) -> Result<(), DdError> {
    match pkg.abort_error() {
        Some(e) => {
            pkg.clear_abort();
            pkg.bump_epoch();
            Err(e)
        }
        None => Ok(()),
    }
}

fn check_input(pkg: &Package, c: &Circuit, input: Edge) -> Result<(), DdError> {
    c.validate()?;
    if !input.is_zero() && pkg.qubits(input) != c.n {
        return Err(DdError::Structure(format!(
            "input spans {} qubits, circuit has {}",
            pkg.qubits(input),
            c.n
        )));
    }
    if let Some(v) = pkg.node(input.node) {
        if v.kind != crate::dd::Kind::Vector {
            return Err(DdError::Structure("input must be a vector".into()));
        }
    }
    Ok(())
}

/// Applies `c` to `input` under `cfg`.
///
/// The returned edge is not registered as a root: call
/// [`Package::inc_ref`] on it before running anything else on the package if
/// it must survive. Concurrent runs on one package share its abort flag.
pub fn simulate(pkg: &Package, c: &Circuit, input: Edge, cfg: &EngineConfig) -> Result<(Edge, RunMetrics), DdError> {
    let cfg = cfg.normalized()?;
    check_input(pkg, c, input)?;
    let t0 = Instant::now();
    pkg.reset_peak();
    let gc0 = pkg.gc_runs();
    let watchdog = Watchdog::start(pkg, cfg.timeout);
    let result = (|| {
        let gates = GateSet::build(pkg, c)?;
        pkg.inc_ref(input);
        let _keep = KeepAlive(pkg.clone(), input);
        match cfg.strategy {
            Strategy::Sequential => run_sequential(pkg, &gates.per_gate, input, &cfg),
            Strategy::InnerThreads | Strategy::InnerFibers => run_inner_with(pkg, c.n, &gates.per_gate, input, &cfg),
            _ => {
                let graph = graph_for(c.gates.len(), &cfg)?;
                run_graph(pkg, Arc::new(graph), Arc::clone(&gates.per_gate), input, &cfg).map(|(e, m, _)| (e, m))
            }
        }
    })();
    drop(watchdog);
    let aborted = take_abort(pkg);
    let (out, mut m) = result?;
    aborted?;
    m.wall_time = t0.elapsed();
    m.peak_nodes = pkg.peak_nodes();
    m.final_nodes = pkg.size(out);
    m.gc_runs = pkg.gc_runs() - gc0;
    Ok((out, m))
}

fn graph_for(gates: usize, cfg: &EngineConfig) -> Result<TaskGraph, DdError> {
    Ok(match cfg.strategy {
        Strategy::OuterAssoc if gates >= 2 => {
            let segments = cfg.assoc_segments.unwrap_or(cfg.workers).max(gates.div_ceil(cfg.assoc_max_segment));
            build_assoc_taskgraph(gates, segments)
        }
        Strategy::OuterReduce => {
            build_reduce_taskgraph(gates, cfg.reduce_batch.unwrap_or(DEFAULT_REDUCE_BATCH), cfg.workers)?
        }
        _ => build_linear_taskgraph(gates),
    })
}

fn run_sequential(pkg: &Package, gates: &[Edge], input: Edge, cfg: &EngineConfig) -> Result<(Edge, RunMetrics), DdError> {
    let mut ctxs = worker_contexts(pkg, cfg)?;
    let mut ctx = ctxs.pop().expect("one context");
    let mut state = input;
    for &g in gates {
        let _guard = pkg.enter();
        ctx.refresh();
        let r = ctx.mul(MulKind::Mv, ctx.redge(g), ctx.redge(state));
        state = ctx.to_edge(r);
        drop(_guard);
        if pkg.aborted() {
            break;
        }
        pkg.sample_peak();
        pkg.maybe_collect(|| vec![state]);
    }
    let summary = WorkerSummary {
        idle: Duration::ZERO,
        tasks: gates.len() as u64,
        stats: ctx.cache().stats_snapshot(),
        spawned: 0,
    };
    Ok((state, collect_metrics(&[summary], Duration::from_secs(1))))
}

/// Applies gates in order with each multiplication split across the pool.
pub fn run_inner(pkg: &Package, c: &Circuit, input: Edge, cfg: &EngineConfig) -> Result<(Edge, RunMetrics), DdError> {
    if !cfg.strategy.is_inner() {
        return Err(DdError::Config(format!("{} is not an inner strategy", cfg.strategy)));
    }
    simulate(pkg, c, input, cfg)
}

fn run_inner_with(
    pkg: &Package,
    n: usize,
    gates: &[Edge],
    input: Edge,
    cfg: &EngineConfig,
) -> Result<(Edge, RunMetrics), DdError> {
    let threshold = cfg.spawn_threshold_for(n);
    let fibers = cfg.strategy == Strategy::InnerFibers;
    let fork = Arc::new(ThreadsFork::default());
    let mut ctxs = worker_contexts(pkg, cfg)?;
    for ctx in &mut ctxs {
        ctx.spawn_threshold = threshold;
        if !fibers {
            ctx.fork = Some(Arc::clone(&fork) as Arc<dyn InnerFork>);
        }
    }
    let pool = Pool::start(ctxs, !fibers, cfg.pin_workers);
    fork.attach(pool.shared());
    let shared = Arc::clone(pool.shared());

    let mut state = input;
    for &g in gates {
        let guard = pkg.enter();
        let s = state;
        state = if fibers {
            let p = Arc::clone(&shared);
            let root = spawn_fiber(&shared, async move {
                let (a, b) = with_ctx(|c| (c.redge(g), c.redge(s)));
                let r = fiber_mul(p, MulKind::Mv, a, b, false).await;
                with_ctx(|c| c.to_edge(r))
            });
            futures::executor::block_on(root)
        } else {
            let (tx, rx) = std::sync::mpsc::channel();
            shared.push_global(Task::Job(Box::new(move |c: &mut OpContext| {
                let r = c.mul(MulKind::Mv, c.redge(g), c.redge(s));
                let _ = tx.send(c.to_edge(r));
            })));
            rx.recv().expect("worker dropped a root job")
        };
        drop(guard);
        if pkg.aborted() {
            break;
        }
        pkg.sample_peak();
        pkg.maybe_collect(|| vec![state]);
    }
    drop(shared);
    let (reports, wall) = pool.finish();
    let summaries: Vec<WorkerSummary> = reports.into_iter().map(Into::into).collect();
    Ok((state, collect_metrics(&summaries, wall)))
}

fn run_graph(
    pkg: &Package,
    graph: Arc<TaskGraph>,
    gates: Arc<Vec<Edge>>,
    input: Edge,
    cfg: &EngineConfig,
) -> Result<(Edge, RunMetrics, TaskTrace), DdError> {
    graph.validate()?;
    let ctxs = worker_contexts(pkg, cfg)?;
    let pool = Pool::start(ctxs, false, cfg.pin_workers);
    let (out, trace) = taskgraph::execute_on_pool(pkg, pool.shared(), graph, gates, input);
    let (reports, wall) = pool.finish();
    let summaries: Vec<WorkerSummary> = reports.into_iter().map(Into::into).collect();
    Ok((out, collect_metrics(&summaries, wall), trace))
}

/// Runs an explicit task graph over the gates of `c` on `cfg.workers` workers.
/// Returns the per-node trace alongside the usual results.
pub fn run_taskgraph(
    pkg: &Package,
    c: &Circuit,
    graph: &TaskGraph,
    input: Edge,
    cfg: &EngineConfig,
) -> Result<(Edge, RunMetrics, TaskTrace), DdError> {
    let cfg = cfg.normalized()?;
    check_input(pkg, c, input)?;
    if graph.gates != c.gates.len() {
        return Err(DdError::Graph(format!(
            "graph covers {} gates, circuit has {}",
            graph.gates,
            c.gates.len()
        )));
    }
    let t0 = Instant::now();
    pkg.reset_peak();
    let gc0 = pkg.gc_runs();
    let watchdog = Watchdog::start(pkg, cfg.timeout);
    let result = (|| {
        let gates = GateSet::build(pkg, c)?;
        pkg.inc_ref(input);
        let _keep = KeepAlive(pkg.clone(), input);
        run_graph(pkg, Arc::new(graph.clone()), Arc::clone(&gates.per_gate), input, &cfg)
    })();
    drop(watchdog);
    let aborted = take_abort(pkg);
    let (out, mut m, trace) = result?;
    aborted?;
    m.wall_time = t0.elapsed();
    m.peak_nodes = pkg.peak_nodes();
    m.final_nodes = pkg.size(out);
    m.gc_runs = pkg.gc_runs() - gc0;
    Ok((out, m, trace))
}

/// Runs the associative graph of `c` with `segments` segments on one thread,
/// picking ready nodes in `order`. Cache settings come from `cfg`.
pub fn processing_order_experiment(
    pkg: &Package,
    c: &Circuit,
    input: Edge,
    segments: usize,
    order: ProcessingOrder,
    seed: u64,
    cfg: &EngineConfig,
) -> Result<(Edge, RunMetrics), DdError> {
    let mut cfg = cfg.normalized()?;
    cfg.workers = 1;
    check_input(pkg, c, input)?;
    let graph = if c.gates.len() >= 2 {
        build_assoc_taskgraph(c.gates.len(), segments.max(1))
    } else {
        build_linear_taskgraph(c.gates.len())
    };
    let t0 = Instant::now();
    pkg.reset_peak();
    let gc0 = pkg.gc_runs();
    let watchdog = Watchdog::start(pkg, cfg.timeout);
    let result = (|| {
        let gates = GateSet::build(pkg, c)?;
        pkg.inc_ref(input);
        let _keep = KeepAlive(pkg.clone(), input);
        let mut ctx = worker_contexts(pkg, &cfg)?.pop().expect("one context");
        let (out, trace) = taskgraph::execute_single(&mut ctx, &graph, &gates.per_gate, input, order, seed);
        let summary = WorkerSummary {
            idle: Duration::ZERO,
            tasks: trace.executions.iter().map(|&e| u64::from(e)).sum(),
            stats: ctx.cache().stats_snapshot(),
            spawned: 0,
        };
        Ok::<_, DdError>((out, collect_metrics(&[summary], Duration::from_secs(1))))
    })();
    drop(watchdog);
    let aborted = take_abort(pkg);
    let (out, mut m) = result?;
    aborted?;
    m.wall_time = t0.elapsed();
    m.peak_nodes = pkg.peak_nodes();
    m.final_nodes = pkg.size(out);
    m.gc_runs = pkg.gc_runs() - gc0;
    Ok((out, m))
}
