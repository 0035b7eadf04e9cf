//! Task graphs over the gate list and their execution on the worker pool.
//!
//! Every graph node is one DD operation run start to finish by a single
//! worker. Node indices are a topological order: the builders only emit a
//! node after all of its dependencies.

use std::sync::atomic::{AtomicU32, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use rand_xoshiro::rand_core::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

use crate::dd::{Edge, Package};
use crate::error::DdError;
use crate::ops::{MulKind, OpContext};

use super::pool::{PoolShared, Task};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NodeKind {
    MulMm,
    MulMv,
    Reduce,
}

/// Where a node reads one of its inputs from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Operand {
    Input,
    Gate(usize),
    Node(usize),
}

/// One operation.
///
/// * `MulMm`: `[lhs, rhs]`, computes `lhs·rhs`.
/// * `MulMv`: `[matrix, vector]`.
/// * `Reduce`: `[vector, p1, .., pk]`, computes `pk ⋯ p1 · vector`. It waits
///   for every product of its batch and gates the next batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskNode {
    pub kind: NodeKind,
    pub operands: Vec<Operand>,
    pub deps: Vec<usize>,
    pub batch: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskGraph {
    pub gates: usize,
    pub nodes: Vec<TaskNode>,
    pub output: Operand,
}

impl TaskGraph {
    fn push(&mut self, kind: NodeKind, operands: Vec<Operand>, extra_deps: &[usize], batch: Option<usize>) -> Operand {
        let mut deps: Vec<usize> = operands
            .iter()
            .filter_map(|o| match o {
                Operand::Node(i) => Some(*i),
                _ => None,
            })
            .chain(extra_deps.iter().copied())
            .collect();
        deps.sort_unstable();
        deps.dedup();
        self.nodes.push(TaskNode {
            kind,
            operands,
            deps,
            batch,
        });
        Operand::Node(self.nodes.len() - 1)
    }

    /// Checks operand ranges, arities and that dependencies point backwards.
    pub fn validate(&self) -> Result<(), DdError> {
        let bad = |m: String| Err(DdError::Graph(m));
        let check = |o: &Operand, at: usize| match *o {
            Operand::Gate(g) if g >= self.gates => Err(DdError::Graph(format!("node {at}: gate {g} out of range"))),
            Operand::Node(j) if j >= at => Err(DdError::Graph(format!("node {at}: reads later node {j}"))),
            _ => Ok(()),
        };
        for (i, n) in self.nodes.iter().enumerate() {
            for o in &n.operands {
                check(o, i)?;
            }
            for &d in &n.deps {
                if d >= i {
                    return bad(format!("node {i}: depends on later node {d}"));
                }
            }
            let ok = match n.kind {
                NodeKind::MulMm | NodeKind::MulMv => n.operands.len() == 2,
                NodeKind::Reduce => !n.operands.is_empty(),
            };
            if !ok {
                return bad(format!("node {i}: wrong operand count"));
            }
            if n.kind == NodeKind::MulMv && !self.is_vector(n.operands[1]) {
                return bad(format!("node {i}: second operand is not a vector"));
            }
        }
        check(&self.output, self.nodes.len())
    }

    fn is_vector(&self, o: Operand) -> bool {
        match o {
            Operand::Input => true,
            Operand::Gate(_) => false,
            Operand::Node(i) => self.nodes[i].kind != NodeKind::MulMm,
        }
    }

    pub fn count(&self, kind: NodeKind) -> usize {
        self.nodes.iter().filter(|n| n.kind == kind).count()
    }

    /// Number of graph edges.
    pub fn edges(&self) -> usize {
        self.nodes.iter().map(|n| n.deps.len()).sum()
    }
}

/// One MULMV per gate, each waiting for the previous one.
pub fn build_linear_taskgraph(gates: usize) -> TaskGraph {
    let mut g = TaskGraph {
        gates,
        nodes: Vec::new(),
        output: Operand::Input,
    };
    let mut state = Operand::Input;
    for i in 0..gates {
        state = g.push(NodeKind::MulMv, vec![Operand::Gate(i), state], &[], None);
    }
    g.output = state;
    g
}

/// Splits `lo..hi` into `parts` contiguous ranges whose lengths differ by at most one.
fn split(lo: usize, hi: usize, parts: usize) -> Vec<(usize, usize)> {
    let len = hi - lo;
    let parts = parts.clamp(1, len.max(1));
    (0..parts)
        .map(|k| (lo + k * len / parts, lo + (k + 1) * len / parts))
        .filter(|(a, b)| a < b)
        .collect()
}

/// Balanced MULMM trees over each range, emitted one tree level at a time
/// across all ranges. Returns the product operand of each range.
fn product_trees(g: &mut TaskGraph, ranges: &[(usize, usize)], extra_deps: &[usize], batch: Option<usize>) -> Vec<Operand> {
    let mut layers: Vec<Vec<Operand>> = ranges.iter().map(|&(a, b)| (a..b).map(Operand::Gate).collect()).collect();
    while layers.iter().any(|l| l.len() > 1) {
        for layer in layers.iter_mut() {
            if layer.len() < 2 {
                continue;
            }
            let mut next = Vec::with_capacity(layer.len().div_ceil(2));
            for pair in layer.chunks(2) {
                next.push(match *pair {
                    // later gates multiply from the left
                    [earlier, later] => {
                        let deps = if is_gate(earlier) && is_gate(later) { extra_deps } else { &[] };
                        g.push(NodeKind::MulMm, vec![later, earlier], deps, batch)
                    }
                    [single] => single,
                    _ => unreachable!(),
                });
            }
            *layer = next;
        }
    }
    layers.into_iter().map(|l| l[0]).collect()
}

fn is_gate(o: Operand) -> bool {
    matches!(o, Operand::Gate(_))
}

/// Gate list split into `segments` contiguous ranges, each multiplied out by a
/// balanced MULMM tree; the range products are then applied to the state in
/// order by MULMV nodes.
pub fn build_assoc_taskgraph(gates: usize, segments: usize) -> TaskGraph {
    let mut g = TaskGraph {
        gates,
        nodes: Vec::new(),
        output: Operand::Input,
    };
    let products = product_trees(&mut g, &split(0, gates, segments), &[], None);
    let mut state = Operand::Input;
    for p in products {
        state = g.push(NodeKind::MulMv, vec![p, state], &[], None);
    }
    g.output = state;
    g
}

/// Gates in consecutive batches of `batch`. Inside a batch up to `segments`
/// ranges are multiplied out in parallel; the batch's REDUCE node applies
/// them to the state. No node of a batch starts before the previous REDUCE.
pub fn build_reduce_taskgraph(gates: usize, batch: usize, segments: usize) -> Result<TaskGraph, DdError> {
    if batch == 0 {
        return Err(DdError::Config("reduce batch must be at least 1".into()));
    }
    let mut g = TaskGraph {
        gates,
        nodes: Vec::new(),
        output: Operand::Input,
    };
    let mut state = Operand::Input;
    for (k, lo) in (0..gates).step_by(batch).enumerate() {
        let hi = (lo + batch).min(gates);
        // at least two gates per range so each range has a MULMM
        let parts = segments.clamp(1, ((hi - lo) / 2).max(1));
        let barrier: Vec<usize> = match state {
            Operand::Node(i) => vec![i],
            _ => Vec::new(),
        };
        let products = product_trees(&mut g, &split(lo, hi, parts), &barrier, Some(k));
        let mut operands = vec![state];
        operands.extend(products);
        state = g.push(NodeKind::Reduce, operands, &barrier, Some(k));
    }
    g.output = state;
    Ok(g)
}

/// Per-node execution record of one graph run.
#[derive(Clone, Debug, Default)]
pub struct TaskTrace {
    pub executions: Vec<u32>,
    /// Start and end of each node, relative to the run start.
    pub spans: Vec<(Duration, Duration)>,
}

impl TaskTrace {
    /// Whether every node of batch `k + 1` started after REDUCE `k` ended.
    pub fn barriers_respected(&self, g: &TaskGraph) -> bool {
        let reduce_end: Vec<(usize, Duration)> = g
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.kind == NodeKind::Reduce)
            .map(|(i, n)| (n.batch.unwrap_or(0), self.spans[i].1))
            .collect();
        g.nodes.iter().enumerate().all(|(i, n)| match n.batch {
            Some(b) if b > 0 => reduce_end
                .iter()
                .filter(|(rb, _)| *rb + 1 == b)
                .all(|(_, end)| self.spans[i].0 >= *end),
            _ => true,
        })
    }
}

fn operand_edge(results: &[Option<Edge>], gates: &[Edge], input: Edge, o: Operand) -> Edge {
    match o {
        Operand::Input => input,
        Operand::Gate(i) => gates[i],
        Operand::Node(i) => results[i].expect("operand computed before use"),
    }
}

/// Runs one node on `ctx`. The caller holds an operation guard.
fn compute_node(ctx: &mut OpContext, node: &TaskNode, ops: &[Edge]) -> Edge {
    let r = match node.kind {
        NodeKind::MulMm => ctx.mul(MulKind::Mm, ctx.redge(ops[0]), ctx.redge(ops[1])),
        NodeKind::MulMv => ctx.mul(MulKind::Mv, ctx.redge(ops[0]), ctx.redge(ops[1])),
        NodeKind::Reduce => {
            let mut s = ctx.redge(ops[0]);
            for p in &ops[1..] {
                let m = ctx.redge(*p);
                s = ctx.mul(MulKind::Mv, m, s);
            }
            s
        }
    };
    ctx.to_edge(r)
}

struct GraphState {
    results: Vec<Option<Edge>>,
    uses_left: Vec<usize>,
    spans: Vec<(Duration, Duration)>,
}

impl GraphState {
    fn new(g: &TaskGraph) -> Self {
        let mut uses_left = vec![0usize; g.nodes.len()];
        for n in &g.nodes {
            for o in &n.operands {
                if let Operand::Node(i) = o {
                    uses_left[*i] += 1;
                }
            }
        }
        if let Operand::Node(i) = g.output {
            uses_left[i] += 1;
        }
        GraphState {
            results: vec![None; g.nodes.len()],
            uses_left,
            spans: vec![(Duration::ZERO, Duration::ZERO); g.nodes.len()],
        }
    }

    fn operands(&self, n: &TaskNode, gates: &[Edge], input: Edge) -> Vec<Edge> {
        n.operands.iter().map(|o| operand_edge(&self.results, gates, input, *o)).collect()
    }

    fn store(&mut self, i: usize, n: &TaskNode, r: Edge) {
        self.results[i] = Some(r);
        for o in &n.operands {
            if let Operand::Node(j) = o {
                self.uses_left[*j] -= 1;
                if self.uses_left[*j] == 0 {
                    self.results[*j] = None;
                }
            }
        }
    }

    fn roots(&self) -> Vec<Edge> {
        self.results.iter().flatten().copied().collect()
    }
}

struct GraphRun {
    pkg: Package,
    graph: Arc<TaskGraph>,
    gates: Arc<Vec<Edge>>,
    input: Edge,
    pool: Arc<PoolShared>,
    remaining: Vec<AtomicUsize>,
    dependents: Vec<Vec<usize>>,
    executions: Vec<AtomicU32>,
    state: Mutex<GraphState>,
    finished: Mutex<usize>,
    all_done: Condvar,
    t0: Instant,
}

impl GraphRun {
    fn job(self: &Arc<Self>, i: usize) -> Task {
        let run = Arc::clone(self);
        Task::Job(Box::new(move |ctx: &mut OpContext| run.execute(i, ctx)))
    }

    fn execute(self: &Arc<Self>, i: usize, ctx: &mut OpContext) {
        self.executions[i].fetch_add(1, Ordering::Relaxed);
        let node = &self.graph.nodes[i];
        let start = self.t0.elapsed();
        {
            let _guard = self.pkg.enter();
            ctx.refresh();
            let ops = self.state.lock().unwrap().operands(node, &self.gates, self.input);
            let r = compute_node(ctx, node, &ops);
            let mut st = self.state.lock().unwrap();
            st.store(i, node, r);
            st.spans[i] = (start, self.t0.elapsed());
        }
        for &d in &self.dependents[i] {
            if self.remaining[d].fetch_sub(1, Ordering::AcqRel) == 1 {
                self.pool.push(self.job(d));
            }
        }
        self.pkg.sample_peak();
        self.pkg.maybe_collect(|| self.state.lock().unwrap().roots());
        let mut f = self.finished.lock().unwrap();
        *f += 1;
        if *f == self.graph.nodes.len() {
            self.all_done.notify_all();
        }
    }
}

fn dependents(g: &TaskGraph) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); g.nodes.len()];
    for (i, n) in g.nodes.iter().enumerate() {
        for &d in &n.deps {
            out[d].push(i);
        }
    }
    out
}

/// Executes `g` on a running pool and waits for it. Gate DDs and the input
/// must be kept alive by the caller.
pub(crate) fn execute_on_pool(
    pkg: &Package,
    pool: &Arc<PoolShared>,
    g: Arc<TaskGraph>,
    gates: Arc<Vec<Edge>>,
    input: Edge,
) -> (Edge, TaskTrace) {
    let run = Arc::new(GraphRun {
        pkg: pkg.clone(),
        remaining: g.nodes.iter().map(|n| AtomicUsize::new(n.deps.len())).collect(),
        dependents: dependents(&g),
        executions: g.nodes.iter().map(|_| AtomicU32::new(0)).collect(),
        state: Mutex::new(GraphState::new(&g)),
        finished: Mutex::new(0),
        all_done: Condvar::new(),
        pool: Arc::clone(pool),
        graph: Arc::clone(&g),
        gates,
        input,
        t0: Instant::now(),
    });
    for (i, n) in g.nodes.iter().enumerate() {
        if n.deps.is_empty() {
            pool.push_global(run.job(i));
        }
    }
    let mut f = run.finished.lock().unwrap();
    while *f < g.nodes.len() {
        f = run.all_done.wait(f).unwrap();
    }
    drop(f);
    let st = run.state.lock().unwrap();
    let out = operand_edge(&st.results, &run.gates, input, g.output);
    let trace = TaskTrace {
        executions: run.executions.iter().map(|e| e.load(Ordering::Relaxed)).collect(),
        spans: st.spans.clone(),
    };
    (out, trace)
}

/// How the single-worker order experiment picks among ready nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ProcessingOrder {
    /// Lowest index first, the builder's topological order.
    Sequential,
    /// Uniformly at random among ready nodes.
    Random,
}

/// Runs `g` on the calling thread, choosing ready nodes by `order`.
pub(crate) fn execute_single(
    ctx: &mut OpContext,
    g: &TaskGraph,
    gates: &[Edge],
    input: Edge,
    order: ProcessingOrder,
    seed: u64,
) -> (Edge, TaskTrace) {
    let pkg = ctx.package().clone();
    let t0 = Instant::now();
    let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
    let mut remaining: Vec<usize> = g.nodes.iter().map(|n| n.deps.len()).collect();
    let deps_of = dependents(g);
    let mut ready: Vec<usize> = (0..g.nodes.len()).filter(|&i| remaining[i] == 0).collect();
    let mut st = GraphState::new(g);
    let mut executions = vec![0u32; g.nodes.len()];
    while !ready.is_empty() {
        let pick = match order {
            ProcessingOrder::Sequential => {
                let (pos, _) = ready.iter().enumerate().min_by_key(|(_, &i)| i).unwrap();
                pos
            }
            ProcessingOrder::Random => (rng.next_u64() % ready.len() as u64) as usize,
        };
        let i = ready.swap_remove(pick);
        executions[i] += 1;
        let node = &g.nodes[i];
        let start = t0.elapsed();
        {
            let _guard = pkg.enter();
            ctx.refresh();
            let ops = st.operands(node, gates, input);
            let r = compute_node(ctx, node, &ops);
            st.store(i, node, r);
        }
        st.spans[i] = (start, t0.elapsed());
        for &d in &deps_of[i] {
            remaining[d] -= 1;
            if remaining[d] == 0 {
                ready.push(d);
            }
        }
        pkg.sample_peak();
        pkg.maybe_collect(|| st.roots());
    }
    let out = operand_edge(&st.results, gates, input, g.output);
    (
        out,
        TaskTrace {
            executions,
            spans: st.spans,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_is_a_chain() {
        let g = build_linear_taskgraph(4);
        assert_eq!(g.count(NodeKind::MulMv), 4);
        assert_eq!(g.edges(), 3);
        g.validate().unwrap();
        let one = build_linear_taskgraph(1);
        assert_eq!((one.nodes.len(), one.edges()), (1, 0));
    }

    #[test]
    fn assoc_shapes() {
        let g = build_assoc_taskgraph(4, 2);
        assert_eq!(g.count(NodeKind::MulMm), 2);
        assert_eq!(g.count(NodeKind::MulMv), 2);
        g.validate().unwrap();
        let g = build_assoc_taskgraph(2, 1);
        assert_eq!((g.count(NodeKind::MulMm), g.count(NodeKind::MulMv)), (1, 1));
    }

    #[test]
    fn reduce_batches() {
        let g = build_reduce_taskgraph(8, 4, 2).unwrap();
        assert_eq!(g.count(NodeKind::Reduce), 2);
        g.validate().unwrap();
        let g = build_reduce_taskgraph(5, 10, 4).unwrap();
        assert_eq!(g.count(NodeKind::Reduce), 1);
        assert!(build_reduce_taskgraph(3, 0, 1).is_err());
    }

    #[test]
    fn reduce_in_degree_matches_products() {
        let g = build_reduce_taskgraph(16, 8, 4).unwrap();
        for n in g.nodes.iter().filter(|n| n.kind == NodeKind::Reduce) {
            let products = n.operands.len() - 1;
            let barrier = usize::from(n.batch != Some(0));
            assert_eq!(n.deps.len(), products + barrier);
        }
    }
}
