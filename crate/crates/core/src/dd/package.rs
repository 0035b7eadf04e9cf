use std::sync::atomic::{AtomicBool, AtomicU32, AtomicU64, AtomicU8, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock, RwLock};

use num_complex::Complex64;
use rustc_hash::FxHashMap;

use super::table::{TableStats, UniqueTable};
use super::{
    meta_kind, meta_level, meta_table, Edge, Kind, NodeId, NodeView, MAX_TABLES, META_IDENTITY,
    META_MATRIX,
};
use crate::cache::{CacheConfig, SharedCache};
use crate::cnum::{ComplexId, ComplexTable};
use crate::error::DdError;
use crate::util::{Arena, BitSet, SlotPool, SlotReserve};

#[derive(Default)]
pub(crate) struct NodeSlot {
    pub(crate) meta: AtomicU32,
    pub(crate) next: AtomicU32,
    pub(crate) edges: [AtomicU64; 4],
}

/// Sizing knobs for a [`Package`].
#[derive(Clone, Debug)]
pub struct PackageConfig {
    /// Maximum number of stored nodes; exceeding it fails the running operation.
    pub node_limit: u64,
    /// Maximum number of stored complex values.
    pub complex_limit: u64,
    /// Allocation count after which a collection becomes due, unless the
    /// previous collection left more nodes alive than this.
    pub gc_min: u64,
    pub table_bits: usize,
    pub worker_table_bits: usize,
    pub max_table_bits: usize,
    /// Cache used by the convenience operations on [`Package`].
    pub cache: CacheConfig,
}

impl Default for PackageConfig {
    fn default() -> Self {
        PackageConfig {
            node_limit: 1 << 25,
            complex_limit: 1 << 26,
            gc_min: 1 << 18,
            table_bits: 18,
            worker_table_bits: 16,
            max_table_bits: 24,
            cache: CacheConfig::default(),
        }
    }
}

/// Outcome of one garbage collection.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GcReport {
    pub live_nodes: usize,
    pub freed_nodes: usize,
    pub live_complex: usize,
}

pub(crate) const ABORT_NONE: u8 = 0;
pub(crate) const ABORT_TIMEOUT: u8 = 1;
pub(crate) const ABORT_OOM: u8 = 2;

/// Half the room left under `limit`, so a collection runs before garbage alone
/// can exhaust it.
fn headroom(limit: u64, live: u64) -> u64 {
    (limit.saturating_sub(live) / 2).max(1)
}

pub(crate) struct Shared {
    pub(crate) complex: ComplexTable,
    pub(crate) nodes: Arena<NodeSlot>,
    pub(crate) node_slots: SlotPool,
    tables: RwLock<Vec<Arc<UniqueTable>>>,
    roots: Mutex<FxHashMap<u64, usize>>,
    epoch: AtomicU32,
    abort: AtomicU8,
    active: AtomicUsize,
    gc_pending: AtomicBool,
    gc_lock: Mutex<()>,
    peak_nodes: AtomicU64,
    live_after_gc: AtomicU64,
    complex_after_gc: AtomicU64,
    gc_runs: AtomicU64,
    spare_reserves: Mutex<Vec<(SlotReserve, SlotReserve)>>,
    default_cache: OnceLock<Arc<SharedCache>>,
    pub(crate) config: PackageConfig,
}

/// Owner of all nodes and complex values. Cloning is cheap and shares state.
///
/// Edges stay valid until the next garbage collection unless they are
/// registered with [`inc_ref`](Self::inc_ref) or passed as extra roots.
/// Collections only happen when [`collect_garbage`](Self::collect_garbage) is
/// called or inside a simulation run, at points where no operation is in
/// flight.
#[derive(Clone)]
pub struct Package {
    pub(crate) shared: Arc<Shared>,
}

impl Default for Package {
    fn default() -> Self {
        Self::new()
    }
}

impl std::fmt::Debug for Package {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Package")
            .field("nodes", &self.node_count())
            .field("complex", &self.shared.complex.len())
            .finish()
    }
}

/// Marks one in-flight operation. Collections wait until none is held.
pub(crate) struct OpGuard {
    shared: Arc<Shared>,
}

impl Drop for OpGuard {
    fn drop(&mut self) {
        self.shared.active.fetch_sub(1, Ordering::SeqCst);
    }
}

impl Package {
    pub fn new() -> Self {
        Self::with_config(PackageConfig::default())
    }

    pub fn with_config(config: PackageConfig) -> Self {
        let nodes = Arena::new();
        nodes.ensure(0);
        let global = Arc::new(UniqueTable::new(0, config.table_bits, config.max_table_bits));
        let shared = Shared {
            complex: ComplexTable::with_buckets(16, 25, config.complex_limit),
            nodes,
            node_slots: SlotPool::new(1, config.node_limit.saturating_add(1)),
            tables: RwLock::new(vec![global]),
            roots: Mutex::new(FxHashMap::default()),
            epoch: AtomicU32::new(0),
            abort: AtomicU8::new(ABORT_NONE),
            active: AtomicUsize::new(0),
            gc_pending: AtomicBool::new(false),
            gc_lock: Mutex::new(()),
            peak_nodes: AtomicU64::new(0),
            live_after_gc: AtomicU64::new(0),
            complex_after_gc: AtomicU64::new(0),
            gc_runs: AtomicU64::new(0),
            spare_reserves: Mutex::new(Vec::new()),
            default_cache: OnceLock::new(),
            config,
        };
        Package {
            shared: Arc::new(shared),
        }
    }

    pub fn config(&self) -> &PackageConfig {
        &self.shared.config
    }

    pub fn complex(&self) -> &ComplexTable {
        &self.shared.complex
    }

    /// Value of an interned weight.
    pub fn value(&self, id: ComplexId) -> Complex64 {
        self.shared.complex.value(id)
    }

    /// Copy of a stored node, or `None` for the terminal.
    pub fn node(&self, id: NodeId) -> Option<NodeView> {
        if id.is_terminal() || id.0 >= self.shared.node_slots.high_water() {
            return None;
        }
        let slot = self.shared.nodes.get(id.0);
        let meta = slot.meta.load(Ordering::Acquire);
        let children = std::array::from_fn(|k| Edge::unpack(slot.edges[k].load(Ordering::Relaxed)));
        Some(NodeView::from_parts(meta, children))
    }

    /// Number of qubits spanned below `e` (0 for terminal edges).
    pub fn qubits(&self, e: Edge) -> usize {
        if e.node.is_terminal() {
            0
        } else {
            self.level(e.node.0) + 1
        }
    }

    #[inline]
    pub(crate) fn meta(&self, id: u32) -> u32 {
        self.shared.nodes.get(id).meta.load(Ordering::Relaxed)
    }

    #[inline]
    pub(crate) fn level(&self, id: u32) -> usize {
        meta_level(self.meta(id))
    }

    #[inline]
    pub(crate) fn kind(&self, id: u32) -> Kind {
        meta_kind(self.meta(id))
    }

    #[inline]
    pub(crate) fn is_identity(&self, id: u32) -> bool {
        id != 0 && self.meta(id) & META_IDENTITY != 0
    }

    #[inline]
    pub(crate) fn child(&self, id: u32, k: usize) -> Edge {
        Edge::unpack(self.shared.nodes.get(id).edges[k].load(Ordering::Relaxed))
    }

    /// Stores a node whose children are already normalized and interned.
    /// `Err(())` when the node budget is exhausted.
    pub(crate) fn insert_node(
        &self,
        table: &UniqueTable,
        reserve: &mut SlotReserve,
        level: usize,
        kind: Kind,
        edges: &[Edge; 4],
    ) -> Result<NodeId, ()> {
        let mut meta = level as u32;
        let mut packed = [0u64; 4];
        if kind == Kind::Matrix {
            meta |= META_MATRIX;
            let e0 = edges[0];
            if edges[1].is_zero()
                && edges[2].is_zero()
                && e0 == edges[3]
                && e0.weight == ComplexId::ONE
                && (if level == 0 { e0.node.is_terminal() } else { self.is_identity(e0.node.0) })
            {
                meta |= META_IDENTITY;
            }
            for k in 0..4 {
                packed[k] = edges[k].pack();
            }
        } else {
            packed[0] = edges[0].pack();
            packed[1] = edges[1].pack();
        }
        let id = table.find_or_insert(&self.shared.nodes, &self.shared.node_slots, reserve, meta, &packed)?;
        Ok(NodeId(id))
    }

    /// The global unique table.
    pub(crate) fn global_table(&self) -> Arc<UniqueTable> {
        Arc::clone(&self.shared.tables.read().unwrap()[0])
    }

    /// Per-worker tables `1..=count`, created on first use.
    pub(crate) fn worker_tables(&self, count: usize) -> Result<Vec<Arc<UniqueTable>>, DdError> {
        if count + 1 > MAX_TABLES {
            return Err(DdError::Config(format!("at most {} worker tables", MAX_TABLES - 1)));
        }
        let mut tables = self.shared.tables.write().unwrap();
        while tables.len() < count + 1 {
            let idx = tables.len();
            let cfg = &self.shared.config;
            tables.push(Arc::new(UniqueTable::new(idx, cfg.worker_table_bits, cfg.max_table_bits)));
        }
        Ok(tables[1..=count].to_vec())
    }

    pub(crate) fn take_reserves(&self) -> (SlotReserve, SlotReserve) {
        self.shared.spare_reserves.lock().unwrap().pop().unwrap_or_default()
    }

    pub(crate) fn return_reserves(&self, r: (SlotReserve, SlotReserve)) {
        self.shared.spare_reserves.lock().unwrap().push(r);
    }

    pub(crate) fn default_cache(&self) -> Arc<SharedCache> {
        let cfg = &self.shared.config.cache;
        Arc::clone(
            self.shared
                .default_cache
                .get_or_init(|| Arc::new(SharedCache::new(cfg.mul_entries, cfg.add_entries))),
        )
    }

    /// Occupancy of the global table, plus every worker table in use.
    pub fn lookup_stats(&self) -> TableStats {
        let tables = self.shared.tables.read().unwrap().clone();
        let mut total = TableStats::default();
        for t in &tables {
            total.merge(&t.stats(&self.shared.nodes));
        }
        total
    }

    /// Nodes currently stored across all tables, garbage included.
    pub fn node_count(&self) -> u64 {
        self.shared.tables.read().unwrap().iter().map(|t| t.size()).sum()
    }

    /// Records the current table size into the peak counter and returns it.
    pub(crate) fn sample_peak(&self) -> u64 {
        let n = self.node_count();
        self.shared.peak_nodes.fetch_max(n, Ordering::Relaxed);
        n
    }

    pub(crate) fn reset_peak(&self) {
        self.shared.peak_nodes.store(self.node_count(), Ordering::Relaxed);
    }

    pub fn peak_nodes(&self) -> u64 {
        self.shared.peak_nodes.load(Ordering::Relaxed).max(self.node_count())
    }

    pub fn gc_runs(&self) -> u64 {
        self.shared.gc_runs.load(Ordering::Relaxed)
    }

    #[inline]
    pub(crate) fn epoch(&self) -> u32 {
        self.shared.epoch.load(Ordering::Acquire)
    }

    /// Invalidates every cache entry stamped with an older epoch.
    pub(crate) fn bump_epoch(&self) {
        self.shared.epoch.fetch_add(1, Ordering::AcqRel);
    }

    #[inline]
    pub(crate) fn aborted(&self) -> bool {
        self.shared.abort.load(Ordering::Relaxed) != ABORT_NONE
    }

    pub(crate) fn abort_reason(&self) -> u8 {
        self.shared.abort.load(Ordering::Acquire)
    }

    pub(crate) fn set_abort(&self, reason: u8) {
        let _ = self
            .shared
            .abort
            .compare_exchange(ABORT_NONE, reason, Ordering::AcqRel, Ordering::Relaxed);
    }

    pub(crate) fn clear_abort(&self) {
        self.shared.abort.store(ABORT_NONE, Ordering::Release);
    }

    pub(crate) fn abort_error(&self) -> Option<DdError> {
        match self.abort_reason() {
            ABORT_TIMEOUT => Some(DdError::Timeout),
            ABORT_OOM => Some(DdError::OutOfMemory { what: "node or complex table" }),
            _ => None,
        }
    }

    /// Registers an operation; blocks while a collection is running.
    pub(crate) fn enter(&self) -> OpGuard {
        let s = &self.shared;
        loop {
            s.active.fetch_add(1, Ordering::SeqCst);
            if !s.gc_pending.load(Ordering::SeqCst) {
                return OpGuard {
                    shared: Arc::clone(s),
                };
            }
            s.active.fetch_sub(1, Ordering::SeqCst);
            while s.gc_pending.load(Ordering::SeqCst) {
                std::thread::yield_now();
            }
        }
    }

    /// Keeps `e` alive across collections. Calls nest.
    pub fn inc_ref(&self, e: Edge) {
        if e.node.is_terminal() && e.weight.0 <= 1 {
            return;
        }
        *self.shared.roots.lock().unwrap().entry(e.pack()).or_insert(0) += 1;
    }

    /// Releases one [`inc_ref`](Self::inc_ref).
    pub fn dec_ref(&self, e: Edge) {
        let mut roots = self.shared.roots.lock().unwrap();
        if let Some(c) = roots.get_mut(&e.pack()) {
            *c -= 1;
            if *c == 0 {
                roots.remove(&e.pack());
            }
        }
    }

    /// Whether enough has been allocated since the last sweep to make a
    /// collection worthwhile.
    pub(crate) fn gc_due(&self) -> bool {
        let s = &self.shared;
        let nodes = s.node_slots.allocated_since_sweep();
        let live = s.live_after_gc.load(Ordering::Relaxed);
        let node_floor = s.config.gc_min.max(live).min(headroom(s.config.node_limit, live));
        let complex = s.complex.allocated_since_sweep();
        let live = s.complex_after_gc.load(Ordering::Relaxed);
        let complex_floor = (2 * s.config.gc_min).max(live).min(headroom(s.config.complex_limit, live));
        nodes >= node_floor || complex >= complex_floor
    }

    /// Collects everything unreachable from registered roots and `extra`.
    /// Must not be called while the caller is inside an operation.
    pub fn collect_garbage(&self, extra: &[Edge]) -> GcReport {
        self.collect_with(|| extra.to_vec())
    }

    /// Collects if due. `roots` is evaluated once all operations have drained.
    pub(crate) fn maybe_collect(&self, roots: impl FnOnce() -> Vec<Edge>) -> Option<GcReport> {
        if !self.gc_due() {
            return None;
        }
        let report = self.exclusive(|| {
            if self.gc_due() {
                Some(self.sweep(&roots()))
            } else {
                None
            }
        });
        report
    }

    pub(crate) fn collect_with(&self, roots: impl FnOnce() -> Vec<Edge>) -> GcReport {
        self.exclusive(|| self.sweep(&roots()))
    }

    fn exclusive<R>(&self, f: impl FnOnce() -> R) -> R {
        let s = &self.shared;
        let _lock = s.gc_lock.lock().unwrap();
        s.gc_pending.store(true, Ordering::SeqCst);
        while s.active.load(Ordering::SeqCst) != 0 {
            std::thread::yield_now();
        }
        let r = f();
        s.gc_pending.store(false, Ordering::SeqCst);
        r
    }

    fn sweep(&self, extra: &[Edge]) -> GcReport {
        let s = &self.shared;
        self.sample_peak();
        let high = s.node_slots.high_water();
        let mut live = BitSet::new(high as usize);
        let mut live_c = BitSet::new(s.complex.high_water() as usize);
        let mut stack: Vec<u32> = Vec::new();
        let roots: Vec<Edge> = s
            .roots
            .lock()
            .unwrap()
            .keys()
            .map(|&k| Edge::unpack(k))
            .chain(extra.iter().copied())
            .collect();
        for e in roots {
            live_c.insert(e.weight.0);
            if !e.node.is_terminal() && live.insert(e.node.0) {
                stack.push(e.node.0);
            }
        }
        let mut count = 0usize;
        while let Some(id) = stack.pop() {
            count += 1;
            let arity = self.kind(id).arity();
            for k in 0..arity {
                let c = self.child(id, k);
                live_c.insert(c.weight.0);
                if !c.node.is_terminal() && live.insert(c.node.0) {
                    stack.push(c.node.0);
                }
            }
        }

        let tables = s.tables.read().unwrap().clone();
        let mut per_table = vec![0usize; tables.len()];
        for id in 1..high {
            if live.contains(id) {
                per_table[meta_table(self.meta(id))] += 1;
            }
        }
        for (t, n) in tables.iter().zip(&per_table) {
            t.clear((*n).max(s.config.gc_min as usize / if t.index() == 0 { 1 } else { 4 }));
        }
        let mut free = Vec::new();
        for id in (1..high).rev() {
            if live.contains(id) {
                tables[meta_table(self.meta(id))].relink(&s.nodes, id);
            } else {
                free.push(id);
            }
        }
        let freed = free.len();
        s.node_slots.reset_free(free);
        s.complex.sweep(&live_c);
        s.live_after_gc.store(count as u64, Ordering::Relaxed);
        s.complex_after_gc.store(s.complex.len() as u64, Ordering::Relaxed);
        s.gc_runs.fetch_add(1, Ordering::Relaxed);
        *s.spare_reserves.lock().unwrap() = Vec::new();
        self.bump_epoch();
        GcReport {
            live_nodes: count,
            freed_nodes: freed,
            live_complex: s.complex.len(),
        }
    }

    /// Visits every node reachable from `roots` exactly once.
    pub fn walk(&self, roots: &[Edge], mut visit: impl FnMut(NodeId, &NodeView)) {
        let mut seen = FxHashMap::<u32, ()>::default();
        let mut stack: Vec<u32> = roots.iter().filter(|e| !e.node.is_terminal()).map(|e| e.node.0).collect();
        while let Some(id) = stack.pop() {
            if seen.insert(id, ()).is_some() {
                continue;
            }
            let view = self.node(NodeId(id)).expect("reachable node");
            for c in view.children() {
                if !c.node.is_terminal() {
                    stack.push(c.node.0);
                }
            }
            visit(NodeId(id), &view);
        }
    }
}
