//! Direct-mapped operation caches.
//!
//! Results are memoized by operand node ids (plus the weight ratio for
//! additions). A slot holds one entry and a new entry simply replaces the old
//! one. The shared variant guards each slot with a version word: writers make
//! it odd while they store, readers discard anything read across a version
//! change, so a reader can miss spuriously but never sees a torn entry.

use std::sync::atomic::{fence, AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cnum::ComplexId;
use crate::dd::{Edge, NodeId};
use crate::util::{mix64, zeroed_u64s};

/// Memoized operation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Add,
    MulMv,
    MulMm,
    Kron,
}

impl OpKind {
    pub const ALL: [OpKind; 4] = [OpKind::Add, OpKind::MulMv, OpKind::MulMm, OpKind::Kron];

    fn code(self) -> u64 {
        self as u64 + 1
    }

    fn uses_add_table(self) -> bool {
        self == OpKind::Add
    }
}

/// Full identity of a cached result.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub op: OpKind,
    pub lhs: NodeId,
    pub rhs: NodeId,
    /// Second operand weight over first operand weight; `ONE` for everything but `Add`.
    pub ratio: ComplexId,
}

impl CacheKey {
    pub fn new(op: OpKind, lhs: NodeId, rhs: NodeId, ratio: ComplexId) -> Self {
        CacheKey { op, lhs, rhs, ratio }
    }

    #[inline]
    fn words(&self, epoch: u32) -> (u64, u64) {
        let k1 = u64::from(self.lhs.0) | (u64::from(self.rhs.0) << 32);
        let k2 = u64::from(self.ratio.0) | (self.op.code() << 32) | (u64::from(epoch & 0xff_ffff) << 40);
        (k1, k2)
    }
}

#[inline]
fn slot_of(k1: u64, k2: u64, mask: usize) -> usize {
    (mix64(k1 ^ mix64(k2)) as usize) & mask
}

/// Where cached results are shared.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CacheScope {
    /// No caching at all.
    None,
    /// One private cache per worker.
    Local,
    /// One cache shared by all workers.
    #[default]
    Global,
}

impl CacheScope {
    pub fn name(self) -> &'static str {
        match self {
            CacheScope::None => "none",
            CacheScope::Local => "local",
            CacheScope::Global => "global",
        }
    }
}

/// Cache scope and per-table capacity (entry counts, powers of two).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CacheConfig {
    pub scope: CacheScope,
    pub mul_entries: usize,
    pub add_entries: usize,
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig {
            scope: CacheScope::Global,
            mul_entries: 1 << 20,
            add_entries: 1 << 18,
        }
    }
}

impl CacheConfig {
    pub fn with_scope(scope: CacheScope) -> Self {
        CacheConfig {
            scope,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), crate::DdError> {
        if !self.mul_entries.is_power_of_two() || !self.add_entries.is_power_of_two() {
            return Err(crate::DdError::Config("cache sizes must be powers of two".into()));
        }
        Ok(())
    }
}

/// Lookup and hit counters for one operation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpStats {
    pub lookups: u64,
    pub hits: u64,
}

impl OpStats {
    pub fn hit_ratio(&self) -> f64 {
        if self.lookups == 0 {
            0.0
        } else {
            self.hits as f64 / self.lookups as f64
        }
    }
}

/// Counters per [`OpKind`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub per_op: [OpStats; 4],
}

impl CacheStats {
    pub fn op(&self, op: OpKind) -> OpStats {
        self.per_op[op as usize]
    }

    /// Combined matrix-vector and matrix-matrix multiplication counters.
    pub fn mul(&self) -> OpStats {
        let a = self.op(OpKind::MulMv);
        let b = self.op(OpKind::MulMm);
        OpStats {
            lookups: a.lookups + b.lookups,
            hits: a.hits + b.hits,
        }
    }

    pub fn add(&self) -> OpStats {
        self.op(OpKind::Add)
    }

    pub fn lookups(&self) -> u64 {
        self.per_op.iter().map(|s| s.lookups).sum()
    }

    pub fn hits(&self) -> u64 {
        self.per_op.iter().map(|s| s.hits).sum()
    }

    pub fn merge(&mut self, other: &CacheStats) {
        for (a, b) in self.per_op.iter_mut().zip(&other.per_op) {
            a.lookups += b.lookups;
            a.hits += b.hits;
        }
    }
}

struct SharedTable {
    // [version, k1, k2, value] per slot
    words: Box<[AtomicU64]>,
    mask: usize,
}

impl SharedTable {
    fn new(entries: usize) -> Self {
        SharedTable {
            words: zeroed_u64s(entries * 4),
            mask: entries - 1,
        }
    }

    #[inline]
    fn get(&self, k1: u64, k2: u64) -> Option<u64> {
        let base = slot_of(k1, k2, self.mask) * 4;
        let w = &self.words[base..base + 4];
        let v1 = w[0].load(Ordering::Acquire);
        if v1 & 1 == 1 {
            return None;
        }
        let a = w[1].load(Ordering::Relaxed);
        let b = w[2].load(Ordering::Relaxed);
        let val = w[3].load(Ordering::Relaxed);
        fence(Ordering::Acquire);
        if w[0].load(Ordering::Relaxed) != v1 {
            return None;
        }
        (a == k1 && b == k2).then_some(val)
    }

    #[inline]
    fn put(&self, k1: u64, k2: u64, val: u64) {
        let base = slot_of(k1, k2, self.mask) * 4;
        let w = &self.words[base..base + 4];
        let v = w[0].load(Ordering::Relaxed);
        if v & 1 == 1 {
            return;
        }
        if w[0]
            .compare_exchange(v, v.wrapping_add(1), Ordering::Acquire, Ordering::Relaxed)
            .is_err()
        {
            return;
        }
        fence(Ordering::Release);
        w[1].store(k1, Ordering::Relaxed);
        w[2].store(k2, Ordering::Relaxed);
        w[3].store(val, Ordering::Relaxed);
        w[0].store(v.wrapping_add(2), Ordering::Release);
    }
}

/// A cache shared by every worker of a run.
pub struct SharedCache {
    mul: SharedTable,
    add: SharedTable,
}

impl SharedCache {
    pub fn new(mul_entries: usize, add_entries: usize) -> Self {
        SharedCache {
            mul: SharedTable::new(mul_entries.max(1)),
            add: SharedTable::new(add_entries.max(1)),
        }
    }

    fn table(&self, op: OpKind) -> &SharedTable {
        if op.uses_add_table() {
            &self.add
        } else {
            &self.mul
        }
    }
}

struct LocalTable {
    // [k1, k2, value]; k2 of a used entry is never zero
    entries: Vec<[u64; 3]>,
    mask: usize,
}

impl LocalTable {
    fn new(entries: usize) -> Self {
        LocalTable {
            entries: vec![[0; 3]; entries.max(1)],
            mask: entries.max(1) - 1,
        }
    }
}

/// A worker-private cache.
pub struct LocalCache {
    mul: LocalTable,
    add: LocalTable,
}

impl LocalCache {
    pub fn new(mul_entries: usize, add_entries: usize) -> Self {
        LocalCache {
            mul: LocalTable::new(mul_entries),
            add: LocalTable::new(add_entries),
        }
    }

    fn table(&mut self, op: OpKind) -> &mut LocalTable {
        if op.uses_add_table() {
            &mut self.add
        } else {
            &mut self.mul
        }
    }
}

enum Backend {
    None,
    Local(Box<LocalCache>),
    Global(Arc<SharedCache>),
}

/// One worker's view of the operation cache, with its own counters.
pub struct OpCache {
    backend: Backend,
    stats: CacheStats,
    epoch: u32,
}

impl OpCache {
    pub fn none() -> Self {
        OpCache {
            backend: Backend::None,
            stats: CacheStats::default(),
            epoch: 0,
        }
    }

    pub fn local(mul_entries: usize, add_entries: usize) -> Self {
        OpCache {
            backend: Backend::Local(Box::new(LocalCache::new(mul_entries, add_entries))),
            stats: CacheStats::default(),
            epoch: 0,
        }
    }

    pub fn global(shared: Arc<SharedCache>) -> Self {
        OpCache {
            backend: Backend::Global(shared),
            stats: CacheStats::default(),
            epoch: 0,
        }
    }

    /// Builds the front end for `cfg`; `shared` is used for the global scope.
    pub fn for_config(cfg: &CacheConfig, shared: Option<&Arc<SharedCache>>) -> Self {
        match cfg.scope {
            CacheScope::None => Self::none(),
            CacheScope::Local => Self::local(cfg.mul_entries, cfg.add_entries),
            CacheScope::Global => match shared {
                Some(s) => Self::global(Arc::clone(s)),
                None => Self::global(Arc::new(SharedCache::new(cfg.mul_entries, cfg.add_entries))),
            },
        }
    }

    pub fn scope(&self) -> CacheScope {
        match self.backend {
            Backend::None => CacheScope::None,
            Backend::Local(_) => CacheScope::Local,
            Backend::Global(_) => CacheScope::Global,
        }
    }

    pub fn is_enabled(&self) -> bool {
        !matches!(self.backend, Backend::None)
    }

    /// Entries written under another epoch are treated as absent.
    pub fn set_epoch(&mut self, epoch: u32) {
        self.epoch = epoch;
    }

    /// Cached result for `k`, counting the lookup. Always a miss under `None`
    /// scope, without counting.
    #[inline]
    pub fn get(&mut self, k: &CacheKey) -> Option<Edge> {
        let (k1, k2) = k.words(self.epoch);
        let found = match &mut self.backend {
            Backend::None => return None,
            Backend::Local(c) => {
                let t = c.table(k.op);
                let e = &t.entries[slot_of(k1, k2, t.mask)];
                (e[0] == k1 && e[1] == k2).then_some(e[2])
            }
            Backend::Global(c) => c.table(k.op).get(k1, k2),
        };
        let s = &mut self.stats.per_op[k.op as usize];
        s.lookups += 1;
        if found.is_some() {
            s.hits += 1;
        }
        found.map(Edge::unpack)
    }

    /// Stores `v` under `k`, replacing whatever occupied the slot.
    #[inline]
    pub fn put(&mut self, k: &CacheKey, v: Edge) {
        let (k1, k2) = k.words(self.epoch);
        match &mut self.backend {
            Backend::None => {}
            Backend::Local(c) => {
                let t = c.table(k.op);
                let i = slot_of(k1, k2, t.mask);
                t.entries[i] = [k1, k2, v.pack()];
            }
            Backend::Global(c) => c.table(k.op).put(k1, k2, v.pack()),
        }
    }

    pub fn stats_snapshot(&self) -> CacheStats {
        self.stats
    }

    pub fn reset_stats(&mut self) {
        self.stats = CacheStats::default();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(op: OpKind, a: u32, b: u32) -> CacheKey {
        CacheKey::new(op, NodeId(a), NodeId(b), ComplexId::ONE)
    }

    fn val(n: u32) -> Edge {
        Edge::new(NodeId(n), ComplexId(n + 7))
    }

    #[test]
    fn empty_cache_misses() {
        for mut c in [OpCache::local(16, 16), OpCache::global(Arc::new(SharedCache::new(16, 16)))] {
            assert_eq!(c.get(&key(OpKind::MulMv, 0, 0)), None);
            assert_eq!(c.get(&key(OpKind::Add, 0, 0)), None);
        }
    }

    #[test]
    fn put_then_get() {
        for mut c in [OpCache::local(16, 16), OpCache::global(Arc::new(SharedCache::new(16, 16)))] {
            let k = key(OpKind::MulMm, 3, 4);
            c.put(&k, val(9));
            c.put(&k, val(9));
            assert_eq!(c.get(&k), Some(val(9)));
            assert_eq!(c.get(&key(OpKind::MulMv, 3, 4)), None);
            let s = c.stats_snapshot();
            assert_eq!(s.mul(), OpStats { lookups: 2, hits: 1 });
        }
    }

    #[test]
    fn stats_count_one_miss_one_hit() {
        let mut c = OpCache::local(16, 16);
        assert_eq!(c.stats_snapshot(), CacheStats::default());
        let k = key(OpKind::Add, 1, 2);
        assert!(c.get(&k).is_none());
        c.put(&k, val(1));
        assert!(c.get(&k).is_some());
        assert_eq!(c.stats_snapshot().add(), OpStats { lookups: 2, hits: 1 });
    }

    #[test]
    fn colliding_keys_evict() {
        // a single-slot table makes every key collide
        let mut c = OpCache::local(1, 1);
        let a = key(OpKind::MulMv, 1, 2);
        let b = key(OpKind::MulMv, 5, 6);
        c.put(&a, val(1));
        c.put(&b, val(2));
        assert_eq!(c.get(&a), None);
        assert_eq!(c.get(&b), Some(val(2)));
    }

    #[test]
    fn epoch_change_hides_entries() {
        let mut c = OpCache::global(Arc::new(SharedCache::new(16, 16)));
        let k = key(OpKind::MulMv, 1, 2);
        c.put(&k, val(1));
        c.set_epoch(1);
        assert_eq!(c.get(&k), None);
    }

    #[test]
    fn none_scope_is_inert() {
        let mut c = OpCache::none();
        let k = key(OpKind::MulMv, 1, 2);
        c.put(&k, val(1));
        assert_eq!(c.get(&k), None);
        assert_eq!(c.stats_snapshot().lookups(), 0);
    }

    #[test]
    fn shared_cache_never_returns_foreign_values() {
        // a few slots, many writers: every hit must carry the value derived from its key
        let shared = Arc::new(SharedCache::new(4, 4));
        let handles: Vec<_> = (0..16u32)
            .map(|w| {
                let shared = Arc::clone(&shared);
                std::thread::spawn(move || {
                    let mut c = OpCache::global(shared);
                    let mut hits = 0u64;
                    for i in 0..20_000u32 {
                        let a = (i.wrapping_mul(2_654_435_761) ^ w) % 61 + 1;
                        let k = key(OpKind::MulMm, a, a * 3);
                        match c.get(&k) {
                            Some(v) => {
                                assert_eq!(v, val(a * 5), "torn or foreign entry");
                                hits += 1;
                            }
                            None => c.put(&k, val(a * 5)),
                        }
                    }
                    hits
                })
            })
            .collect();
        let hits: u64 = handles.into_iter().map(|h| h.join().unwrap()).sum();
        assert!(hits > 0);
    }
}
