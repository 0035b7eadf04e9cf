//! DD arithmetic: addition, multiplication, Kronecker product and dense
//! read-out.
//!
//! Kernels carry weights as plain complex numbers and intern only what must be
//! canonical: normalized child weights, addition ratios used as cache keys and
//! weights of cached results. Multiplication keys ignore operand weights, which
//! are multiplied back onto the result.

use std::sync::Arc;

use num_complex::Complex64;
use rustc_hash::FxHashMap;

use crate::cache::{CacheConfig, CacheKey, CacheScope, OpCache, OpKind};
use crate::cnum::{approx_zero, ComplexId};
use crate::dd::{Edge, Kind, NodeId, Package, UniqueTable};
use crate::dd::OpGuard;
use crate::error::DdError;
use crate::util::SlotReserve;

/// Default qubit cap for [`Package::reconstruct`].
pub const RECONSTRUCT_CAP: usize = 14;

/// An edge whose weight is not interned.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct REdge {
    pub(crate) node: u32,
    pub(crate) w: Complex64,
}

impl REdge {
    pub(crate) const ZERO: REdge = REdge {
        node: 0,
        w: Complex64::new(0.0, 0.0),
    };

    #[inline]
    pub(crate) fn unit(node: u32) -> REdge {
        REdge {
            node,
            w: Complex64::new(1.0, 0.0),
        }
    }

    #[inline]
    pub(crate) fn is_zero(self) -> bool {
        approx_zero(self.w)
    }

    #[inline]
    pub(crate) fn scaled(self, f: Complex64) -> REdge {
        let w = self.w * f;
        if approx_zero(w) {
            REdge::ZERO
        } else {
            REdge { node: self.node, w }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum MulKind {
    Mv,
    Mm,
}

impl MulKind {
    fn op(self) -> OpKind {
        match self {
            MulKind::Mv => OpKind::MulMv,
            MulKind::Mm => OpKind::MulMm,
        }
    }

    pub(crate) fn result_kind(self) -> Kind {
        match self {
            MulKind::Mv => Kind::Vector,
            MulKind::Mm => Kind::Matrix,
        }
    }

    pub(crate) fn units(self) -> usize {
        match self {
            MulKind::Mv => 2,
            MulKind::Mm => 4,
        }
    }
}

/// One output quadrant of a multiplication: `a[0]·b[0] + a[1]·b[1]`.
/// `known` holds products already found in the cache.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Unit {
    pub(crate) kind: MulKind,
    pub(crate) a: [REdge; 2],
    pub(crate) b: [REdge; 2],
    pub(crate) known: [Option<REdge>; 2],
}

/// Runs the quadrant units of one multiplication, possibly on other workers.
pub(crate) trait InnerFork: Send + Sync {
    fn run_units(&self, ctx: &mut OpContext, units: &[Unit], out: &mut [REdge]);
}

/// Per-worker state for DD operations: which unique table to build nodes in,
/// the cache front end and private slot reserves.
pub struct OpContext {
    pkg: Package,
    table: Arc<UniqueTable>,
    pub(crate) cache: OpCache,
    reserves: Option<(SlotReserve, SlotReserve)>,
    verify_hits: bool,
    verify_mismatches: u64,
    pub(crate) fork: Option<Arc<dyn InnerFork>>,
    pub(crate) spawn_threshold: usize,
    pub(crate) spawned: u64,
}

impl Drop for OpContext {
    fn drop(&mut self) {
        if let Some(r) = self.reserves.take() {
            self.pkg.return_reserves(r);
        }
    }
}

impl std::fmt::Debug for OpContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OpContext")
            .field("scope", &self.cache.scope())
            .field("table", &self.table.index())
            .finish()
    }
}

impl OpContext {
    /// A context on the global unique table with a cache for `cfg`. A global
    /// scope without an explicit shared cache uses the package's own.
    pub fn new(pkg: &Package, cfg: &CacheConfig) -> Self {
        let cache = match cfg.scope {
            CacheScope::Global => OpCache::global(pkg.default_cache()),
            _ => OpCache::for_config(cfg, None),
        };
        Self::with_parts(pkg, pkg.global_table(), cache)
    }

    pub(crate) fn with_parts(pkg: &Package, table: Arc<UniqueTable>, cache: OpCache) -> Self {
        let mut ctx = OpContext {
            pkg: pkg.clone(),
            table,
            cache,
            reserves: Some(pkg.take_reserves()),
            verify_hits: false,
            verify_mismatches: 0,
            fork: None,
            spawn_threshold: usize::MAX,
            spawned: 0,
        };
        ctx.refresh();
        ctx
    }

    pub fn package(&self) -> &Package {
        &self.pkg
    }

    /// Recompute every cache hit and count disagreements. Slow; for tests.
    pub fn set_verify_hits(&mut self, on: bool) {
        self.verify_hits = on;
    }

    pub fn verify_mismatches(&self) -> u64 {
        self.verify_mismatches
    }

    pub fn cache(&self) -> &OpCache {
        &self.cache
    }

    pub fn cache_mut(&mut self) -> &mut OpCache {
        &mut self.cache
    }

    /// Picks up a new epoch after a collection or an abort.
    #[inline]
    pub(crate) fn refresh(&mut self) {
        self.cache.set_epoch(self.pkg.epoch());
    }

    #[inline]
    pub(crate) fn value(&self, id: ComplexId) -> Complex64 {
        self.pkg.value(id)
    }

    #[inline]
    pub(crate) fn intern(&mut self, v: Complex64) -> Option<ComplexId> {
        let reserve = &mut self.reserves.get_or_insert_with(Default::default).1;
        let id = self.pkg.shared.complex.intern_with(v, reserve);
        if id.is_none() {
            self.pkg.set_abort(crate::dd::ABORT_OOM);
        }
        id
    }

    #[inline]
    pub(crate) fn redge(&self, e: Edge) -> REdge {
        REdge {
            node: e.node.0,
            w: self.value(e.weight),
        }
    }

    #[inline]
    pub(crate) fn child(&self, node: u32, k: usize) -> REdge {
        self.redge(self.pkg.child(node, k))
    }

    /// Interns `r` into an edge. Tiny weights become the zero edge.
    pub(crate) fn to_edge(&mut self, r: REdge) -> Edge {
        if r.is_zero() {
            return Edge::ZERO;
        }
        match self.intern(r.w) {
            Some(ComplexId::ZERO) | None => Edge::ZERO,
            Some(w) => Edge::new(NodeId(r.node), w),
        }
    }

    /// Normalizes `children` by the first nonzero weight and stores the node.
    pub(crate) fn make_node_r(&mut self, level: usize, kind: Kind, children: &[REdge]) -> REdge {
        let Some(first) = children.iter().position(|c| !c.is_zero()) else {
            return REdge::ZERO;
        };
        let norm = children[first].w;
        let mut edges = [Edge::ZERO; 4];
        for (k, c) in children.iter().enumerate() {
            if k == first {
                edges[k] = Edge::new(NodeId(c.node), ComplexId::ONE);
            } else if !c.is_zero() {
                match self.intern(c.w / norm) {
                    Some(ComplexId::ZERO) => {}
                    Some(w) => edges[k] = Edge::new(NodeId(c.node), w),
                    None => return REdge::ZERO,
                }
            }
        }
        let reserve = &mut self.reserves.get_or_insert_with(Default::default).0;
        match self.pkg.insert_node(&self.table, reserve, level, kind, &edges) {
            Ok(id) => REdge { node: id.0, w: norm },
            Err(()) => {
                self.pkg.set_abort(crate::dd::ABORT_OOM);
                REdge::ZERO
            }
        }
    }

    /// Caches `r` (computed for unit-weight operands) and returns the value
    /// every later hit will see.
    #[inline]
    fn finish(&mut self, key: &CacheKey, r: REdge) -> REdge {
        if !self.cache.is_enabled() || self.pkg.aborted() {
            return r;
        }
        let e = self.to_edge(r);
        self.cache.put(key, e);
        self.redge(e)
    }

    // ---- multiplication ----

    /// Result of `a·b` when no recursion is needed.
    #[inline]
    pub(crate) fn mul_shortcut(&self, kind: MulKind, a: REdge, b: REdge) -> Option<REdge> {
        if a.is_zero() || b.is_zero() {
            return Some(REdge::ZERO);
        }
        let w = a.w * b.w;
        if a.node == 0 {
            return Some(REdge { node: b.node, w });
        }
        if self.pkg.is_identity(a.node) {
            return Some(REdge { node: b.node, w });
        }
        if kind == MulKind::Mm && self.pkg.is_identity(b.node) {
            return Some(REdge { node: a.node, w });
        }
        None
    }

    #[inline]
    fn mul_key(kind: MulKind, a: u32, b: u32) -> CacheKey {
        CacheKey::new(kind.op(), NodeId(a), NodeId(b), ComplexId::ONE)
    }

    /// Cache probe for a product; counts as a lookup.
    #[inline]
    pub(crate) fn mul_probe(&mut self, kind: MulKind, a: REdge, b: REdge) -> Option<REdge> {
        if let Some(r) = self.mul_shortcut(kind, a, b) {
            return Some(r);
        }
        let hit = self.cache.get(&Self::mul_key(kind, a.node, b.node))?;
        Some(self.redge(hit).scaled(a.w * b.w))
    }

    pub(crate) fn mul(&mut self, kind: MulKind, a: REdge, b: REdge) -> REdge {
        if let Some(r) = self.mul_shortcut(kind, a, b) {
            return r;
        }
        self.mul_nodes(kind, a.node, b.node).scaled(a.w * b.w)
    }

    /// Units of the product of two unit-weight nodes.
    pub(crate) fn mul_units(&self, kind: MulKind, an: u32, bn: u32) -> ([Unit; 4], usize) {
        let a: [REdge; 4] = std::array::from_fn(|k| self.child(an, k));
        let empty = Unit {
            kind,
            a: [REdge::ZERO; 2],
            b: [REdge::ZERO; 2],
            known: [None; 2],
        };
        let mut units = [empty; 4];
        match kind {
            MulKind::Mv => {
                let b = [self.child(bn, 0), self.child(bn, 1)];
                for (i, u) in units.iter_mut().take(2).enumerate() {
                    u.a = [a[2 * i], a[2 * i + 1]];
                    u.b = b;
                }
            }
            MulKind::Mm => {
                let b: [REdge; 4] = std::array::from_fn(|k| self.child(bn, k));
                for (q, u) in units.iter_mut().enumerate() {
                    let (i, j) = (q >> 1, q & 1);
                    u.a = [a[2 * i], a[2 * i + 1]];
                    u.b = [b[j], b[2 + j]];
                }
            }
        }
        (units, kind.units())
    }

    /// `a[0]·b[0] + a[1]·b[1]`.
    pub(crate) fn run_unit(&mut self, u: &Unit) -> REdge {
        let x = match u.known[0] {
            Some(x) => x,
            None => self.mul(u.kind, u.a[0], u.b[0]),
        };
        let y = match u.known[1] {
            Some(y) => y,
            None => self.mul(u.kind, u.a[1], u.b[1]),
        };
        self.add_r(x, y)
    }

    /// Cached product of two unit-weight nodes; counts as a lookup.
    #[inline]
    pub(crate) fn mul_lookup(&mut self, kind: MulKind, an: u32, bn: u32) -> Option<REdge> {
        let hit = self.cache.get(&Self::mul_key(kind, an, bn))?;
        Some(self.redge(hit))
    }

    /// Stores the product of two unit-weight nodes computed elsewhere.
    #[inline]
    pub(crate) fn mul_finish(&mut self, kind: MulKind, an: u32, bn: u32, r: REdge) -> REdge {
        self.finish(&Self::mul_key(kind, an, bn), r)
    }

    /// Like [`mul_nodes`](Self::mul_nodes) after a lookup already missed.
    pub(crate) fn mul_nodes_missed(&mut self, kind: MulKind, an: u32, bn: u32) -> REdge {
        if self.pkg.aborted() {
            return REdge::ZERO;
        }
        let r = self.mul_compute(kind, an, bn);
        self.mul_finish(kind, an, bn, r)
    }

    /// Product of two unit-weight nodes at the same level.
    pub(crate) fn mul_nodes(&mut self, kind: MulKind, an: u32, bn: u32) -> REdge {
        if self.pkg.aborted() {
            return REdge::ZERO;
        }
        let key = Self::mul_key(kind, an, bn);
        if let Some(hit) = self.cache.get(&key) {
            let r = self.redge(hit);
            if self.verify_hits {
                let again = self.mul_compute(kind, an, bn);
                self.check_hit(hit, again);
            }
            return r;
        }
        let r = self.mul_compute(kind, an, bn);
        self.finish(&key, r)
    }

    fn mul_compute(&mut self, kind: MulKind, an: u32, bn: u32) -> REdge {
        let level = self.pkg.level(an);
        let (units, n) = self.mul_units(kind, an, bn);
        let mut out = [REdge::ZERO; 4];
        match self.fork.clone() {
            Some(fork) if level >= self.spawn_threshold => {
                self.spawned += n as u64;
                fork.run_units(self, &units[..n], &mut out[..n]);
            }
            _ => {
                for k in 0..n {
                    out[k] = self.run_unit(&units[k]);
                }
            }
        }
        self.make_node_r(level, kind.result_kind(), &out[..n])
    }

    fn check_hit(&mut self, cached: Edge, again: REdge) {
        let e = self.to_edge(again);
        if e != cached {
            self.verify_mismatches += 1;
        }
    }

    // ---- addition ----

    pub(crate) fn add_r(&mut self, a: REdge, b: REdge) -> REdge {
        if a.is_zero() {
            return if b.is_zero() { REdge::ZERO } else { b };
        }
        if b.is_zero() {
            return a;
        }
        if a.node == b.node {
            let w = a.w + b.w;
            return if approx_zero(w) { REdge::ZERO } else { REdge { node: a.node, w } };
        }
        if self.pkg.aborted() {
            return REdge::ZERO;
        }
        let (x, y) = if a.node < b.node { (a, b) } else { (b, a) };
        let ratio = y.w / x.w;
        let (ratio, key) = if self.cache.is_enabled() {
            let Some(rid) = self.intern(ratio) else {
                return REdge::ZERO;
            };
            if rid == ComplexId::ZERO {
                return x;
            }
            let key = CacheKey::new(OpKind::Add, NodeId(x.node), NodeId(y.node), rid);
            if let Some(hit) = self.cache.get(&key) {
                if self.verify_hits {
                    let again = self.add_compute(x.node, y.node, self.value(rid));
                    self.check_hit(hit, again);
                }
                return self.redge(hit).scaled(x.w);
            }
            (self.value(rid), Some(key))
        } else {
            (ratio, None)
        };
        let r = self.add_compute(x.node, y.node, ratio);
        let r = match key {
            Some(key) => self.finish(&key, r),
            None => r,
        };
        r.scaled(x.w)
    }

    /// `x + ratio·y` for unit-weight nodes `x`, `y` of equal level and kind.
    fn add_compute(&mut self, x: u32, y: u32, ratio: Complex64) -> REdge {
        let level = self.pkg.level(x);
        let kind = self.pkg.kind(x);
        let n = kind.arity();
        let mut out = [REdge::ZERO; 4];
        for (k, slot) in out.iter_mut().enumerate().take(n) {
            let cx = self.child(x, k);
            let cy = self.child(y, k);
            let cy = if cy.is_zero() { cy } else { cy.scaled(ratio) };
            *slot = self.add_r(cx, cy);
        }
        self.make_node_r(level, kind, &out[..n])
    }

    // ---- kronecker product ----

    fn kron_r(&mut self, hi: REdge, lo: REdge, lo_qubits: usize) -> REdge {
        if hi.is_zero() || lo.is_zero() {
            return REdge::ZERO;
        }
        let w = hi.w * lo.w;
        if hi.node == 0 {
            return REdge { node: lo.node, w };
        }
        if self.pkg.aborted() {
            return REdge::ZERO;
        }
        let key = CacheKey::new(OpKind::Kron, NodeId(hi.node), NodeId(lo.node), ComplexId::ONE);
        if let Some(hit) = self.cache.get(&key) {
            return self.redge(hit).scaled(w);
        }
        let level = self.pkg.level(hi.node) + lo_qubits;
        let kind = self.pkg.kind(hi.node);
        let n = kind.arity();
        let mut out = [REdge::ZERO; 4];
        for (k, slot) in out.iter_mut().enumerate().take(n) {
            let c = self.child(hi.node, k);
            *slot = self.kron_r(c, REdge::unit(lo.node), lo_qubits);
        }
        let r = self.make_node_r(level, kind, &out[..n]);
        self.finish(&key, r).scaled(w)
    }

    // ---- checked public entry points ----

    pub(crate) fn guarded<T>(&mut self, f: impl FnOnce(&mut Self) -> T) -> Result<T, DdError> {
        let _guard: OpGuard = self.pkg.enter();
        self.refresh();
        let out = f(self);
        if let Some(err) = self.pkg.abort_error() {
            self.pkg.clear_abort();
            self.pkg.bump_epoch();
            return Err(err);
        }
        Ok(out)
    }

    fn shape(&self, e: Edge) -> Option<(Kind, usize)> {
        if e.is_zero() || e.node.is_terminal() {
            None
        } else {
            Some((self.pkg.kind(e.node.0), self.pkg.level(e.node.0)))
        }
    }

    /// Stores a node built from `children`, extracting the common factor.
    pub fn make_node(&mut self, level: usize, kind: Kind, children: &[Edge]) -> Result<Edge, DdError> {
        if children.len() != kind.arity() {
            return Err(DdError::Structure(format!(
                "{kind:?} node needs {} children, got {}",
                kind.arity(),
                children.len()
            )));
        }
        for c in children {
            if c.is_zero() {
                if !c.node.is_terminal() {
                    return Err(DdError::Structure("zero-weight edge to a non-terminal node".into()));
                }
                continue;
            }
            match self.shape(*c) {
                None if level == 0 => {}
                None => {
                    return Err(DdError::Structure(format!(
                        "terminal child under a node at level {level}"
                    )))
                }
                Some((k, l)) if k == kind && l + 1 == level => {}
                Some((k, l)) => {
                    return Err(DdError::Structure(format!(
                        "child {k:?} at level {l} under {kind:?} at level {level}"
                    )))
                }
            }
        }
        let raw: Vec<REdge> = children.iter().map(|c| self.redge(*c)).collect();
        self.guarded(|ctx| {
            let r = ctx.make_node_r(level, kind, &raw);
            ctx.to_edge(r)
        })
    }

    pub fn add(&mut self, a: Edge, b: Edge) -> Result<Edge, DdError> {
        if let (Some(x), Some(y)) = (self.shape(a), self.shape(b)) {
            if x != y {
                return Err(DdError::Structure(format!("cannot add {x:?} and {y:?}")));
            }
        } else if !(a.is_zero() || b.is_zero()) && a.node.is_terminal() != b.node.is_terminal() {
            return Err(DdError::Structure("cannot add a scalar to a diagram".into()));
        }
        let (ra, rb) = (self.redge(a), self.redge(b));
        self.guarded(|ctx| {
            let r = ctx.add_r(ra, rb);
            ctx.to_edge(r)
        })
    }

    fn mul_checked(&mut self, kind: MulKind, a: Edge, b: Edge) -> Result<Edge, DdError> {
        let want_b = kind.result_kind();
        match (self.shape(a), self.shape(b)) {
            (Some((ka, la)), Some((kb, lb))) => {
                if ka != Kind::Matrix || kb != want_b {
                    return Err(DdError::Structure(format!("cannot multiply {ka:?} by {kb:?}")));
                }
                if la != lb {
                    return Err(DdError::Structure(format!(
                        "operands span {} and {} qubits",
                        la + 1,
                        lb + 1
                    )));
                }
            }
            (Some((ka, _)), None) if ka != Kind::Matrix => {
                return Err(DdError::Structure("left operand must be a matrix".into()))
            }
            (Some(_), None) | (None, Some(_)) if !(a.is_zero() || b.is_zero()) => {
                return Err(DdError::Structure("operands span different qubit counts".into()))
            }
            _ => {}
        }
        let (ra, rb) = (self.redge(a), self.redge(b));
        self.guarded(|ctx| {
            let r = ctx.mul(kind, ra, rb);
            ctx.to_edge(r)
        })
    }

    pub fn mul_mv(&mut self, m: Edge, v: Edge) -> Result<Edge, DdError> {
        self.mul_checked(MulKind::Mv, m, v)
    }

    pub fn mul_mm(&mut self, a: Edge, b: Edge) -> Result<Edge, DdError> {
        self.mul_checked(MulKind::Mm, a, b)
    }

    /// `hi ⊗ lo`: the qubits of `hi` end up above those of `lo`.
    pub fn kron(&mut self, hi: Edge, lo: Edge) -> Result<Edge, DdError> {
        if let (Some((kh, _)), Some((kl, _))) = (self.shape(hi), self.shape(lo)) {
            if kh != kl {
                return Err(DdError::Structure(format!("cannot kron {kh:?} with {kl:?}")));
            }
        }
        let lo_qubits = self.pkg.qubits(lo);
        let (rh, rl) = (self.redge(hi), self.redge(lo));
        self.guarded(|ctx| {
            let r = ctx.kron_r(rh, rl, lo_qubits);
            ctx.to_edge(r)
        })
    }
}

/// Dense read-out of a diagram.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub n: usize,
    pub kind: Kind,
    /// Vector entries, or matrix entries in row-major order.
    pub data: Vec<Complex64>,
}

impl Dense {
    pub fn dim(&self) -> usize {
        1 << self.n
    }

    /// Matrix entry; panics for vectors.
    pub fn at(&self, row: usize, col: usize) -> Complex64 {
        assert_eq!(self.kind, Kind::Matrix);
        self.data[row * self.dim() + col]
    }

    /// Largest componentwise distance to `other`.
    pub fn max_diff(&self, other: &[Complex64]) -> f64 {
        self.data
            .iter()
            .zip(other)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

impl Package {
    /// Context on the global table with the package's default cache.
    pub fn context(&self) -> OpContext {
        OpContext::new(self, &self.shared.config.cache)
    }

    pub fn make_node(&self, level: usize, kind: Kind, children: &[Edge]) -> Result<Edge, DdError> {
        self.context().make_node(level, kind, children)
    }

    pub fn add(&self, a: Edge, b: Edge) -> Result<Edge, DdError> {
        self.context().add(a, b)
    }

    pub fn mul_mv(&self, m: Edge, v: Edge) -> Result<Edge, DdError> {
        self.context().mul_mv(m, v)
    }

    pub fn mul_mm(&self, a: Edge, b: Edge) -> Result<Edge, DdError> {
        self.context().mul_mm(a, b)
    }

    pub fn kron(&self, hi: Edge, lo: Edge) -> Result<Edge, DdError> {
        self.context().kron(hi, lo)
    }

    /// Basis state `|bits⟩` on `n` qubits.
    pub fn vector_dd_from_basis(&self, n: usize, bits: u64) -> Result<Edge, DdError> {
        if n >= 64 || bits >> n != 0 {
            return Err(DdError::BasisOutOfRange { n, bits });
        }
        let mut ctx = self.context();
        ctx.guarded(|ctx| {
            let mut e = REdge::unit(0);
            for level in 0..n {
                let children = if (bits >> level) & 1 == 0 { [e, REdge::ZERO] } else { [REdge::ZERO, e] };
                e = ctx.make_node_r(level, Kind::Vector, &children);
            }
            ctx.to_edge(e)
        })
    }

    fn check_span(&self, e: Edge, n: usize) -> Result<(), DdError> {
        if !e.is_zero() && self.qubits(e) != n {
            return Err(DdError::Structure(format!(
                "diagram spans {} qubits, expected {n}",
                self.qubits(e)
            )));
        }
        Ok(())
    }

    /// Dense vector or matrix of `e` over `n` qubits, up to [`RECONSTRUCT_CAP`].
    pub fn reconstruct(&self, e: Edge, n: usize, kind: Kind) -> Result<Dense, DdError> {
        self.reconstruct_with_cap(e, n, kind, RECONSTRUCT_CAP)
    }

    pub fn reconstruct_with_cap(&self, e: Edge, n: usize, kind: Kind, cap: usize) -> Result<Dense, DdError> {
        if n > cap {
            return Err(DdError::CapExceeded { n, cap });
        }
        self.check_span(e, n)?;
        if !e.is_zero() && !e.node.is_terminal() && self.kind(e.node.0) != kind {
            return Err(DdError::Structure(format!("expected a {kind:?} diagram")));
        }
        let dim = 1usize << n;
        let len = if kind == Kind::Matrix { dim * dim } else { dim };
        let mut data = vec![Complex64::new(0.0, 0.0); len];
        if !e.is_zero() {
            self.fill(e.node.0, self.value(e.weight), 0, 0, dim, &mut data);
        }
        Ok(Dense { n, kind, data })
    }

    fn fill(&self, node: u32, w: Complex64, row: usize, col: usize, dim: usize, out: &mut [Complex64]) {
        if node == 0 {
            out[row * dim + col] = w;
            return;
        }
        let level = self.level(node);
        let kind = self.kind(node);
        for k in 0..kind.arity() {
            let c = self.child(node, k);
            if c.is_zero() {
                continue;
            }
            let cw = w * self.value(c.weight);
            match kind {
                // vectors are laid out as a single row
                Kind::Vector => self.fill(c.node.0, cw, 0, col | (k << level), dim, out),
                Kind::Matrix => self.fill(
                    c.node.0,
                    cw,
                    row | ((k >> 1) << level),
                    col | ((k & 1) << level),
                    dim,
                    out,
                ),
            }
        }
    }

    /// Amplitude of basis state `bits` in an `n`-qubit vector.
    pub fn amplitude(&self, e: Edge, n: usize, bits: u64) -> Result<Complex64, DdError> {
        if n >= 64 || bits >> n != 0 {
            return Err(DdError::BasisOutOfRange { n, bits });
        }
        self.check_span(e, n)?;
        let mut w = self.value(e.weight);
        let mut node = e.node.0;
        while node != 0 && w != Complex64::new(0.0, 0.0) {
            let level = self.level(node);
            let c = self.child(node, ((bits >> level) & 1) as usize);
            w *= self.value(c.weight);
            node = c.node.0;
        }
        Ok(w)
    }

    /// Squared 2-norm (Frobenius norm for matrices).
    pub fn norm2(&self, e: Edge) -> f64 {
        let mut memo = FxHashMap::default();
        self.value(e.weight).norm_sqr() * self.node_norm2(e.node.0, &mut memo)
    }

    fn node_norm2(&self, node: u32, memo: &mut FxHashMap<u32, f64>) -> f64 {
        if node == 0 {
            return 1.0;
        }
        if let Some(&v) = memo.get(&node) {
            return v;
        }
        let mut s = 0.0;
        for k in 0..self.kind(node).arity() {
            let c = self.child(node, k);
            if !c.is_zero() {
                s += self.value(c.weight).norm_sqr() * self.node_norm2(c.node.0, memo);
            }
        }
        memo.insert(node, s);
        s
    }

    /// Number of distinct nodes reachable from `e`.
    pub fn size(&self, e: Edge) -> usize {
        let mut n = 0;
        self.walk(&[e], |_, _| n += 1);
        n
    }
}
