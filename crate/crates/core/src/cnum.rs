//! Interned complex numbers.
//!
//! Every edge weight is stored once in a [`ComplexTable`] and referred to by a
//! [`ComplexId`]. Values closer than [`TOLERANCE`] in both components share an
//! id, which is what lets node signatures and cache keys compare weights by
//! identifier.
//!
//! Lookup hashes the value's cell on a grid much coarser than the tolerance and
//! probes the neighbouring cells only when the tolerance window crosses a cell
//! border. Inserts publish a new chain head with a compare-and-swap; a loser
//! rescans the entries that beat it before retrying, so two concurrent interns
//! of the same value always return the same id. Near-equal values that land in
//! different cells can race into two representatives; which one wins depends on
//! timing.

use std::sync::atomic::{AtomicU32, AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;

use num_complex::Complex64;

use crate::error::DdError;
use crate::util::{mix64, zeroed_u32s, Arena, BitSet, SlotPool, SlotReserve};

/// A complex amplitude.
pub type ComplexValue = Complex64;

/// Per-component interning tolerance.
pub const TOLERANCE: f64 = 1e-12;

/// Cells are `2^-24` wide, far wider than the tolerance, so nearly every lookup
/// touches a single bucket.
const CELL_SCALE: f64 = (1u64 << 24) as f64;

/// Identifier of an interned complex value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct ComplexId(pub(crate) u32);

impl ComplexId {
    pub const ZERO: ComplexId = ComplexId(0);
    pub const ONE: ComplexId = ComplexId(1);

    pub fn index(self) -> u32 {
        self.0
    }
}

/// True when `v` interns to [`ComplexId::ZERO`].
#[inline]
pub fn approx_zero(v: Complex64) -> bool {
    v.re.abs() < TOLERANCE && v.im.abs() < TOLERANCE
}

#[inline]
fn approx_one(v: Complex64) -> bool {
    (v.re - 1.0).abs() < TOLERANCE && v.im.abs() < TOLERANCE
}

#[inline]
fn within(a: Complex64, b: Complex64) -> bool {
    (a.re - b.re).abs() < TOLERANCE && (a.im - b.im).abs() < TOLERANCE
}

#[inline]
fn cell(x: f64) -> i64 {
    (x * CELL_SCALE).floor() as i64
}

#[inline]
fn cell_hash(cr: i64, ci: i64) -> u64 {
    mix64((cr as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (ci as u64).rotate_left(29))
}

#[derive(Default)]
pub(crate) struct ComplexSlot {
    re: AtomicU64,
    im: AtomicU64,
    next: AtomicU32,
}

/// Concurrent interning table. Ids `0` and `1` are reserved for zero and one.
pub struct ComplexTable {
    arena: Arena<ComplexSlot>,
    slots: SlotPool,
    buckets: Box<[AtomicU32]>,
    active_bits: AtomicUsize,
    max_bits: usize,
    shared_reserve: Mutex<SlotReserve>,
}

impl Default for ComplexTable {
    fn default() -> Self {
        Self::new()
    }
}

impl std::fmt::Debug for ComplexTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ComplexTable").field("len", &self.len()).finish()
    }
}

impl ComplexTable {
    pub fn new() -> Self {
        Self::with_buckets(16, 25, u64::from(u32::MAX))
    }

    /// `initial_bits`/`max_bits` bound the bucket array (it only grows during
    /// [`sweep`](Self::sweep)); `limit` caps the number of stored values.
    pub(crate) fn with_buckets(initial_bits: usize, max_bits: usize, limit: u64) -> Self {
        let max_bits = max_bits.max(initial_bits);
        let table = ComplexTable {
            arena: Arena::new(),
            slots: SlotPool::new(2, limit),
            buckets: zeroed_u32s(1 << max_bits),
            active_bits: AtomicUsize::new(initial_bits),
            max_bits,
            shared_reserve: Mutex::new(SlotReserve::default()),
        };
        table.arena.ensure(0);
        let zero = table.arena.get(0);
        zero.re.store(0f64.to_bits(), Ordering::Relaxed);
        zero.im.store(0f64.to_bits(), Ordering::Relaxed);
        let one = table.arena.get(1);
        one.re.store(1f64.to_bits(), Ordering::Relaxed);
        one.im.store(0f64.to_bits(), Ordering::Relaxed);
        // ONE lives in a chain so near-one values find it; ZERO is matched by
        // the fast path alone.
        let b = table.bucket_of(cell(1.0), cell(0.0));
        table.buckets[b].store(1, Ordering::Release);
        table
    }

    #[inline]
    fn bucket_of(&self, cr: i64, ci: i64) -> usize {
        let bits = self.active_bits.load(Ordering::Relaxed);
        (cell_hash(cr, ci) & ((1u64 << bits) - 1)) as usize
    }

    /// Stored value of `id`.
    #[inline]
    pub fn value(&self, id: ComplexId) -> Complex64 {
        match id.0 {
            0 => Complex64::new(0.0, 0.0),
            1 => Complex64::new(1.0, 0.0),
            i => {
                let s = self.arena.get(i);
                Complex64::new(
                    f64::from_bits(s.re.load(Ordering::Relaxed)),
                    f64::from_bits(s.im.load(Ordering::Relaxed)),
                )
            }
        }
    }

    /// Canonical id for `v`.
    pub fn intern(&self, v: ComplexValue) -> Result<ComplexId, DdError> {
        if !v.re.is_finite() || !v.im.is_finite() {
            return Err(DdError::NonFinite { re: v.re, im: v.im });
        }
        let mut reserve = self.shared_reserve.lock().unwrap();
        self.intern_with(v, &mut reserve).ok_or(DdError::OutOfMemory {
            what: "complex table",
        })
    }

    /// Id of the complex product.
    pub fn cmul(&self, a: ComplexId, b: ComplexId) -> Result<ComplexId, DdError> {
        match (a, b) {
            (ComplexId::ZERO, _) | (_, ComplexId::ZERO) => Ok(ComplexId::ZERO),
            (ComplexId::ONE, x) | (x, ComplexId::ONE) => Ok(x),
            _ => self.intern(self.value(a) * self.value(b)),
        }
    }

    /// Id of the complex sum.
    pub fn cadd(&self, a: ComplexId, b: ComplexId) -> Result<ComplexId, DdError> {
        match (a, b) {
            (ComplexId::ZERO, x) | (x, ComplexId::ZERO) => Ok(x),
            _ => self.intern(self.value(a) + self.value(b)),
        }
    }

    /// Number of stored values, including the two reserved ones.
    pub fn len(&self) -> usize {
        self.slots.in_use() + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    fn scan(&self, mut cur: u32, stop: u32, v: Complex64) -> Option<u32> {
        while cur != 0 && cur != stop {
            if within(self.value(ComplexId(cur)), v) {
                return Some(cur);
            }
            cur = self.arena.get(cur).next.load(Ordering::Acquire);
        }
        None
    }

    /// Lookup-or-insert for finite `v`. `None` only when the table is full.
    pub(crate) fn intern_with(&self, v: Complex64, reserve: &mut SlotReserve) -> Option<ComplexId> {
        debug_assert!(v.re.is_finite() && v.im.is_finite(), "non-finite weight {v}");
        if approx_zero(v) {
            return Some(ComplexId::ZERO);
        }
        if approx_one(v) {
            return Some(ComplexId::ONE);
        }
        let (cr, ci) = (cell(v.re), cell(v.im));
        let own = self.bucket_of(cr, ci);
        let mut head = self.buckets[own].load(Ordering::Acquire);
        if let Some(hit) = self.scan(head, 0, v) {
            return Some(ComplexId(hit));
        }
        let (rlo, rhi) = (cell(v.re - TOLERANCE), cell(v.re + TOLERANCE));
        let (ilo, ihi) = (cell(v.im - TOLERANCE), cell(v.im + TOLERANCE));
        if rlo != rhi || ilo != ihi {
            for r in [rlo, rhi] {
                for i in [ilo, ihi] {
                    let b = self.bucket_of(r, i);
                    if b == own {
                        continue;
                    }
                    let h = self.buckets[b].load(Ordering::Acquire);
                    if let Some(hit) = self.scan(h, 0, v) {
                        return Some(ComplexId(hit));
                    }
                }
            }
        }
        let id = self.slots.take(reserve, &self.arena)?;
        let slot = self.arena.get(id);
        slot.re.store(v.re.to_bits(), Ordering::Relaxed);
        slot.im.store(v.im.to_bits(), Ordering::Relaxed);
        loop {
            slot.next.store(head, Ordering::Relaxed);
            match self.buckets[own].compare_exchange(head, id, Ordering::AcqRel, Ordering::Acquire) {
                Ok(_) => return Some(ComplexId(id)),
                Err(newer) => {
                    if let Some(hit) = self.scan(newer, head, v) {
                        reserve.give_back(id);
                        return Some(ComplexId(hit));
                    }
                    head = newer;
                }
            }
        }
    }

    pub(crate) fn high_water(&self) -> u32 {
        self.slots.high_water()
    }

    pub(crate) fn allocated_since_sweep(&self) -> u64 {
        self.slots.allocated_since_sweep()
    }

    /// Drops every value not in `live` and recycles its slot. Ids 0 and 1 are
    /// always kept. Requires exclusive access to the table.
    pub(crate) fn sweep(&self, live: &BitSet) {
        let high = self.slots.high_water();
        let mut kept = 0usize;
        let bits = self.active_bits.load(Ordering::Relaxed);
        for b in 0..(1usize << bits) {
            let mut cur = self.buckets[b].load(Ordering::Relaxed);
            let mut prev: Option<u32> = None;
            while cur != 0 {
                let next = self.arena.get(cur).next.load(Ordering::Relaxed);
                if cur == 1 || live.contains(cur) {
                    match prev {
                        None => self.buckets[b].store(cur, Ordering::Relaxed),
                        Some(p) => self.arena.get(p).next.store(cur, Ordering::Relaxed),
                    }
                    prev = Some(cur);
                    kept += 1;
                } else if prev.is_none() {
                    self.buckets[b].store(next, Ordering::Relaxed);
                }
                cur = next;
            }
            if let Some(p) = prev {
                self.arena.get(p).next.store(0, Ordering::Relaxed);
            } else {
                self.buckets[b].store(0, Ordering::Relaxed);
            }
        }
        let mut free = Vec::new();
        for id in (self.slots.first()..high).rev() {
            if !live.contains(id) {
                free.push(id);
            }
        }
        self.slots.reset_free(free);
        if kept > (2usize << bits) && bits < self.max_bits {
            let mut new_bits = bits;
            while kept > (2usize << new_bits) && new_bits < self.max_bits {
                new_bits += 1;
            }
            self.rehash(bits, new_bits);
        }
        *self.shared_reserve.lock().unwrap() = SlotReserve::default();
    }

    fn rehash(&self, old_bits: usize, new_bits: usize) {
        let mut ids = Vec::new();
        for b in 0..(1usize << old_bits) {
            let mut cur = self.buckets[b].swap(0, Ordering::Relaxed);
            while cur != 0 {
                ids.push(cur);
                cur = self.arena.get(cur).next.load(Ordering::Relaxed);
            }
        }
        self.active_bits.store(new_bits, Ordering::Relaxed);
        for id in ids {
            let v = self.value(ComplexId(id));
            let b = self.bucket_of(cell(v.re), cell(v.im));
            let head = self.buckets[b].load(Ordering::Relaxed);
            self.arena.get(id).next.store(head, Ordering::Relaxed);
            self.buckets[b].store(id, Ordering::Relaxed);
        }
    }
}
