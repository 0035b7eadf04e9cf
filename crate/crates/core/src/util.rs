//! Low-level storage shared by the complex table and the unique tables.
//!
//! Slots live in an append-only arena of geometrically growing chunks, so a
//! slot's address never moves and reads need no lock. Slot ids are handed out
//! by a [`SlotPool`] in batches that each worker keeps in a [`SlotReserve`].

use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::sync::{Mutex, OnceLock};

const BASE_BITS: u32 = 12;
const MAX_CHUNKS: usize = 21;

/// Append-only storage indexed by `u32`. Chunk `c` holds `2^(BASE_BITS + c)`
/// slots, so capacity doubles with every chunk.
pub(crate) struct Arena<T> {
    chunks: Box<[OnceLock<Box<[T]>>]>,
}

impl<T: Default> Arena<T> {
    pub(crate) fn new() -> Self {
        Arena {
            chunks: (0..MAX_CHUNKS).map(|_| OnceLock::new()).collect(),
        }
    }

    #[inline]
    fn locate(idx: u32) -> (usize, usize) {
        let i = (u64::from(idx) >> BASE_BITS) + 1;
        let c = 63 - i.leading_zeros();
        let start = ((1u64 << c) - 1) << BASE_BITS;
        (c as usize, (u64::from(idx) - start) as usize)
    }

    #[inline]
    pub(crate) fn get(&self, idx: u32) -> &T {
        let (c, o) = Self::locate(idx);
        match self.chunks[c].get() {
            Some(chunk) => &chunk[o],
            None => panic!("slot {idx} was never allocated"),
        }
    }

    pub(crate) fn ensure(&self, idx: u32) {
        let (c, _) = Self::locate(idx);
        self.chunks[c].get_or_init(|| {
            let len = 1usize << (BASE_BITS as usize + c);
            (0..len).map(|_| T::default()).collect()
        });
    }
}

/// A worker's private stash of pre-claimed slot ids.
#[derive(Debug, Default)]
pub(crate) struct SlotReserve {
    ids: Vec<u32>,
    generation: u32,
}

impl SlotReserve {
    /// Hands back an id that was taken but never published.
    pub(crate) fn give_back(&mut self, id: u32) {
        self.ids.push(id);
    }
}

/// Hands out slot ids: recycled ids from the last sweep first, then fresh ids
/// from a bump counter. The generation changes on every sweep and invalidates
/// outstanding reserves, whose ids are then owned by the free list again.
pub(crate) struct SlotPool {
    first: u32,
    bump: AtomicU64,
    free: Mutex<Vec<u32>>,
    limit: u64,
    generation: AtomicU32,
    since_sweep: AtomicU64,
}

pub(crate) const RESERVE_BATCH: usize = 256;

impl SlotPool {
    pub(crate) fn new(first: u32, limit: u64) -> Self {
        SlotPool {
            first,
            bump: AtomicU64::new(u64::from(first)),
            free: Mutex::new(Vec::new()),
            limit: limit.min(u64::from(u32::MAX)),
            generation: AtomicU32::new(0),
            since_sweep: AtomicU64::new(0),
        }
    }

    /// Takes one id, refilling the reserve when it runs dry. `None` means the
    /// slot budget is exhausted.
    #[inline]
    pub(crate) fn take<T: Default>(&self, reserve: &mut SlotReserve, arena: &Arena<T>) -> Option<u32> {
        let generation = self.generation.load(Ordering::Relaxed);
        if reserve.generation != generation {
            reserve.ids.clear();
            reserve.generation = generation;
        }
        if let Some(id) = reserve.ids.pop() {
            return Some(id);
        }
        self.refill(reserve, arena)?;
        reserve.ids.pop()
    }

    #[cold]
    fn refill<T: Default>(&self, reserve: &mut SlotReserve, arena: &Arena<T>) -> Option<()> {
        {
            let mut free = self.free.lock().unwrap();
            if !free.is_empty() {
                let k = free.len().min(RESERVE_BATCH);
                let start = free.len() - k;
                reserve.ids.extend(free.drain(start..));
                self.since_sweep.fetch_add(k as u64, Ordering::Relaxed);
                return Some(());
            }
        }
        let start = self.bump.fetch_add(RESERVE_BATCH as u64, Ordering::Relaxed);
        let end = start + RESERVE_BATCH as u64;
        if end > self.limit {
            return None;
        }
        arena.ensure(start as u32);
        arena.ensure((end - 1) as u32);
        reserve.ids.extend((start as u32..end as u32).rev());
        self.since_sweep.fetch_add(RESERVE_BATCH as u64, Ordering::Relaxed);
        Some(())
    }

    /// One past the highest id ever handed out.
    pub(crate) fn high_water(&self) -> u32 {
        self.bump.load(Ordering::Relaxed).min(self.limit) as u32
    }

    pub(crate) fn first(&self) -> u32 {
        self.first
    }

    /// Ids currently owned by the tables or by some reserve.
    pub(crate) fn in_use(&self) -> usize {
        let free = self.free.lock().unwrap().len();
        (self.high_water() - self.first) as usize - free
    }

    pub(crate) fn allocated_since_sweep(&self) -> u64 {
        self.since_sweep.load(Ordering::Relaxed)
    }

    /// Replaces the free list after a sweep. Callers must hold exclusive access.
    pub(crate) fn reset_free(&self, free: Vec<u32>) {
        *self.free.lock().unwrap() = free;
        self.generation.fetch_add(1, Ordering::Relaxed);
        self.since_sweep.store(0, Ordering::Relaxed);
    }
}

/// Dense bitset used for mark phases.
pub(crate) struct BitSet {
    words: Vec<u64>,
}

impl BitSet {
    pub(crate) fn new(len: usize) -> Self {
        BitSet {
            words: vec![0; len.div_ceil(64)],
        }
    }

    /// Sets the bit and reports whether it was clear before.
    #[inline]
    pub(crate) fn insert(&mut self, i: u32) -> bool {
        let (w, b) = ((i / 64) as usize, i % 64);
        let fresh = self.words[w] & (1 << b) == 0;
        self.words[w] |= 1 << b;
        fresh
    }

    #[inline]
    pub(crate) fn contains(&self, i: u32) -> bool {
        let (w, b) = ((i / 64) as usize, i % 64);
        self.words.get(w).is_some_and(|x| x & (1 << b) != 0)
    }
}

/// Allocates `n` zeroed atomics without touching the pages, so large tables
/// cost nothing until they are used.
pub(crate) fn zeroed_u32s(n: usize) -> Box<[AtomicU32]> {
    let v = vec![0u32; n].into_boxed_slice();
    let len = v.len();
    let ptr = Box::into_raw(v) as *mut AtomicU32;
    // SAFETY: AtomicU32 has the same size, alignment and bit validity as u32,
    // and the allocation was made with u32's layout.
    unsafe { Box::from_raw(std::ptr::slice_from_raw_parts_mut(ptr, len)) }
}

pub(crate) fn zeroed_u64s(n: usize) -> Box<[AtomicU64]> {
    assert_eq!(std::mem::align_of::<u64>(), std::mem::align_of::<AtomicU64>());
    let v = vec![0u64; n].into_boxed_slice();
    let len = v.len();
    let ptr = Box::into_raw(v) as *mut AtomicU64;
    // SAFETY: alignment checked above; size and bit validity match u64.
    unsafe { Box::from_raw(std::ptr::slice_from_raw_parts_mut(ptr, len)) }
}

/// 64-bit finalizer (splitmix64).
#[inline]
pub(crate) fn mix64(mut x: u64) -> u64 {
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}
