//! Hash-consing table for nodes.
//!
//! Buckets hold the head of a singly linked chain threaded through the nodes'
//! `next` fields. Lookups walk chains without locking. Inserts publish a new
//! head with a compare-and-swap; a thread that loses the race rescans only the
//! entries pushed since its snapshot and adopts an equal node if one appeared.

use std::sync::atomic::{AtomicU32, AtomicU64, AtomicUsize, Ordering};

use super::{NodeSlot, META_SIG, META_TABLE_SHIFT};
use crate::util::{mix64, zeroed_u32s, Arena, SlotPool, SlotReserve};

/// Which unique table(s) node construction goes through.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum TableScope {
    /// One table shared by every worker.
    #[default]
    Global,
    /// One table per worker; equal nodes built by different workers get
    /// different ids.
    PerWorker,
}

/// Snapshot of a table's occupancy.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TableStats {
    pub size: usize,
    pub buckets: usize,
    /// Entries that share a bucket with an earlier entry.
    pub collisions: usize,
    pub max_chain: usize,
    /// `chain_histogram[k]` counts buckets whose chain has length `k`; the
    /// last slot aggregates every longer chain.
    pub chain_histogram: Vec<usize>,
}

impl TableStats {
    pub(crate) fn merge(&mut self, other: &TableStats) {
        self.size += other.size;
        self.buckets += other.buckets;
        self.collisions += other.collisions;
        self.max_chain = self.max_chain.max(other.max_chain);
        if self.chain_histogram.len() < other.chain_histogram.len() {
            self.chain_histogram.resize(other.chain_histogram.len(), 0);
        }
        for (a, b) in self.chain_histogram.iter_mut().zip(&other.chain_histogram) {
            *a += b;
        }
    }
}

const HISTOGRAM_LEN: usize = 9;

pub(crate) struct UniqueTable {
    index: u32,
    buckets: Box<[AtomicU32]>,
    active_bits: AtomicUsize,
    max_bits: usize,
    size: AtomicU64,
}

#[inline]
fn signature_hash(sig: u32, edges: &[u64; 4]) -> u64 {
    let mut h = mix64(u64::from(sig) ^ 0x51_7cc1_b727_220a);
    for e in edges {
        h = mix64(h ^ e);
    }
    h
}

impl UniqueTable {
    pub(crate) fn new(index: usize, initial_bits: usize, max_bits: usize) -> Self {
        let max_bits = max_bits.max(initial_bits);
        UniqueTable {
            index: index as u32,
            buckets: zeroed_u32s(1 << max_bits),
            active_bits: AtomicUsize::new(initial_bits),
            max_bits,
            size: AtomicU64::new(0),
        }
    }

    pub(crate) fn index(&self) -> usize {
        self.index as usize
    }

    pub(crate) fn size(&self) -> u64 {
        self.size.load(Ordering::Relaxed)
    }

    #[inline]
    fn bucket(&self, h: u64) -> usize {
        let bits = self.active_bits.load(Ordering::Relaxed);
        (h & ((1u64 << bits) - 1)) as usize
    }

    #[inline]
    fn scan(&self, arena: &Arena<NodeSlot>, mut cur: u32, stop: u32, sig: u32, edges: &[u64; 4]) -> Option<u32> {
        while cur != 0 && cur != stop {
            let slot = arena.get(cur);
            if slot.meta.load(Ordering::Relaxed) & META_SIG == sig
                && slot.edges[0].load(Ordering::Relaxed) == edges[0]
                && slot.edges[1].load(Ordering::Relaxed) == edges[1]
                && slot.edges[2].load(Ordering::Relaxed) == edges[2]
                && slot.edges[3].load(Ordering::Relaxed) == edges[3]
            {
                return Some(cur);
            }
            cur = slot.next.load(Ordering::Acquire);
        }
        None
    }

    /// Returns the id of the node with this signature, inserting it if absent.
    /// `Err(())` means the node budget is exhausted. `sig` carries level, kind
    /// and the identity flag; unused edge slots must be zero.
    pub(crate) fn find_or_insert(
        &self,
        arena: &Arena<NodeSlot>,
        pool: &SlotPool,
        reserve: &mut SlotReserve,
        meta: u32,
        edges: &[u64; 4],
    ) -> Result<u32, ()> {
        let sig = meta & META_SIG;
        let b = self.bucket(signature_hash(sig, edges));
        let mut head = self.buckets[b].load(Ordering::Acquire);
        if let Some(found) = self.scan(arena, head, 0, sig, edges) {
            return Ok(found);
        }
        let id = pool.take(reserve, arena).ok_or(())?;
        let slot = arena.get(id);
        let own = meta & ((1 << META_TABLE_SHIFT) - 1);
        slot.meta.store(own | (self.index << META_TABLE_SHIFT), Ordering::Relaxed);
        for (dst, src) in slot.edges.iter().zip(edges) {
            dst.store(*src, Ordering::Relaxed);
        }
        loop {
            slot.next.store(head, Ordering::Relaxed);
            match self.buckets[b].compare_exchange(head, id, Ordering::AcqRel, Ordering::Acquire) {
                Ok(_) => {
                    self.size.fetch_add(1, Ordering::Relaxed);
                    return Ok(id);
                }
                Err(newer) => {
                    if let Some(found) = self.scan(arena, newer, head, sig, edges) {
                        reserve.give_back(id);
                        return Ok(found);
                    }
                    head = newer;
                }
            }
        }
    }

    /// Empties every chain. Exclusive access required.
    pub(crate) fn clear(&self, new_size_hint: usize) {
        let bits = self.active_bits.load(Ordering::Relaxed);
        for b in &self.buckets[..1 << bits] {
            b.store(0, Ordering::Relaxed);
        }
        let mut want = bits;
        while (1usize << want) < new_size_hint.saturating_mul(2) && want < self.max_bits {
            want += 1;
        }
        self.active_bits.store(want, Ordering::Relaxed);
        self.size.store(0, Ordering::Relaxed);
    }

    /// Pushes an already-stored node back into its chain. Exclusive access required.
    pub(crate) fn relink(&self, arena: &Arena<NodeSlot>, id: u32) {
        let slot = arena.get(id);
        let sig = slot.meta.load(Ordering::Relaxed) & META_SIG;
        let edges: [u64; 4] = std::array::from_fn(|k| slot.edges[k].load(Ordering::Relaxed));
        let b = self.bucket(signature_hash(sig, &edges));
        slot.next.store(self.buckets[b].load(Ordering::Relaxed), Ordering::Relaxed);
        self.buckets[b].store(id, Ordering::Relaxed);
        self.size.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn stats(&self, arena: &Arena<NodeSlot>) -> TableStats {
        let bits = self.active_bits.load(Ordering::Relaxed);
        let mut stats = TableStats {
            buckets: 1 << bits,
            chain_histogram: vec![0; HISTOGRAM_LEN],
            ..TableStats::default()
        };
        for b in &self.buckets[..1 << bits] {
            let mut len = 0usize;
            let mut cur = b.load(Ordering::Acquire);
            while cur != 0 {
                len += 1;
                cur = arena.get(cur).next.load(Ordering::Acquire);
            }
            stats.size += len;
            stats.collisions += len.saturating_sub(1);
            stats.max_chain = stats.max_chain.max(len);
            stats.chain_histogram[len.min(HISTOGRAM_LEN - 1)] += 1;
        }
        stats
    }
}
