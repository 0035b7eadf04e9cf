//! QMDD nodes, edges and the package that owns them.

mod package;
mod table;

pub use package::{GcReport, Package, PackageConfig};
pub use table::{TableScope, TableStats};

pub(crate) use package::{NodeSlot, OpGuard, ABORT_OOM, ABORT_TIMEOUT};
pub(crate) use table::UniqueTable;

use crate::cnum::ComplexId;

/// Identifier of a stored node. `TERMINAL` is the single terminal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct NodeId(pub(crate) u32);

impl NodeId {
    pub const TERMINAL: NodeId = NodeId(0);

    pub fn index(self) -> u32 {
        self.0
    }

    pub fn is_terminal(self) -> bool {
        self.0 == 0
    }
}

/// Node flavour: vectors have two children, matrices four (row-major quadrants).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Kind {
    Vector,
    Matrix,
}

impl Kind {
    pub fn arity(self) -> usize {
        match self {
            Kind::Vector => 2,
            Kind::Matrix => 4,
        }
    }
}

/// A weighted pointer to a node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct Edge {
    pub node: NodeId,
    pub weight: ComplexId,
}

impl Edge {
    /// The canonical zero edge.
    pub const ZERO: Edge = Edge {
        node: NodeId::TERMINAL,
        weight: ComplexId::ZERO,
    };
    /// Terminal with weight one, the 0-qubit scalar 1.
    pub const ONE: Edge = Edge {
        node: NodeId::TERMINAL,
        weight: ComplexId::ONE,
    };

    pub fn new(node: NodeId, weight: ComplexId) -> Self {
        Edge { node, weight }
    }

    pub fn is_zero(self) -> bool {
        self.weight == ComplexId::ZERO
    }

    pub fn is_terminal(self) -> bool {
        self.node.is_terminal()
    }

    #[inline]
    pub(crate) fn pack(self) -> u64 {
        u64::from(self.node.0) | (u64::from(self.weight.0) << 32)
    }

    #[inline]
    pub(crate) fn unpack(x: u64) -> Self {
        Edge {
            node: NodeId(x as u32),
            weight: ComplexId((x >> 32) as u32),
        }
    }
}

/// Read-only copy of a stored node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeView {
    pub level: usize,
    pub kind: Kind,
    pub identity: bool,
    children: [Edge; 4],
}

impl NodeView {
    pub fn children(&self) -> &[Edge] {
        &self.children[..self.kind.arity()]
    }
}

// meta word layout: level in bits 0..16, kind, identity flag, owning table.
pub(crate) const META_MATRIX: u32 = 1 << 16;
pub(crate) const META_IDENTITY: u32 = 1 << 17;
pub(crate) const META_SIG: u32 = 0x1_ffff;
pub(crate) const META_TABLE_SHIFT: u32 = 18;
pub(crate) const MAX_TABLES: usize = 1 << (32 - META_TABLE_SHIFT);

#[inline]
pub(crate) fn meta_level(meta: u32) -> usize {
    (meta & 0xffff) as usize
}

#[inline]
pub(crate) fn meta_kind(meta: u32) -> Kind {
    if meta & META_MATRIX != 0 {
        Kind::Matrix
    } else {
        Kind::Vector
    }
}

#[inline]
pub(crate) fn meta_table(meta: u32) -> usize {
    (meta >> META_TABLE_SHIFT) as usize
}

impl NodeView {
    pub(crate) fn from_parts(meta: u32, children: [Edge; 4]) -> Self {
        NodeView {
            level: meta_level(meta),
            kind: meta_kind(meta),
            identity: meta & META_IDENTITY != 0,
            children,
        }
    }
}
