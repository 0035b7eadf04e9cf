//! Decision-diagram quantum circuit simulation with pluggable parallel
//! execution strategies.
//!
//! States and gates are QMDDs stored in a [`Package`]. An [`engine`] applies a
//! [`Circuit`] to a state under one of several strategies and reports
//! [`RunMetrics`].

pub mod cache;
pub mod circuit;
pub mod cli;
pub mod cnum;
pub mod dd;
pub mod engine;
pub mod error;
pub mod ops;
pub mod refsim;
mod util;

pub use cache::{CacheConfig, CacheKey, CacheScope, CacheStats, OpCache, OpKind, OpStats};
pub use circuit::{
    build_grover, grover_iterations, parse_circuit, random_circuit, serialize_circuit, Circuit, Gate, OracleSpec,
};
pub use cnum::{ComplexId, ComplexTable, ComplexValue, TOLERANCE};
pub use dd::{Edge, GcReport, Kind, NodeId, NodeView, Package, PackageConfig, TableScope, TableStats};
pub use engine::{simulate, EngineConfig, ProcessingOrder, RunMetrics, Strategy};
pub use error::{DdError, ParseError};
pub use ops::{Dense, OpContext, RECONSTRUCT_CAP};
