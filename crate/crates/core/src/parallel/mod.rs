//! Conflict-free parallel execution of a block.
//!
//! Transactions are analyzed for the rows they may read or write, a
//! dependency graph orders every conflicting pair by block position, and the
//! graph's topological stages run one after another with the members of a
//! stage spread over several sessions. The outcome equals serial execution in
//! block order.

pub mod analysis;
pub mod graph;
pub mod staged;

pub use analysis::{analyze, analyze_sql, AccessMode, AccessRegion, Catalog, Interval, TxnAccessSet};
pub use graph::{build_graph, DependencyGraph};
pub use staged::{execute_block, execute_serial, execute_staged, PreparedTxn};
