//! In-process multi-organization network with fault injection.

pub mod config;
pub mod faults;
pub mod network;
pub mod report;
pub mod transport;

pub use config::{ConfigError, NetworkConfig, OrgSpec, PredicateSpec};
pub use faults::{Fault, FaultScript, KeyLiteral, RowChange};
pub use network::{run_network, Network, Orderer};
pub use report::{Event, EventKind, SimulationReport, METRICS_HEADER};
pub use transport::SimNet;
