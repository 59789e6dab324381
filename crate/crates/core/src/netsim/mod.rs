//! Discrete-event network simulation: topology, event engine and trace.

mod engine;
mod process;
pub mod topology;
pub mod trace;

use serde::{Deserialize, Serialize};

pub use engine::{AppFlow, DnsError, DnsOutcome, SetupError, SetupOutcome, SimError, SimOptions, Simulation};
pub use topology::{
    hybrid, Calibration, CostOverrides, LinkParams, LinkSpec, NatSpec, NodeSpec, ProcessingCosts, Stack, Topology,
    RECEIVER_HOSTNAME,
};
pub use trace::{write_trace_csv, DropReason, TraceEvent, TraceRecord, TRACE_CSV_HEADER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub usize);
