//! Per-node protocol logic: the processing/responder/initiator cycle, beacon
//! driven slot and timer adjustment, neighbor tracking, hop numbers and
//! next-hop selection. No I/O and no clock; the host drives everything.

mod config;
mod entropy;
mod node;

pub use config::{ForwardingPolicy, Micros, NodeId, Role, TimingConfig, MICROS_PER_MS, MICROS_PER_SEC};
pub use entropy::{Entropy, Scripted};
pub use node::{
    Action, NeighborEntry, NodeMachine, NodeStats, PendingMessage, MAX_ROUTE_ATTEMPTS, ROUTE_CACHE_LEN,
};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("node id must be >= 1, got {0}")]
    InvalidNodeId(u8),
    #[error("slot {slot} outside 1..={n_slot}")]
    InvalidSlot { slot: u8, n_slot: u8 },
    #[error("invalid timing configuration: {0}")]
    InvalidConfig(String),
    #[error("payload of {0} bytes exceeds the 64 byte limit")]
    PayloadTooLong(usize),
    #[error("reference nodes are sinks and cannot originate messages")]
    ReferenceCannotOriginate,
}
