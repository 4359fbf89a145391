//! Deterministic discrete-event simulation of a network of [`NodeMachine`]s.
//!
//! Time is integer microseconds. Transmission and reception are half duplex;
//! a frame reaches a receiver only if the receiver was responding for the
//! whole airtime and no other transmission it can decode overlapped it.
//! Equal-time events run in a fixed order: transmission ends, then role
//! timers, then scenario events (boot, power, message injection), each group
//! by node and then insertion order.

mod engine;
mod log;

pub use engine::{stream_rng, Counters, Delivery, Simulation};
pub use log::{DataTag, EventLog, LogKind, LogLevel, LogRecord, LossReason};

use thiserror::Error;

use crate::channel::LinkTable;
use crate::frame::MAX_PAYLOAD;
use crate::protocol::{ForwardingPolicy, Micros, NodeId, NodeMachine, TimingConfig};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("horizon must be positive")]
    NonPositiveHorizon,
    #[error("network needs between 1 and 255 nodes, got {0}")]
    NodeCount(usize),
    #[error("link table covers {links} nodes but {nodes} were configured")]
    LinkTableSize { links: usize, nodes: usize },
    #[error(transparent)]
    Timing(#[from] crate::protocol::ProtocolError),
    #[error("node {node}: initial slot {slot} outside 1..={n_slot}")]
    InitialSlot { node: usize, slot: u8, n_slot: u8 },
    #[error("event at {time} us is not before the horizon")]
    EventAfterHorizon { time: Micros },
    #[error("event targets unknown node {0}")]
    UnknownNode(NodeId),
    #[error("message injected at reference node {0}")]
    InjectAtReference(NodeId),
    #[error("payload of {0} bytes exceeds 64")]
    PayloadTooLong(usize),
}

/// Timed change applied by the simulator on behalf of the scenario.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum ScenarioEvent {
    /// Cold boot after a random wake offset.
    NodeOn(NodeId),
    NodeOff(NodeId),
    Inject { node: NodeId, payload: Vec<u8> },
}

impl ScenarioEvent {
    pub fn node(&self) -> NodeId {
        match self {
            ScenarioEvent::NodeOn(n) | ScenarioEvent::NodeOff(n) => *n,
            ScenarioEvent::Inject { node, .. } => *node,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimedEvent {
    pub time: Micros,
    pub event: ScenarioEvent,
}

/// Per-node start-up parameters. Node `i` in the setup gets ID `i + 1`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeSetup {
    pub reference: bool,
    /// Drawn uniformly when absent.
    pub initial_slot: Option<u8>,
    /// Drawn uniformly over the wake window when absent.
    pub wake_at: Option<Micros>,
    /// Scripted grant outcomes, consumed before random draws.
    pub grants: Vec<bool>,
    /// Scripted slot re-draws, consumed before random draws.
    pub slot_picks: Vec<u8>,
}

/// Everything one realization needs, with placement and links already drawn.
#[derive(Debug, Clone)]
pub struct SimSetup {
    pub timing: TimingConfig,
    pub policy: ForwardingPolicy,
    pub horizon: Micros,
    pub wake_window: Micros,
    pub nodes: Vec<NodeSetup>,
    pub links: LinkTable,
    pub events: Vec<TimedEvent>,
    pub log_level: LogLevel,
}

impl SimSetup {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.horizon == 0 {
            return Err(SimError::NonPositiveHorizon);
        }
        let n = self.nodes.len();
        if n == 0 || n > u8::MAX as usize {
            return Err(SimError::NodeCount(n));
        }
        if self.links.len() != n {
            return Err(SimError::LinkTableSize { links: self.links.len(), nodes: n });
        }
        self.timing.validate()?;
        for (i, node) in self.nodes.iter().enumerate() {
            if let Some(slot) = node.initial_slot {
                if !self.timing.slot_valid(slot) {
                    return Err(SimError::InitialSlot { node: i + 1, slot, n_slot: self.timing.n_slot });
                }
            }
        }
        for e in &self.events {
            if e.time >= self.horizon {
                return Err(SimError::EventAfterHorizon { time: e.time });
            }
            let id = e.event.node();
            let Some(node) = self.nodes.get(id.index()) else {
                return Err(SimError::UnknownNode(id));
            };
            if let ScenarioEvent::Inject { payload, .. } = &e.event {
                if node.reference {
                    return Err(SimError::InjectAtReference(id));
                }
                if payload.len() > MAX_PAYLOAD {
                    return Err(SimError::PayloadTooLong(payload.len()));
                }
            }
        }
        Ok(())
    }

    pub fn run(self, seed: u64) -> Result<SimOutput, SimError> {
        Ok(Simulation::new(self, seed)?.run())
    }
}

/// Result of one realization.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub horizon: Micros,
    pub timing: TimingConfig,
    pub log: EventLog,
    pub links: LinkTable,
    pub references: Vec<bool>,
    /// Final state of every node; `None` if powered off at the horizon.
    pub machines: Vec<Option<NodeMachine>>,
    pub deliveries: Vec<Delivery>,
    pub counters: Counters,
}

impl SimOutput {
    pub fn machine(&self, id: NodeId) -> Option<&NodeMachine> {
        self.machines.get(id.index()).and_then(Option::as_ref)
    }
}
