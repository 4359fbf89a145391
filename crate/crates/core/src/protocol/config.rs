use serde::{Deserialize, Serialize};
use std::fmt;

use super::ProtocolError;

/// Simulation and protocol time, in integer microseconds.
pub type Micros = u64;

pub const MICROS_PER_MS: Micros = 1_000;
pub const MICROS_PER_SEC: Micros = 1_000_000;

/// Positive one-byte node identifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct NodeId(u8);

impl NodeId {
    pub fn new(value: u8) -> Option<Self> {
        (value >= 1).then_some(Self(value))
    }

    pub fn get(self) -> u8 {
        self.0
    }

    /// Zero-based index used by the simulator's node tables.
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    pub fn from_index(index: usize) -> Option<Self> {
        u8::try_from(index + 1).ok().map(Self)
    }
}

impl TryFrom<u8> for NodeId {
    type Error = ProtocolError;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        Self::new(value).ok_or(ProtocolError::InvalidNodeId(value))
    }
}

impl From<NodeId> for u8 {
    fn from(id: NodeId) -> u8 {
        id.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Node state within the processing-and-alternating-roles cycle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    /// Processing: neither transmits nor listens.
    P,
    /// Responder before the node's own initiator slot.
    R1,
    /// Initiator: transmitting in its own slot.
    I,
    /// Responder after the initiator slot, until the period ends.
    R2,
}

impl Role {
    pub fn is_listening(self) -> bool {
        matches!(self, Role::R1 | Role::R2)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::P => "P",
            Role::R1 => "R1",
            Role::I => "I",
            Role::R2 => "R2",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How a node picks among neighbors when forwarding a message.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForwardingPolicy {
    /// Uniformly random among the minimum-hop bidirectional neighbors.
    #[default]
    RandomTie,
    /// Minimum-hop neighbor with the strongest last received signal.
    BestRssi,
    /// Broadcast; every bidirectional neighbor closer to a reference accepts it.
    BroadcastMin,
}

/// Durations and protocol constants shared by every node in a network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingConfig {
    pub t_proc: Micros,
    pub t_slot: Micros,
    pub n_slot: u8,
    /// Beacon airtime; also the initiator duration.
    pub t_beacon: Micros,
    pub p_grant: f64,
    pub n_max: u32,
    pub h_na: u8,
}

impl TimingConfig {
    /// Simulation parameters used throughout the numerical experiments.
    pub fn standard(n_slot: u8, p_grant: f64) -> Self {
        Self {
            t_proc: 10 * MICROS_PER_MS,
            t_slot: 10 * MICROS_PER_MS,
            n_slot,
            t_beacon: 5 * MICROS_PER_MS,
            p_grant,
            n_max: 10,
            h_na: 30,
        }
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        let bad = |why: &str| Err(ProtocolError::InvalidConfig(why.to_owned()));
        if self.n_slot == 0 {
            return bad("n_slot must be positive");
        }
        if self.t_slot == 0 {
            return bad("t_slot must be positive");
        }
        if self.t_beacon == 0 || self.t_beacon > self.t_slot {
            return bad("t_beacon must be in (0, t_slot]");
        }
        if !(0.0..=1.0).contains(&self.p_grant) {
            return bad("p_grant must lie in [0, 1]");
        }
        if self.n_max == 0 {
            return bad("n_max must be positive");
        }
        if self.h_na < 2 {
            return bad("h_na must be at least 2");
        }
        Ok(())
    }

    /// Responder time left in the initiator's own slot.
    pub fn t_r(&self) -> Micros {
        self.t_slot - self.t_beacon
    }

    pub fn t_comm(&self) -> Micros {
        self.n_slot as Micros * self.t_slot
    }

    pub fn period(&self) -> Micros {
        self.t_proc + self.t_comm()
    }

    /// Silence after which a neighbor is forgotten.
    pub fn neighbor_timeout(&self) -> Micros {
        self.n_max as Micros * self.period()
    }

    pub fn slot_valid(&self, slot: u8) -> bool {
        (1..=self.n_slot).contains(&slot)
    }
}
