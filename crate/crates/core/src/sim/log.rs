use std::fmt;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::protocol::{Micros, NodeId, Role};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LogLevel {
    /// Everything, including role changes, timers and every reception.
    #[default]
    Full,
    /// Only what the metrics need: transmissions, power, slots, hops, traffic.
    Compact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossReason {
    Collision,
    NotListening,
    Undecodable,
}

impl LossReason {
    fn as_str(self) -> &'static str {
        match self {
            LossReason::Collision => "collision",
            LossReason::NotListening => "not_listening",
            LossReason::Undecodable => "undecodable",
        }
    }
}

/// Data-frame fields echoed into the log.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DataTag {
    pub origin: NodeId,
    pub sequence: u16,
    /// `None` for broadcast.
    pub next_hop: Option<NodeId>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LogKind {
    NodeOn { reference: bool, slot: u8, hop: u8 },
    NodeOff,
    Warn(&'static str),
    Role { to: Role },
    Timer { duration: Micros },
    TxStart { slot: u8, hop: u8, neighbors: usize, data: Option<DataTag>, bytes: Vec<u8> },
    TxEnd { aborted: bool },
    Rx { from: NodeId },
    RxLost { from: NodeId, reason: LossReason },
    SlotChange { from: u8, to: u8 },
    SlotExhausted { slot: u8 },
    NeighborAdd { neighbor: NodeId },
    NeighborBidirectional { neighbor: NodeId },
    NeighborRemove { neighbor: NodeId },
    HopChange { from: u8, to: u8 },
    Inject { sequence: u16, len: usize },
    Deliver { origin: NodeId, sequence: u16, len: usize },
    Drop { reason: &'static str },
}

impl LogKind {
    pub fn name(&self) -> &'static str {
        match self {
            LogKind::NodeOn { .. } => "node_on",
            LogKind::NodeOff => "node_off",
            LogKind::Warn(_) => "warn",
            LogKind::Role { .. } => "role",
            LogKind::Timer { .. } => "timer",
            LogKind::TxStart { .. } => "tx_start",
            LogKind::TxEnd { .. } => "tx_end",
            LogKind::Rx { .. } => "rx",
            LogKind::RxLost { .. } => "rx_lost",
            LogKind::SlotChange { .. } => "slot",
            LogKind::SlotExhausted { .. } => "slot_exhausted",
            LogKind::NeighborAdd { .. } => "nbr_add",
            LogKind::NeighborBidirectional { .. } => "nbr_bidir",
            LogKind::NeighborRemove { .. } => "nbr_remove",
            LogKind::HopChange { .. } => "hop",
            LogKind::Inject { .. } => "inject",
            LogKind::Deliver { .. } => "deliver",
            LogKind::Drop { .. } => "drop",
        }
    }

    /// Kinds kept at [`LogLevel::Compact`].
    fn compact(&self) -> bool {
        !matches!(
            self,
            LogKind::Role { .. }
                | LogKind::Timer { .. }
                | LogKind::Rx { .. }
                | LogKind::RxLost { .. }
                | LogKind::NeighborAdd { .. }
                | LogKind::NeighborBidirectional { .. }
                | LogKind::NeighborRemove { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub time: Micros,
    pub node: NodeId,
    pub kind: LogKind,
}

/// `time_us kind node key=value ...`, fields in a fixed order per kind.
impl fmt::Display for LogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.time, self.kind.name(), self.node)?;
        match &self.kind {
            LogKind::NodeOn { reference, slot, hop } => {
                write!(f, " reference={} slot={slot} hop={hop}", u8::from(*reference))
            }
            LogKind::NodeOff => Ok(()),
            LogKind::Warn(what) => write!(f, " what={what}"),
            LogKind::Role { to } => write!(f, " to={to}"),
            LogKind::Timer { duration } => write!(f, " duration_us={duration}"),
            LogKind::TxStart { slot, hop, neighbors, data, bytes } => {
                let kind = if data.is_some() { "data" } else { "beacon" };
                write!(f, " frame={kind} slot={slot} hop={hop} neighbors={neighbors}")?;
                if let Some(d) = data {
                    let next = d.next_hop.map_or(0, NodeId::get);
                    write!(f, " origin={} seq={} next_hop={next}", d.origin, d.sequence)?;
                }
                if !bytes.is_empty() {
                    write!(f, " bytes={}", hex::encode(bytes))?;
                }
                Ok(())
            }
            LogKind::TxEnd { aborted } => write!(f, " aborted={}", u8::from(*aborted)),
            LogKind::Rx { from } => write!(f, " from={from}"),
            LogKind::RxLost { from, reason } => write!(f, " from={from} reason={}", reason.as_str()),
            LogKind::SlotChange { from, to } => write!(f, " from={from} to={to}"),
            LogKind::SlotExhausted { slot } => write!(f, " slot={slot}"),
            LogKind::NeighborAdd { neighbor }
            | LogKind::NeighborBidirectional { neighbor }
            | LogKind::NeighborRemove { neighbor } => write!(f, " neighbor={neighbor}"),
            LogKind::HopChange { from, to } => write!(f, " from={from} to={to}"),
            LogKind::Inject { sequence, len } => write!(f, " seq={sequence} len={len}"),
            LogKind::Deliver { origin, sequence, len } => write!(f, " origin={origin} seq={sequence} len={len}"),
            LogKind::Drop { reason } => write!(f, " reason={reason}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    level: LogLevel,
    records: Vec<LogRecord>,
}

impl EventLog {
    pub fn new(level: LogLevel) -> Self {
        Self { level, records: Vec::new() }
    }

    pub fn level(&self) -> LogLevel {
        self.level
    }

    pub fn push(&mut self, time: Micros, node: NodeId, kind: LogKind) {
        if self.level == LogLevel::Full || kind.compact() {
            self.records.push(LogRecord { time, node, kind });
        }
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn write_to(&self, out: &mut impl Write) -> io::Result<()> {
        for r in &self.records {
            writeln!(out, "{r}")?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("log is ASCII")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(v: u8) -> NodeId {
        NodeId::new(v).unwrap()
    }

    #[test]
    fn record_format() {
        let r = LogRecord {
            time: 15_000,
            node: id(2),
            kind: LogKind::TxStart {
                slot: 1,
                hop: 30,
                neighbors: 0,
                data: None,
                bytes: vec![1, 1, 2, 1, 30, 0],
            },
        };
        assert_eq!(r.to_string(), "15000 tx_start 2 frame=beacon slot=1 hop=30 neighbors=0 bytes=010102011e00");
        let r = LogRecord { time: 7, node: id(5), kind: LogKind::HopChange { from: 30, to: 1 } };
        assert_eq!(r.to_string(), "7 hop 5 from=30 to=1");
    }

    #[test]
    fn compact_filters_chatter() {
        let mut log = EventLog::new(LogLevel::Compact);
        log.push(0, id(1), LogKind::Role { to: Role::R1 });
        log.push(0, id(1), LogKind::HopChange { from: 30, to: 2 });
        assert_eq!(log.records().len(), 1);
    }
}
