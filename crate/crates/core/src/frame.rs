//! Over-the-air frame layout.
//!
//! ```text
//! beacon:  version(1) type=0x01(1) sender(1) slot(1) hop(1) count(1) {id(1) slot(1)} * count
//! data:    <beacon fields with type=0x02> origin(1) sequence(2, BE) next_hop(1) len(1) payload(len)
//! ```
//!
//! `next_hop = 0` marks a broadcast data frame. See `FORMAT.md` at the
//! repository root for worked hex examples.

use thiserror::Error;

use crate::protocol::NodeId;

pub const FORMAT_VERSION: u8 = 1;
pub const TYPE_BEACON: u8 = 0x01;
pub const TYPE_DATA: u8 = 0x02;
pub const MAX_PAYLOAD: usize = 64;

const BEACON_HEADER: usize = 6;
const DATA_TRAILER_HEADER: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("buffer truncated: need {needed} bytes, have {got}")]
    Truncated { needed: usize, got: usize },
    #[error("unsupported format version {0:#04x}")]
    UnsupportedVersion(u8),
    #[error("unknown frame type {0:#04x}")]
    UnknownFrameType(u8),
    #[error("length mismatch: layout implies {expected} bytes, buffer has {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid field: {0}")]
    InvalidField(&'static str),
}

impl CodecError {
    /// Stable numeric code, shared with the C ABI.
    pub fn code(&self) -> i32 {
        match self {
            CodecError::Truncated { .. } => 1,
            CodecError::UnsupportedVersion(_) => 2,
            CodecError::UnknownFrameType(_) => 3,
            CodecError::LengthMismatch { .. } => 4,
            CodecError::InvalidField(_) => 5,
        }
    }
}

/// A neighbor as advertised in a beacon: its ID and the slot it was last heard on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Advert {
    pub id: NodeId,
    pub slot: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BeaconFrame {
    pub sender: NodeId,
    pub sender_slot: u8,
    pub sender_hop: u8,
    pub neighbors: Vec<Advert>,
}

impl BeaconFrame {
    pub fn lists(&self, id: NodeId) -> bool {
        self.neighbors.iter().any(|a| a.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DataFrame {
    pub beacon: BeaconFrame,
    pub origin: NodeId,
    pub sequence: u16,
    /// `None` is a broadcast to every closer neighbor.
    pub next_hop: Option<NodeId>,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Frame {
    Beacon(BeaconFrame),
    Data(DataFrame),
}

impl Frame {
    /// Synchronization fields carried by both frame types.
    pub fn beacon(&self) -> &BeaconFrame {
        match self {
            Frame::Beacon(b) => b,
            Frame::Data(d) => &d.beacon,
        }
    }

    pub fn sender(&self) -> NodeId {
        self.beacon().sender
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Frame::Beacon(_) => "beacon",
            Frame::Data(_) => "data",
        }
    }

    pub fn encoded_len(&self) -> usize {
        let base = BEACON_HEADER + 2 * self.beacon().neighbors.len();
        match self {
            Frame::Beacon(_) => base,
            Frame::Data(d) => base + DATA_TRAILER_HEADER + d.payload.len(),
        }
    }

    fn check(&self) -> Result<(), CodecError> {
        let b = self.beacon();
        if b.sender_slot == 0 {
            return Err(CodecError::InvalidField("sender slot must be >= 1"));
        }
        if b.neighbors.len() > u8::MAX as usize {
            return Err(CodecError::InvalidField("more than 255 neighbors"));
        }
        for (i, a) in b.neighbors.iter().enumerate() {
            if a.id == b.sender {
                return Err(CodecError::InvalidField("sender listed as its own neighbor"));
            }
            if a.slot == 0 {
                return Err(CodecError::InvalidField("neighbor slot must be >= 1"));
            }
            if b.neighbors[..i].iter().any(|o| o.id == a.id) {
                return Err(CodecError::InvalidField("duplicate neighbor id"));
            }
        }
        if let Frame::Data(d) = self {
            if d.payload.len() > MAX_PAYLOAD {
                return Err(CodecError::InvalidField("payload longer than 64 bytes"));
            }
            if d.next_hop == Some(b.sender) {
                return Err(CodecError::InvalidField("next hop equals sender"));
            }
        }
        Ok(())
    }
}

pub fn encode(frame: &Frame) -> Result<Vec<u8>, CodecError> {
    frame.check()?;
    let b = frame.beacon();
    let mut out = Vec::with_capacity(frame.encoded_len());
    let frame_type = match frame {
        Frame::Beacon(_) => TYPE_BEACON,
        Frame::Data(_) => TYPE_DATA,
    };
    out.extend_from_slice(&[
        FORMAT_VERSION,
        frame_type,
        b.sender.get(),
        b.sender_slot,
        b.sender_hop,
        b.neighbors.len() as u8,
    ]);
    for a in &b.neighbors {
        out.push(a.id.get());
        out.push(a.slot);
    }
    if let Frame::Data(d) = frame {
        out.push(d.origin.get());
        out.extend_from_slice(&d.sequence.to_be_bytes());
        out.push(d.next_hop.map_or(0, NodeId::get));
        out.push(d.payload.len() as u8);
        out.extend_from_slice(&d.payload);
    }
    Ok(out)
}

fn need(buf: &[u8], needed: usize) -> Result<(), CodecError> {
    if buf.len() < needed {
        Err(CodecError::Truncated { needed, got: buf.len() })
    } else {
        Ok(())
    }
}

fn node_id(v: u8, what: &'static str) -> Result<NodeId, CodecError> {
    NodeId::new(v).ok_or(CodecError::InvalidField(what))
}

pub fn decode(buf: &[u8]) -> Result<Frame, CodecError> {
    need(buf, 1)?;
    if buf[0] != FORMAT_VERSION {
        return Err(CodecError::UnsupportedVersion(buf[0]));
    }
    need(buf, 2)?;
    let frame_type = buf[1];
    if frame_type != TYPE_BEACON && frame_type != TYPE_DATA {
        return Err(CodecError::UnknownFrameType(frame_type));
    }
    need(buf, BEACON_HEADER)?;
    let count = buf[5] as usize;
    let beacon_len = BEACON_HEADER + 2 * count;
    need(buf, beacon_len)?;

    let sender = node_id(buf[2], "sender id 0")?;
    let neighbors = buf[BEACON_HEADER..beacon_len]
        .chunks_exact(2)
        .map(|c| Ok(Advert { id: node_id(c[0], "neighbor id 0")?, slot: c[1] }))
        .collect::<Result<Vec<_>, CodecError>>()?;
    let beacon = BeaconFrame { sender, sender_slot: buf[3], sender_hop: buf[4], neighbors };

    let frame = if frame_type == TYPE_BEACON {
        if buf.len() != beacon_len {
            return Err(CodecError::LengthMismatch { expected: beacon_len, got: buf.len() });
        }
        Frame::Beacon(beacon)
    } else {
        let header_end = beacon_len + DATA_TRAILER_HEADER;
        need(buf, header_end)?;
        let t = &buf[beacon_len..header_end];
        let payload_len = t[4] as usize;
        if payload_len > MAX_PAYLOAD {
            return Err(CodecError::InvalidField("payload longer than 64 bytes"));
        }
        let total = header_end + payload_len;
        need(buf, total)?;
        if buf.len() != total {
            return Err(CodecError::LengthMismatch { expected: total, got: buf.len() });
        }
        Frame::Data(DataFrame {
            beacon,
            origin: node_id(t[0], "origin id 0")?,
            sequence: u16::from_be_bytes([t[1], t[2]]),
            next_hop: NodeId::new(t[3]),
            payload: buf[header_end..total].to_vec(),
        })
    };
    frame.check()?;
    Ok(frame)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(v: u8) -> NodeId {
        NodeId::new(v).unwrap()
    }

    fn beacon(neighbors: &[(u8, u8)]) -> BeaconFrame {
        BeaconFrame {
            sender: id(1),
            sender_slot: 1,
            sender_hop: 0,
            neighbors: neighbors.iter().map(|&(i, s)| Advert { id: id(i), slot: s }).collect(),
        }
    }

    #[test]
    fn bare_beacon_bytes() {
        let bytes = encode(&Frame::Beacon(beacon(&[]))).unwrap();
        assert_eq!(bytes, [0x01, 0x01, 0x01, 0x01, 0x00, 0x00]);
    }

    #[test]
    fn beacon_length_formula() {
        let f = Frame::Beacon(beacon(&[(2, 2), (3, 4)]));
        let bytes = encode(&f).unwrap();
        assert_eq!(bytes.len(), 10);
        assert_eq!(f.encoded_len(), 10);
        assert_eq!(decode(&bytes).unwrap(), f);
    }

    #[test]
    fn data_frame_layout() {
        let f = Frame::Data(DataFrame {
            beacon: BeaconFrame { sender: id(4), sender_slot: 2, sender_hop: 2, neighbors: vec![Advert { id: id(5), slot: 6 }] },
            origin: id(4),
            sequence: 0x0102,
            next_hop: Some(id(5)),
            payload: vec![0xAA, 0xBB],
        });
        let bytes = encode(&f).unwrap();
        assert_eq!(bytes, [0x01, 0x02, 0x04, 0x02, 0x02, 0x01, 0x05, 0x06, 0x04, 0x01, 0x02, 0x05, 0x02, 0xAA, 0xBB]);
        assert_eq!(decode(&bytes).unwrap(), f);
    }

    #[test]
    fn decode_errors() {
        assert!(matches!(decode(&[]), Err(CodecError::Truncated { .. })));
        assert_eq!(decode(&[0x02, 0x01, 1, 1, 0, 0]), Err(CodecError::UnsupportedVersion(2)));
        assert_eq!(decode(&[0x01, 0x07, 1, 1, 0, 0]), Err(CodecError::UnknownFrameType(7)));
        // count says two neighbors, only one present
        assert!(matches!(decode(&[1, 1, 1, 1, 0, 2, 2, 2]), Err(CodecError::Truncated { .. })));
        assert!(matches!(decode(&[1, 1, 1, 1, 0, 0, 9]), Err(CodecError::LengthMismatch { .. })));
        assert!(matches!(decode(&[1, 1, 0, 1, 0, 0]), Err(CodecError::InvalidField(_))));
        assert!(matches!(decode(&[1, 1, 1, 1, 0, 1, 1, 3]), Err(CodecError::InvalidField(_))));
    }

    #[test]
    fn error_codes_distinct() {
        let codes = [
            CodecError::Truncated { needed: 1, got: 0 }.code(),
            CodecError::UnsupportedVersion(2).code(),
            CodecError::UnknownFrameType(9).code(),
            CodecError::LengthMismatch { expected: 1, got: 2 }.code(),
            CodecError::InvalidField("x").code(),
        ];
        let mut sorted = codes.to_vec();
        sorted.dedup();
        assert_eq!(sorted.len(), codes.len());
    }

    #[test]
    fn encode_rejects_invariant_violations() {
        assert!(encode(&Frame::Beacon(beacon(&[(1, 2)]))).is_err());
        assert!(encode(&Frame::Beacon(beacon(&[(2, 2), (2, 3)]))).is_err());
        let d = DataFrame { beacon: beacon(&[]), origin: id(1), sequence: 0, next_hop: Some(id(1)), payload: vec![] };
        assert!(encode(&Frame::Data(d.clone())).is_err());
        let d = DataFrame { next_hop: Some(id(2)), payload: vec![0; 65], ..d };
        assert!(encode(&Frame::Data(d)).is_err());
    }
}
