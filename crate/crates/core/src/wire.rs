//! Frame formats, byte budgets, and the control-plane message codec.
//!
//! Everything on the air is one unfragmented 802.15.4 frame of at most
//! [`MTU`] bytes. Each frame is charged a fixed [`FRAME_OVERHEAD`] for
//! PHY/MAC headers and the compressed adaptation/network headers, which
//! leaves [`PAYLOAD_BUDGET`] bytes for payload plus any source-route
//! header. All multi-byte integers are big-endian; encodings are
//! canonical, so decode(encode(m)) = m and re-encoding reproduces the
//! input bytes.
//!
//! Control-plane messages share one header:
//!
//! | field    | size | notes                          |
//! |----------|------|--------------------------------|
//! | kind     | 1    | 1=NSU 2=FTQ 3=FTS 4=CONF       |
//! | seq      | 2    | per-source, wraps              |
//! | src      | 2    | originating node, never 0      |
//! | body len | 1    | bytes that follow              |
//!
//! NSU, periodic node state, node to controller:
//!
//! | field            | size | notes                           |
//! |------------------|------|---------------------------------|
//! | energy estimate  | 1    | scaled duty cycle, 255 = 100%   |
//! | buffer occupancy | 1    | queued frames                   |
//! | per neighbor     | 3    | id (2), link quality (1, 255 =  |
//! |                  |      | perfect)                        |
//!
//! Neighbor count is implied by the body length; at most
//! [`NSU_MAX_NEIGHBORS`] fit the budget.
//!
//! FTQ, flowtable query after a table miss, node to controller:
//!
//! | field       | size | notes                              |
//! |-------------|------|------------------------------------|
//! | flow dest   | 2    |                                    |
//! | flow id     | 1    |                                    |
//! | reason      | 1    | 1 = table miss                     |
//! | field count | 1    | at most [`PPQ_MAX_FIELDS`]         |
//! | per field   | 2    | view offset (1), value byte (1)    |
//!
//! FTS, flowtable install, controller to node:
//!
//! | field   | size | notes                     |
//! |---------|------|---------------------------|
//! | count   | 1    | at least 1                |
//! | entries | var. | see the flowtable module  |
//!
//! CONF, node configuration and join acknowledgement, controller to node:
//!
//! | field            | size | notes                          |
//! |------------------|------|--------------------------------|
//! | state period     | 2    | seconds between node reports   |
//! | entry lifetime   | 2    | flowtable lifetime, seconds    |
//! | query window     | 2    | repeat-query throttle, seconds |
//! | query field count| 1    | partial-query field specs      |
//! | per query field  | 2    | view offset (1), length (1)    |
//! | default count    | 1    | entries installed on join      |
//! | default entries  | var. | see the flowtable module       |
//!
//! The source-route header costs `2 + 2·hops` bytes when present:
//! segments left (1), hop count (1), then each hop id (2).

use crate::flowtable::EntrySpec;
use crate::rpl::RplMsg;
use crate::{Micros, NodeId, NODE_UNASSIGNED};
use std::collections::{HashMap, VecDeque};
use thiserror::Error;

/// Largest frame that fits on the air.
pub const MTU: usize = 127;
/// Bytes charged per frame for PHY, MAC, and compressed network headers.
pub const FRAME_OVERHEAD: usize = 74;
/// What remains of the MTU for payload and source-route header.
pub const PAYLOAD_BUDGET: usize = MTU - FRAME_OVERHEAD;
/// Control message header: kind, seq, src, body length.
pub const HEADER_LEN: usize = 6;
/// Neighbors that fit one state report: 6 + 2 + 15 * 3 = 53.
pub const NSU_MAX_NEIGHBORS: usize = 15;
/// Byte fields allowed in one partial-packet query.
pub const PPQ_MAX_FIELDS: usize = 8;
/// Hop cap for a source-route header.
pub const SRH_MAX_HOPS: usize = 16;
/// Transmission time per byte at 250 kbit/s.
pub const AIRTIME_PER_BYTE_US: Micros = 32;
/// Distinct recent sequence numbers remembered per source.
pub const SEQ_DUP_WINDOW: usize = 8;

pub const KIND_NSU: u8 = 1;
pub const KIND_FTQ: u8 = 2;
pub const KIND_FTS: u8 = 3;
pub const KIND_CONF: u8 = 4;

pub const PROTO_APP: u8 = 0;
pub const PROTO_SDN: u8 = 1;
pub const PROTO_RPL: u8 = 2;

const REASON_TABLE_MISS: u8 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("payload needs {need} bytes, budget is {limit}")]
    BudgetExceeded { need: usize, limit: usize },
    #[error("frame would be {need} bytes, MTU is {limit}")]
    MtuExceeded { need: usize, limit: usize },
    #[error("malformed frame: {0}")]
    MalformedFrame(&'static str),
    #[error("source address is unassigned")]
    BadSource,
}

/// Canonical flow identity: destination plus application flow id. This
/// is what repeat-query throttling and controller policy key on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FlowKey {
    pub dest: NodeId,
    pub flow_id: u8,
}

/// One partial-query byte: a view offset and the byte found there.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PartialByte {
    pub offset: u8,
    pub value: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NsuBody {
    pub energy_estimate: u8,
    pub buffer_occupancy: u8,
    pub neighbors: Vec<(NodeId, u8)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FtqBody {
    pub flow_key: FlowKey,
    pub partial_bytes: Vec<PartialByte>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FtsBody {
    pub entries: Vec<EntrySpec>,
}

/// Byte window of the network view to copy into partial queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldSpec {
    pub offset: u8,
    pub length: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfBody {
    pub nsu_period_s: u16,
    pub ft_lifetime_s: u16,
    pub ftq_throttle_window_s: u16,
    pub ppq_fields: Vec<FieldSpec>,
    pub default_entries: Vec<EntrySpec>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UsdnBody {
    Nsu(NsuBody),
    Ftq(FtqBody),
    Fts(FtsBody),
    Conf(ConfBody),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsdnMessage {
    pub src: NodeId,
    pub seq: u16,
    pub body: UsdnBody,
}

impl UsdnMessage {
    pub fn kind(&self) -> u8 {
        match self.body {
            UsdnBody::Nsu(_) => KIND_NSU,
            UsdnBody::Ftq(_) => KIND_FTQ,
            UsdnBody::Fts(_) => KIND_FTS,
            UsdnBody::Conf(_) => KIND_CONF,
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>, WireError> {
        if self.src == NODE_UNASSIGNED {
            return Err(WireError::BadSource);
        }
        let mut body = Vec::new();
        match &self.body {
            UsdnBody::Nsu(n) => {
                if n.neighbors.len() > NSU_MAX_NEIGHBORS {
                    return Err(WireError::BudgetExceeded {
                        need: HEADER_LEN + 2 + 3 * n.neighbors.len(),
                        limit: PAYLOAD_BUDGET,
                    });
                }
                body.push(n.energy_estimate);
                body.push(n.buffer_occupancy);
                for (id, quality) in &n.neighbors {
                    body.extend_from_slice(&id.to_be_bytes());
                    body.push(*quality);
                }
            }
            UsdnBody::Ftq(f) => {
                if f.partial_bytes.len() > PPQ_MAX_FIELDS {
                    return Err(WireError::MalformedFrame("too many query fields"));
                }
                body.extend_from_slice(&f.flow_key.dest.to_be_bytes());
                body.push(f.flow_key.flow_id);
                body.push(REASON_TABLE_MISS);
                body.push(f.partial_bytes.len() as u8);
                for p in &f.partial_bytes {
                    body.push(p.offset);
                    body.push(p.value);
                }
            }
            UsdnBody::Fts(f) => {
                if f.entries.is_empty() || f.entries.len() > 255 {
                    return Err(WireError::MalformedFrame("entry count"));
                }
                body.push(f.entries.len() as u8);
                for e in &f.entries {
                    e.encode(&mut body);
                }
            }
            UsdnBody::Conf(c) => {
                if c.ppq_fields.len() > 255 || c.default_entries.len() > 255 {
                    return Err(WireError::MalformedFrame("config list length"));
                }
                body.extend_from_slice(&c.nsu_period_s.to_be_bytes());
                body.extend_from_slice(&c.ft_lifetime_s.to_be_bytes());
                body.extend_from_slice(&c.ftq_throttle_window_s.to_be_bytes());
                body.push(c.ppq_fields.len() as u8);
                for f in &c.ppq_fields {
                    body.push(f.offset);
                    body.push(f.length);
                }
                body.push(c.default_entries.len() as u8);
                for e in &c.default_entries {
                    e.encode(&mut body);
                }
            }
        }
        if HEADER_LEN + body.len() > PAYLOAD_BUDGET {
            return Err(WireError::BudgetExceeded {
                need: HEADER_LEN + body.len(),
                limit: PAYLOAD_BUDGET,
            });
        }
        let mut out = Vec::with_capacity(HEADER_LEN + body.len());
        out.push(self.kind());
        out.extend_from_slice(&self.seq.to_be_bytes());
        out.extend_from_slice(&self.src.to_be_bytes());
        out.push(body.len() as u8);
        out.extend_from_slice(&body);
        Ok(out)
    }

    pub fn decode(buf: &[u8]) -> Result<UsdnMessage, WireError> {
        if buf.len() < HEADER_LEN {
            return Err(WireError::MalformedFrame("short header"));
        }
        let kind = buf[0];
        let seq = u16::from_be_bytes([buf[1], buf[2]]);
        let src = u16::from_be_bytes([buf[3], buf[4]]);
        let body_len = buf[5] as usize;
        if src == NODE_UNASSIGNED {
            return Err(WireError::BadSource);
        }
        if HEADER_LEN + body_len > PAYLOAD_BUDGET {
            return Err(WireError::MalformedFrame("body length over budget"));
        }
        if buf.len() != HEADER_LEN + body_len {
            return Err(WireError::MalformedFrame("length mismatch"));
        }
        let body = &buf[HEADER_LEN..];
        let parsed = match kind {
            KIND_NSU => {
                if body.len() < 2 || (body.len() - 2) % 3 != 0 {
                    return Err(WireError::MalformedFrame("state body shape"));
                }
                UsdnBody::Nsu(NsuBody {
                    energy_estimate: body[0],
                    buffer_occupancy: body[1],
                    neighbors: body[2..]
                        .chunks_exact(3)
                        .map(|c| (u16::from_be_bytes([c[0], c[1]]), c[2]))
                        .collect(),
                })
            }
            KIND_FTQ => {
                if body.len() < 5 {
                    return Err(WireError::MalformedFrame("query body shape"));
                }
                if body[3] != REASON_TABLE_MISS {
                    return Err(WireError::MalformedFrame("unknown query reason"));
                }
                let count = body[4] as usize;
                if count > PPQ_MAX_FIELDS {
                    return Err(WireError::MalformedFrame("too many query fields"));
                }
                if body.len() != 5 + 2 * count {
                    return Err(WireError::MalformedFrame("query field shape"));
                }
                UsdnBody::Ftq(FtqBody {
                    flow_key: FlowKey {
                        dest: u16::from_be_bytes([body[0], body[1]]),
                        flow_id: body[2],
                    },
                    partial_bytes: body[5..]
                        .chunks_exact(2)
                        .map(|c| PartialByte {
                            offset: c[0],
                            value: c[1],
                        })
                        .collect(),
                })
            }
            KIND_FTS => {
                if body.is_empty() || body[0] == 0 {
                    return Err(WireError::MalformedFrame("entry count"));
                }
                let count = body[0] as usize;
                let mut entries = Vec::with_capacity(count);
                let mut pos = 1;
                for _ in 0..count {
                    entries.push(
                        EntrySpec::decode(body, &mut pos)
                            .map_err(|_| WireError::MalformedFrame("bad entry"))?,
                    );
                }
                if pos != body.len() {
                    return Err(WireError::MalformedFrame("trailing bytes"));
                }
                UsdnBody::Fts(FtsBody { entries })
            }
            KIND_CONF => {
                if body.len() < 7 {
                    return Err(WireError::MalformedFrame("config body shape"));
                }
                let nsu_period_s = u16::from_be_bytes([body[0], body[1]]);
                let ft_lifetime_s = u16::from_be_bytes([body[2], body[3]]);
                let ftq_throttle_window_s = u16::from_be_bytes([body[4], body[5]]);
                let ppq_count = body[6] as usize;
                let mut pos = 7;
                if pos + 2 * ppq_count + 1 > body.len() {
                    return Err(WireError::MalformedFrame("config fields truncated"));
                }
                let mut ppq_fields = Vec::with_capacity(ppq_count);
                for _ in 0..ppq_count {
                    ppq_fields.push(FieldSpec {
                        offset: body[pos],
                        length: body[pos + 1],
                    });
                    pos += 2;
                }
                let default_count = body[pos] as usize;
                pos += 1;
                let mut default_entries = Vec::with_capacity(default_count);
                for _ in 0..default_count {
                    default_entries.push(
                        EntrySpec::decode(body, &mut pos)
                            .map_err(|_| WireError::MalformedFrame("bad entry"))?,
                    );
                }
                if pos != body.len() {
                    return Err(WireError::MalformedFrame("trailing bytes"));
                }
                UsdnBody::Conf(ConfBody {
                    nsu_period_s,
                    ft_lifetime_s,
                    ftq_throttle_window_s,
                    ppq_fields,
                    default_entries,
                })
            }
            _ => return Err(WireError::MalformedFrame("unknown kind")),
        };
        Ok(UsdnMessage {
            src,
            seq,
            body: parsed,
        })
    }

    pub fn encoded_len(&self) -> Result<usize, WireError> {
        Ok(self.encode()?.len())
    }
}

/// Source route stamped on downward frames: the hop list excludes the
/// root and includes the destination, nearest hop first. `segments_left`
/// counts hops not yet consumed; the hop list itself never shrinks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceRouteHeader {
    pub hops: Vec<NodeId>,
    pub segments_left: usize,
}

impl SourceRouteHeader {
    /// On-air cost: segments-left byte, count byte, two bytes per hop.
    pub fn wire_len(&self) -> usize {
        2 + 2 * self.hops.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SrhStep {
    /// Address the frame to this next hop.
    Forward(NodeId),
    /// This node is the final hop; deliver upward.
    Delivered,
    /// The route does not pass through this node here; the frame is
    /// undeliverable as routed.
    RouteDesync,
}

/// What a frame carries above the link layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    /// Application data; only its length matters to the simulation.
    App { flow_id: u8, data_len: u8 },
    /// Control-plane message.
    Sdn(UsdnMessage),
    /// Routing protocol message.
    Rpl(RplMsg),
}

/// One link-layer transmission unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub src: NodeId,
    pub dst: NodeId,
    pub seq: u16,
    pub srh: Option<SourceRouteHeader>,
    pub payload: Payload,
}

impl Frame {
    /// Flow identity for application frames.
    pub fn flow_key(&self) -> Option<FlowKey> {
        match self.payload {
            Payload::App { flow_id, .. } => Some(FlowKey {
                dest: self.dst,
                flow_id,
            }),
            _ => None,
        }
    }

    /// Flow-matching view of the network layer: protocol byte,
    /// destination, then a protocol-specific selector byte and payload
    /// filler. Flowtable matches index into this buffer.
    pub fn network_view(&self) -> Vec<u8> {
        let mut v = Vec::new();
        match &self.payload {
            Payload::App { flow_id, data_len } => {
                v.push(PROTO_APP);
                v.extend_from_slice(&self.dst.to_be_bytes());
                v.push(*flow_id);
                v.resize(v.len() + *data_len as usize, 0);
            }
            Payload::Sdn(m) => {
                v.push(PROTO_SDN);
                v.extend_from_slice(&self.dst.to_be_bytes());
                v.push(m.kind());
            }
            Payload::Rpl(m) => {
                v.push(PROTO_RPL);
                v.extend_from_slice(&self.dst.to_be_bytes());
                v.push(m.kind());
            }
        }
        v
    }

    /// Payload bytes charged against the budget. Control messages carry
    /// their own header and are charged their exact encoding; routing
    /// messages are charged fixed representative sizes.
    pub fn network_len(&self) -> Result<usize, WireError> {
        Ok(match &self.payload {
            Payload::App { data_len, .. } => 4 + *data_len as usize,
            Payload::Sdn(m) => m.encoded_len()?,
            Payload::Rpl(m) => m.wire_len(),
        })
    }

    /// Total on-air size including the fixed frame overhead and any
    /// source-route header. Errors when the result would not fit the MTU.
    pub fn total_len(&self) -> Result<usize, WireError> {
        let payload = self.network_len()?;
        let srh = self.srh.as_ref().map_or(0, |s| s.wire_len());
        if payload + srh > PAYLOAD_BUDGET {
            return Err(WireError::MtuExceeded {
                need: FRAME_OVERHEAD + payload + srh,
                limit: MTU,
            });
        }
        Ok(FRAME_OVERHEAD + payload + srh)
    }

    /// Microseconds on the air at 250 kbit/s.
    pub fn airtime(&self) -> Result<Micros, WireError> {
        Ok(self.total_len()? as Micros * AIRTIME_PER_BYTE_US)
    }
}

/// Attach a source route to a frame, enforcing hop and MTU limits. The
/// frame must not already carry one.
pub fn srh_insert(frame: &mut Frame, hops: Vec<NodeId>) -> Result<(), WireError> {
    if frame.srh.is_some() {
        return Err(WireError::MalformedFrame("frame already routed"));
    }
    if hops.is_empty() || hops.len() > SRH_MAX_HOPS {
        return Err(WireError::MalformedFrame("source route hop count"));
    }
    let srh = SourceRouteHeader {
        segments_left: hops.len(),
        hops,
    };
    let need = FRAME_OVERHEAD + frame.network_len()? + srh.wire_len();
    if need > MTU {
        return Err(WireError::MtuExceeded { need, limit: MTU });
    }
    frame.srh = Some(srh);
    Ok(())
}

/// Advance a source-routed frame at `node`: the source learns the first
/// hop, each listed hop learns its successor, and the final hop sees
/// `Delivered`. Any other node desyncs and must drop the frame.
pub fn srh_next(frame: &mut Frame, node: NodeId) -> SrhStep {
    let src = frame.src;
    let Some(srh) = frame.srh.as_mut() else {
        return SrhStep::RouteDesync;
    };
    let n = srh.hops.len();
    if srh.segments_left > n {
        return SrhStep::RouteDesync;
    }
    if node == srh.hops[n - 1] && srh.segments_left <= 1 {
        srh.segments_left = 0;
        return SrhStep::Delivered;
    }
    if srh.segments_left == n && node == src {
        srh.segments_left -= 1;
        return SrhStep::Forward(srh.hops[0]);
    }
    if srh.segments_left >= 1
        && srh.segments_left < n
        && srh.hops[n - 1 - srh.segments_left] == node
    {
        srh.segments_left -= 1;
        return SrhStep::Forward(srh.hops[n - 1 - srh.segments_left]);
    }
    SrhStep::RouteDesync
}

/// Per-source duplicate filter remembering the last few sequence
/// numbers, tolerant of wraparound because membership is exact.
#[derive(Debug, Default)]
pub struct DupWindow {
    seen: HashMap<NodeId, VecDeque<u16>>,
}

impl DupWindow {
    /// Record (src, seq). Returns true when it was already present.
    pub fn check_and_insert(&mut self, src: NodeId, seq: u16) -> bool {
        let w = self.seen.entry(src).or_default();
        if w.contains(&seq) {
            return true;
        }
        if w.len() == SEQ_DUP_WINDOW {
            w.pop_front();
        }
        w.push_back(seq);
        false
    }
}
