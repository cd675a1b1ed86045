//! Per-node control engine: controller join, flowtable-driven frame
//! handling, throttled controller queries, a small pending buffer for
//! frames awaiting instructions, and periodic state reporting.
//!
//! A node boots unjoined and can only relay along its routing parent.
//! Receiving a CONF addressed to it is the join acknowledgement: the node
//! adopts the carried settings
//! (report period, flowtable lifetime, query throttle window, partial
//! query fields) and installs the controller's default entries. From then
//! on it reports state on a timer and resolves unknown flows by buffering
//! the frame and asking the controller.

use crate::flowtable::{
    Action, EntryId, HfsTable, LIFETIME_INFINITE, LOOKUP_COST_PER_ENTRY, TABLE_CAPACITY,
};
use crate::rng::{self, TAG_FLOW};
use crate::wire::{
    srh_insert, srh_next, ConfBody, DupWindow, FlowKey, Frame, FtqBody, FtsBody, NsuBody,
    PartialByte, Payload, SrhStep, UsdnBody, UsdnMessage, NSU_MAX_NEIGHBORS, PPQ_MAX_FIELDS,
};
use crate::{Micros, NodeId, MICROS_PER_SEC};
use rand_chacha::ChaCha12Rng;
use std::collections::{BTreeMap, HashMap, VecDeque};

/// Frames a node will hold while waiting for controller instructions.
pub const PENDING_CAP: usize = 4;
/// How long a buffered frame waits for an answer before being dropped.
pub const PENDING_TIMEOUT: Micros = 5 * MICROS_PER_SEC;
/// Fixed per-frame processing cost, charged before any scan cost.
pub const PROC_DELAY_BASE: Micros = 500;

/// Why a frame left the network without reaching its destination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DropReason {
    /// Pending buffer at capacity on a table miss.
    BufferFull,
    /// Source route did not pass through the node holding the frame.
    RouteDesync,
    /// A flowtable DROP action matched.
    Policy,
    /// Buffered past PENDING_TIMEOUT with no controller answer.
    QueryTimeout,
    /// No parent and no matching entry to move the frame.
    NoRoute,
    /// Source route would not fit the frame budget.
    Oversize,
    /// Receiver outside radio range.
    OutOfRange,
    /// Channel loss on every transmit attempt.
    Retries,
    /// An interference burst spoiled the deciding attempt.
    Interference,
    /// Still in flight or buffered when the run ended.
    Truncated,
}

impl DropReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            DropReason::BufferFull => "buffer_full",
            DropReason::RouteDesync => "route_desync",
            DropReason::Policy => "policy",
            DropReason::QueryTimeout => "query_timeout",
            DropReason::NoRoute => "no_route",
            DropReason::Oversize => "oversize",
            DropReason::OutOfRange => "out_of_range",
            DropReason::Retries => "retries",
            DropReason::Interference => "interference",
            DropReason::Truncated => "truncated",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Disposition {
    ForwardTo(NodeId),
    DeliverUp,
    Drop(DropReason),
    /// Table miss: the frame was buffered awaiting the controller.
    Query { ftq_emitted: bool },
}

/// Result of pushing one frame through the node.
#[derive(Debug)]
pub struct Handled {
    pub disposition: Disposition,
    /// Processing time charged before the frame moves on.
    pub proc_delay: Micros,
    /// Query frame to send toward the controller, when one was emitted.
    pub ftq: Option<Frame>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interval {
    Fixed(Micros),
    /// Inclusive bounds.
    Uniform(Micros, Micros),
}

impl Interval {
    pub fn sample(&self, rng: &mut ChaCha12Rng) -> Micros {
        match *self {
            Interval::Fixed(d) => d,
            Interval::Uniform(lo, hi) => rng::uniform_micros(rng, lo, hi),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum FlowPriority {
    Low,
    High,
}

#[derive(Debug, Clone)]
pub struct AppFlowSpec {
    pub flow_id: u8,
    pub source: NodeId,
    pub dest: NodeId,
    pub interval: Interval,
    pub priority: FlowPriority,
    pub payload_len: u8,
    pub start: Micros,
}

#[derive(Debug)]
struct FlowState {
    spec: AppFlowSpec,
    next_emit: Micros,
    emitted: u64,
    rng: ChaCha12Rng,
}

#[derive(Debug)]
struct Pending {
    frame: Frame,
    uid: u64,
    enqueued_at: Micros,
}

/// Channel-randomness key for an application frame: stable across
/// configurations of the same seed so matched runs see matched channels.
pub fn app_uid(source: NodeId, flow_id: u8, index: u64) -> u64 {
    (source as u64) << 48 | (flow_id as u64) << 40 | (index & 0xFF_FFFF_FFFF)
}

/// Channel-randomness key for control frames, distinct from every
/// application uid.
pub fn ctrl_uid(node: NodeId, seq: u16) -> u64 {
    1 << 63 | (node as u64) << 16 | seq as u64
}

pub struct NodeSdnState {
    pub id: NodeId,
    /// Where queries and reports go: the root.
    pub controller: NodeId,
    pub joined: bool,
    pub conf: ConfBody,
    pub hfs: HfsTable,
    /// Last query time per flow; repeated misses inside the throttle
    /// window stay quiet.
    cmq: HashMap<FlowKey, Micros>,
    pending: VecDeque<Pending>,
    pub nsu_next: Option<Micros>,
    pub dupes: DupWindow,
    /// (neighbor, link quality) observations feeding state reports.
    neighbors: BTreeMap<NodeId, u8>,
    flows: Vec<FlowState>,
    seq: u16,
    conf_entry_ids: Vec<EntryId>,
}

impl NodeSdnState {
    pub fn new(id: NodeId, controller: NodeId, seed: u64, flows: Vec<AppFlowSpec>) -> Self {
        let flows = flows
            .into_iter()
            .map(|spec| {
                let mut rng = rng::stream(seed, TAG_FLOW, spec.flow_id as u64, id as u64);
                let next_emit = spec.start + spec.interval.sample(&mut rng);
                FlowState {
                    spec,
                    next_emit,
                    emitted: 0,
                    rng,
                }
            })
            .collect();
        NodeSdnState {
            id,
            controller,
            joined: false,
            conf: ConfBody {
                nsu_period_s: 180,
                ft_lifetime_s: 600,
                ftq_throttle_window_s: 1,
                ppq_fields: Vec::new(),
                default_entries: Vec::new(),
            },
            hfs: HfsTable::new(TABLE_CAPACITY, LOOKUP_COST_PER_ENTRY),
            cmq: HashMap::new(),
            pending: VecDeque::new(),
            nsu_next: None,
            dupes: DupWindow::default(),
            neighbors: BTreeMap::new(),
            flows,
            seq: 0,
            conf_entry_ids: Vec::new(),
        }
    }

    pub fn next_seq(&mut self) -> u16 {
        self.seq = self.seq.wrapping_add(1);
        self.seq
    }

    pub fn observe_neighbor(&mut self, id: NodeId, quality: u8) {
        if id != self.id {
            self.neighbors.insert(id, quality);
        }
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    fn lifetime_for(&self, class: crate::flowtable::LifetimeClass) -> Micros {
        use crate::flowtable::LifetimeClass::*;
        match class {
            Configured => self.conf.ft_lifetime_s as Micros * MICROS_PER_SEC,
            Error => crate::flowtable::ERR_ENTRY_LIFETIME,
            Infinite => LIFETIME_INFINITE,
        }
    }

    /// Push one frame through the node. Order: source-route transit is
    /// followed verbatim (transit never queries the controller); frames
    /// addressed here are delivered; everything else goes through the
    /// flowtable, and a miss buffers the frame and maybe queries.
    pub fn handle_frame(
        &mut self,
        frame: &mut Frame,
        uid: u64,
        fallback_parent: Option<NodeId>,
        now: Micros,
    ) -> Handled {
        if frame.srh.is_some() {
            let disposition = match srh_next(frame, self.id) {
                SrhStep::Forward(h) => Disposition::ForwardTo(h),
                SrhStep::Delivered => Disposition::DeliverUp,
                SrhStep::RouteDesync => Disposition::Drop(DropReason::RouteDesync),
            };
            return Handled {
                disposition,
                proc_delay: PROC_DELAY_BASE,
                ftq: None,
            };
        }
        if frame.dst == self.id {
            return Handled {
                disposition: Disposition::DeliverUp,
                proc_delay: PROC_DELAY_BASE,
                ftq: None,
            };
        }
        if !self.joined {
            // An unconfigured node has only its routing parent.
            return Handled {
                disposition: match fallback_parent {
                    Some(p) => Disposition::ForwardTo(p),
                    None => Disposition::Drop(DropReason::NoRoute),
                },
                proc_delay: PROC_DELAY_BASE,
                ftq: None,
            };
        }

        let view = frame.network_view();
        let res = self.hfs.lookup(&view, now);
        let proc_delay = PROC_DELAY_BASE + res.cost;
        if res.hit.is_some() {
            let mut query = false;
            for action in &res.actions {
                match action {
                    Action::Forward(h) => {
                        return Handled {
                            disposition: Disposition::ForwardTo(*h),
                            proc_delay,
                            ftq: None,
                        }
                    }
                    Action::SrhSet(hops) => {
                        if srh_insert(frame, hops.clone()).is_err() {
                            return Handled {
                                disposition: Disposition::Drop(DropReason::Oversize),
                                proc_delay,
                                ftq: None,
                            };
                        }
                        // Consume this node's own position so the next
                        // hop sees a consistent route.
                        let disposition = match srh_next(frame, self.id) {
                            SrhStep::Forward(h) => Disposition::ForwardTo(h),
                            SrhStep::Delivered => Disposition::DeliverUp,
                            SrhStep::RouteDesync => Disposition::Drop(DropReason::RouteDesync),
                        };
                        return Handled {
                            disposition,
                            proc_delay,
                            ftq: None,
                        };
                    }
                    Action::Drop => {
                        return Handled {
                            disposition: Disposition::Drop(DropReason::Policy),
                            proc_delay,
                            ftq: None,
                        }
                    }
                    Action::Accept => {
                        return Handled {
                            disposition: Disposition::DeliverUp,
                            proc_delay,
                            ftq: None,
                        }
                    }
                    Action::FallbackRpl => {
                        return Handled {
                            disposition: match fallback_parent {
                                Some(p) => Disposition::ForwardTo(p),
                                None => Disposition::Drop(DropReason::NoRoute),
                            },
                            proc_delay,
                            ftq: None,
                        }
                    }
                    Action::QueryController => {
                        query = true;
                        break;
                    }
                }
            }
            if !query {
                // Action list exhausted without a terminal action.
                return Handled {
                    disposition: Disposition::Drop(DropReason::Policy),
                    proc_delay,
                    ftq: None,
                };
            }
        }

        // Miss (or an explicit QueryController): buffer and maybe ask.
        let Some(key) = frame.flow_key() else {
            // Control frames are never buffered; keep them moving on the
            // routing fallback.
            return Handled {
                disposition: match fallback_parent {
                    Some(p) => Disposition::ForwardTo(p),
                    None => Disposition::Drop(DropReason::NoRoute),
                },
                proc_delay,
                ftq: None,
            };
        };
        if self.pending.len() >= PENDING_CAP {
            return Handled {
                disposition: Disposition::Drop(DropReason::BufferFull),
                proc_delay,
                ftq: None,
            };
        }
        let ftq = self.maybe_send_ftq(key, &view, now);
        let ftq_emitted = ftq.is_some();
        self.pending.push_back(Pending {
            frame: frame.clone(),
            uid,
            enqueued_at: now,
        });
        Handled {
            disposition: Disposition::Query { ftq_emitted },
            proc_delay,
            ftq,
        }
    }

    /// Emit a flowtable query for `key` unless one already went out
    /// within the throttle window. The query carries the configured
    /// partial fields of the missed frame's network view, or a plain
    /// prefix of it when no fields were configured.
    pub fn maybe_send_ftq(&mut self, key: FlowKey, view: &[u8], now: Micros) -> Option<Frame> {
        let window = self.conf.ftq_throttle_window_s as Micros * MICROS_PER_SEC;
        if let Some(&last) = self.cmq.get(&key) {
            if now - last < window {
                return None;
            }
        }
        self.cmq.insert(key, now);

        let mut partial_bytes = Vec::new();
        if self.conf.ppq_fields.is_empty() {
            for (i, &b) in view.iter().take(PPQ_MAX_FIELDS).enumerate() {
                partial_bytes.push(PartialByte {
                    offset: i as u8,
                    value: b,
                });
            }
        } else {
            'fields: for f in &self.conf.ppq_fields {
                for i in 0..f.length {
                    let off = f.offset as usize + i as usize;
                    if partial_bytes.len() == PPQ_MAX_FIELDS {
                        break 'fields;
                    }
                    if let Some(&b) = view.get(off) {
                        partial_bytes.push(PartialByte {
                            offset: off as u8,
                            value: b,
                        });
                    }
                }
            }
        }
        let seq = self.next_seq();
        Some(Frame {
            src: self.id,
            dst: self.controller,
            seq,
            srh: None,
            payload: Payload::Sdn(UsdnMessage {
                src: self.id,
                seq,
                body: UsdnBody::Ftq(FtqBody {
                    flow_key: key,
                    partial_bytes,
                }),
            }),
        })
    }

    /// Install answered entries, then release every buffered frame that
    /// now matches a live entry, in arrival order, for re-dispatch.
    pub fn on_fts(&mut self, fts: &FtsBody, now: Micros) -> Vec<(Frame, u64)> {
        if !self.joined {
            return Vec::new();
        }
        for spec in &fts.entries {
            let lifetime = self.lifetime_for(spec.lifetime);
            if let Err(e) = self.hfs.install(spec, now, lifetime) {
                log::warn!("node {}: table update rejected: {e}", self.id);
            }
        }
        let mut released = Vec::new();
        let mut kept = VecDeque::new();
        while let Some(p) = self.pending.pop_front() {
            if self.hfs.matches_live(&p.frame.network_view(), now) {
                released.push((p.frame, p.uid));
            } else {
                kept.push_back(p);
            }
        }
        self.pending = kept;
        released
    }

    /// Adopt controller configuration. Re-adoption is idempotent:
    /// previously installed default entries are replaced and the report
    /// timer restarts.
    pub fn on_conf(&mut self, conf: &ConfBody, now: Micros) {
        self.joined = true;
        for id in std::mem::take(&mut self.conf_entry_ids) {
            let _ = self.hfs.remove(id);
        }
        self.conf = conf.clone();
        for spec in &conf.default_entries {
            let lifetime = self.lifetime_for(spec.lifetime);
            match self.hfs.install(spec, now, lifetime) {
                Ok(id) => self.conf_entry_ids.push(id),
                Err(e) => log::warn!("node {}: default entry rejected: {e}", self.id),
            }
        }
        self.nsu_next = Some(now + self.conf.nsu_period_s as Micros * MICROS_PER_SEC);
    }

    /// Drop buffered frames whose wait exceeded PENDING_TIMEOUT.
    pub fn expire_pending(&mut self, now: Micros) -> Vec<(Frame, u64)> {
        let mut out = Vec::new();
        while let Some(p) = self.pending.front() {
            if now.saturating_sub(p.enqueued_at) >= PENDING_TIMEOUT {
                let p = self.pending.pop_front().unwrap();
                out.push((p.frame, p.uid));
            } else {
                break;
            }
        }
        out
    }

    /// Drain everything still buffered (end of run accounting).
    pub fn drain_pending(&mut self) -> Vec<(Frame, u64)> {
        self.pending.drain(..).map(|p| (p.frame, p.uid)).collect()
    }

    /// Timer work due by `now`: the periodic state report (joined nodes
    /// only) and application emissions. Returns frames with their
    /// channel-randomness keys.
    pub fn tick_node(&mut self, now: Micros, energy_estimate: u8) -> Vec<(Frame, u64)> {
        let mut out = Vec::new();
        if self.joined {
            let period = self.conf.nsu_period_s as Micros * MICROS_PER_SEC;
            while let Some(next) = self.nsu_next {
                if next > now {
                    break;
                }
                let seq = self.next_seq();
                let mut neighbors: Vec<(NodeId, u8)> =
                    self.neighbors.iter().map(|(&n, &q)| (n, q)).collect();
                neighbors.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
                neighbors.truncate(NSU_MAX_NEIGHBORS);
                out.push((
                    Frame {
                        src: self.id,
                        dst: self.controller,
                        seq,
                        srh: None,
                        payload: Payload::Sdn(UsdnMessage {
                            src: self.id,
                            seq,
                            body: UsdnBody::Nsu(NsuBody {
                                energy_estimate,
                                buffer_occupancy: self.pending.len() as u8,
                                neighbors,
                            }),
                        }),
                    },
                    ctrl_uid(self.id, seq),
                ));
                self.nsu_next = Some(next + period);
            }
        }
        for f in &mut self.flows {
            while f.next_emit <= now {
                let seq = self.seq.wrapping_add(1);
                self.seq = seq;
                out.push((
                    Frame {
                        src: self.id,
                        dst: f.spec.dest,
                        seq,
                        srh: None,
                        payload: Payload::App {
                            flow_id: f.spec.flow_id,
                            data_len: f.spec.payload_len,
                        },
                    },
                    app_uid(self.id, f.spec.flow_id, f.emitted),
                ));
                f.emitted += 1;
                f.next_emit += f.spec.interval.sample(&mut f.rng);
            }
        }
        out
    }

    /// Earliest future time at which tick_node would emit something.
    pub fn next_activity(&self) -> Option<Micros> {
        let mut t = if self.joined { self.nsu_next } else { None };
        for f in &self.flows {
            t = Some(match t {
                Some(v) => v.min(f.next_emit),
                None => f.next_emit,
            });
        }
        t
    }
}
