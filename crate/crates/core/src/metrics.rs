//! Event log and metric reduction. The simulation appends flat records
//! as things happen; everything reported (delivery ratios, latency
//! distributions, jitter, duty cycle, traffic composition) is reduced
//! from that log after the run. The reduction cross-checks itself: every
//! application frame that entered the system must leave it exactly once,
//! as a delivery or as an attributed drop, or the whole log is rejected.

use crate::node::DropReason;
use crate::wire::{FlowKey, KIND_CONF, KIND_FTQ, KIND_FTS, KIND_NSU};
use crate::{secs6, Micros, NodeId};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Send,
    Deliver,
    Drop,
    RadioOn,
    JoinDag,
    JoinCtrl,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Send => "SEND",
            EventKind::Deliver => "DELIVER",
            EventKind::Drop => "DROP",
            EventKind::RadioOn => "RADIO_ON",
            EventKind::JoinDag => "JOIN_DAG",
            EventKind::JoinCtrl => "JOIN_CTRL",
        }
    }
}

/// Traffic accounting bucket. Application data, routing control, the
/// periodic state reports (constant bit rate control), and the reactive
/// control exchanges (configuration, queries, answers).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Category {
    App,
    Rpl,
    SdnCbr,
    SdnVbr,
}

pub const CATEGORIES: [Category; 4] = [
    Category::App,
    Category::Rpl,
    Category::SdnCbr,
    Category::SdnVbr,
];

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::App => "APP",
            Category::Rpl => "RPL",
            Category::SdnCbr => "SDN_CBR",
            Category::SdnVbr => "SDN_VBR",
        }
    }
}

fn ctrl_name(kind: u8) -> &'static str {
    match kind {
        KIND_NSU => "NSU",
        KIND_FTQ => "FTQ",
        KIND_FTS => "FTS",
        KIND_CONF => "CONF",
        _ => "?",
    }
}

/// One logged event. `src` is always the originating node of the frame
/// in question, `node` the node the event happened at; together with
/// `flow` and `seq` this identifies an application frame across hops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    pub t: Micros,
    pub kind: EventKind,
    pub node: NodeId,
    pub src: NodeId,
    pub category: Option<Category>,
    /// Control message kind for SDN frames.
    pub ctrl: Option<u8>,
    /// Wire bytes charged for SEND, frame size for DELIVER.
    pub bytes: u64,
    pub flow: Option<FlowKey>,
    pub seq: u16,
    /// Hops already traversed. Zero marks origination.
    pub hop_count: Option<u32>,
    pub reason: Option<DropReason>,
    /// Cumulative radio-active microseconds, RADIO_ON only.
    pub busy_us: Option<u64>,
}

impl Record {
    fn blank(t: Micros, kind: EventKind, node: NodeId) -> Record {
        Record {
            t,
            kind,
            node,
            src: node,
            category: None,
            ctrl: None,
            bytes: 0,
            flow: None,
            seq: 0,
            hop_count: None,
            reason: None,
            busy_us: None,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn send(
        t: Micros,
        node: NodeId,
        src: NodeId,
        category: Category,
        ctrl: Option<u8>,
        bytes: u64,
        flow: Option<FlowKey>,
        seq: u16,
        hop_count: u32,
    ) -> Record {
        Record {
            src,
            category: Some(category),
            ctrl,
            bytes,
            flow,
            seq,
            hop_count: Some(hop_count),
            ..Record::blank(t, EventKind::Send, node)
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn deliver(
        t: Micros,
        node: NodeId,
        src: NodeId,
        bytes: u64,
        flow: FlowKey,
        seq: u16,
        hop_count: u32,
    ) -> Record {
        Record {
            src,
            category: Some(Category::App),
            bytes,
            flow: Some(flow),
            seq,
            hop_count: Some(hop_count),
            ..Record::blank(t, EventKind::Deliver, node)
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn drop(
        t: Micros,
        node: NodeId,
        src: NodeId,
        category: Category,
        flow: Option<FlowKey>,
        seq: u16,
        reason: DropReason,
    ) -> Record {
        Record {
            src,
            category: Some(category),
            flow,
            seq,
            reason: Some(reason),
            ..Record::blank(t, EventKind::Drop, node)
        }
    }

    pub fn radio_on(t: Micros, node: NodeId, busy_us: u64) -> Record {
        Record {
            busy_us: Some(busy_us),
            ..Record::blank(t, EventKind::RadioOn, node)
        }
    }

    pub fn join_dag(t: Micros, node: NodeId) -> Record {
        Record::blank(t, EventKind::JoinDag, node)
    }

    pub fn join_ctrl(t: Micros, node: NodeId) -> Record {
        Record::blank(t, EventKind::JoinCtrl, node)
    }
}

/// Append-only run log.
#[derive(Debug, Default)]
pub struct MetricsLog {
    records: Vec<Record>,
}

impl MetricsLog {
    pub fn push(&mut self, r: Record) {
        self.records.push(r);
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LogError {
    #[error("frame {src}:{flow_id}:{seq} has {terminals} terminal records, want exactly 1")]
    BadTerminalCount {
        src: NodeId,
        flow_id: u8,
        seq: u16,
        terminals: usize,
    },
    #[error("frame {src}:{flow_id}:{seq} was delivered but never originated")]
    DeliveredUnsent { src: NodeId, flow_id: u8, seq: u16 },
    #[error("frame {src}:{flow_id}:{seq} originated {sends} times")]
    DuplicateOrigination {
        src: NodeId,
        flow_id: u8,
        seq: u16,
        sends: usize,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CatStats {
    pub packets: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, Default)]
pub struct FlowStats {
    pub sent: u64,
    pub delivered: u64,
    /// Seconds, in emission order, delivered frames only.
    pub latencies: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct NodeStats {
    pub hop_ring: Option<u32>,
    pub join_dag: Option<Micros>,
    pub join_ctrl: Option<Micros>,
    pub sent: u64,
    pub delivered: u64,
    pub latencies: Vec<f64>,
    pub jitter: Option<f64>,
    pub rdc: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct RingStats {
    pub nodes: u64,
    pub sent: u64,
    pub delivered: u64,
    pub latencies: Vec<f64>,
    pub rdc_mean: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub duration: Micros,
    pub app_sent: u64,
    pub app_delivered: u64,
    /// Pooled over flows, each flow's frames in emission order.
    pub latencies: Vec<f64>,
    /// Mean absolute difference of consecutive same-flow latencies,
    /// pooled over flows.
    pub jitter: Option<f64>,
    pub per_node: BTreeMap<NodeId, NodeStats>,
    pub per_ring: BTreeMap<u32, RingStats>,
    pub per_flow: BTreeMap<(NodeId, FlowKey), FlowStats>,
    pub categories: BTreeMap<Category, CatStats>,
    pub drops: BTreeMap<DropReason, u64>,
    /// Queries issued (originations, not per-hop transmissions).
    pub ftq_count: u64,
}

impl MetricsReport {
    pub fn pdr(&self) -> Option<f64> {
        ratio(self.app_delivered, self.app_sent)
    }
}

pub fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

/// Nearest-rank percentile, `p` in [0, 1].
pub fn percentile(xs: &[f64], p: f64) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((v.len() as f64 * p).ceil() as usize).clamp(1, v.len());
    Some(v[rank - 1])
}

/// Mean absolute difference of consecutive values. The input must be in
/// emission order; a lone value has no jitter.
pub fn jitter_of(lats: &[f64]) -> Option<f64> {
    if lats.len() < 2 {
        return None;
    }
    let sum: f64 = lats.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    Some(sum / (lats.len() - 1) as f64)
}

/// Pooled jitter: consecutive differences within each flow, averaged
/// over every difference from every flow.
fn pooled_jitter<'a>(flows: impl Iterator<Item = &'a [f64]>) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for lats in flows {
        sum += lats.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>();
        n += lats.len().saturating_sub(1);
    }
    (n > 0).then(|| sum / n as f64)
}

#[derive(Default)]
struct FrameAcc {
    orig: Option<Micros>,
    deliver: Option<Micros>,
    dropped: bool,
    orig_count: usize,
    terminal_count: usize,
}

/// Reduce a log to a report. `rings` lists every node in the run with
/// its final hop ring (distance from the root in rank steps); `duration`
/// is the simulated span, used for duty cycle.
pub fn compute_metrics(
    log: &MetricsLog,
    rings: &BTreeMap<NodeId, Option<u32>>,
    duration: Micros,
) -> Result<MetricsReport, LogError> {
    let mut frames: BTreeMap<(NodeId, FlowKey, u16), FrameAcc> = BTreeMap::new();
    let mut categories: BTreeMap<Category, CatStats> =
        CATEGORIES.iter().map(|&c| (c, CatStats::default())).collect();
    let mut drops: BTreeMap<DropReason, u64> = BTreeMap::new();
    let mut ftq_count = 0u64;
    let mut per_node: BTreeMap<NodeId, NodeStats> = rings
        .iter()
        .map(|(&n, &ring)| {
            (
                n,
                NodeStats {
                    hop_ring: ring,
                    ..NodeStats::default()
                },
            )
        })
        .collect();

    for r in log.records() {
        match r.kind {
            EventKind::Send => {
                if let Some(cat) = r.category {
                    let c = categories.entry(cat).or_default();
                    c.packets += 1;
                    c.bytes += r.bytes;
                }
                if r.ctrl == Some(KIND_FTQ) && r.hop_count == Some(0) {
                    ftq_count += 1;
                }
                if r.category == Some(Category::App) && r.hop_count == Some(0) {
                    if let Some(flow) = r.flow {
                        let acc = frames.entry((r.src, flow, r.seq)).or_default();
                        acc.orig = Some(r.t);
                        acc.orig_count += 1;
                    }
                }
            }
            EventKind::Deliver => {
                if let Some(flow) = r.flow {
                    let acc = frames.entry((r.src, flow, r.seq)).or_default();
                    acc.deliver = Some(r.t);
                    acc.terminal_count += 1;
                }
            }
            EventKind::Drop => {
                if let Some(reason) = r.reason {
                    *drops.entry(reason).or_default() += 1;
                }
                if r.category == Some(Category::App) {
                    if let Some(flow) = r.flow {
                        let acc = frames.entry((r.src, flow, r.seq)).or_default();
                        acc.dropped = true;
                        acc.terminal_count += 1;
                    }
                }
            }
            EventKind::RadioOn => {
                if let Some(busy) = r.busy_us {
                    if let Some(ns) = per_node.get_mut(&r.node) {
                        ns.rdc = (duration > 0).then(|| busy as f64 / duration as f64);
                    }
                }
            }
            EventKind::JoinDag => {
                if let Some(ns) = per_node.get_mut(&r.node) {
                    ns.join_dag.get_or_insert(r.t);
                }
            }
            EventKind::JoinCtrl => {
                if let Some(ns) = per_node.get_mut(&r.node) {
                    ns.join_ctrl.get_or_insert(r.t);
                }
            }
        }
    }

    // Every application frame leaves the system exactly once.
    for (&(src, flow, seq), acc) in &frames {
        if acc.orig_count > 1 {
            return Err(LogError::DuplicateOrigination {
                src,
                flow_id: flow.flow_id,
                seq,
                sends: acc.orig_count,
            });
        }
        if acc.terminal_count != 1 {
            return Err(LogError::BadTerminalCount {
                src,
                flow_id: flow.flow_id,
                seq,
                terminals: acc.terminal_count,
            });
        }
        if acc.deliver.is_some() && acc.orig.is_none() {
            return Err(LogError::DeliveredUnsent {
                src,
                flow_id: flow.flow_id,
                seq,
            });
        }
    }

    // Per-flow accumulation; frames iterate in (src, flow, seq) order, and
    // latencies are re-sorted by origination time to survive seq wrap.
    let mut per_flow: BTreeMap<(NodeId, FlowKey), FlowStats> = BTreeMap::new();
    let mut flow_lat_times: BTreeMap<(NodeId, FlowKey), Vec<(Micros, f64)>> = BTreeMap::new();
    for (&(src, flow, _seq), acc) in &frames {
        let fs = per_flow.entry((src, flow)).or_default();
        fs.sent += 1;
        if let (Some(d), Some(o)) = (acc.deliver, acc.orig) {
            fs.delivered += 1;
            let lat = d.saturating_sub(o) as f64 / 1e6;
            flow_lat_times.entry((src, flow)).or_default().push((o, lat));
        }
    }
    for (key, mut pairs) in flow_lat_times {
        pairs.sort_by_key(|&(o, _)| o);
        per_flow.get_mut(&key).unwrap().latencies = pairs.into_iter().map(|(_, l)| l).collect();
    }

    // Roll flows up into nodes, rings, and the overall report.
    let mut per_ring: BTreeMap<u32, RingStats> = BTreeMap::new();
    for ring in rings.values().filter_map(|&r| r) {
        per_ring.entry(ring).or_default().nodes += 1;
    }
    let mut app_sent = 0u64;
    let mut app_delivered = 0u64;
    let mut all_lats = Vec::new();
    for (&(src, _flow), fs) in &per_flow {
        app_sent += fs.sent;
        app_delivered += fs.delivered;
        all_lats.extend_from_slice(&fs.latencies);
        if let Some(ns) = per_node.get_mut(&src) {
            ns.sent += fs.sent;
            ns.delivered += fs.delivered;
            ns.latencies.extend_from_slice(&fs.latencies);
        }
        if let Some(Some(ring)) = rings.get(&src) {
            let rs = per_ring.entry(*ring).or_default();
            rs.sent += fs.sent;
            rs.delivered += fs.delivered;
            rs.latencies.extend_from_slice(&fs.latencies);
        }
    }
    for (node, ns) in per_node.iter_mut() {
        ns.jitter = pooled_jitter(
            per_flow
                .iter()
                .filter(|((src, _), _)| src == node)
                .map(|(_, fs)| fs.latencies.as_slice()),
        );
    }
    for (ring, rs) in per_ring.iter_mut() {
        let members: Vec<f64> = per_node
            .values()
            .filter(|ns| ns.hop_ring == Some(*ring))
            .filter_map(|ns| ns.rdc)
            .collect();
        rs.rdc_mean = mean(&members);
    }
    let jitter = pooled_jitter(per_flow.values().map(|fs| fs.latencies.as_slice()));

    Ok(MetricsReport {
        duration,
        app_sent,
        app_delivered,
        latencies: all_lats,
        jitter,
        per_node,
        per_ring,
        per_flow,
        categories,
        drops,
        ftq_count,
    })
}

fn opt_f6(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_default()
}

fn opt_secs6(t: Option<Micros>) -> String {
    t.map(secs6).unwrap_or_default()
}

pub const SUMMARY_HEADER: &str = "scenario,seed,duration_s,nodes,app_sent,app_delivered,pdr,\
     latency_mean_s,latency_p50_s,latency_p95_s,jitter_s,rdc_mean,app_packets,rpl_packets,\
     sdn_cbr_packets,sdn_vbr_packets,app_bytes,rpl_bytes,sdn_cbr_bytes,sdn_vbr_bytes,\
     ftq_count,drops";

/// One summary row without the header, for accumulating runs into one
/// table.
pub fn summary_row(r: &MetricsReport, scenario: &str, seed: u64) -> String {
    let rdcs: Vec<f64> = r.per_node.values().filter_map(|n| n.rdc).collect();
    let cat = |c: Category| r.categories.get(&c).cloned().unwrap_or_default();
    let drops_total: u64 = r.drops.values().sum();
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
        scenario,
        seed,
        secs6(r.duration),
        r.per_node.len(),
        r.app_sent,
        r.app_delivered,
        opt_f6(r.pdr()),
        opt_f6(mean(&r.latencies)),
        opt_f6(median(&r.latencies)),
        opt_f6(percentile(&r.latencies, 0.95)),
        opt_f6(r.jitter),
        opt_f6(mean(&rdcs)),
        cat(Category::App).packets,
        cat(Category::Rpl).packets,
        cat(Category::SdnCbr).packets,
        cat(Category::SdnVbr).packets,
        cat(Category::App).bytes,
        cat(Category::Rpl).bytes,
        cat(Category::SdnCbr).bytes,
        cat(Category::SdnVbr).bytes,
        r.ftq_count,
        drops_total,
    )
}

/// One row per run.
pub fn summary_csv(r: &MetricsReport, scenario: &str, seed: u64) -> String {
    format!("{}\n{}", SUMMARY_HEADER, summary_row(r, scenario, seed))
}

pub fn per_node_csv(r: &MetricsReport) -> String {
    let mut out = String::from(
        "node,hop_ring,join_dag_s,join_ctrl_s,app_sent,app_delivered,pdr,\
         latency_mean_s,latency_p95_s,jitter_s,rdc\n",
    );
    for (node, ns) in &r.per_node {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            node,
            ns.hop_ring.map(|h| h.to_string()).unwrap_or_default(),
            opt_secs6(ns.join_dag),
            opt_secs6(ns.join_ctrl),
            ns.sent,
            ns.delivered,
            opt_f6(ratio(ns.delivered, ns.sent)),
            opt_f6(mean(&ns.latencies)),
            opt_f6(percentile(&ns.latencies, 0.95)),
            opt_f6(ns.jitter),
            opt_f6(ns.rdc),
        ));
    }
    out
}

/// Four fixed rows, one per category, with packet and byte fractions of
/// the whole.
pub fn traffic_ratio_csv(r: &MetricsReport) -> String {
    let total_p: u64 = r.categories.values().map(|c| c.packets).sum();
    let total_b: u64 = r.categories.values().map(|c| c.bytes).sum();
    let mut out = String::from("category,packets,bytes,packet_fraction,byte_fraction\n");
    for c in CATEGORIES {
        let s = r.categories.get(&c).cloned().unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6}\n",
            c.as_str(),
            s.packets,
            s.bytes,
            ratio(s.packets, total_p).unwrap_or(0.0),
            ratio(s.bytes, total_b).unwrap_or(0.0),
        ));
    }
    out
}

/// Full event dump, one row per record.
pub fn events_csv(log: &MetricsLog) -> String {
    let mut out = String::from(
        "t_s,kind,node,src,category,ctrl,bytes,flow_dest,flow_id,seq,hop_count,reason,busy_us\n",
    );
    for r in log.records() {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            secs6(r.t),
            r.kind.as_str(),
            r.node,
            r.src,
            r.category.map(|c| c.as_str()).unwrap_or(""),
            r.ctrl.map(ctrl_name).unwrap_or(""),
            r.bytes,
            r.flow.map(|f| f.dest.to_string()).unwrap_or_default(),
            r.flow.map(|f| f.flow_id.to_string()).unwrap_or_default(),
            r.seq,
            r.hop_count.map(|h| h.to_string()).unwrap_or_default(),
            r.reason.map(|x| x.as_str()).unwrap_or(""),
            r.busy_us.map(|b| b.to_string()).unwrap_or_default(),
        ));
    }
    out
}
