//! Scenario execution: builds the network for one seed, drives the
//! event clock to the horizon, and reduces the log into a report.
//!
//! The runner owns everything the per-node state machines must not see
//! directly: the medium, the link layer, the shared clock, the root's
//! route table, and the embedded controller. Nodes communicate only
//! through frames scheduled here.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::config::{ConfigError, Scenario};
use crate::controller::{Controller, CtrlEmit};
use crate::metrics::{compute_metrics, Category, LogError, MetricsLog, MetricsReport, Record};
use crate::node::{ctrl_uid, Disposition, DropReason, Handled, NodeSdnState, PROC_DELAY_BASE};
use crate::rpl::{DaoRouteTable, JoinChange, RplDriver, RplEmit, RplMsg};
use crate::sim::{EventQueue, MacLayer, Medium, Outcome};
use crate::wire::{
    srh_insert, srh_next, FlowKey, Frame, Payload, SrhStep, UsdnBody, UsdnMessage, KIND_FTQ,
    KIND_NSU,
};
use crate::{Micros, NodeId, MICROS_PER_SEC};

/// Link-layer broadcast address; never a valid node id.
pub const BROADCAST: NodeId = 0xffff;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("event log failed consistency checks: {0}")]
    Log(#[from] LogError),
}

/// Everything a finished run exposes.
pub struct RunOutput {
    pub report: MetricsReport,
    pub log: MetricsLog,
    /// Hop ring per node at the end of the run; None means never joined.
    pub rings: BTreeMap<NodeId, Option<u32>>,
}

enum Ev {
    /// Routing timer wheel for one node is due.
    RplTick(NodeId),
    /// Application emission or state report timer for one node is due.
    NodeTick(NodeId),
    /// A frame finishes its last wake at the receiver.
    Arrive {
        to: NodeId,
        from: NodeId,
        frame: Frame,
        hops: u32,
        uid: u64,
    },
    /// Coarse maintenance: table expiry, pending timeout, route aging.
    SecondTick,
}

struct NodeCtx {
    sdn: NodeSdnState,
    rpl: RplDriver,
}

struct World<'s> {
    scenario: &'s Scenario,
    seed: u64,
    duration: Micros,
    root: NodeId,
    medium: Medium,
    mac: MacLayer,
    queue: EventQueue<Ev>,
    log: MetricsLog,
    nodes: BTreeMap<NodeId, NodeCtx>,
    controller: Option<Controller>,
    /// Root-side child -> parent table fed by DAOs.
    routes: DaoRouteTable,
    /// Hops already travelled, by frame uid, so a frame released from a
    /// pending buffer keeps its place in the path.
    hops_of: HashMap<u64, u32>,
    /// Latest scheduled tick per node; anything popping earlier is stale.
    rpl_tick_at: HashMap<NodeId, Micros>,
    node_tick_at: HashMap<NodeId, Micros>,
    /// Link quality byte reported to neighbors, from the configured
    /// delivery probability.
    quality: u8,
}

fn categorize(frame: &Frame) -> (Category, Option<u8>) {
    match &frame.payload {
        Payload::App { .. } => (Category::App, None),
        Payload::Rpl(_) => (Category::Rpl, None),
        Payload::Sdn(m) => {
            let kind = m.kind();
            if kind == KIND_NSU {
                (Category::SdnCbr, Some(kind))
            } else {
                (Category::SdnVbr, Some(kind))
            }
        }
    }
}

/// The flow a log record is attributed to: the frame's own key for
/// application traffic, the queried key for route questions.
fn frame_flow(frame: &Frame) -> Option<FlowKey> {
    match &frame.payload {
        Payload::Sdn(m) => match &m.body {
            UsdnBody::Ftq(q) => Some(q.flow_key),
            _ => None,
        },
        _ => frame.flow_key(),
    }
}

impl<'s> World<'s> {
    fn build(scenario: &'s Scenario, seed: u64) -> Result<World<'s>, RunError> {
        let positions = scenario.positions(seed)?;
        let mut medium = Medium::new(scenario.tx_range, scenario.link_success);
        for (&id, &(x, y)) in &positions {
            medium.place(id, x, y);
        }
        medium.interferers = scenario.interferers.clone();
        let ids: Vec<NodeId> = positions.keys().copied().collect();
        let mac = MacLayer::new(seed, scenario.mac, &ids);
        let root = scenario.root;
        let conf = scenario.conf_body();

        let mut nodes = BTreeMap::new();
        for &id in &ids {
            let flows = scenario
                .flows
                .iter()
                .filter(|f| f.source == id)
                .cloned()
                .collect();
            let mut sdn = NodeSdnState::new(id, root, seed, flows);
            if id == root {
                if let Some(c) = &conf {
                    // The controller is co-located with the root: adopt
                    // the configuration at time zero and suppress state
                    // reports to self.
                    sdn.on_conf(c, 0);
                    sdn.nsu_next = None;
                }
            }
            let rpl = RplDriver::new(seed, id, id == root, scenario.rpl);
            nodes.insert(id, NodeCtx { sdn, rpl });
        }

        let controller = match (&conf, &scenario.sdn) {
            (Some(c), Some(p)) => {
                let period = Micros::from(p.nsu_period_s) * MICROS_PER_SEC;
                let mut ctrl = Controller::new(
                    root,
                    c.clone(),
                    scenario.policy.clone(),
                    period,
                    p.srhi,
                    p.fr,
                );
                ctrl.view.nodes.entry(root).or_default().conf_sent_at = Some(0);
                Some(ctrl)
            }
            _ => None,
        };

        let mut world = World {
            scenario,
            seed,
            duration: scenario.duration,
            root,
            medium,
            mac,
            queue: EventQueue::default(),
            log: MetricsLog::default(),
            nodes,
            controller,
            routes: DaoRouteTable::default(),
            hops_of: HashMap::new(),
            rpl_tick_at: HashMap::new(),
            node_tick_at: HashMap::new(),
            quality: (scenario.link_success * 255.0).round() as u8,
        };

        world.log.push(Record::join_dag(0, root));
        if world.controller.is_some() {
            world.log.push(Record::join_ctrl(0, root));
        }
        for &id in &ids {
            world.resched_rpl(id);
            world.resched_node(id);
        }
        world
            .queue
            .schedule(MICROS_PER_SEC, Ev::SecondTick)
            .expect("first maintenance tick");
        Ok(world)
    }

    /// Keep exactly one live tick event per node. An event whose time no
    /// longer matches the recorded one is a leftover and gets skipped on
    /// pop.
    fn resched_rpl(&mut self, id: NodeId) {
        if let Some(due) = self.nodes[&id].rpl.next_activity() {
            let due = due.max(self.queue.now());
            if self.rpl_tick_at.get(&id) != Some(&due) {
                self.rpl_tick_at.insert(id, due);
                self.queue
                    .schedule(due, Ev::RplTick(id))
                    .expect("rpl tick in the future");
            }
        }
    }

    fn resched_node(&mut self, id: NodeId) {
        if let Some(due) = self.nodes[&id].sdn.next_activity() {
            let due = due.max(self.queue.now());
            if self.node_tick_at.get(&id) != Some(&due) {
                self.node_tick_at.insert(id, due);
                self.queue
                    .schedule(due, Ev::NodeTick(id))
                    .expect("node tick in the future");
            }
        }
    }

    fn process(&mut self, ev: Ev, t: Micros) {
        match ev {
            Ev::RplTick(id) => {
                if self.rpl_tick_at.get(&id) != Some(&t) {
                    return;
                }
                let emits = self.nodes.get_mut(&id).unwrap().rpl.tick(t);
                for emit in emits {
                    self.send_rpl(id, emit, t);
                }
                self.resched_rpl(id);
            }
            Ev::NodeTick(id) => {
                if self.node_tick_at.get(&id) != Some(&t) {
                    return;
                }
                let energy = (self.mac.rdc(id, 0, t.max(1)) * 255.0).round() as u8;
                let frames = self.nodes.get_mut(&id).unwrap().sdn.tick_node(t, energy);
                for (frame, uid) in frames {
                    self.originate(id, frame, uid, t);
                }
                self.resched_node(id);
            }
            Ev::Arrive {
                to,
                from,
                frame,
                hops,
                uid,
            } => self.arrive(to, from, frame, hops, uid, t),
            Ev::SecondTick => {
                self.maintain(t);
                let next = t + MICROS_PER_SEC;
                if next <= self.duration {
                    self.queue
                        .schedule(next, Ev::SecondTick)
                        .expect("maintenance tick in the future");
                }
            }
        }
    }

    fn maintain(&mut self, t: Micros) {
        let ids: Vec<NodeId> = self.nodes.keys().copied().collect();
        for id in ids {
            let ctx = self.nodes.get_mut(&id).unwrap();
            ctx.sdn.hfs.purge_expired(t);
            let expired = ctx.sdn.expire_pending(t);
            for (frame, uid) in expired {
                self.log_drop(id, &frame, uid, DropReason::QueryTimeout, t);
            }
        }
        self.routes.drop_expired(t);
    }

    /// A frame enters the pipeline at its source. Application frames log
    /// their origination here, timestamped at emission, so queueing for a
    /// route answer counts toward latency.
    fn originate(&mut self, id: NodeId, mut frame: Frame, uid: u64, t: Micros) {
        self.hops_of.insert(uid, 0);
        if let Payload::App { .. } = frame.payload {
            let bytes = frame.total_len().unwrap_or(0) as u64;
            self.log.push(Record::send(
                t,
                id,
                id,
                Category::App,
                None,
                bytes,
                frame.flow_key(),
                frame.seq,
                0,
            ));
        }
        let handled = {
            let ctx = self.nodes.get_mut(&id).unwrap();
            let parent = ctx.rpl.dodag.preferred_parent;
            ctx.sdn.handle_frame(&mut frame, uid, parent, t)
        };
        self.dispatch(id, frame, uid, handled, 0, t);
    }

    /// Run a frame that re-enters the pipeline at `id` (released from a
    /// pending buffer) through the node again.
    fn rehandle(&mut self, id: NodeId, mut frame: Frame, uid: u64, t: Micros) {
        let hops = self.hops_of.get(&uid).copied().unwrap_or(0);
        let handled = {
            let ctx = self.nodes.get_mut(&id).unwrap();
            let parent = ctx.rpl.dodag.preferred_parent;
            ctx.sdn.handle_frame(&mut frame, uid, parent, t)
        };
        self.dispatch(id, frame, uid, handled, hops, t);
    }

    fn dispatch(&mut self, at: NodeId, frame: Frame, uid: u64, handled: Handled, hops: u32, t: Micros) {
        let t_out = t + handled.proc_delay;
        if let Some(ftq) = handled.ftq {
            // Queries log their origination at decision time, before any
            // processing delay, so the log mirrors the throttle clock
            // exactly. The hop-zero transmission below skips its own
            // record in exchange.
            self.log.push(Record::send(
                t,
                at,
                at,
                Category::SdnVbr,
                Some(KIND_FTQ),
                ftq.total_len().unwrap_or(0) as u64,
                frame_flow(&ftq),
                ftq.seq,
                0,
            ));
            if at == self.root {
                self.answer_local_query(&ftq, t_out);
            } else {
                let ftq_uid = ctrl_uid(at, ftq.seq);
                self.originate(at, ftq, ftq_uid, t_out);
            }
        }
        match handled.disposition {
            Disposition::ForwardTo(next) => self.unicast_hop(at, next, frame, hops, uid, t_out),
            Disposition::DeliverUp => self.deliver_up(at, frame, uid, hops, t_out),
            Disposition::Drop(reason) => self.log_drop(at, &frame, uid, reason, t_out),
            Disposition::Query { .. } => {
                // The frame sits in the node's pending buffer until an
                // answer or a timeout moves it.
            }
        }
    }

    /// One radio transmission. Every transmission that actually strobes
    /// gets a SEND record; the hop-zero application record was already
    /// written at emission, so it is not repeated here.
    fn unicast_hop(
        &mut self,
        from: NodeId,
        to: NodeId,
        frame: Frame,
        hops: u32,
        uid: u64,
        t: Micros,
    ) {
        let bytes = match frame.total_len() {
            Ok(b) => b,
            Err(_) => {
                self.log_drop(from, &frame, uid, DropReason::Oversize, t);
                return;
            }
        };
        let outcome = self.mac.unicast(&self.medium, from, to, bytes, t, uid);
        // Application frames and queries already logged their origination
        // at emission time.
        let origin_prelogged = hops == 0
            && match &frame.payload {
                Payload::App { .. } => true,
                Payload::Sdn(m) => m.kind() == KIND_FTQ,
                Payload::Rpl(_) => false,
            };
        if !origin_prelogged && outcome != Outcome::LostChannel {
            let (category, ctrl) = categorize(&frame);
            self.log.push(Record::send(
                t,
                from,
                frame.src,
                category,
                ctrl,
                bytes as u64,
                frame_flow(&frame),
                frame.seq,
                hops,
            ));
        }
        match outcome {
            Outcome::DeliveredAt(rx) => {
                self.queue
                    .schedule(
                        rx,
                        Ev::Arrive {
                            to,
                            from,
                            frame,
                            hops: hops + 1,
                            uid,
                        },
                    )
                    .expect("delivery in the future");
            }
            Outcome::LostChannel => self.log_drop(from, &frame, uid, DropReason::OutOfRange, t),
            Outcome::ExceededRetries => self.log_drop(from, &frame, uid, DropReason::Retries, t),
            Outcome::LostInterference { at } => {
                self.log_drop(from, &frame, uid, DropReason::Interference, at)
            }
        }
    }

    fn send_rpl(&mut self, from: NodeId, emit: RplEmit, t: Micros) {
        match emit {
            RplEmit::Broadcast(msg) => {
                let seq = self.nodes.get_mut(&from).unwrap().sdn.next_seq();
                let frame = Frame {
                    src: from,
                    dst: BROADCAST,
                    seq,
                    srh: None,
                    payload: Payload::Rpl(msg),
                };
                let bytes = frame.total_len().expect("routing beacons fit the frame");
                let uid = ctrl_uid(from, seq);
                let hearers = self.mac.broadcast(&self.medium, from, bytes, t, uid);
                self.log.push(Record::send(
                    t,
                    from,
                    from,
                    Category::Rpl,
                    None,
                    bytes as u64,
                    None,
                    seq,
                    0,
                ));
                for (nbr, heard) in hearers {
                    if let Some(rx) = heard {
                        self.queue
                            .schedule(
                                rx,
                                Ev::Arrive {
                                    to: nbr,
                                    from,
                                    frame: frame.clone(),
                                    hops: 1,
                                    uid,
                                },
                            )
                            .expect("broadcast reception in the future");
                    }
                }
            }
            RplEmit::ToRoot(msg) => {
                let Some(parent) = self.nodes[&from].rpl.dodag.preferred_parent else {
                    return;
                };
                let seq = self.nodes.get_mut(&from).unwrap().sdn.next_seq();
                let frame = Frame {
                    src: from,
                    dst: self.root,
                    seq,
                    srh: None,
                    payload: Payload::Rpl(msg),
                };
                let uid = ctrl_uid(from, seq);
                self.hops_of.insert(uid, 0);
                self.unicast_hop(from, parent, frame, 0, uid, t);
            }
        }
    }

    fn arrive(&mut self, to: NodeId, from: NodeId, mut frame: Frame, hops: u32, uid: u64, t: Micros) {
        let quality = self.quality;
        let dup = {
            let Some(ctx) = self.nodes.get_mut(&to) else {
                return;
            };
            ctx.sdn.observe_neighbor(from, quality);
            ctx.sdn.dupes.check_and_insert(frame.src, frame.seq)
        };
        if dup {
            self.hops_of.remove(&uid);
            return;
        }
        self.hops_of.insert(uid, hops);
        if matches!(frame.payload, Payload::Rpl(_)) {
            self.arrive_rpl(to, frame, hops, uid, t);
            return;
        }
        let handled = {
            let ctx = self.nodes.get_mut(&to).unwrap();
            let parent = ctx.rpl.dodag.preferred_parent;
            ctx.sdn.handle_frame(&mut frame, uid, parent, t)
        };
        self.dispatch(to, frame, uid, handled, hops, t);
    }

    fn arrive_rpl(&mut self, to: NodeId, frame: Frame, hops: u32, uid: u64, t: Micros) {
        let Payload::Rpl(msg) = frame.payload else {
            return;
        };
        let from = frame.src;
        match msg {
            RplMsg::Dis => {
                self.nodes.get_mut(&to).unwrap().rpl.on_dis_heard(t);
                self.hops_of.remove(&uid);
                self.resched_rpl(to);
            }
            RplMsg::Dio { rank } => {
                // The broadcast sender is the DIO's own origin, so the
                // frame src doubles as the candidate parent id.
                let change = self
                    .nodes
                    .get_mut(&to)
                    .unwrap()
                    .rpl
                    .on_dio_heard(from, rank, t);
                if change == JoinChange::Joined {
                    self.log.push(Record::join_dag(t, to));
                }
                self.hops_of.remove(&uid);
                self.resched_rpl(to);
            }
            RplMsg::Dao { child, parent } => {
                if to == self.root {
                    let outcome = self.routes.on_dao(child, parent, t);
                    let emit = self
                        .controller
                        .as_mut()
                        .and_then(|c| c.ctrl_on_dao(&self.routes, child, parent, outcome, t));
                    self.hops_of.remove(&uid);
                    if let Some(e) = emit {
                        self.apply_ctrl_emit(e, t);
                    }
                } else {
                    // Relay the report another hop up the tree.
                    let next = self.nodes[&to].rpl.dodag.preferred_parent;
                    match next {
                        Some(p) => {
                            self.unicast_hop(to, p, frame, hops, uid, t + PROC_DELAY_BASE)
                        }
                        None => self.log_drop(
                            to,
                            &frame,
                            uid,
                            DropReason::NoRoute,
                            t + PROC_DELAY_BASE,
                        ),
                    }
                }
            }
        }
    }

    fn deliver_up(&mut self, at: NodeId, frame: Frame, uid: u64, hops: u32, t: Micros) {
        match frame.payload {
            Payload::App { .. } => {
                let key = frame.flow_key().expect("application frames carry a flow key");
                let bytes = frame.total_len().unwrap_or(0) as u64;
                self.log
                    .push(Record::deliver(t, at, frame.src, bytes, key, frame.seq, hops));
                self.hops_of.remove(&uid);
            }
            Payload::Sdn(ref msg) => {
                let msg = msg.clone();
                self.hops_of.remove(&uid);
                self.handle_ctrl(at, msg, t);
            }
            Payload::Rpl(_) => {}
        }
    }

    fn handle_ctrl(&mut self, at: NodeId, msg: UsdnMessage, t: Micros) {
        match &msg.body {
            UsdnBody::Conf(conf) => {
                let ctx = self.nodes.get_mut(&at).unwrap();
                let first = !ctx.sdn.joined;
                ctx.sdn.on_conf(conf, t);
                if first {
                    self.log.push(Record::join_ctrl(t, at));
                }
                self.resched_node(at);
            }
            UsdnBody::Fts(fts) => {
                let released = self.nodes.get_mut(&at).unwrap().sdn.on_fts(fts, t);
                for (frame, fuid) in released {
                    self.rehandle(at, frame, fuid, t);
                }
            }
            UsdnBody::Ftq(q) => {
                if at != self.root {
                    return;
                }
                let emits = match self.controller.as_mut() {
                    Some(c) => c.ctrl_on_ftq(&self.routes, msg.src, q, t),
                    None => Vec::new(),
                };
                for e in emits {
                    self.apply_ctrl_emit(e, t);
                }
            }
            UsdnBody::Nsu(n) => {
                if at != self.root {
                    return;
                }
                if let Some(c) = self.controller.as_mut() {
                    c.ctrl_on_nsu(msg.src, n, t);
                }
            }
        }
    }

    /// The root queried its own embedded controller; no frames hit the
    /// air for the question.
    fn answer_local_query(&mut self, ftq: &Frame, t: Micros) {
        let Payload::Sdn(msg) = &ftq.payload else {
            return;
        };
        let UsdnBody::Ftq(q) = &msg.body else {
            return;
        };
        let emits = match self.controller.as_mut() {
            Some(c) => c.ctrl_on_ftq(&self.routes, self.root, q, t),
            None => Vec::new(),
        };
        for e in emits {
            self.apply_ctrl_emit(e, t);
        }
    }

    fn apply_ctrl_emit(&mut self, emit: CtrlEmit, t: Micros) {
        if emit.dest == self.root {
            // Local application, no radio involved.
            let body = emit.body;
            match &body {
                UsdnBody::Conf(c) => {
                    self.nodes.get_mut(&self.root).unwrap().sdn.on_conf(c, t);
                }
                UsdnBody::Fts(f) => {
                    let released = self.nodes.get_mut(&self.root).unwrap().sdn.on_fts(f, t);
                    for (frame, fuid) in released {
                        self.rehandle(self.root, frame, fuid, t);
                    }
                }
                _ => {}
            }
            return;
        }
        let seq = self.nodes.get_mut(&self.root).unwrap().sdn.next_seq();
        let mut frame = Frame {
            src: self.root,
            dst: emit.dest,
            seq,
            srh: None,
            payload: Payload::Sdn(UsdnMessage {
                src: self.root,
                seq,
                body: emit.body,
            }),
        };
        if emit.path.is_empty() {
            log::warn!("control frame for {} has no route, dropping", emit.dest);
            return;
        }
        if let Err(err) = srh_insert(&mut frame, emit.path) {
            log::warn!("control frame for {} unroutable: {}", emit.dest, err);
            return;
        }
        let uid = ctrl_uid(self.root, seq);
        self.hops_of.insert(uid, 0);
        match srh_next(&mut frame, self.root) {
            SrhStep::Forward(next) => {
                self.unicast_hop(self.root, next, frame, 0, uid, t + PROC_DELAY_BASE)
            }
            _ => log::warn!("control route for {} does not leave the root", emit.dest),
        }
    }

    fn log_drop(&mut self, at: NodeId, frame: &Frame, uid: u64, reason: DropReason, t: Micros) {
        let (category, _) = categorize(frame);
        self.log.push(Record::drop(
            t,
            at,
            frame.src,
            category,
            frame_flow(frame),
            frame.seq,
            reason,
        ));
        self.hops_of.remove(&uid);
    }

    fn finish(mut self) -> Result<RunOutput, RunError> {
        let horizon = self.duration;
        // Frames still in flight when the clock stops.
        while let Some((_, ev)) = self.queue.pop() {
            if let Ev::Arrive { to, frame, uid, .. } = ev {
                self.log_drop(to, &frame, uid, DropReason::Truncated, horizon);
            }
        }
        // Frames still waiting on a route answer.
        let ids: Vec<NodeId> = self.nodes.keys().copied().collect();
        for id in &ids {
            let drained = self.nodes.get_mut(id).unwrap().sdn.drain_pending();
            for (frame, uid) in drained {
                self.log_drop(*id, &frame, uid, DropReason::Truncated, horizon);
            }
        }
        for id in &ids {
            let busy = (self.mac.rdc(*id, 0, horizon) * horizon as f64).round() as u64;
            self.log.push(Record::radio_on(horizon, *id, busy));
        }
        let rings: BTreeMap<NodeId, Option<u32>> = self
            .nodes
            .iter()
            .map(|(&id, ctx)| (id, ctx.rpl.dodag.hop_ring().map(u32::from)))
            .collect();
        let report = compute_metrics(&self.log, &rings, horizon)?;
        let _ = (self.scenario, self.seed);
        Ok(RunOutput {
            report,
            log: self.log,
            rings,
        })
    }
}

/// Run one scenario under one seed to completion.
pub fn run_scenario(scenario: &Scenario, seed: u64) -> Result<RunOutput, RunError> {
    let mut world = World::build(scenario, seed)?;
    while let Some((t, ev)) = world.queue.pop_until(world.duration) {
        world.process(ev, t);
    }
    world.finish()
}

/// Which configuration knob a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    NsuPeriod,
    FtLifetime,
}

impl SweepAxis {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepAxis::NsuPeriod => "nsu_period_s",
            SweepAxis::FtLifetime => "ft_lifetime_s",
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nsu_period_s" => Ok(SweepAxis::NsuPeriod),
            "ft_lifetime_s" => Ok(SweepAxis::FtLifetime),
            other => Err(format!(
                "unknown sweep axis {other:?}, expected nsu_period_s or ft_lifetime_s"
            )),
        }
    }
}

/// A scenario with one knob overridden.
pub fn apply_axis(scenario: &Scenario, axis: SweepAxis, value: u64) -> Result<Scenario, RunError> {
    let mut out = scenario.clone();
    let Some(sdn) = out.sdn.as_mut() else {
        return Err(RunError::Config(ConfigError::Invalid(format!(
            "sweeping {} needs an [sdn] section",
            axis.as_str()
        ))));
    };
    if value == 0 || value > u64::from(u16::MAX) {
        return Err(RunError::Config(ConfigError::Invalid(format!(
            "sweep value {} for {} is out of range",
            value,
            axis.as_str()
        ))));
    }
    match axis {
        SweepAxis::NsuPeriod => sdn.nsu_period_s = value as u16,
        SweepAxis::FtLifetime => sdn.ft_lifetime_s = value as u16,
    }
    Ok(out)
}

pub struct SweepPoint {
    pub axis_value: u64,
    pub seed: u64,
    pub report: MetricsReport,
}

/// Run the cross product of axis values and seeds, in parallel, sorted
/// by (value, seed) for stable output.
pub fn sweep(
    scenario: &Scenario,
    axis: SweepAxis,
    values: &[u64],
    seeds: &[u64],
) -> Result<Vec<SweepPoint>, RunError> {
    use rayon::prelude::*;

    let combos: Vec<(u64, u64)> = values
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let mut points = combos
        .par_iter()
        .map(|&(value, seed)| {
            let adjusted = apply_axis(scenario, axis, value)?;
            let out = run_scenario(&adjusted, seed)?;
            Ok(SweepPoint {
                axis_value: value,
                seed,
                report: out.report,
            })
        })
        .collect::<Result<Vec<_>, RunError>>()?;
    points.sort_by_key(|p| (p.axis_value, p.seed));
    Ok(points)
}
