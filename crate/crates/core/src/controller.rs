//! Embedded controller co-located with the routing root. It learns the
//! global picture from two inputs: registrations forwarded by the
//! routing layer (which also yield downward source routes) and periodic
//! node state reports carrying neighbor link observations. It provisions
//! joining nodes with configuration, answers flowtable queries with
//! source-routed entries, and applies per-flow path policy.

use crate::flowtable::{Action, EntrySpec, LifetimeClass, Match, Tier};
use crate::node::FlowPriority;
use crate::rpl::{DaoOutcome, DaoRouteTable};
use crate::wire::{ConfBody, FlowKey, FtqBody, FtsBody, NsuBody, UsdnBody};
use crate::{Micros, NodeId};
use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use thiserror::Error;

/// A link unseen for this many report periods is excluded from paths:
/// one missed report is tolerated, two is a dead link.
pub const LINK_STALE_PERIODS: Micros = 2;

#[derive(Debug, Clone, Copy)]
pub struct LinkStat {
    /// Most recent report, scaled to [0, 1].
    pub quality: f64,
    pub last_seen: Micros,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NodeRecord {
    pub energy: u8,
    pub buffer: u8,
    pub last_nsu: Option<Micros>,
    pub conf_sent_at: Option<Micros>,
}

/// Controller's picture of the network. Links are undirected; the most
/// recent report wins.
pub struct TopologyView {
    links: HashMap<(NodeId, NodeId), LinkStat>,
    pub nodes: BTreeMap<NodeId, NodeRecord>,
    stale_after: Micros,
}

fn link_key(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    (a.min(b), a.max(b))
}

impl TopologyView {
    pub fn new(nsu_period: Micros) -> Self {
        TopologyView {
            links: HashMap::new(),
            nodes: BTreeMap::new(),
            stale_after: LINK_STALE_PERIODS * nsu_period,
        }
    }

    pub fn observe_link(&mut self, a: NodeId, b: NodeId, quality: f64, now: Micros) {
        if a == b {
            return;
        }
        self.links.insert(
            link_key(a, b),
            LinkStat {
                quality,
                last_seen: now,
            },
        );
    }

    pub fn link_alive(&self, a: NodeId, b: NodeId, now: Micros) -> bool {
        self.links
            .get(&link_key(a, b))
            .is_some_and(|l| l.last_seen + self.stale_after > now)
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    /// Sorted adjacency over non-stale links, minus any avoided nodes.
    fn adjacency(
        &self,
        now: Micros,
        avoid: Option<&BTreeSet<NodeId>>,
    ) -> BTreeMap<NodeId, Vec<NodeId>> {
        let banned = |n: NodeId| avoid.is_some_and(|s| s.contains(&n));
        let mut adj: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        for (&(a, b), l) in &self.links {
            if l.last_seen + self.stale_after <= now || banned(a) || banned(b) {
                continue;
            }
            adj.entry(a).or_default().push(b);
            adj.entry(b).or_default().push(a);
        }
        for nbrs in adj.values_mut() {
            nbrs.sort_unstable();
            nbrs.dedup();
        }
        adj
    }
}

/// How a flow's path is chosen.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PolicyMode {
    /// Minimum hops, ties toward the lexicographically smallest node
    /// sequence.
    Shortest,
    /// This exact hop sequence (source excluded, destination included),
    /// checked against live links.
    Pin(Vec<NodeId>),
    /// Shortest with these nodes removed from the graph.
    Avoid(BTreeSet<NodeId>),
}

#[derive(Debug, Clone)]
pub struct PolicyRule {
    /// None matches every flow.
    pub key: Option<FlowKey>,
    pub mode: PolicyMode,
    pub priority: FlowPriority,
}

/// Ordered rules; the first match wins, and an implicit terminal rule
/// routes everything else shortest at low priority.
#[derive(Debug, Clone, Default)]
pub struct FlowPolicy {
    pub rules: Vec<PolicyRule>,
}

impl FlowPolicy {
    pub fn rule_for(&self, key: FlowKey) -> (PolicyMode, FlowPriority) {
        for r in &self.rules {
            if r.key.is_none_or(|k| k == key) {
                return (r.mode.clone(), r.priority);
            }
        }
        (PolicyMode::Shortest, FlowPriority::Low)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("no route to {dest} under the active policy")]
pub struct NoPath {
    pub dest: NodeId,
}

/// A downward message the controller wants delivered: the body, the
/// destination, and the source route to stamp on the frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CtrlEmit {
    pub dest: NodeId,
    pub body: UsdnBody,
    pub path: Vec<NodeId>,
}

pub struct Controller {
    pub root: NodeId,
    pub view: TopologyView,
    pub policy: FlowPolicy,
    /// Configuration handed to every joining node.
    pub conf_template: ConfBody,
    /// Answer queries with full source routes; when off, answers carry
    /// only the next hop and every node along the path queries for
    /// itself.
    pub srhi: bool,
    /// Mark entries of high-priority flows refresh-on-hit.
    pub fr: bool,
}

impl Controller {
    pub fn new(
        root: NodeId,
        conf_template: ConfBody,
        policy: FlowPolicy,
        nsu_period: Micros,
        srhi: bool,
        fr: bool,
    ) -> Self {
        Controller {
            root,
            view: TopologyView::new(nsu_period),
            policy,
            conf_template,
            srhi,
            fr,
        }
    }

    /// React to a registration the root just processed. A newly
    /// reachable node gets a CONF; so does a re-registering node that
    /// never reported state after its last CONF, which is the recovery
    /// path for a provisioning message lost in the air. Nothing is sent
    /// when the downward route is broken; the node's next registration
    /// retries.
    pub fn ctrl_on_dao(
        &mut self,
        routes: &DaoRouteTable,
        child: NodeId,
        parent: NodeId,
        outcome: DaoOutcome,
        now: Micros,
    ) -> Option<CtrlEmit> {
        self.view.observe_link(child, parent, 1.0, now);
        let need_conf = match outcome {
            DaoOutcome::NewlyReachable => true,
            DaoOutcome::Refreshed => {
                let rec = self.view.nodes.get(&child);
                match rec.and_then(|r| r.conf_sent_at) {
                    None => true,
                    Some(sent) => !rec.and_then(|r| r.last_nsu).is_some_and(|t| t > sent),
                }
            }
            DaoOutcome::CycleRejected => false,
        };
        if !need_conf {
            return None;
        }
        let path = routes.source_route(self.root, child, now)?;
        self.view.nodes.entry(child).or_default().conf_sent_at = Some(now);
        Some(CtrlEmit {
            dest: child,
            body: UsdnBody::Conf(self.conf_template.clone()),
            path,
        })
    }

    /// Fold in a node state report.
    pub fn ctrl_on_nsu(&mut self, from: NodeId, nsu: &NsuBody, now: Micros) {
        let rec = self.view.nodes.entry(from).or_default();
        rec.energy = nsu.energy_estimate;
        rec.buffer = nsu.buffer_occupancy;
        rec.last_nsu = Some(now);
        for &(nbr, q) in &nsu.neighbors {
            self.view.observe_link(from, nbr, q as f64 / 255.0, now);
        }
    }

    /// Resolve a path from `src` to `dst` under `mode`, over the current
    /// non-stale link graph. The result excludes `src` and includes
    /// `dst`.
    pub fn compute_path(
        &self,
        mode: &PolicyMode,
        src: NodeId,
        dst: NodeId,
        now: Micros,
    ) -> Result<Vec<NodeId>, NoPath> {
        match mode {
            PolicyMode::Shortest => self.bfs_path(src, dst, None, now),
            PolicyMode::Avoid(nodes) => self.bfs_path(src, dst, Some(nodes), now),
            PolicyMode::Pin(path) => {
                if path.is_empty() || *path.last().unwrap() != dst {
                    return Err(NoPath { dest: dst });
                }
                let mut prev = src;
                for &hop in path {
                    if !self.view.link_alive(prev, hop, now) {
                        return Err(NoPath { dest: dst });
                    }
                    prev = hop;
                }
                Ok(path.clone())
            }
        }
    }

    /// Breadth-first shortest path, ties broken toward the
    /// lexicographically smallest node sequence: walk from the source,
    /// always taking the smallest neighbor that still lies on some
    /// shortest path.
    fn bfs_path(
        &self,
        src: NodeId,
        dst: NodeId,
        avoid: Option<&BTreeSet<NodeId>>,
        now: Micros,
    ) -> Result<Vec<NodeId>, NoPath> {
        if src == dst {
            return Ok(Vec::new());
        }
        let adj = self.view.adjacency(now, avoid);
        if !adj.contains_key(&src) || !adj.contains_key(&dst) {
            return Err(NoPath { dest: dst });
        }
        let mut dist_to_dst: HashMap<NodeId, u32> = HashMap::new();
        dist_to_dst.insert(dst, 0);
        let mut q = VecDeque::from([dst]);
        while let Some(n) = q.pop_front() {
            let d = dist_to_dst[&n];
            for &m in adj.get(&n).into_iter().flatten() {
                dist_to_dst.entry(m).or_insert_with(|| {
                    q.push_back(m);
                    d + 1
                });
            }
        }
        let Some(&total) = dist_to_dst.get(&src) else {
            return Err(NoPath { dest: dst });
        };
        let mut path = Vec::with_capacity(total as usize);
        let mut cur = src;
        for remaining in (0..total).rev() {
            let next = adj[&cur]
                .iter()
                .copied()
                .find(|n| dist_to_dst.get(n) == Some(&remaining))
                .expect("a neighbor one step closer exists");
            path.push(next);
            cur = next;
        }
        Ok(path)
    }

    /// Answer a flowtable query: install on the requester a MAIN entry
    /// matching the flow's destination and id, routed per policy. When no
    /// path exists under the policy, the answer is a short-lived DROP so
    /// the node does not re-query every window. No answer leaves when the
    /// requester itself has no downward route or never got a CONF.
    pub fn ctrl_on_ftq(
        &mut self,
        routes: &DaoRouteTable,
        from: NodeId,
        ftq: &FtqBody,
        now: Micros,
    ) -> Vec<CtrlEmit> {
        if self
            .view
            .nodes
            .get(&from)
            .and_then(|r| r.conf_sent_at)
            .is_none()
        {
            log::debug!("query from unprovisioned node {from}, ignoring");
            return Vec::new();
        }
        let key = ftq.flow_key;
        let (mode, priority) = self.policy.rule_for(key);
        let key_match = {
            let d = key.dest.to_be_bytes();
            Match::new(1, &[d[0], d[1], key.flow_id])
        };
        let entry = match self.compute_path(&mode, from, key.dest, now) {
            Ok(path) if !path.is_empty() => EntrySpec {
                tier: Tier::Main,
                priority: match priority {
                    FlowPriority::High => 1,
                    FlowPriority::Low => 0,
                },
                matches: vec![key_match],
                actions: if self.srhi {
                    vec![Action::SrhSet(path.clone()), Action::Forward(path[0])]
                } else {
                    vec![Action::Forward(path[0])]
                },
                refresh_on_hit: self.fr && priority == FlowPriority::High,
                lifetime: LifetimeClass::Configured,
            },
            _ => EntrySpec {
                tier: Tier::Main,
                priority: 0,
                matches: vec![key_match],
                actions: vec![Action::Drop],
                refresh_on_hit: false,
                lifetime: LifetimeClass::Error,
            },
        };
        let Some(down) = routes.source_route(self.root, from, now) else {
            return Vec::new();
        };
        vec![CtrlEmit {
            dest: from,
            body: UsdnBody::Fts(FtsBody {
                entries: vec![entry],
            }),
            path: down,
        }]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::{PartialByte, PAYLOAD_BUDGET};

    fn conf_template() -> ConfBody {
        ConfBody {
            nsu_period_s: 180,
            ft_lifetime_s: 600,
            ftq_throttle_window_s: 1,
            ppq_fields: Vec::new(),
            default_entries: Vec::new(),
        }
    }

    fn ctrl(policy: FlowPolicy) -> Controller {
        Controller::new(1, conf_template(), policy, 180_000_000, true, true)
    }

    /// Register a parent chain at the root: 1 <- 4 <- 5 <- 6.
    fn line_routes(now: Micros) -> DaoRouteTable {
        let mut rt = DaoRouteTable::default();
        rt.on_dao(4, 1, now);
        rt.on_dao(5, 4, now);
        rt.on_dao(6, 5, now);
        rt
    }

    fn nsu(neighbors: &[(NodeId, u8)]) -> NsuBody {
        NsuBody {
            energy_estimate: 50,
            buffer_occupancy: 0,
            neighbors: neighbors.to_vec(),
        }
    }

    fn ftq(dest: NodeId, flow_id: u8) -> FtqBody {
        FtqBody {
            flow_key: FlowKey { dest, flow_id },
            partial_bytes: vec![PartialByte { offset: 1, value: 0 }],
        }
    }

    #[test]
    fn first_registration_provisions_and_repeat_is_silent() {
        let mut c = ctrl(FlowPolicy::default());
        let rt = line_routes(0);
        let emit = c
            .ctrl_on_dao(&rt, 5, 4, DaoOutcome::NewlyReachable, 1_000)
            .expect("first registration provisions");
        assert_eq!(emit.dest, 5);
        assert_eq!(emit.path, vec![4, 5]);
        assert!(matches!(emit.body, UsdnBody::Conf(_)));

        // The node reports state; later registrations stay silent.
        c.ctrl_on_nsu(5, &nsu(&[(4, 230)]), 2_000);
        assert_eq!(
            c.ctrl_on_dao(&rt, 5, 4, DaoOutcome::Refreshed, 300_000_000),
            None
        );
    }

    #[test]
    fn unacknowledged_provisioning_is_resent_on_reregistration() {
        let mut c = ctrl(FlowPolicy::default());
        let rt = line_routes(0);
        assert!(c
            .ctrl_on_dao(&rt, 5, 4, DaoOutcome::NewlyReachable, 1_000)
            .is_some());
        // No state report ever arrived: the CONF likely died in the air.
        assert!(c
            .ctrl_on_dao(&rt, 5, 4, DaoOutcome::Refreshed, 300_000_000)
            .is_some());
    }

    #[test]
    fn broken_downward_route_defers_provisioning() {
        let mut c = ctrl(FlowPolicy::default());
        let mut rt = DaoRouteTable::default();
        rt.on_dao(6, 5, 0);
        // 5 itself never registered: chain to the root is broken.
        assert_eq!(
            c.ctrl_on_dao(&rt, 6, 5, DaoOutcome::NewlyReachable, 1_000),
            None
        );
        assert!(
            c.view.nodes.get(&6).and_then(|r| r.conf_sent_at).is_none(),
            "deferred, so the next registration retries"
        );
    }

    #[test]
    fn reports_build_scaled_link_quality() {
        let mut c = ctrl(FlowPolicy::default());
        c.ctrl_on_nsu(5, &nsu(&[(4, 230)]), 1_000);
        let l = c.view.links[&(4, 5)];
        assert!((l.quality - 0.902).abs() < 0.001);
        assert!(c.view.link_alive(5, 4, 360_000_000));
        assert!(!c.view.link_alive(5, 4, 360_001_000));
    }

    #[test]
    fn shortest_path_prefers_lexicographically_smallest() {
        let mut c = ctrl(FlowPolicy::default());
        // Diamond: 6 - {2, 5} - 1, both two hops.
        c.ctrl_on_nsu(6, &nsu(&[(2, 200), (5, 200)]), 0);
        c.ctrl_on_nsu(2, &nsu(&[(1, 200)]), 0);
        c.ctrl_on_nsu(5, &nsu(&[(1, 200)]), 0);
        let p = c.compute_path(&PolicyMode::Shortest, 6, 1, 1_000).unwrap();
        assert_eq!(p, vec![2, 1]);
    }

    #[test]
    fn stale_links_fall_out_of_path_computation() {
        let mut c = ctrl(FlowPolicy::default());
        // Short way 6-5-1 observed early, long way 6-2-3-1 fresh.
        c.ctrl_on_nsu(6, &nsu(&[(5, 200)]), 0);
        c.ctrl_on_nsu(5, &nsu(&[(1, 200)]), 0);
        let late = 350_000_000;
        c.ctrl_on_nsu(6, &nsu(&[(2, 200)]), late);
        c.ctrl_on_nsu(2, &nsu(&[(3, 200)]), late);
        c.ctrl_on_nsu(3, &nsu(&[(1, 200)]), late);
        // Within the stale window the short way still wins.
        let p = c.compute_path(&PolicyMode::Shortest, 6, 1, late).unwrap();
        assert_eq!(p, vec![5, 1]);
        // Beyond it only the fresh detour remains.
        let p2 = c
            .compute_path(&PolicyMode::Shortest, 6, 1, 400_000_000)
            .unwrap();
        assert_eq!(p2, vec![2, 3, 1]);
    }

    #[test]
    fn pinned_paths_are_verbatim_but_validated() {
        let mut c = ctrl(FlowPolicy::default());
        c.ctrl_on_nsu(6, &nsu(&[(5, 200), (8, 200)]), 0);
        c.ctrl_on_nsu(5, &nsu(&[(1, 200)]), 0);
        c.ctrl_on_nsu(8, &nsu(&[(7, 200)]), 0);
        c.ctrl_on_nsu(7, &nsu(&[(1, 200)]), 0);
        let pin = PolicyMode::Pin(vec![8, 7, 1]);
        // The detour is longer than 6-5-1 but honored verbatim.
        assert_eq!(c.compute_path(&pin, 6, 1, 1_000).unwrap(), vec![8, 7, 1]);
        let broken = PolicyMode::Pin(vec![8, 9, 1]);
        assert_eq!(
            c.compute_path(&broken, 6, 1, 1_000),
            Err(NoPath { dest: 1 })
        );
        let wrong_dest = PolicyMode::Pin(vec![8, 7]);
        assert!(c.compute_path(&wrong_dest, 6, 1, 1_000).is_err());
    }

    #[test]
    fn avoiding_the_only_relay_disconnects() {
        let mut c = ctrl(FlowPolicy::default());
        c.ctrl_on_nsu(6, &nsu(&[(5, 200)]), 0);
        c.ctrl_on_nsu(5, &nsu(&[(1, 200)]), 0);
        let avoid = PolicyMode::Avoid(BTreeSet::from([5]));
        assert_eq!(
            c.compute_path(&avoid, 6, 1, 1_000),
            Err(NoPath { dest: 1 })
        );
    }

    #[test]
    fn query_answers_install_routed_entries() {
        let mut c = ctrl(FlowPolicy {
            rules: vec![PolicyRule {
                key: Some(FlowKey { dest: 1, flow_id: 1 }),
                mode: PolicyMode::Pin(vec![8, 7, 1]),
                priority: FlowPriority::High,
            }],
        });
        let rt = line_routes(0);
        c.ctrl_on_dao(&rt, 6, 5, DaoOutcome::NewlyReachable, 0);
        c.ctrl_on_nsu(6, &nsu(&[(5, 200), (8, 200)]), 0);
        c.ctrl_on_nsu(5, &nsu(&[(4, 200), (6, 200)]), 0);
        c.ctrl_on_nsu(8, &nsu(&[(7, 200)]), 0);
        c.ctrl_on_nsu(7, &nsu(&[(1, 200)]), 0);
        c.ctrl_on_nsu(4, &nsu(&[(1, 200)]), 0);

        // Default policy flow: shortest, low, no refresh.
        let out = c.ctrl_on_ftq(&rt, 6, &ftq(1, 0), 1_000);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].dest, 6);
        assert_eq!(out[0].path, vec![4, 5, 6], "downward route from the root");
        match &out[0].body {
            UsdnBody::Fts(f) => {
                let e = &f.entries[0];
                assert_eq!(e.tier, Tier::Main);
                assert!(!e.refresh_on_hit);
                assert_eq!(e.lifetime, LifetimeClass::Configured);
                assert_eq!(
                    e.actions,
                    vec![
                        Action::SrhSet(vec![5, 4, 1]),
                        Action::Forward(5)
                    ]
                );
            }
            other => panic!("expected table answer, got {other:?}"),
        }

        // Pinned high-priority flow: verbatim path, refresh-on-hit.
        let out = c.ctrl_on_ftq(&rt, 6, &ftq(1, 1), 1_000);
        match &out[0].body {
            UsdnBody::Fts(f) => {
                let e = &f.entries[0];
                assert!(e.refresh_on_hit);
                assert_eq!(
                    e.actions,
                    vec![
                        Action::SrhSet(vec![8, 7, 1]),
                        Action::Forward(8)
                    ]
                );
            }
            other => panic!("expected table answer, got {other:?}"),
        }
    }

    #[test]
    fn no_path_answers_with_a_short_lived_drop() {
        let mut c = ctrl(FlowPolicy::default());
        let rt = line_routes(0);
        c.ctrl_on_dao(&rt, 6, 5, DaoOutcome::NewlyReachable, 0);
        // No link observations at all: nothing to route over.
        let out = c.ctrl_on_ftq(&rt, 6, &ftq(9, 0), 1_000);
        assert_eq!(out.len(), 1);
        match &out[0].body {
            UsdnBody::Fts(f) => {
                let e = &f.entries[0];
                assert_eq!(e.actions, vec![Action::Drop]);
                assert_eq!(e.lifetime, LifetimeClass::Error);
            }
            other => panic!("expected table answer, got {other:?}"),
        }
    }

    #[test]
    fn queries_from_unprovisioned_nodes_are_ignored() {
        let mut c = ctrl(FlowPolicy::default());
        let rt = line_routes(0);
        assert!(c.ctrl_on_ftq(&rt, 6, &ftq(1, 0), 1_000).is_empty());
    }

    #[test]
    fn without_route_insertion_answers_carry_only_the_next_hop() {
        let mut c = Controller::new(1, conf_template(), FlowPolicy::default(), 180_000_000, false, false);
        let rt = line_routes(0);
        c.ctrl_on_dao(&rt, 6, 5, DaoOutcome::NewlyReachable, 0);
        c.ctrl_on_nsu(6, &nsu(&[(5, 200)]), 0);
        c.ctrl_on_nsu(5, &nsu(&[(4, 200)]), 0);
        c.ctrl_on_nsu(4, &nsu(&[(1, 200)]), 0);
        let out = c.ctrl_on_ftq(&rt, 6, &ftq(1, 0), 1_000);
        match &out[0].body {
            UsdnBody::Fts(f) => {
                assert_eq!(f.entries[0].actions, vec![Action::Forward(5)]);
                assert!(!f.entries[0].refresh_on_hit);
            }
            other => panic!("expected table answer, got {other:?}"),
        }
    }

    #[test]
    fn emitted_bodies_respect_the_frame_budget() {
        let mut c = ctrl(FlowPolicy::default());
        let rt = line_routes(0);
        let emit = c
            .ctrl_on_dao(&rt, 6, 5, DaoOutcome::NewlyReachable, 0)
            .unwrap();
        let msg = crate::wire::UsdnMessage {
            src: 1,
            seq: 1,
            body: emit.body,
        };
        assert!(msg.encode().unwrap().len() <= PAYLOAD_BUDGET);

        c.ctrl_on_nsu(6, &nsu(&[(5, 200)]), 0);
        c.ctrl_on_nsu(5, &nsu(&[(4, 200)]), 0);
        c.ctrl_on_nsu(4, &nsu(&[(1, 200)]), 0);
        for out in c.ctrl_on_ftq(&rt, 6, &ftq(1, 0), 1_000) {
            let msg = crate::wire::UsdnMessage {
                src: 1,
                seq: 2,
                body: out.body,
            };
            assert!(msg.encode().unwrap().len() <= PAYLOAD_BUDGET);
        }
    }
}
