//! RPL in non-storing mode: DODAG construction, root-side routing state,
//! and source-route computation.
//!
//! Nodes run objective function zero over hop count: the root advertises
//! rank 256, every hop adds 256, and a node prefers the neighbor with the
//! lowest advertised rank, breaking ties toward the lowest node id. Joined
//! nodes report their preferred parent to the root in DAO messages; the
//! root keeps a parent table and answers route requests with a full hop
//! list (root excluded, destination included), which is what gets stamped
//! into a source-route header on downward frames.
//!
//! Beaconing is periodic rather than adaptive: unjoined nodes solicit
//! every [`DIS_PERIOD`], joined nodes advertise every [`DIO_PERIOD`] (plus
//! immediately on joining) and report their parent every [`DAO_PERIOD`].
//! A DIS is answered with one DIO after a short random delay; several DIS
//! inside that delay share the one answer.

use crate::{Micros, NodeId, MICROS_PER_SEC};
use std::collections::HashMap;

/// Rank advertised by the DODAG root.
pub const ROOT_RANK: u16 = 256;
/// Rank added per hop under objective function zero.
pub const MIN_HOP_RANK_INCREASE: u16 = 256;
/// Rank meaning "not joined".
pub const RANK_INFINITE: u16 = u16::MAX;
/// How long a root routing entry lives without a refreshing DAO.
pub const ROUTE_LIFETIME: Micros = 600 * MICROS_PER_SEC;
/// Solicitation period while unjoined.
pub const DIS_PERIOD: Micros = 10 * MICROS_PER_SEC;
/// Advertisement period while joined.
pub const DIO_PERIOD: Micros = 60 * MICROS_PER_SEC;
/// Parent-report period while joined.
pub const DAO_PERIOD: Micros = 300 * MICROS_PER_SEC;
/// Bounds of the random delay before answering a solicitation.
pub const DIS_RESPONSE_DELAY: (Micros, Micros) = (100_000, 500_000);

/// Charged network-payload sizes; the frame overhead is added on top.
pub const DIS_WIRE_LEN: usize = 8;
pub const DIO_WIRE_LEN: usize = 24;
pub const DAO_WIRE_LEN: usize = 20;

/// Beaconing schedule. Scenario files may override any of these; the
/// defaults are the protocol constants above.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RplTimings {
    pub dis_period: Micros,
    pub dio_period: Micros,
    pub dao_period: Micros,
    /// Bounds of the random delay before a solicited or triggered answer.
    pub response_delay: (Micros, Micros),
}

impl Default for RplTimings {
    fn default() -> Self {
        RplTimings {
            dis_period: DIS_PERIOD,
            dio_period: DIO_PERIOD,
            dao_period: DAO_PERIOD,
            response_delay: DIS_RESPONSE_DELAY,
        }
    }
}

pub const RPL_DIS: u8 = 1;
pub const RPL_DIO: u8 = 2;
pub const RPL_DAO: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RplMsg {
    /// Solicitation, broadcast by unjoined nodes.
    Dis,
    /// DODAG advertisement carrying the sender's rank, broadcast.
    Dio { rank: u16 },
    /// Parent report, unicast hop-by-hop toward the root.
    Dao { child: NodeId, parent: NodeId },
}

impl RplMsg {
    pub fn kind(&self) -> u8 {
        match self {
            RplMsg::Dis => RPL_DIS,
            RplMsg::Dio { .. } => RPL_DIO,
            RplMsg::Dao { .. } => RPL_DAO,
        }
    }

    /// Network bytes charged for this message on the air.
    pub fn wire_len(&self) -> usize {
        match self {
            RplMsg::Dis => DIS_WIRE_LEN,
            RplMsg::Dio { .. } => DIO_WIRE_LEN,
            RplMsg::Dao { .. } => DAO_WIRE_LEN,
        }
    }
}

/// Per-node DODAG membership state.
#[derive(Debug, Clone)]
pub struct DodagState {
    pub id: NodeId,
    pub is_root: bool,
    pub rank: u16,
    pub preferred_parent: Option<NodeId>,
    /// Advertised rank per heard neighbor.
    candidates: HashMap<NodeId, u16>,
}

impl DodagState {
    pub fn new(id: NodeId, is_root: bool) -> Self {
        DodagState {
            id,
            is_root,
            rank: if is_root { ROOT_RANK } else { RANK_INFINITE },
            preferred_parent: None,
            candidates: HashMap::new(),
        }
    }

    pub fn joined(&self) -> bool {
        self.rank != RANK_INFINITE
    }

    /// Hops from the root implied by the current rank, for reporting.
    pub fn hop_ring(&self) -> Option<u16> {
        if self.joined() {
            Some(self.rank / MIN_HOP_RANK_INCREASE - 1)
        } else {
            None
        }
    }

    /// Fold in a heard DIO. Returns true when rank or parent changed,
    /// which is the caller's cue to send a DAO and advertise.
    pub fn on_dio(&mut self, from: NodeId, advertised_rank: u16) -> bool {
        if self.is_root || from == self.id {
            return false;
        }
        if advertised_rank == RANK_INFINITE {
            self.candidates.remove(&from);
        } else {
            self.candidates.insert(from, advertised_rank);
        }
        self.reselect()
    }

    /// A neighbor stopped being usable; drop it and re-run selection.
    pub fn forget_neighbor(&mut self, id: NodeId) -> bool {
        self.candidates.remove(&id);
        self.reselect()
    }

    pub fn candidate_count(&self) -> usize {
        self.candidates.len()
    }

    fn reselect(&mut self) -> bool {
        let best = self
            .candidates
            .iter()
            .map(|(&id, &rank)| (rank, id))
            .min();
        let (new_rank, new_parent) = match best {
            Some((rank, id)) if rank.saturating_add(MIN_HOP_RANK_INCREASE) < RANK_INFINITE => {
                (rank + MIN_HOP_RANK_INCREASE, Some(id))
            }
            _ => (RANK_INFINITE, None),
        };
        let changed = new_rank != self.rank || new_parent != self.preferred_parent;
        self.rank = new_rank;
        self.preferred_parent = new_parent;
        changed
    }
}

/// Root-side routing table built from DAOs: child -> (parent, expiry).
#[derive(Debug, Default)]
pub struct DaoRouteTable {
    parents: HashMap<NodeId, (NodeId, Micros)>,
    pub rejected_cycles: u64,
}

/// Outcome of folding a DAO into the root table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DaoOutcome {
    /// Child was absent or expired; this is the controller-join trigger.
    NewlyReachable,
    /// Known child, expiry extended.
    Refreshed,
    /// Mapping would create a cycle; dropped and counted.
    CycleRejected,
}

impl DaoRouteTable {
    pub fn on_dao(&mut self, child: NodeId, parent: NodeId, now: Micros) -> DaoOutcome {
        if child == parent || self.creates_cycle(child, parent, now) {
            self.rejected_cycles += 1;
            return DaoOutcome::CycleRejected;
        }
        let fresh = self.parent_of(child, now).is_none();
        self.parents.insert(child, (parent, now + ROUTE_LIFETIME));
        if fresh {
            DaoOutcome::NewlyReachable
        } else {
            DaoOutcome::Refreshed
        }
    }

    /// Walk live parent links up from `parent`; meeting `child` means the
    /// proposed mapping would loop.
    fn creates_cycle(&self, child: NodeId, parent: NodeId, now: Micros) -> bool {
        let mut cur = parent;
        let mut steps = 0;
        loop {
            if cur == child {
                return true;
            }
            match self.parents.get(&cur) {
                Some(&(up, expiry)) if expiry > now => cur = up,
                _ => return false,
            }
            steps += 1;
            if steps > self.parents.len() {
                return true;
            }
        }
    }

    pub fn parent_of(&self, child: NodeId, now: Micros) -> Option<NodeId> {
        self.parents
            .get(&child)
            .filter(|&&(_, expiry)| expiry > now)
            .map(|&(p, _)| p)
    }

    /// Hop list from the root to `dest`: root excluded, `dest` included.
    /// None when any link on the way up is missing or expired.
    pub fn source_route(&self, root: NodeId, dest: NodeId, now: Micros) -> Option<Vec<NodeId>> {
        if dest == root {
            return Some(Vec::new());
        }
        let mut hops = vec![dest];
        let mut cur = dest;
        loop {
            let parent = self.parent_of(cur, now)?;
            if parent == root {
                hops.reverse();
                return Some(hops);
            }
            hops.push(parent);
            if hops.len() > self.parents.len() + 1 {
                return None;
            }
            cur = parent;
        }
    }

    pub fn drop_expired(&mut self, now: Micros) {
        self.parents.retain(|_, &mut (_, expiry)| expiry > now);
    }

    pub fn known(&self, now: Micros) -> usize {
        self.parents
            .values()
            .filter(|&&(_, expiry)| expiry > now)
            .count()
    }
}

/// What a heard DIO did to this node's DODAG membership.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JoinChange {
    /// First parent acquired.
    Joined,
    /// All parents gone; back to soliciting.
    Left,
    /// Rank or preferred parent moved while staying joined.
    Changed,
    NoChange,
}

/// A message the driver wants sent: local broadcast or routed to the
/// root along the parent chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RplEmit {
    Broadcast(RplMsg),
    ToRoot(RplMsg),
}

/// Per-node protocol driver: periodic timers plus one-shot jittered
/// responses, coalesced so a burst of triggers yields one message.
pub struct RplDriver {
    pub dodag: DodagState,
    timings: RplTimings,
    next_dis: Option<Micros>,
    next_dio: Option<Micros>,
    next_dao: Option<Micros>,
    dio_response: Option<Micros>,
    dao_response: Option<Micros>,
    rng: rand_chacha::ChaCha12Rng,
}

impl RplDriver {
    pub fn new(seed: u64, id: NodeId, is_root: bool, timings: RplTimings) -> Self {
        let mut rng = crate::rng::stream(seed, crate::rng::TAG_RPL, id as u64, 0);
        // Nodes do not boot in lockstep; smear first activity over 1 s.
        let stagger = crate::rng::uniform_micros(&mut rng, 0, MICROS_PER_SEC);
        RplDriver {
            dodag: DodagState::new(id, is_root),
            timings,
            next_dis: if is_root { None } else { Some(stagger) },
            next_dio: if is_root { Some(stagger) } else { None },
            next_dao: None,
            dio_response: None,
            dao_response: None,
            rng,
        }
    }

    fn jitter(&mut self) -> Micros {
        let (lo, hi) = self.timings.response_delay;
        crate::rng::uniform_micros(&mut self.rng, lo, hi)
    }

    pub fn next_activity(&self) -> Option<Micros> {
        [
            self.next_dis,
            self.next_dio,
            self.next_dao,
            self.dio_response,
            self.dao_response,
        ]
        .into_iter()
        .flatten()
        .min()
    }

    /// Emit everything due by `now` and advance the periodic timers.
    pub fn tick(&mut self, now: Micros) -> Vec<RplEmit> {
        let mut out = Vec::new();
        if let Some(t) = self.next_dis {
            if t <= now {
                out.push(RplEmit::Broadcast(RplMsg::Dis));
                let mut next = t + self.timings.dis_period;
                while next <= now {
                    next += self.timings.dis_period;
                }
                self.next_dis = Some(next);
            }
        }
        let mut dio_due = false;
        if let Some(t) = self.dio_response {
            if t <= now {
                dio_due = true;
                self.dio_response = None;
            }
        }
        if let Some(t) = self.next_dio {
            if t <= now {
                dio_due = true;
                let mut next = t + self.timings.dio_period;
                while next <= now {
                    next += self.timings.dio_period;
                }
                self.next_dio = Some(next);
            }
        }
        if dio_due && self.dodag.joined() {
            out.push(RplEmit::Broadcast(RplMsg::Dio {
                rank: self.dodag.rank,
            }));
        }
        let mut dao_due = false;
        if let Some(t) = self.dao_response {
            if t <= now {
                dao_due = true;
                self.dao_response = None;
            }
        }
        if let Some(t) = self.next_dao {
            if t <= now {
                dao_due = true;
                let mut next = t + self.timings.dao_period;
                while next <= now {
                    next += self.timings.dao_period;
                }
                self.next_dao = Some(next);
            }
        }
        if dao_due {
            if let Some(parent) = self.dodag.preferred_parent {
                out.push(RplEmit::ToRoot(RplMsg::Dao {
                    child: self.dodag.id,
                    parent,
                }));
            }
        }
        out
    }

    /// A solicitation was heard; answer with one jittered advertisement
    /// unless an answer is already on its way.
    pub fn on_dis_heard(&mut self, now: Micros) {
        if self.dodag.joined() && self.dio_response.is_none() {
            self.dio_response = Some(now + self.jitter());
        }
    }

    /// Fold in a heard advertisement and adjust timers on membership
    /// changes: joining announces and registers promptly and stops
    /// soliciting; losing the last parent does the reverse.
    pub fn on_dio_heard(&mut self, from: NodeId, rank: u16, now: Micros) -> JoinChange {
        let was = self.dodag.joined();
        let changed = self.dodag.on_dio(from, rank);
        let is = self.dodag.joined();
        match (was, is) {
            (false, true) => {
                let announce = now + self.jitter();
                let register = now + self.jitter();
                self.dio_response = Some(self.dio_response.map_or(announce, |t| t.min(announce)));
                self.dao_response = Some(self.dao_response.map_or(register, |t| t.min(register)));
                self.next_dio = Some(announce + self.timings.dio_period);
                self.next_dao = Some(register + self.timings.dao_period);
                self.next_dis = None;
                JoinChange::Joined
            }
            (true, false) => {
                self.next_dis = Some(now + self.jitter());
                self.next_dio = None;
                self.next_dao = None;
                self.dio_response = None;
                self.dao_response = None;
                JoinChange::Left
            }
            _ if changed => {
                if self.dao_response.is_none() {
                    self.dao_response = Some(now + self.jitter());
                }
                if self.dio_response.is_none() {
                    self.dio_response = Some(now + self.jitter());
                }
                JoinChange::Changed
            }
            _ => JoinChange::NoChange,
        }
    }
}
