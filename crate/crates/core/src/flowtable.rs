//! Two-tier flowtable with pooled matches and actions.
//!
//! Lookup scans the WHITELIST tier fully before MAIN, inside a tier by
//! priority (higher first), then install time, then entry id. Every entry
//! scanned costs a fixed per-entry charge that the caller adds to the
//! frame's processing delay, so table size directly maps to latency.
//!
//! Matches and actions are interned in shared pools with reference counts:
//! installing two entries with an identical match stores it once. Entries
//! expire by lifetime and are revived by refresh; a periodic purge reclaims
//! expired entries and their pool slots.
//!
//! Entries travel inside controller messages in this layout (one entry):
//!
//! | field        | size | notes                                           |
//! |--------------|------|-------------------------------------------------|
//! | tier/flags   | 1    | bit0 1=MAIN 0=WHITELIST, bit6 short error       |
//! |              |      | lifetime, bit7 refresh-on-hit                   |
//! | priority     | 1    |                                                 |
//! | match count  | 1    |                                                 |
//! | per match    | 2+n  | offset, length n (1..=4), then n value bytes    |
//! | action count | 1    |                                                 |
//! | per action   | 1+   | kind byte, then kind-specific args              |

use crate::{Micros, NodeId};
use thiserror::Error;

/// Default maximum resident entries per node.
pub const TABLE_CAPACITY: usize = 16;
/// Default charge per entry scanned during lookup: 0.2 ms.
pub const LOOKUP_COST_PER_ENTRY: Micros = 200;

pub type EntryId = u16;

/// Sentinel lifetime: never expires.
pub const LIFETIME_INFINITE: Micros = Micros::MAX;

/// Lifetime for negative (DROP) entries installed after a failed path
/// computation, short so the node re-queries once conditions change.
pub const ERR_ENTRY_LIFETIME: Micros = 30 * crate::MICROS_PER_SEC;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tier {
    Whitelist,
    Main,
}

/// Byte-equality match against the frame's network-layer view.
/// An out-of-range window is a non-match, not an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Match {
    pub offset: u8,
    pub length: u8,
    value: [u8; 4],
}

impl Match {
    pub fn new(offset: u8, value: &[u8]) -> Self {
        assert!(
            (1..=4).contains(&value.len()),
            "match value must be 1..=4 bytes"
        );
        let mut v = [0u8; 4];
        v[..value.len()].copy_from_slice(value);
        Match {
            offset,
            length: value.len() as u8,
            value: v,
        }
    }

    pub fn value(&self) -> &[u8] {
        &self.value[..self.length as usize]
    }

    pub fn matches(&self, view: &[u8]) -> bool {
        let start = self.offset as usize;
        let end = start + self.length as usize;
        end <= view.len() && view[start..end] == self.value[..self.length as usize]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Action {
    Forward(NodeId),
    SrhSet(Vec<NodeId>),
    Drop,
    Accept,
    FallbackRpl,
    QueryController,
}

/// How long an installed entry lives. The receiving node maps this to a
/// concrete duration from its own configuration, so lifetimes never ride
/// the wire as absolute values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LifetimeClass {
    /// Node's configured flowtable lifetime.
    Configured,
    /// Short error lifetime for negative (DROP) answers.
    Error,
    /// Never expires; used for default entries installed at configuration.
    Infinite,
}

/// Installable entry as carried by controller messages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntrySpec {
    pub tier: Tier,
    pub priority: u8,
    pub matches: Vec<Match>,
    pub actions: Vec<Action>,
    pub refresh_on_hit: bool,
    pub lifetime: LifetimeClass,
}

#[derive(Debug, Clone)]
pub struct FlowEntry {
    pub id: EntryId,
    pub tier: Tier,
    pub priority: u8,
    match_refs: Vec<usize>,
    action_refs: Vec<usize>,
    pub installed_at: Micros,
    pub lifetime: Micros,
    pub last_refresh: Micros,
    pub refresh_on_hit: bool,
}

impl FlowEntry {
    pub fn live_at(&self, now: Micros) -> bool {
        self.lifetime == LIFETIME_INFINITE || self.last_refresh.saturating_add(self.lifetime) > now
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FlowtableError {
    #[error("flowtable full and no main-tier entry is evictable")]
    TableFull,
    #[error("no entry with id {0}")]
    UnknownEntry(EntryId),
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("bad entry encoding: {0}")]
pub struct EntryDecodeError(pub &'static str);

/// Interning pool. Slots are reused once their count drops to zero;
/// handles stay stable for the entry that holds them.
#[derive(Debug)]
struct Pool<T: PartialEq> {
    slots: Vec<(T, u32)>,
}

impl<T: PartialEq> Default for Pool<T> {
    fn default() -> Self {
        Pool { slots: Vec::new() }
    }
}

impl<T: PartialEq> Pool<T> {
    fn acquire(&mut self, item: T) -> usize {
        if let Some(i) = self
            .slots
            .iter()
            .position(|(t, n)| *n > 0 && *t == item)
        {
            self.slots[i].1 += 1;
            return i;
        }
        if let Some(i) = self.slots.iter().position(|(_, n)| *n == 0) {
            self.slots[i] = (item, 1);
            return i;
        }
        self.slots.push((item, 1));
        self.slots.len() - 1
    }

    fn release(&mut self, handle: usize) {
        let n = &mut self.slots[handle].1;
        debug_assert!(*n > 0);
        *n -= 1;
    }

    fn get(&self, handle: usize) -> &T {
        &self.slots[handle].0
    }

    fn refcount(&self, item: &T) -> u32 {
        self.slots
            .iter()
            .find(|(t, n)| *n > 0 && t == item)
            .map(|(_, n)| *n)
            .unwrap_or(0)
    }

    fn live_distinct(&self) -> usize {
        self.slots.iter().filter(|(_, n)| *n > 0).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lookup {
    pub hit: Option<EntryId>,
    pub actions: Vec<Action>,
    /// Entries examined, expired ones included.
    pub scanned: usize,
    pub cost: Micros,
}

#[derive(Debug)]
pub struct HfsTable {
    capacity: usize,
    lookup_cost: Micros,
    next_id: EntryId,
    entries: Vec<FlowEntry>,
    matches: Pool<Match>,
    actions: Pool<Action>,
}

impl HfsTable {
    pub fn new(capacity: usize, lookup_cost: Micros) -> Self {
        HfsTable {
            capacity,
            lookup_cost,
            next_id: 1,
            entries: Vec::new(),
            matches: Pool::default(),
            actions: Pool::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: EntryId) -> Option<&FlowEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn entry_matches(&self, e: &FlowEntry) -> Vec<Match> {
        e.match_refs.iter().map(|&h| *self.matches.get(h)).collect()
    }

    pub fn entry_actions(&self, e: &FlowEntry) -> Vec<Action> {
        e.action_refs
            .iter()
            .map(|&h| self.actions.get(h).clone())
            .collect()
    }

    pub fn match_refcount(&self, m: &Match) -> u32 {
        self.matches.refcount(m)
    }

    pub fn distinct_matches(&self) -> usize {
        self.matches.live_distinct()
    }

    fn scan_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.entries.len()).collect();
        order.sort_by(|&a, &b| {
            let (ea, eb) = (&self.entries[a], &self.entries[b]);
            ea.tier
                .cmp(&eb.tier)
                .then(eb.priority.cmp(&ea.priority))
                .then(ea.installed_at.cmp(&eb.installed_at))
                .then(ea.id.cmp(&eb.id))
        });
        order
    }

    /// Scan for the first live entry whose matches all hold on `view`.
    /// A hit on a refresh-on-hit entry renews its lifetime in place.
    pub fn lookup(&mut self, view: &[u8], now: Micros) -> Lookup {
        let mut scanned = 0;
        for i in self.scan_order() {
            scanned += 1;
            let e = &self.entries[i];
            if !e.live_at(now) {
                continue;
            }
            let all = e
                .match_refs
                .iter()
                .all(|&h| self.matches.get(h).matches(view));
            if all {
                let id = e.id;
                let actions = self.entry_actions(e);
                if self.entries[i].refresh_on_hit {
                    self.entries[i].last_refresh = now;
                }
                return Lookup {
                    hit: Some(id),
                    actions,
                    scanned,
                    cost: self.lookup_cost * scanned as Micros,
                };
            }
        }
        Lookup {
            hit: None,
            actions: Vec::new(),
            scanned,
            cost: self.lookup_cost * scanned as Micros,
        }
    }

    /// Non-mutating probe: would `view` hit a live entry right now?
    /// Unlike lookup this neither refreshes nor charges scan cost; it
    /// decides which buffered frames a table update releases.
    pub fn matches_live(&self, view: &[u8], now: Micros) -> bool {
        self.scan_order().into_iter().any(|i| {
            let e = &self.entries[i];
            e.live_at(now)
                && e.match_refs
                    .iter()
                    .all(|&h| self.matches.get(h).matches(view))
        })
    }

    /// Install an entry, interning its matches and actions. When the table
    /// is at capacity the MAIN entry with the earliest refresh is evicted;
    /// WHITELIST entries are never auto-evicted.
    pub fn install(
        &mut self,
        spec: &EntrySpec,
        now: Micros,
        lifetime: Micros,
    ) -> Result<EntryId, FlowtableError> {
        if self.entries.len() >= self.capacity {
            let victim = self
                .entries
                .iter()
                .filter(|e| e.tier == Tier::Main)
                .min_by_key(|e| (e.last_refresh, e.id))
                .map(|e| e.id)
                .ok_or(FlowtableError::TableFull)?;
            self.remove(victim).expect("victim exists");
        }
        let match_refs = spec
            .matches
            .iter()
            .map(|m| self.matches.acquire(*m))
            .collect();
        let action_refs = spec
            .actions
            .iter()
            .map(|a| self.actions.acquire(a.clone()))
            .collect();
        let id = self.next_id;
        self.next_id = self.next_id.wrapping_add(1).max(1);
        self.entries.push(FlowEntry {
            id,
            tier: spec.tier,
            priority: spec.priority,
            match_refs,
            action_refs,
            installed_at: now,
            lifetime,
            last_refresh: now,
            refresh_on_hit: spec.refresh_on_hit,
        });
        Ok(id)
    }

    /// Renew an entry's lifetime; revives one that expired but was not yet
    /// purged.
    pub fn refresh(&mut self, id: EntryId, now: Micros) -> Result<(), FlowtableError> {
        let e = self
            .entries
            .iter_mut()
            .find(|e| e.id == id)
            .ok_or(FlowtableError::UnknownEntry(id))?;
        e.last_refresh = now;
        Ok(())
    }

    pub fn remove(&mut self, id: EntryId) -> Result<(), FlowtableError> {
        let i = self
            .entries
            .iter()
            .position(|e| e.id == id)
            .ok_or(FlowtableError::UnknownEntry(id))?;
        let e = self.entries.swap_remove(i);
        for h in e.match_refs {
            self.matches.release(h);
        }
        for h in e.action_refs {
            self.actions.release(h);
        }
        Ok(())
    }

    /// Drop every expired entry, releasing pooled matches and actions.
    pub fn purge_expired(&mut self, now: Micros) -> usize {
        let dead: Vec<EntryId> = self
            .entries
            .iter()
            .filter(|e| !e.live_at(now))
            .map(|e| e.id)
            .collect();
        for id in &dead {
            self.remove(*id).expect("listed entry exists");
        }
        dead.len()
    }
}

const ACT_FORWARD: u8 = 1;
const ACT_SRH_SET: u8 = 2;
const ACT_DROP: u8 = 3;
const ACT_ACCEPT: u8 = 4;
const ACT_FALLBACK_RPL: u8 = 5;
const ACT_QUERY_CONTROLLER: u8 = 6;

const FLAG_MAIN: u8 = 0x01;
const FLAG_ERR_LIFETIME: u8 = 0x40;
const FLAG_REFRESH_ON_HIT: u8 = 0x80;

impl EntrySpec {
    pub fn encode(&self, out: &mut Vec<u8>) {
        let mut flags = 0u8;
        if self.tier == Tier::Main {
            flags |= FLAG_MAIN;
        }
        if self.lifetime == LifetimeClass::Error {
            flags |= FLAG_ERR_LIFETIME;
        }
        if self.refresh_on_hit {
            flags |= FLAG_REFRESH_ON_HIT;
        }
        out.push(flags);
        out.push(self.priority);
        out.push(self.matches.len() as u8);
        for m in &self.matches {
            out.push(m.offset);
            out.push(m.length);
            out.extend_from_slice(m.value());
        }
        out.push(self.actions.len() as u8);
        for a in &self.actions {
            match a {
                Action::Forward(n) => {
                    out.push(ACT_FORWARD);
                    out.extend_from_slice(&n.to_be_bytes());
                }
                Action::SrhSet(hops) => {
                    out.push(ACT_SRH_SET);
                    out.push(hops.len() as u8);
                    for h in hops {
                        out.extend_from_slice(&h.to_be_bytes());
                    }
                }
                Action::Drop => out.push(ACT_DROP),
                Action::Accept => out.push(ACT_ACCEPT),
                Action::FallbackRpl => out.push(ACT_FALLBACK_RPL),
                Action::QueryController => out.push(ACT_QUERY_CONTROLLER),
            }
        }
    }

    pub fn encoded_len(&self) -> usize {
        let mut v = Vec::new();
        self.encode(&mut v);
        v.len()
    }

    /// Decode one entry starting at `buf[*pos]`, advancing `pos`.
    pub fn decode(buf: &[u8], pos: &mut usize) -> Result<EntrySpec, EntryDecodeError> {
        let mut take = |n: usize| -> Result<&[u8], EntryDecodeError> {
            if *pos + n > buf.len() {
                return Err(EntryDecodeError("entry truncated"));
            }
            let s = &buf[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        let flags = take(1)?[0];
        if flags & !(FLAG_MAIN | FLAG_ERR_LIFETIME | FLAG_REFRESH_ON_HIT) != 0 {
            return Err(EntryDecodeError("unknown tier flags"));
        }
        let priority = take(1)?[0];
        let mcount = take(1)?[0] as usize;
        let mut matches = Vec::with_capacity(mcount);
        for _ in 0..mcount {
            let offset = take(1)?[0];
            let length = take(1)?[0];
            if !(1..=4).contains(&length) {
                return Err(EntryDecodeError("match length out of range"));
            }
            let value = take(length as usize)?.to_vec();
            matches.push(Match::new(offset, &value));
        }
        let acount = take(1)?[0] as usize;
        let mut actions = Vec::with_capacity(acount);
        for _ in 0..acount {
            let kind = take(1)?[0];
            actions.push(match kind {
                ACT_FORWARD => {
                    let b = take(2)?;
                    Action::Forward(u16::from_be_bytes([b[0], b[1]]))
                }
                ACT_SRH_SET => {
                    let n = take(1)?[0] as usize;
                    let mut hops = Vec::with_capacity(n);
                    for _ in 0..n {
                        let b = take(2)?;
                        hops.push(u16::from_be_bytes([b[0], b[1]]));
                    }
                    Action::SrhSet(hops)
                }
                ACT_DROP => Action::Drop,
                ACT_ACCEPT => Action::Accept,
                ACT_FALLBACK_RPL => Action::FallbackRpl,
                ACT_QUERY_CONTROLLER => Action::QueryController,
                _ => return Err(EntryDecodeError("unknown action kind")),
            });
        }
        Ok(EntrySpec {
            tier: if flags & FLAG_MAIN != 0 {
                Tier::Main
            } else {
                Tier::Whitelist
            },
            priority,
            matches,
            actions,
            refresh_on_hit: flags & FLAG_REFRESH_ON_HIT != 0,
            lifetime: if flags & FLAG_ERR_LIFETIME != 0 {
                LifetimeClass::Error
            } else if flags & FLAG_MAIN != 0 {
                LifetimeClass::Configured
            } else {
                LifetimeClass::Infinite
            },
        })
    }
}

/// Reference scan used by randomized equivalence tests: a plain ordered
/// list with none of the pooling or early-sort machinery.
#[derive(Debug, Default)]
pub struct NaiveTable {
    rows: Vec<(EntryId, EntrySpec, Micros, Micros, Micros)>, // id, spec, installed, lifetime, last_refresh
}

impl NaiveTable {
    pub fn install(&mut self, id: EntryId, spec: EntrySpec, now: Micros, lifetime: Micros) {
        self.rows.push((id, spec, now, lifetime, now));
    }

    pub fn lookup(&self, view: &[u8], now: Micros) -> (Option<EntryId>, usize) {
        let mut order: Vec<usize> = (0..self.rows.len()).collect();
        order.sort_by(|&a, &b| {
            let (ia, sa, ta, ..) = (
                self.rows[a].0,
                &self.rows[a].1,
                self.rows[a].2,
            );
            let (ib, sb, tb, ..) = (
                self.rows[b].0,
                &self.rows[b].1,
                self.rows[b].2,
            );
            sa.tier
                .cmp(&sb.tier)
                .then(sb.priority.cmp(&sa.priority))
                .then(ta.cmp(&tb))
                .then(ia.cmp(&ib))
        });
        let mut scanned = 0;
        for i in order {
            let (id, spec, _, lifetime, refresh) = &self.rows[i];
            scanned += 1;
            let live = *lifetime == LIFETIME_INFINITE || refresh.saturating_add(*lifetime) > now;
            if !live {
                continue;
            }
            if spec.matches.iter().all(|m| m.matches(view)) {
                return (Some(*id), scanned);
            }
        }
        (None, scanned)
    }
}

/// Random specs and views for equivalence and wire fuzz tests.
pub mod testgen {
    use super::*;
    use rand::Rng;
    use rand_chacha::ChaCha12Rng;

    pub fn arb_match(rng: &mut ChaCha12Rng) -> Match {
        let len = rng.gen_range(1..=4usize);
        let mut v = vec![0u8; len];
        rng.fill(&mut v[..]);
        Match::new(rng.gen_range(0..12), &v)
    }

    pub fn arb_action(rng: &mut ChaCha12Rng) -> Action {
        match rng.gen_range(0..6) {
            0 => Action::Forward(rng.gen_range(1..=200)),
            1 => {
                let n = rng.gen_range(1..=4);
                Action::SrhSet((0..n).map(|_| rng.gen_range(1..=200)).collect())
            }
            2 => Action::Drop,
            3 => Action::Accept,
            4 => Action::FallbackRpl,
            _ => Action::QueryController,
        }
    }

    pub fn arb_spec(rng: &mut ChaCha12Rng) -> EntrySpec {
        let tier = if rng.gen_bool(0.3) {
            Tier::Whitelist
        } else {
            Tier::Main
        };
        EntrySpec {
            tier,
            priority: rng.gen_range(0..8),
            matches: (0..rng.gen_range(0..3)).map(|_| arb_match(rng)).collect(),
            actions: (0..rng.gen_range(1..3)).map(|_| arb_action(rng)).collect(),
            refresh_on_hit: rng.gen_bool(0.2),
            lifetime: match (tier, rng.gen_range(0..3)) {
                (Tier::Whitelist, _) => LifetimeClass::Infinite,
                (_, 0) => LifetimeClass::Error,
                _ => LifetimeClass::Configured,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, TAG_TOPOLOGY};
    use rand::Rng;

    fn spec(tier: Tier, priority: u8, matches: Vec<Match>, actions: Vec<Action>) -> EntrySpec {
        EntrySpec {
            tier,
            priority,
            matches,
            actions,
            refresh_on_hit: false,
            lifetime: LifetimeClass::Configured,
        }
    }

    #[test]
    fn whitelist_scans_before_higher_priority_main() {
        let mut t = HfsTable::new(16, LOOKUP_COST_PER_ENTRY);
        let m = Match::new(0, &[7]);
        t.install(
            &spec(Tier::Main, 99, vec![m], vec![Action::Drop]),
            0,
            LIFETIME_INFINITE,
        )
        .unwrap();
        let wl = t
            .install(
                &spec(Tier::Whitelist, 0, vec![m], vec![Action::Accept]),
                0,
                LIFETIME_INFINITE,
            )
            .unwrap();
        let got = t.lookup(&[7], 1);
        assert_eq!(got.hit, Some(wl));
        assert_eq!(got.scanned, 1);
        assert_eq!(got.actions, vec![Action::Accept]);
    }

    #[test]
    fn empty_table_misses_at_zero_cost() {
        let mut t = HfsTable::new(16, LOOKUP_COST_PER_ENTRY);
        let got = t.lookup(&[1, 2, 3], 0);
        assert_eq!(got.hit, None);
        assert_eq!(got.scanned, 0);
        assert_eq!(got.cost, 0);
    }

    #[test]
    fn out_of_range_match_window_misses() {
        let mut t = HfsTable::new(16, LOOKUP_COST_PER_ENTRY);
        t.install(
            &spec(
                Tier::Main,
                1,
                vec![Match::new(10, &[1, 2])],
                vec![Action::Drop],
            ),
            0,
            LIFETIME_INFINITE,
        )
        .unwrap();
        let got = t.lookup(&[0; 4], 1);
        assert_eq!(got.hit, None);
        assert_eq!(got.scanned, 1);
    }

    #[test]
    fn identical_matches_are_pooled() {
        let mut t = HfsTable::new(16, LOOKUP_COST_PER_ENTRY);
        let m = Match::new(1, &[9, 9]);
        t.install(&spec(Tier::Main, 1, vec![m], vec![Action::Drop]), 0, 100)
            .unwrap();
        t.install(&spec(Tier::Main, 2, vec![m], vec![Action::Accept]), 0, 100)
            .unwrap();
        assert_eq!(t.match_refcount(&m), 2);
        assert_eq!(t.distinct_matches(), 1);
    }

    #[test]
    fn capacity_evicts_oldest_refresh_main_entry() {
        let mut t = HfsTable::new(2, LOOKUP_COST_PER_ENTRY);
        let a = t
            .install(
                &spec(Tier::Main, 1, vec![Match::new(0, &[1])], vec![Action::Drop]),
                0,
                LIFETIME_INFINITE,
            )
            .unwrap();
        let b = t
            .install(
                &spec(Tier::Main, 1, vec![Match::new(0, &[2])], vec![Action::Drop]),
                5,
                LIFETIME_INFINITE,
            )
            .unwrap();
        t.refresh(a, 10).unwrap();
        let c = t
            .install(
                &spec(Tier::Main, 1, vec![Match::new(0, &[3])], vec![Action::Drop]),
                20,
                LIFETIME_INFINITE,
            )
            .unwrap();
        assert!(t.entry(b).is_none(), "entry with earliest refresh evicted");
        assert!(t.entry(a).is_some());
        assert!(t.entry(c).is_some());
    }

    #[test]
    fn whitelist_only_table_reports_full() {
        let mut t = HfsTable::new(1, LOOKUP_COST_PER_ENTRY);
        t.install(
            &spec(Tier::Whitelist, 1, vec![], vec![Action::Accept]),
            0,
            LIFETIME_INFINITE,
        )
        .unwrap();
        let err = t
            .install(
                &spec(Tier::Main, 1, vec![], vec![Action::Drop]),
                1,
                LIFETIME_INFINITE,
            )
            .unwrap_err();
        assert_eq!(err, FlowtableError::TableFull);
    }

    #[test]
    fn removal_releases_pool_slots() {
        let mut t = HfsTable::new(16, LOOKUP_COST_PER_ENTRY);
        let m = Match::new(0, &[5]);
        let a = t
            .install(&spec(Tier::Main, 1, vec![m], vec![Action::Drop]), 0, 100)
            .unwrap();
        let b = t
            .install(&spec(Tier::Main, 2, vec![m], vec![Action::Drop]), 0, 100)
            .unwrap();
        t.remove(a).unwrap();
        assert_eq!(t.match_refcount(&m), 1);
        t.remove(b).unwrap();
        assert_eq!(t.match_refcount(&m), 0);
        assert_eq!(t.distinct_matches(), 0);
    }

    #[test]
    fn expiry_refresh_and_revival() {
        let mut t = HfsTable::new(16, LOOKUP_COST_PER_ENTRY);
        let m = Match::new(0, &[1]);
        let id = t
            .install(&spec(Tier::Main, 1, vec![m], vec![Action::Drop]), 0, 600)
            .unwrap();
        t.refresh(id, 500).unwrap();
        assert!(t.entry(id).unwrap().live_at(1000));
        assert!(!t.entry(id).unwrap().live_at(1100), "expired at refresh+lifetime");
        assert_eq!(t.lookup(&[1], 1100).hit, None, "expired entries are skipped");
        t.refresh(id, 1200).unwrap();
        assert_eq!(t.lookup(&[1], 1300).hit, Some(id), "refresh revives");
    }

    #[test]
    fn refresh_on_hit_renews_lifetime() {
        let mut t = HfsTable::new(16, LOOKUP_COST_PER_ENTRY);
        let mut s = spec(Tier::Main, 1, vec![Match::new(0, &[1])], vec![Action::Drop]);
        s.refresh_on_hit = true;
        let id = t.install(&s, 0, 600).unwrap();
        assert_eq!(t.lookup(&[1], 550).hit, Some(id));
        assert!(t.entry(id).unwrap().live_at(1100), "hit pushed expiry out");
    }

    #[test]
    fn purge_reclaims_expired_only() {
        let mut t = HfsTable::new(16, LOOKUP_COST_PER_ENTRY);
        let m = Match::new(0, &[1]);
        t.install(&spec(Tier::Main, 1, vec![m], vec![Action::Drop]), 0, 100)
            .unwrap();
        let keep = t
            .install(&spec(Tier::Main, 1, vec![m], vec![Action::Accept]), 0, 1000)
            .unwrap();
        assert_eq!(t.purge_expired(500), 1);
        assert_eq!(t.len(), 1);
        assert!(t.entry(keep).is_some());
        assert_eq!(t.match_refcount(&m), 1);
        assert_eq!(t.purge_expired(500), 0);
    }

    #[test]
    fn entry_roundtrips_through_wire_form() {
        let mut r = stream(3, TAG_TOPOLOGY, 0, 0);
        for _ in 0..2_000 {
            let s = testgen::arb_spec(&mut r);
            let mut buf = Vec::new();
            s.encode(&mut buf);
            let mut pos = 0;
            let back = EntrySpec::decode(&buf, &mut pos).expect("decodes");
            assert_eq!(pos, buf.len());
            assert_eq!(back, s);
        }
    }

    #[test]
    fn entry_decode_rejects_truncation_and_junk() {
        let s = EntrySpec {
            tier: Tier::Main,
            priority: 3,
            matches: vec![Match::new(1, &[1, 2])],
            actions: vec![Action::Forward(9)],
            refresh_on_hit: true,
            lifetime: LifetimeClass::Configured,
        };
        let mut buf = Vec::new();
        s.encode(&mut buf);
        for cut in 0..buf.len() {
            let mut pos = 0;
            assert!(EntrySpec::decode(&buf[..cut], &mut pos).is_err());
        }
        let mut pos = 0;
        assert!(EntrySpec::decode(&[0xFF, 0, 0, 0], &mut pos).is_err());
    }

    /// Randomized equivalence against the naive ordered scan. The large
    /// run lives in the acceptance suite; this keeps a quick version in
    /// unit scope.
    #[test]
    fn lookup_agrees_with_naive_scan() {
        let mut r = stream(11, TAG_TOPOLOGY, 1, 0);
        for case in 0..2_000u64 {
            let mut t = HfsTable::new(32, LOOKUP_COST_PER_ENTRY);
            let mut n = NaiveTable::default();
            let entries = r.gen_range(0..10);
            let mut now = 0u64;
            for _ in 0..entries {
                let s = testgen::arb_spec(&mut r);
                now += r.gen_range(0..50);
                let lifetime = if r.gen_bool(0.2) {
                    LIFETIME_INFINITE
                } else {
                    r.gen_range(1..300)
                };
                let id = t.install(&s, now, lifetime).unwrap();
                n.install(id, s, now, lifetime);
            }
            let at = now + r.gen_range(0..200);
            let mut view = vec![0u8; r.gen_range(1..14)];
            r.fill(&mut view[..]);
            let got = t.lookup(&view, at);
            let (want_hit, want_scanned) = n.lookup(&view, at);
            assert_eq!(got.hit, want_hit, "case {case}");
            assert_eq!(got.scanned, want_scanned, "case {case}");
            assert_eq!(got.cost, LOOKUP_COST_PER_ENTRY * want_scanned as u64);
        }
    }
}
