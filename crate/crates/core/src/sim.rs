//! Event queue, radio medium, and duty-cycled MAC model.
//!
//! Time is whole microseconds. The queue pops events in (time, insertion
//! order), so equal-time events run first-in first-out and a run replays
//! identically from the same inputs.
//!
//! The medium is a unit disk: delivery is possible only within
//! `tx_range`, and every in-range reception attempt succeeds with a fixed
//! probability. Interference sources emit periodic bursts; a receiver
//! inside an active burst cannot decode, and a burst covering the
//! receiver's brief wake check makes it miss the sender's strobe
//! entirely, deferring reception by a full wake interval.
//!
//! The MAC is idealized low-power listening: every node wakes on a fixed
//! per-node phase grid (one 2 ms channel check per 125 ms), a sender
//! strobes until the receiver's wake and then transmits once, and failed
//! attempts retry with a linearly growing random backoff. Each node sends
//! one frame at a time; later sends queue behind `next_free`.

use crate::rng::{self, TAG_BCAST, TAG_MAC, TAG_TX};
use crate::wire::AIRTIME_PER_BYTE_US;
use crate::{Micros, NodeId};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("event scheduled at {t} behind current time {now}")]
pub struct SchedulePast {
    pub t: Micros,
    pub now: Micros,
}

struct Entry<E> {
    t: Micros,
    counter: u64,
    ev: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.t == other.t && self.counter == other.counter
    }
}
impl<E> Eq for Entry<E> {}
impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<E> Ord for Entry<E> {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap, we want earliest first.
        (other.t, other.counter).cmp(&(self.t, self.counter))
    }
}

/// Min-ordered event queue with FIFO tie-breaking.
pub struct EventQueue<E> {
    heap: BinaryHeap<Entry<E>>,
    now: Micros,
    counter: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            now: 0,
            counter: 0,
        }
    }
}

impl<E> EventQueue<E> {
    pub fn now(&self) -> Micros {
        self.now
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn schedule(&mut self, t: Micros, ev: E) -> Result<(), SchedulePast> {
        if t < self.now {
            return Err(SchedulePast { t, now: self.now });
        }
        self.heap.push(Entry {
            t,
            counter: self.counter,
            ev,
        });
        self.counter += 1;
        Ok(())
    }

    pub fn peek_time(&self) -> Option<Micros> {
        self.heap.peek().map(|e| e.t)
    }

    /// Pop the earliest event and advance the clock to it.
    pub fn pop(&mut self) -> Option<(Micros, E)> {
        let e = self.heap.pop()?;
        debug_assert!(e.t >= self.now);
        self.now = e.t;
        Some((e.t, e.ev))
    }

    /// Pop the earliest event only if it is due at or before `t_end`.
    pub fn pop_until(&mut self, t_end: Micros) -> Option<(Micros, E)> {
        if self.peek_time()? <= t_end {
            self.pop()
        } else {
            None
        }
    }
}

/// Periodic interference burst source.
#[derive(Debug, Clone, Copy)]
pub struct Interferer {
    pub x: f64,
    pub y: f64,
    pub range: f64,
    pub period: Micros,
    pub duration: Micros,
    pub phase: Micros,
}

impl Interferer {
    pub fn active_at(&self, t: Micros) -> bool {
        ((t + self.period - self.phase % self.period) % self.period) < self.duration
    }

    /// Last active microsecond within [a, b), or None when no burst
    /// overlaps the window.
    fn last_active_in(&self, a: Micros, b: Micros) -> Option<Micros> {
        if b <= a || self.duration == 0 {
            return None;
        }
        let phase = self.phase % self.period;
        if b <= phase {
            return None;
        }
        // Burst k covers [phase + k*period, phase + k*period + duration).
        let k_hi = (b - 1 - phase) / self.period;
        let mut k = k_hi;
        loop {
            let start = phase + k * self.period;
            let end = start + self.duration;
            if end > a && start < b {
                return Some(b.min(end) - 1);
            }
            if start < a || k == 0 {
                return None;
            }
            k -= 1;
        }
    }
}

/// Unit-disk radio medium with per-transmission Bernoulli loss.
#[derive(Debug, Clone)]
pub struct Medium {
    positions: HashMap<NodeId, (f64, f64)>,
    pub tx_range: f64,
    pub link_success: f64,
    pub interferers: Vec<Interferer>,
}

impl Medium {
    pub fn new(tx_range: f64, link_success: f64) -> Self {
        Medium {
            positions: HashMap::new(),
            tx_range,
            link_success,
            interferers: Vec::new(),
        }
    }

    pub fn place(&mut self, node: NodeId, x: f64, y: f64) {
        self.positions.insert(node, (x, y));
    }

    pub fn position(&self, node: NodeId) -> Option<(f64, f64)> {
        self.positions.get(&node).copied()
    }

    pub fn in_range(&self, a: NodeId, b: NodeId) -> bool {
        match (self.positions.get(&a), self.positions.get(&b)) {
            (Some(&(ax, ay)), Some(&(bx, by))) => {
                let (dx, dy) = (ax - bx, ay - by);
                dx * dx + dy * dy <= self.tx_range * self.tx_range
            }
            _ => false,
        }
    }

    /// In-range neighbors of `node`, ascending by id for determinism.
    pub fn neighbors_of(&self, node: NodeId) -> Vec<NodeId> {
        let mut out: Vec<NodeId> = self
            .positions
            .keys()
            .copied()
            .filter(|&other| other != node && self.in_range(node, other))
            .collect();
        out.sort_unstable();
        out
    }

    pub fn node_ids(&self) -> Vec<NodeId> {
        let mut ids: Vec<NodeId> = self.positions.keys().copied().collect();
        ids.sort_unstable();
        ids
    }

    fn covers(&self, i: &Interferer, node: NodeId) -> bool {
        match self.positions.get(&node) {
            Some(&(x, y)) => {
                let (dx, dy) = (x - i.x, y - i.y);
                dx * dx + dy * dy <= i.range * i.range
            }
            None => false,
        }
    }

    /// Last microsecond within [a, b) at which `node` sits inside an
    /// active burst, or None when its reception there is clean.
    pub fn last_jam(&self, node: NodeId, a: Micros, b: Micros) -> Option<Micros> {
        self.interferers
            .iter()
            .filter(|i| self.covers(i, node))
            .filter_map(|i| i.last_active_in(a, b))
            .max()
    }
}

/// Per-node MAC bookkeeping.
#[derive(Debug)]
struct MacNode {
    /// Wake-grid offset in [0, wake_interval).
    phase: Micros,
    /// The node transmits one frame at a time; sends queue behind this.
    next_free: Micros,
    /// Radio-on intervals beyond the periodic checks (strobes, receptions).
    busy: Vec<(Micros, Micros)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MacConfig {
    pub wake_interval: Micros,
    pub check_duration: Micros,
    pub csma_max_retries: u32,
    pub backoff_min: Micros,
    pub backoff_max: Micros,
}

impl Default for MacConfig {
    fn default() -> Self {
        MacConfig {
            wake_interval: 125_000,
            check_duration: 2_000,
            csma_max_retries: 3,
            backoff_min: 2_000,
            backoff_max: 8_000,
        }
    }
}

/// Bursts covering the receiver's wake check defer reception by one wake
/// interval each; give up after this many deferrals.
const MAX_WAKE_MISSES: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    DeliveredAt(Micros),
    /// Receiver out of radio range; nothing was transmitted.
    LostChannel,
    /// All attempts spent, the deciding failure was an interference burst
    /// at the recorded microsecond.
    LostInterference { at: Micros },
    /// All attempts spent on ordinary channel loss.
    ExceededRetries,
}

/// MAC layer over all nodes: wake grids, per-frame random streams, and
/// radio-on accounting.
///
/// Channel randomness is keyed by (frame uid, transmitting node) rather
/// than drawn from a shared sequence. Frames that exist identically in
/// two runs of the same seed (same flow, same emission index) then see
/// identical channel fates, so configuration comparisons measure the
/// configuration, not resampled luck.
pub struct MacLayer {
    pub config: MacConfig,
    seed: u64,
    nodes: HashMap<NodeId, MacNode>,
}

impl MacLayer {
    pub fn new(seed: u64, config: MacConfig, node_ids: &[NodeId]) -> Self {
        let mut nodes = HashMap::new();
        for &id in node_ids {
            let mut r = rng::stream(seed, TAG_MAC, id as u64, 0);
            let phase = rng::uniform_micros(&mut r, 0, config.wake_interval - 1);
            nodes.insert(
                id,
                MacNode {
                    phase,
                    next_free: 0,
                    busy: Vec::new(),
                },
            );
        }
        MacLayer {
            config,
            seed,
            nodes,
        }
    }

    pub fn phase(&self, node: NodeId) -> Micros {
        self.nodes[&node].phase
    }

    /// Override a node's wake phase; calibration tests use this to
    /// position wake windows exactly.
    pub fn set_phase(&mut self, node: NodeId, phase: Micros) {
        let w = self.config.wake_interval;
        self.nodes.get_mut(&node).expect("known node").phase = phase % w;
    }

    pub fn next_free(&self, node: NodeId) -> Micros {
        self.nodes[&node].next_free
    }

    /// First wake-check start at or after `t` on the node's grid.
    pub fn next_wake(&self, node: NodeId, t: Micros) -> Micros {
        let MacNode { phase, .. } = self.nodes[&node];
        let w = self.config.wake_interval;
        if t <= phase {
            phase
        } else {
            phase + (t - phase).div_ceil(w) * w
        }
    }

    /// Transmit `total_bytes` from `from` to `to`, starting no earlier
    /// than `t` and after any frame the sender is already busy with.
    /// `uid` keys the channel randomness for this frame at this hop.
    pub fn unicast(
        &mut self,
        medium: &Medium,
        from: NodeId,
        to: NodeId,
        total_bytes: usize,
        t: Micros,
        uid: u64,
    ) -> Outcome {
        if !medium.in_range(from, to) {
            return Outcome::LostChannel;
        }
        let mut chan: ChaCha12Rng = rng::stream(self.seed, TAG_TX, uid, from as u64);
        let airtime = total_bytes as Micros * AIRTIME_PER_BYTE_US;
        let check = self.config.check_duration;
        let p = medium.link_success;
        let mut start = t.max(self.nodes[&from].next_free);
        let mut last_jam_at: Option<Micros> = None;

        for attempt in 0..=self.config.csma_max_retries {
            // Strobe until a wake check the receiver actually completes:
            // a burst over the check makes it miss the strobe.
            let mut wake = self.next_wake(to, start);
            let mut misses = 0;
            let jammed_wake = loop {
                match medium.last_jam(to, wake, wake + check) {
                    None => break None,
                    Some(at) => {
                        misses += 1;
                        if misses > MAX_WAKE_MISSES {
                            break Some(at);
                        }
                        wake += self.config.wake_interval;
                    }
                }
            };
            let rx_start = wake + check;
            let rx_end = rx_start + airtime;
            self.nodes.get_mut(&from).unwrap().busy.push((start, rx_end));
            self.nodes.get_mut(&to).unwrap().busy.push((wake, rx_end));
            self.nodes.get_mut(&from).unwrap().next_free = rx_end;

            let failed_jam = match jammed_wake {
                Some(at) => Some(at),
                None => medium.last_jam(to, rx_start, rx_end),
            };
            if let Some(at) = failed_jam {
                last_jam_at = Some(at);
            } else if chan.gen_bool(p) {
                return Outcome::DeliveredAt(rx_end);
            } else {
                last_jam_at = None;
            }
            let (lo, hi) = (self.config.backoff_min, self.config.backoff_max);
            let grow = (attempt + 1) as Micros;
            let backoff = rng::uniform_micros(&mut chan, lo, hi) * grow;
            start = rx_end + backoff;
        }
        match last_jam_at {
            Some(at) => Outcome::LostInterference { at },
            None => Outcome::ExceededRetries,
        }
    }

    /// Broadcast to every in-range neighbor: the sender strobes one full
    /// wake interval; each neighbor independently hears it with the
    /// medium's link probability. Returns (neighbor, delivery time) for
    /// the ones that heard, all neighbors listed.
    pub fn broadcast(
        &mut self,
        medium: &Medium,
        from: NodeId,
        total_bytes: usize,
        t: Micros,
        uid: u64,
    ) -> Vec<(NodeId, Option<Micros>)> {
        let airtime = total_bytes as Micros * AIRTIME_PER_BYTE_US;
        let check = self.config.check_duration;
        let start = t.max(self.nodes[&from].next_free);
        let strobe_end = start + self.config.wake_interval;
        {
            let s = self.nodes.get_mut(&from).unwrap();
            s.busy.push((start, strobe_end));
            s.next_free = strobe_end;
        }
        let p = medium.link_success;
        let mut out = Vec::new();
        for to in medium.neighbors_of(from) {
            if !self.nodes.contains_key(&to) {
                continue;
            }
            let wake = self.next_wake(to, start);
            let rx_end = wake + check + airtime;
            let heard = rng::stream(self.seed, TAG_BCAST, uid, to as u64).gen_bool(p);
            if heard {
                self.nodes.get_mut(&to).unwrap().busy.push((wake, rx_end));
                out.push((to, Some(rx_end)));
            } else {
                out.push((to, None));
            }
        }
        out
    }

    /// Radio duty cycle over [t0, t1): busy intervals unioned with the
    /// 2 ms wake checks that fall outside them, over the window length.
    pub fn rdc(&self, node: NodeId, t0: Micros, t1: Micros) -> f64 {
        assert!(t1 > t0, "empty observation window");
        let n = &self.nodes[&node];
        let w = self.config.wake_interval;
        let check = self.config.check_duration;

        // Union of busy intervals clipped to the window.
        let mut merged: Vec<(Micros, Micros)> = Vec::new();
        let mut sorted: Vec<(Micros, Micros)> = n
            .busy
            .iter()
            .filter(|&&(a, b)| b > a && a < t1 && b > t0)
            .map(|&(a, b)| (a.max(t0), b.min(t1)))
            .collect();
        sorted.sort_unstable();
        for (a, b) in sorted {
            match merged.last_mut() {
                Some((_, e)) if *e >= a => *e = (*e).max(b),
                _ => merged.push((a, b)),
            }
        }
        let busy_total: Micros = merged.iter().map(|(a, b)| b - a).sum();

        // Wake checks on the grid, skipping those starting inside a busy
        // interval (the radio is already on there).
        let mut check_total: Micros = 0;
        let mut wake = self.next_wake(node, t0);
        let mut mi = 0;
        while wake < t1 {
            while mi < merged.len() && merged[mi].1 <= wake {
                mi += 1;
            }
            let covered = mi < merged.len() && merged[mi].0 <= wake;
            if !covered {
                check_total += check.min(t1 - wake);
            }
            wake += w;
        }
        (busy_total + check_total) as f64 / (t1 - t0) as f64
    }

    /// Total accumulated busy time (strobes and receptions), for tests.
    pub fn busy_total(&self, node: NodeId) -> Micros {
        self.nodes[&node].busy.iter().map(|&(a, b)| b - a).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn queue_pops_in_time_then_insertion_order() {
        let mut q = EventQueue::default();
        q.schedule(5_000_000, "a").unwrap();
        q.schedule(5_000_000, "b").unwrap();
        q.schedule(1_000_000, "c").unwrap();
        assert_eq!(q.pop(), Some((1_000_000, "c")));
        assert_eq!(q.pop(), Some((5_000_000, "a")));
        assert_eq!(q.now(), 5_000_000);
        assert_eq!(q.pop(), Some((5_000_000, "b")));
        assert_eq!(q.pop(), None);
    }

    #[test]
    fn scheduling_into_the_past_errors() {
        let mut q = EventQueue::default();
        q.schedule(10, "x").unwrap();
        q.pop();
        assert_eq!(
            q.schedule(9, "y"),
            Err(SchedulePast { t: 9, now: 10 })
        );
        q.schedule(10, "z").unwrap();
    }

    #[test]
    fn pop_until_respects_the_horizon() {
        let mut q = EventQueue::default();
        q.schedule(4, "a").unwrap();
        q.schedule(9, "b").unwrap();
        assert_eq!(q.pop_until(5), Some((4, "a")));
        assert_eq!(q.pop_until(5), None);
        assert_eq!(q.pop_until(9), Some((9, "b")));
    }

    #[test]
    fn identical_schedules_replay_identically() {
        let fill = |q: &mut EventQueue<u32>| {
            for i in 0..100u32 {
                q.schedule(((i * 37) % 11) as Micros, i).unwrap();
            }
        };
        let (mut a, mut b) = (EventQueue::default(), EventQueue::default());
        fill(&mut a);
        fill(&mut b);
        loop {
            let (x, y) = (a.pop(), b.pop());
            assert_eq!(x, y);
            if x.is_none() {
                break;
            }
        }
    }

    #[test]
    fn interferer_windows_repeat_on_period() {
        let i = Interferer {
            x: 0.0,
            y: 0.0,
            range: 50.0,
            period: 100_000,
            duration: 15_000,
            phase: 0,
        };
        assert!(i.active_at(0));
        assert!(i.active_at(14_999));
        assert!(!i.active_at(15_000));
        assert!(!i.active_at(99_999));
        assert!(i.active_at(100_000));
        assert!(i.active_at(214_999));
        let shifted = Interferer { phase: 30_000, ..i };
        assert!(!shifted.active_at(0));
        assert!(shifted.active_at(30_000));
        assert!(shifted.active_at(144_999));
        assert!(!shifted.active_at(145_000));
    }

    #[test]
    fn last_active_instant_stays_inside_burst_windows() {
        let i = Interferer {
            x: 0.0,
            y: 0.0,
            range: 50.0,
            period: 100_000,
            duration: 15_000,
            phase: 0,
        };
        // Window fully before the second burst.
        assert_eq!(i.last_active_in(20_000, 90_000), None);
        // Window straddling a burst end: last active microsecond.
        assert_eq!(i.last_active_in(10_000, 40_000), Some(14_999));
        // Window inside a burst.
        assert_eq!(i.last_active_in(102_000, 104_000), Some(103_999));
        // Window touching only the burst start boundary.
        assert_eq!(i.last_active_in(95_000, 100_000), None);
        assert_eq!(i.last_active_in(95_000, 100_001), Some(100_000));
        for (a, b) in [(0, 1), (3_000, 200_000), (180_000, 230_000)] {
            if let Some(at) = i.last_active_in(a, b) {
                assert!(i.active_at(at));
                assert!((a..b).contains(&at));
            }
        }
    }

    fn lab(link_success: f64) -> (Medium, MacLayer) {
        let mut m = Medium::new(100.0, link_success);
        m.place(1, 0.0, 0.0);
        m.place(2, 50.0, 0.0);
        m.place(3, 500.0, 0.0);
        let mac = MacLayer::new(7, MacConfig::default(), &[1, 2, 3]);
        (m, mac)
    }

    #[test]
    fn out_of_range_is_lost_without_radio_cost() {
        let (m, mut mac) = lab(1.0);
        assert_eq!(mac.unicast(&m, 1, 3, 86, 0, 0), Outcome::LostChannel);
        assert_eq!(mac.busy_total(1), 0);
    }

    #[test]
    fn lossless_unicast_lands_on_the_receiver_wake_grid() {
        let (m, mut mac) = lab(1.0);
        mac.set_phase(2, 40_000);
        let out = mac.unicast(&m, 1, 2, 86, 10_000, 0);
        // Wake at 40 ms, check 2 ms, airtime 86*32 us.
        let expect = 40_000 + 2_000 + 86 * 32;
        assert_eq!(out, Outcome::DeliveredAt(expect));
        assert_eq!(mac.next_free(1), expect);
        assert_eq!(mac.busy_total(1), expect - 10_000);
        // A second send queues behind the first.
        let out2 = mac.unicast(&m, 1, 2, 86, 20_000, 1);
        let expect2 = 165_000 + 2_000 + 86 * 32;
        assert_eq!(out2, Outcome::DeliveredAt(expect2));
    }

    #[test]
    fn delivery_rate_matches_retry_closed_form() {
        let (m, mut mac) = lab(0.9);
        let trials = 100_000u32;
        let mut delivered = 0u32;
        let mut t = 0;
        for trial in 0..trials {
            t = mac.next_free(1).max(t) + 1_000;
            if let Outcome::DeliveredAt(_) = mac.unicast(&m, 1, 2, 86, t, trial as u64) {
                delivered += 1;
            }
        }
        let rate = delivered as f64 / trials as f64;
        let nominal = 1.0 - (1.0 - 0.9f64).powi(4);
        assert!(
            (rate - nominal).abs() <= 0.001,
            "rate {rate} vs nominal {nominal}"
        );
    }

    fn jam_lab(retries: u32) -> (Medium, MacLayer) {
        let mut m = Medium::new(100.0, 1.0);
        m.place(1, 0.0, 0.0);
        m.place(2, 50.0, 0.0);
        m.interferers.push(Interferer {
            x: 50.0,
            y: 0.0,
            range: 30.0,
            period: 100_000,
            duration: 15_000,
            phase: 0,
        });
        let cfg = MacConfig {
            csma_max_retries: retries,
            ..MacConfig::default()
        };
        (m, MacLayer::new(7, cfg, &[1, 2]))
    }

    #[test]
    fn bursts_over_the_data_window_kill_and_attribute_correctly() {
        let (m, mut mac) = jam_lab(0);
        // Receiver wakes at 97 ms: check [97,99) is clean, but the data
        // window [99, 101.752) runs into the burst at 100 ms.
        mac.set_phase(2, 97_000);
        assert_eq!(
            mac.unicast(&m, 1, 2, 86, 90_000, 0),
            Outcome::LostInterference { at: 101_751 }
        );
        // Same geometry, but wakes landing mid-cycle decode untouched.
        mac.set_phase(2, 40_000);
        let out = mac.unicast(&m, 1, 2, 86, 1_000_000 + 20_000, 1);
        assert_eq!(out, Outcome::DeliveredAt(1_000_000 + 40_000 + 2_000 + 86 * 32));
    }

    #[test]
    fn wake_checks_jammed_every_cycle_eventually_give_up() {
        let (mut m, mut mac) = jam_lab(0);
        // Aligned with the wake grid: every check sits inside a burst.
        m.interferers[0].period = 125_000;
        mac.set_phase(2, 10_000);
        match mac.unicast(&m, 1, 2, 86, 0, 0) {
            Outcome::LostInterference { at } => {
                assert!((at % 125_000) < 15_000, "attributed at {at}");
            }
            other => panic!("expected interference loss, got {other:?}"),
        }
    }

    #[test]
    fn jam_attribution_always_lands_inside_a_burst() {
        let (m, mut mac) = jam_lab(0);
        let mut lost_jam = 0u32;
        let mut delivered = 0u32;
        let mut t = 0;
        for i in 0..400u64 {
            t = mac.next_free(1).max(t) + 37_777 + (i % 7) * 1_009;
            match mac.unicast(&m, 1, 2, 86, t, i) {
                Outcome::DeliveredAt(_) => delivered += 1,
                Outcome::LostInterference { at } => {
                    lost_jam += 1;
                    assert!((at % 100_000) < 15_000, "attributed at {at}");
                }
                other => panic!("unexpected {other:?}"),
            }
        }
        assert!(delivered > 0 && lost_jam > 0, "{delivered} / {lost_jam}");
    }

    #[test]
    fn bursts_over_the_wake_check_defer_reception_by_whole_intervals() {
        let (mut m, mut mac) = lab(1.0);
        m.interferers.push(Interferer {
            x: 50.0,
            y: 0.0,
            range: 30.0,
            period: 1_000_000,
            duration: 15_000,
            phase: 0,
        });
        // Wake at t=1.0 s sits inside the burst [1.0, 1.015): miss; the
        // next wake at 1.125 s is clean.
        mac.set_phase(2, 0);
        let out = mac.unicast(&m, 1, 2, 86, 990_000, 0);
        assert_eq!(out, Outcome::DeliveredAt(1_125_000 + 2_000 + 86 * 32));
        // The sender kept strobing across the miss.
        assert_eq!(mac.busy_total(1), (1_127_000 + 86 * 32) - 990_000);
    }

    #[test]
    fn interference_free_sender_is_unaffected_by_distant_bursts() {
        let (mut m, mut mac) = lab(1.0);
        // Interferer near the SENDER only; reception is keyed on the
        // receiver's position, so delivery is clean.
        m.interferers.push(Interferer {
            x: 0.0,
            y: 0.0,
            range: 10.0,
            period: 100_000,
            duration: 15_000,
            phase: 0,
        });
        mac.set_phase(2, 5_000);
        assert!(matches!(
            mac.unicast(&m, 1, 2, 86, 0, 0),
            Outcome::DeliveredAt(_)
        ));
    }

    #[test]
    fn broadcast_charges_a_full_strobe_even_with_no_neighbors() {
        let mut m = Medium::new(100.0, 1.0);
        m.place(9, 0.0, 0.0);
        let mut mac = MacLayer::new(3, MacConfig::default(), &[9]);
        let out = mac.broadcast(&m, 9, 98, 7_000, 0);
        assert!(out.is_empty());
        assert_eq!(mac.busy_total(9), 125_000);
        assert_eq!(mac.next_free(9), 132_000);
    }

    #[test]
    fn lossless_broadcast_reaches_every_neighbor() {
        let mut m = Medium::new(100.0, 1.0);
        m.place(1, 0.0, 0.0);
        m.place(2, 60.0, 0.0);
        m.place(4, 0.0, 60.0);
        m.place(9, 300.0, 300.0);
        let mut mac = MacLayer::new(3, MacConfig::default(), &[1, 2, 4, 9]);
        let out = mac.broadcast(&m, 1, 98, 0, 0);
        assert_eq!(out.len(), 2, "only in-range neighbors");
        assert!(out.iter().all(|(_, d)| d.is_some()));
        assert_eq!(out[0].0, 2);
        assert_eq!(out[1].0, 4);
    }

    #[test]
    fn broadcast_loss_rate_tracks_link_probability() {
        let mut m = Medium::new(100.0, 0.9);
        m.place(1, 0.0, 0.0);
        m.place(2, 60.0, 0.0);
        let mut mac = MacLayer::new(11, MacConfig::default(), &[1, 2]);
        let mut heard = 0u32;
        let trials = 10_000;
        let mut t = 0;
        for trial in 0..trials {
            t = mac.next_free(1).max(t);
            if mac.broadcast(&m, 1, 98, t, trial as u64)[0].1.is_some() {
                heard += 1;
            }
        }
        let rate = heard as f64 / trials as f64;
        assert!((rate - 0.9).abs() <= 0.01, "rate {rate}");
    }

    #[test]
    fn idle_duty_cycle_is_the_check_fraction() {
        let mac = MacLayer::new(5, MacConfig::default(), &[1]);
        let rdc = mac.rdc(1, 0, 125_000_000);
        assert!((rdc - 0.016).abs() < 1e-4, "idle rdc {rdc}");
    }

    #[test]
    fn saturated_radio_reports_full_duty_cycle() {
        let mut mac = MacLayer::new(5, MacConfig::default(), &[1]);
        mac.nodes.get_mut(&1).unwrap().busy.push((0, 10_000_000));
        assert_eq!(mac.rdc(1, 0, 10_000_000), 1.0);
    }

    #[test]
    fn zero_length_busy_intervals_add_nothing() {
        let mut mac = MacLayer::new(
            5,
            MacConfig {
                // Push the first wake check past the window so only the
                // explicit intervals could contribute.
                wake_interval: 10_000_000,
                ..MacConfig::default()
            },
            &[1],
        );
        mac.set_phase(1, 9_000_000);
        mac.nodes.get_mut(&1).unwrap().busy.push((500, 500));
        assert_eq!(mac.rdc(1, 0, 1_000_000), 0.0);
    }

    #[test]
    fn duty_cycle_not_double_counted_when_busy_covers_checks() {
        let mut mac = MacLayer::new(5, MacConfig::default(), &[1]);
        mac.set_phase(1, 0);
        // Busy exactly over the first two checks plus the gap between.
        mac.nodes.get_mut(&1).unwrap().busy.push((0, 250_000));
        let rdc = mac.rdc(1, 0, 1_250_000);
        // 250 ms busy + 8 remaining checks of 2 ms = 266 ms over 1.25 s.
        assert!((rdc - 0.2128).abs() < 1e-4, "rdc {rdc}");
    }
}
