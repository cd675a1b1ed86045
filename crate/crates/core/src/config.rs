//! Scenario files: a TOML description of topology, radio, traffic,
//! control-plane settings, path policy, and interference. Loading
//! validates everything up front so a bad file fails with a field-level
//! message before any simulation starts, and unknown keys are rejected
//! rather than ignored.

use crate::controller::{FlowPolicy, PolicyMode, PolicyRule};
use crate::flowtable::{Action, EntrySpec, LifetimeClass, Match, Tier};
use crate::node::{AppFlowSpec, FlowPriority, Interval};
use crate::rng::{stream, TAG_TOPOLOGY};
use crate::rpl::RplTimings;
use crate::sim::{Interferer, MacConfig};
use crate::wire::{ConfBody, FieldSpec, FlowKey, PAYLOAD_BUDGET, PROTO_SDN};
use crate::{Micros, NodeId, MICROS_PER_SEC};
use rand::Rng;
use serde::Deserialize;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;
use thiserror::Error;

/// How many placements to try before giving up on a connected topology.
const MAX_PLACEMENT_ATTEMPTS: u64 = 10_000;

/// Application payload must leave room for the four-byte data header
/// inside the frame budget.
const MAX_APP_PAYLOAD: u8 = (PAYLOAD_BUDGET - 4) as u8;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}")]
    Io {
        path: String,
        #[source]
        err: std::io::Error,
    },
    #[error("scenario does not parse")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("no connected placement with depth 3..={max_hops} found in {attempts} tries")]
    PlacementFailed { max_hops: u32, attempts: u64 },
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

// Raw deserialization layer. Everything optional has its default here;
// the validated `Scenario` below is what the rest of the code consumes.

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: String,
    duration_s: f64,
    #[serde(default)]
    seeds: Vec<u64>,
    topology: RawTopology,
    radio: RawRadio,
    #[serde(default)]
    sdn: Option<RawSdn>,
    #[serde(default)]
    mac: Option<RawMac>,
    #[serde(default)]
    rpl: Option<RawRpl>,
    #[serde(default)]
    flows: Vec<RawFlow>,
    #[serde(default)]
    policies: Vec<RawPolicy>,
    #[serde(default)]
    interferers: Vec<RawInterferer>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", tag = "kind")]
enum RawTopology {
    GridRandom {
        nodes: u16,
        #[serde(default = "default_max_hops")]
        max_hops: u32,
        area_side_m: f64,
    },
    Explicit {
        root: NodeId,
        nodes: Vec<RawNode>,
    },
}

fn default_max_hops() -> u32 {
    5
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    id: NodeId,
    x: f64,
    y: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRadio {
    tx_range_m: f64,
    link_success: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSdn {
    #[serde(default = "default_true")]
    enabled: bool,
    #[serde(default = "default_nsu_period")]
    nsu_period_s: u16,
    #[serde(default = "default_ft_lifetime")]
    ft_lifetime_s: u16,
    #[serde(default = "default_throttle")]
    throttle_window_s: u16,
    #[serde(default = "default_true")]
    srhi: bool,
    #[serde(default = "default_true")]
    cmq: bool,
    #[serde(default = "default_true")]
    ppq: bool,
    #[serde(default = "default_true")]
    fr: bool,
}

fn default_true() -> bool {
    true
}
fn default_nsu_period() -> u16 {
    180
}
fn default_ft_lifetime() -> u16 {
    600
}
fn default_throttle() -> u16 {
    1
}

// Radio duty cycling and contention knobs, in milliseconds. Defaults
// mirror `MacConfig::default`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMac {
    #[serde(default = "default_wake_interval")]
    wake_interval_ms: f64,
    #[serde(default = "default_check_duration")]
    check_duration_ms: f64,
    #[serde(default = "default_csma_retries")]
    csma_max_retries: u32,
    #[serde(default = "default_backoff_min")]
    backoff_min_ms: f64,
    #[serde(default = "default_backoff_max")]
    backoff_max_ms: f64,
}

fn default_wake_interval() -> f64 {
    125.0
}
fn default_check_duration() -> f64 {
    2.0
}
fn default_csma_retries() -> u32 {
    3
}
fn default_backoff_min() -> f64 {
    2.0
}
fn default_backoff_max() -> f64 {
    8.0
}

// Routing maintenance timers, in seconds.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRpl {
    #[serde(default = "default_dis_period")]
    dis_period_s: f64,
    #[serde(default = "default_dio_period")]
    dio_period_s: f64,
    #[serde(default = "default_dao_period")]
    dao_period_s: f64,
    #[serde(default = "default_response_delay")]
    response_delay_s: [f64; 2],
}

fn default_dis_period() -> f64 {
    10.0
}
fn default_dio_period() -> f64 {
    60.0
}
fn default_dao_period() -> f64 {
    300.0
}
fn default_response_delay() -> [f64; 2] {
    [0.1, 0.5]
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFlow {
    flow_id: u8,
    source: RawSource,
    dest: NodeId,
    interval_s: RawInterval,
    #[serde(default)]
    priority: RawPriority,
    payload_len: u8,
    #[serde(default)]
    start_s: f64,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawSource {
    Id(NodeId),
    Word(String),
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawInterval {
    Fixed { fixed: f64 },
    Uniform { uniform: [f64; 2] },
}

#[derive(Debug, Default, Clone, Copy, Deserialize)]
#[serde(rename_all = "lowercase")]
enum RawPriority {
    #[default]
    Low,
    High,
}

impl From<RawPriority> for FlowPriority {
    fn from(p: RawPriority) -> FlowPriority {
        match p {
            RawPriority::Low => FlowPriority::Low,
            RawPriority::High => FlowPriority::High,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolicy {
    #[serde(default)]
    flow_id: Option<u8>,
    #[serde(default)]
    dest: Option<NodeId>,
    mode: RawMode,
    #[serde(default)]
    path: Vec<NodeId>,
    #[serde(default)]
    avoid: Vec<NodeId>,
    #[serde(default)]
    priority: RawPriority,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "lowercase")]
enum RawMode {
    Shortest,
    Pin,
    Avoid,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInterferer {
    x: f64,
    y: f64,
    #[serde(default = "default_interferer_range")]
    range_m: f64,
    period_ms: u64,
    duration_ms: u64,
    #[serde(default)]
    phase_ms: u64,
}

fn default_interferer_range() -> f64 {
    50.0
}

/// Node placement strategy.
#[derive(Debug, Clone)]
pub enum Topology {
    /// Root at the center of a square, the rest uniform at random,
    /// resampled per seed until connected with a depth in bounds.
    GridRandom {
        nodes: u16,
        max_hops: u32,
        area_side_m: f64,
    },
    Explicit(BTreeMap<NodeId, (f64, f64)>),
}

#[derive(Debug, Clone, Copy)]
pub struct SdnParams {
    pub nsu_period_s: u16,
    pub ft_lifetime_s: u16,
    pub throttle_window_s: u16,
    pub srhi: bool,
    pub cmq: bool,
    pub ppq: bool,
    pub fr: bool,
}

/// A validated scenario, ready to materialize per seed.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub duration: Micros,
    pub seeds: Vec<u64>,
    pub topology: Topology,
    pub root: NodeId,
    pub tx_range: f64,
    pub link_success: f64,
    /// None runs the plain routing stack with no controller.
    pub sdn: Option<SdnParams>,
    pub mac: MacConfig,
    pub rpl: RplTimings,
    pub flows: Vec<AppFlowSpec>,
    pub policy: FlowPolicy,
    pub interferers: Vec<Interferer>,
}

fn to_micros(seconds: f64) -> Micros {
    (seconds * MICROS_PER_SEC as f64).round() as Micros
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Scenario, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|err| ConfigError::Io {
            path: path.display().to_string(),
            err,
        })?;
        Scenario::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Scenario, ConfigError> {
        let raw: RawScenario = toml::from_str(text)?;
        Scenario::validate(raw)
    }

    fn validate(raw: RawScenario) -> Result<Scenario, ConfigError> {
        if raw.name.is_empty() {
            return Err(invalid("name must not be empty"));
        }
        if !(raw.duration_s > 0.0) {
            return Err(invalid("duration_s must be positive"));
        }

        let (topology, root, node_ids) = match raw.topology {
            RawTopology::GridRandom {
                nodes,
                max_hops,
                area_side_m,
            } => {
                if nodes < 2 {
                    return Err(invalid("topology.nodes must be at least 2"));
                }
                if max_hops < 3 {
                    return Err(invalid("topology.max_hops must be at least 3"));
                }
                if !(area_side_m > 0.0) {
                    return Err(invalid("topology.area_side_m must be positive"));
                }
                let ids: BTreeSet<NodeId> = (1..=nodes).collect();
                (
                    Topology::GridRandom {
                        nodes,
                        max_hops,
                        area_side_m,
                    },
                    1,
                    ids,
                )
            }
            RawTopology::Explicit { root, nodes } => {
                if nodes.len() < 2 {
                    return Err(invalid("topology.nodes must list at least 2 nodes"));
                }
                let mut map = BTreeMap::new();
                for n in &nodes {
                    if n.id == 0 {
                        return Err(invalid("node id 0 is reserved"));
                    }
                    if !n.x.is_finite() || !n.y.is_finite() {
                        return Err(invalid(format!("node {} has a non-finite position", n.id)));
                    }
                    if map.insert(n.id, (n.x, n.y)).is_some() {
                        return Err(invalid(format!("node id {} listed twice", n.id)));
                    }
                }
                if !map.contains_key(&root) {
                    return Err(invalid(format!("root {root} is not among the nodes")));
                }
                let ids: BTreeSet<NodeId> = map.keys().copied().collect();
                (Topology::Explicit(map), root, ids)
            }
        };

        if !(raw.radio.tx_range_m > 0.0) {
            return Err(invalid("radio.tx_range_m must be positive"));
        }
        if !(0.0..=1.0).contains(&raw.radio.link_success) {
            return Err(invalid("radio.link_success must be in [0, 1]"));
        }

        let sdn = match raw.sdn {
            Some(s) if s.enabled => {
                if s.nsu_period_s == 0 {
                    return Err(invalid("sdn.nsu_period_s must be positive"));
                }
                if s.ft_lifetime_s == 0 {
                    return Err(invalid("sdn.ft_lifetime_s must be positive"));
                }
                Some(SdnParams {
                    nsu_period_s: s.nsu_period_s,
                    ft_lifetime_s: s.ft_lifetime_s,
                    throttle_window_s: if s.cmq { s.throttle_window_s } else { 0 },
                    srhi: s.srhi,
                    cmq: s.cmq,
                    ppq: s.ppq,
                    fr: s.fr,
                })
            }
            _ => None,
        };

        let mac = match raw.mac {
            None => MacConfig::default(),
            Some(m) => {
                if !(m.wake_interval_ms > 0.0) {
                    return Err(invalid("mac.wake_interval_ms must be positive"));
                }
                if !(m.check_duration_ms > 0.0) || m.check_duration_ms >= m.wake_interval_ms {
                    return Err(invalid(
                        "mac.check_duration_ms must be positive and below wake_interval_ms",
                    ));
                }
                if !(m.backoff_min_ms > 0.0) || m.backoff_max_ms < m.backoff_min_ms {
                    return Err(invalid("mac backoff needs 0 < min_ms <= max_ms"));
                }
                MacConfig {
                    wake_interval: to_micros(m.wake_interval_ms / 1_000.0),
                    check_duration: to_micros(m.check_duration_ms / 1_000.0),
                    csma_max_retries: m.csma_max_retries,
                    backoff_min: to_micros(m.backoff_min_ms / 1_000.0),
                    backoff_max: to_micros(m.backoff_max_ms / 1_000.0),
                }
            }
        };

        let rpl = match raw.rpl {
            None => RplTimings::default(),
            Some(r) => {
                for (v, name) in [
                    (r.dis_period_s, "rpl.dis_period_s"),
                    (r.dio_period_s, "rpl.dio_period_s"),
                    (r.dao_period_s, "rpl.dao_period_s"),
                ] {
                    if !(v > 0.0) {
                        return Err(invalid(format!("{name} must be positive")));
                    }
                }
                let [lo, hi] = r.response_delay_s;
                if !(lo >= 0.0) || hi < lo {
                    return Err(invalid("rpl.response_delay_s needs 0 <= lo <= hi"));
                }
                RplTimings {
                    dis_period: to_micros(r.dis_period_s),
                    dio_period: to_micros(r.dio_period_s),
                    dao_period: to_micros(r.dao_period_s),
                    response_delay: (to_micros(lo), to_micros(hi)),
                }
            }
        };

        let mut flows = Vec::new();
        let mut flow_idents = BTreeSet::new();
        for (i, f) in raw.flows.iter().enumerate() {
            let label = format!("flows[{i}]");
            if !node_ids.contains(&f.dest) {
                return Err(invalid(format!("{label}: dest {} is not a node", f.dest)));
            }
            if f.payload_len > MAX_APP_PAYLOAD {
                return Err(invalid(format!(
                    "{label}: payload_len {} exceeds the frame budget ({MAX_APP_PAYLOAD})",
                    f.payload_len
                )));
            }
            let interval = match f.interval_s {
                RawInterval::Fixed { fixed } => {
                    if !(fixed > 0.0) {
                        return Err(invalid(format!("{label}: fixed interval must be positive")));
                    }
                    Interval::Fixed(to_micros(fixed))
                }
                RawInterval::Uniform { uniform: [lo, hi] } => {
                    if !(lo > 0.0) || hi < lo {
                        return Err(invalid(format!(
                            "{label}: uniform interval needs 0 < lo <= hi"
                        )));
                    }
                    Interval::Uniform(to_micros(lo), to_micros(hi))
                }
            };
            if f.start_s < 0.0 {
                return Err(invalid(format!("{label}: start_s must not be negative")));
            }
            let sources: Vec<NodeId> = match &f.source {
                RawSource::Id(id) => {
                    if !node_ids.contains(id) {
                        return Err(invalid(format!("{label}: source {id} is not a node")));
                    }
                    vec![*id]
                }
                RawSource::Word(w) if w == "all" => {
                    node_ids.iter().copied().filter(|&n| n != root).collect()
                }
                RawSource::Word(w) => {
                    return Err(invalid(format!(
                        "{label}: source must be a node id or \"all\", got {w:?}"
                    )));
                }
            };
            for source in sources {
                if source == f.dest {
                    return Err(invalid(format!(
                        "{label}: source {source} and dest coincide"
                    )));
                }
                if !flow_idents.insert((source, f.flow_id)) {
                    return Err(invalid(format!(
                        "{label}: duplicate flow {} at source {source}",
                        f.flow_id
                    )));
                }
                flows.push(AppFlowSpec {
                    flow_id: f.flow_id,
                    source,
                    dest: f.dest,
                    interval,
                    priority: f.priority.into(),
                    payload_len: f.payload_len,
                    start: to_micros(f.start_s),
                });
            }
        }

        let mut rules = Vec::new();
        for (i, p) in raw.policies.iter().enumerate() {
            let label = format!("policies[{i}]");
            let key = match (p.flow_id, p.dest) {
                (Some(flow_id), Some(dest)) => Some(FlowKey { dest, flow_id }),
                (None, None) => None,
                _ => {
                    return Err(invalid(format!(
                        "{label}: flow_id and dest come together or not at all"
                    )));
                }
            };
            let mode = match p.mode {
                RawMode::Shortest => {
                    if !p.path.is_empty() || !p.avoid.is_empty() {
                        return Err(invalid(format!("{label}: shortest takes no path or avoid")));
                    }
                    PolicyMode::Shortest
                }
                RawMode::Pin => {
                    if p.path.is_empty() {
                        return Err(invalid(format!("{label}: pin needs a path")));
                    }
                    for hop in &p.path {
                        if !node_ids.contains(hop) {
                            return Err(invalid(format!("{label}: path hop {hop} is not a node")));
                        }
                    }
                    if let Some(dest) = p.dest {
                        if *p.path.last().unwrap() != dest {
                            return Err(invalid(format!("{label}: path must end at dest {dest}")));
                        }
                    }
                    PolicyMode::Pin(p.path.clone())
                }
                RawMode::Avoid => {
                    if p.avoid.is_empty() {
                        return Err(invalid(format!("{label}: avoid needs nodes")));
                    }
                    PolicyMode::Avoid(p.avoid.iter().copied().collect())
                }
            };
            rules.push(PolicyRule {
                key,
                mode,
                priority: p.priority.into(),
            });
        }

        let mut interferers = Vec::new();
        for (i, it) in raw.interferers.iter().enumerate() {
            let label = format!("interferers[{i}]");
            if !(it.range_m > 0.0) {
                return Err(invalid(format!("{label}: range_m must be positive")));
            }
            if it.period_ms == 0 || it.duration_ms == 0 || it.duration_ms > it.period_ms {
                return Err(invalid(format!(
                    "{label}: need 0 < duration_ms <= period_ms"
                )));
            }
            if it.phase_ms >= it.period_ms {
                return Err(invalid(format!("{label}: phase_ms must be below period_ms")));
            }
            interferers.push(Interferer {
                x: it.x,
                y: it.y,
                range: it.range_m,
                period: it.period_ms * 1_000,
                duration: it.duration_ms * 1_000,
                phase: it.phase_ms * 1_000,
            });
        }

        Ok(Scenario {
            name: raw.name,
            duration: to_micros(raw.duration_s),
            seeds: raw.seeds,
            topology,
            root,
            tx_range: raw.radio.tx_range_m,
            link_success: raw.radio.link_success,
            sdn,
            mac,
            rpl,
            flows,
            policy: FlowPolicy { rules },
            interferers,
        })
    }

    pub fn node_ids(&self) -> Vec<NodeId> {
        match &self.topology {
            Topology::GridRandom { nodes, .. } => (1..=*nodes).collect(),
            Topology::Explicit(map) => map.keys().copied().collect(),
        }
    }

    /// Resolve node positions for one seed. Explicit layouts are
    /// returned as written; random layouts place the root at the center
    /// and resample the rest until the radio graph is connected with a
    /// root eccentricity between 3 and `max_hops`.
    pub fn positions(&self, seed: u64) -> Result<BTreeMap<NodeId, (f64, f64)>, ConfigError> {
        match &self.topology {
            Topology::Explicit(map) => Ok(map.clone()),
            Topology::GridRandom {
                nodes,
                max_hops,
                area_side_m,
            } => {
                for attempt in 0..MAX_PLACEMENT_ATTEMPTS {
                    let mut rng = stream(seed, TAG_TOPOLOGY, attempt, 0);
                    let mut map = BTreeMap::new();
                    map.insert(self.root, (area_side_m / 2.0, area_side_m / 2.0));
                    for id in 2..=*nodes {
                        let x = rng.gen::<f64>() * area_side_m;
                        let y = rng.gen::<f64>() * area_side_m;
                        map.insert(id, (x, y));
                    }
                    if let Some(depth) = radio_depth(&map, self.root, self.tx_range) {
                        if (3..=*max_hops).contains(&depth) {
                            return Ok(map);
                        }
                    }
                }
                Err(ConfigError::PlacementFailed {
                    max_hops: *max_hops,
                    attempts: MAX_PLACEMENT_ATTEMPTS,
                })
            }
        }
    }

    /// The configuration handed to joining nodes, derived from the
    /// feature switches: per-flow query throttling off means a zero
    /// window, partial-packet queries off means no field specs, and the
    /// whitelist entry that relays control traffic toward the root is
    /// always present.
    pub fn conf_body(&self) -> Option<ConfBody> {
        let sdn = self.sdn.as_ref()?;
        let ppq_fields = if sdn.ppq {
            vec![
                FieldSpec {
                    offset: 1,
                    length: 2,
                },
                FieldSpec {
                    offset: 3,
                    length: 1,
                },
            ]
        } else {
            Vec::new()
        };
        Some(ConfBody {
            nsu_period_s: sdn.nsu_period_s,
            ft_lifetime_s: sdn.ft_lifetime_s,
            ftq_throttle_window_s: sdn.throttle_window_s,
            ppq_fields,
            default_entries: vec![EntrySpec {
                tier: Tier::Whitelist,
                priority: 255,
                matches: vec![Match::new(0, &[PROTO_SDN])],
                actions: vec![Action::FallbackRpl],
                refresh_on_hit: false,
                lifetime: LifetimeClass::Infinite,
            }],
        })
    }
}

/// Eccentricity of `root` in the unit-disk graph, None if disconnected.
fn radio_depth(
    positions: &BTreeMap<NodeId, (f64, f64)>,
    root: NodeId,
    tx_range: f64,
) -> Option<u32> {
    let in_range = |a: (f64, f64), b: (f64, f64)| {
        let (dx, dy) = (a.0 - b.0, a.1 - b.1);
        dx * dx + dy * dy <= tx_range * tx_range
    };
    let mut dist: BTreeMap<NodeId, u32> = BTreeMap::new();
    dist.insert(root, 0);
    let mut q = VecDeque::from([root]);
    while let Some(n) = q.pop_front() {
        let d = dist[&n];
        let npos = positions[&n];
        for (&m, &mpos) in positions {
            if m != n && !dist.contains_key(&m) && in_range(npos, mpos) {
                dist.insert(m, d + 1);
                q.push_back(m);
            }
        }
    }
    if dist.len() == positions.len() {
        dist.values().max().copied()
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = r#"
        name = "demo"
        duration_s = 660
        seeds = [1, 2, 3]

        [topology]
        kind = "explicit"
        root = 1
        nodes = [
            { id = 1, x = 0.0, y = 0.0 },
            { id = 4, x = 90.0, y = 0.0 },
            { id = 5, x = 180.0, y = 0.0 },
            { id = 6, x = 270.0, y = 0.0 },
        ]

        [radio]
        tx_range_m = 100.0
        link_success = 0.9

        [sdn]
        nsu_period_s = 60
        ft_lifetime_s = 600
        throttle_window_s = 1

        [[flows]]
        flow_id = 0
        source = 6
        dest = 1
        interval_s = { fixed = 0.25 }
        payload_len = 8
        start_s = 60.0

        [[flows]]
        flow_id = 1
        source = 6
        dest = 1
        interval_s = { uniform = [9.0, 11.0] }
        priority = "high"
        payload_len = 8
        start_s = 60.0

        [[policies]]
        flow_id = 1
        dest = 1
        mode = "pin"
        path = [5, 4, 1]
        priority = "high"

        [[interferers]]
        x = 155.0
        y = -18.0
        range_m = 70.0
        period_ms = 100
        duration_ms = 15
    "#;

    #[test]
    fn a_full_scenario_loads() {
        let s = Scenario::parse(FULL).unwrap();
        assert_eq!(s.name, "demo");
        assert_eq!(s.duration, 660 * MICROS_PER_SEC);
        assert_eq!(s.seeds, vec![1, 2, 3]);
        assert_eq!(s.root, 1);
        assert_eq!(s.node_ids(), vec![1, 4, 5, 6]);
        assert_eq!(s.flows.len(), 2);
        assert_eq!(s.flows[0].interval, Interval::Fixed(250_000));
        assert_eq!(s.flows[1].priority, FlowPriority::High);
        assert_eq!(s.policy.rules.len(), 1);
        assert_eq!(s.interferers.len(), 1);
        assert_eq!(s.interferers[0].period, 100_000);
        let sdn = s.sdn.unwrap();
        assert_eq!(sdn.nsu_period_s, 60);
        assert!(sdn.srhi && sdn.cmq && sdn.ppq && sdn.fr);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = FULL.replace("link_success = 0.9", "link_success = 0.9\nfoo = 1");
        assert!(matches!(
            Scenario::parse(&bad),
            Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn sources_expand_to_every_non_root_node() {
        let s = Scenario::parse(
            r#"
            name = "x"
            duration_s = 10
            [topology]
            kind = "grid-random"
            nodes = 5
            area_side_m = 200.0
            [radio]
            tx_range_m = 100.0
            link_success = 1.0
            [[flows]]
            flow_id = 0
            source = "all"
            dest = 1
            interval_s = { fixed = 60.0 }
            payload_len = 8
        "#,
        )
        .unwrap();
        let sources: Vec<NodeId> = s.flows.iter().map(|f| f.source).collect();
        assert_eq!(sources, vec![2, 3, 4, 5]);
        assert!(s.flows.iter().all(|f| f.flow_id == 0 && f.dest == 1));
    }

    #[test]
    fn field_errors_name_the_field() {
        let cases: &[(&str, &str, &str)] = &[
            ("link_success = 0.9", "link_success = 1.5", "link_success"),
            ("payload_len = 8\n        start_s = 60.0\n\n        [[flows]]", "payload_len = 250\n        start_s = 60.0\n\n        [[flows]]", "payload_len"),
            ("path = [5, 4, 1]", "path = [5, 4]", "end at dest"),
            ("duration_ms = 15", "duration_ms = 150", "duration_ms"),
            ("source = 6\n        dest = 1\n        interval_s = { fixed = 0.25 }", "source = 6\n        dest = 6\n        interval_s = { fixed = 0.25 }", "coincide"),
        ];
        for (from, to, needle) in cases {
            let text = FULL.replace(from, to);
            assert_ne!(text, FULL, "replacement {from:?} did not apply");
            match Scenario::parse(&text) {
                Err(ConfigError::Invalid(msg)) => {
                    assert!(msg.contains(needle), "{needle:?} not in {msg:?}")
                }
                other => panic!("expected a validation error for {needle:?}, got {other:?}"),
            }
        }
    }

    #[test]
    fn mac_and_rpl_sections_override_defaults() {
        let s = Scenario::parse(FULL).unwrap();
        assert_eq!(s.mac, MacConfig::default());
        assert_eq!(s.rpl, RplTimings::default());
        assert_eq!(s.interferers[0].range, 70.0);

        let tuned = FULL.replace(
            "[radio]",
            "[mac]\n        wake_interval_ms = 250\n        backoff_max_ms = 12\n\n        \
             [rpl]\n        dio_period_s = 30\n        response_delay_s = [0.2, 0.2]\n\n        [radio]",
        );
        let s2 = Scenario::parse(&tuned).unwrap();
        assert_eq!(s2.mac.wake_interval, 250_000);
        assert_eq!(s2.mac.check_duration, 2_000, "untouched knob keeps its default");
        assert_eq!(s2.mac.backoff_max, 12_000);
        assert_eq!(s2.rpl.dio_period, 30 * MICROS_PER_SEC);
        assert_eq!(s2.rpl.dis_period, 10 * MICROS_PER_SEC);
        assert_eq!(s2.rpl.response_delay, (200_000, 200_000));

        let default_range = FULL.replace("range_m = 70.0\n", "");
        assert_ne!(default_range, FULL);
        let s3 = Scenario::parse(&default_range).unwrap();
        assert_eq!(s3.interferers[0].range, 50.0);

        let bad = FULL.replace(
            "[radio]",
            "[mac]\n        check_duration_ms = 200\n\n        [radio]",
        );
        assert!(matches!(Scenario::parse(&bad), Err(ConfigError::Invalid(_))));
        let bad2 = FULL.replace(
            "[radio]",
            "[rpl]\n        dao_period_s = 0\n\n        [radio]",
        );
        assert!(matches!(Scenario::parse(&bad2), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn random_placement_is_seed_stable_and_connected() {
        let s = Scenario::parse(
            r#"
            name = "grid"
            duration_s = 10
            [topology]
            kind = "grid-random"
            nodes = 30
            area_side_m = 400.0
            [radio]
            tx_range_m = 100.0
            link_success = 0.9
        "#,
        )
        .unwrap();
        let a = s.positions(7).unwrap();
        let b = s.positions(7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, s.positions(8).unwrap());
        assert_eq!(a[&1], (200.0, 200.0), "root sits at the center");
        for seed in 0..10 {
            let p = s.positions(seed).unwrap();
            let depth = radio_depth(&p, 1, 100.0).expect("connected");
            assert!((3..=5).contains(&depth), "seed {seed} depth {depth}");
        }
    }

    #[test]
    fn conf_body_tracks_feature_switches() {
        let s = Scenario::parse(FULL).unwrap();
        let conf = s.conf_body().unwrap();
        assert_eq!(conf.nsu_period_s, 60);
        assert_eq!(conf.ftq_throttle_window_s, 1);
        assert_eq!(conf.ppq_fields.len(), 2);
        assert_eq!(conf.default_entries.len(), 1);
        assert_eq!(conf.default_entries[0].tier, Tier::Whitelist);

        let stripped = FULL.replace(
            "[sdn]\n        nsu_period_s = 60",
            "[sdn]\n        cmq = false\n        ppq = false\n        nsu_period_s = 60",
        );
        let s2 = Scenario::parse(&stripped).unwrap();
        let conf2 = s2.conf_body().unwrap();
        assert_eq!(conf2.ftq_throttle_window_s, 0, "throttling disabled");
        assert!(conf2.ppq_fields.is_empty());

        let plain = FULL.replace("[sdn]", "[notsdn]");
        assert!(Scenario::parse(&plain).is_err(), "unknown table rejected");
        let off = FULL.replace("[sdn]", "[sdn]\n        enabled = false");
        assert!(Scenario::parse(&off).unwrap().sdn.is_none());
    }
}
