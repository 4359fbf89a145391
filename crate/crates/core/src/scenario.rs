//! Scenario files and the built-in presets.
//!
//! A scenario is a JSON document with a `schema` version. Parsing rejects
//! unknown keys and reports every missing field and violated constraint at
//! once, each with its field path.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::channel::{place_nodes, realize_links, ChannelError, ChannelParams, Deployment, Point};
use crate::frame::MAX_PAYLOAD;
use crate::protocol::{ForwardingPolicy, Micros, NodeId, TimingConfig, MICROS_PER_MS, MICROS_PER_SEC};
use crate::sim::{stream_rng, LogLevel, NodeSetup, ScenarioEvent, SimError, SimSetup, TimedEvent};

pub const SCHEMA_VERSION: u32 = 1;

const STREAM_PLACEMENT: u64 = 0;
const STREAM_LINKS: u64 = 1;

/// One constraint violation, located by a dotted field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Issue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

fn list(issues: &[Issue]) -> String {
    issues.iter().map(|i| format!("\n  {i}")).collect()
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid scenario:{}", list(.0))]
    Invalid(Vec<Issue>),
    #[error("unknown preset {name:?} (available: {})", PRESETS.join(", "))]
    UnknownPreset { name: String },
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl ScenarioError {
    pub fn issues(&self) -> &[Issue] {
        match self {
            ScenarioError::Invalid(v) => v,
            _ => &[],
        }
    }
}

/// Protocol timing with durations in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingSpec {
    pub t_proc_ms: f64,
    pub t_slot_ms: f64,
    pub n_slot: u8,
    pub t_beacon_ms: f64,
    pub p_grant: f64,
    pub n_max: u32,
    pub h_na: u8,
}

fn ms(v: f64) -> Micros {
    (v * MICROS_PER_MS as f64).round() as Micros
}

fn secs(v: f64) -> Micros {
    (v * MICROS_PER_SEC as f64).round() as Micros
}

impl TimingSpec {
    pub fn standard(n_slot: u8, p_grant: f64) -> Self {
        Self { t_proc_ms: 10.0, t_slot_ms: 10.0, n_slot, t_beacon_ms: 5.0, p_grant, n_max: 10, h_na: 30 }
    }

    pub fn to_config(&self) -> TimingConfig {
        TimingConfig {
            t_proc: ms(self.t_proc_ms),
            t_slot: ms(self.t_slot_ms),
            n_slot: self.n_slot,
            t_beacon: ms(self.t_beacon_ms),
            p_grant: self.p_grant,
            n_max: self.n_max,
            h_na: self.h_na,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EventSpec {
    NodeOn { at_s: f64, node: u8 },
    NodeOff { at_s: f64, node: u8 },
    /// `payload` is hex encoded.
    Inject { at_s: f64, node: u8, payload: String },
}

impl EventSpec {
    pub fn at_s(&self) -> f64 {
        match self {
            EventSpec::NodeOn { at_s, .. } | EventSpec::NodeOff { at_s, .. } | EventSpec::Inject { at_s, .. } => *at_s,
        }
    }

    pub fn node(&self) -> u8 {
        match self {
            EventSpec::NodeOn { node, .. } | EventSpec::NodeOff { node, .. } | EventSpec::Inject { node, .. } => *node,
        }
    }
}

/// Per-node overrides of the random start-up draws.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeOverride {
    pub id: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_slot: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wake_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub grants: Vec<bool>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub slot_picks: Vec<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub imbalance_db: Option<f64>,
}

fn default_wake_window() -> f64 {
    0.1
}

/// Reference nodes get IDs `1..=N_ref` in placement order, sensing nodes follow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: u32,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub name: String,
    pub timing: TimingSpec,
    pub channel: ChannelParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub references: Option<Deployment>,
    pub sensing: Deployment,
    pub horizon_s: f64,
    #[serde(default = "default_wake_window")]
    pub wake_window_s: f64,
    #[serde(default)]
    pub events: Vec<EventSpec>,
    pub realizations: u32,
    pub seed: u64,
    #[serde(default)]
    pub forwarding_policy: ForwardingPolicy,
    #[serde(default)]
    pub log_level: LogLevel,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub nodes: Vec<NodeOverride>,
    /// Slot counts a sweep runs the scenario for, replacing `timing.n_slot`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep_n_slot: Vec<u8>,
}

const TOP_KEYS: &[&str] = &[
    "schema",
    "name",
    "timing",
    "channel",
    "references",
    "sensing",
    "horizon_s",
    "wake_window_s",
    "events",
    "realizations",
    "seed",
    "forwarding_policy",
    "log_level",
    "nodes",
    "sweep_n_slot",
];
const TOP_REQUIRED: &[&str] = &["schema", "timing", "channel", "sensing", "horizon_s", "realizations", "seed"];
const TIMING_KEYS: &[&str] = &["t_proc_ms", "t_slot_ms", "n_slot", "t_beacon_ms", "p_grant", "n_max", "h_na"];
const CHANNEL_KEYS: &[&str] =
    &["eta", "shadow_sigma_db", "gamma0_db", "d0_m", "gamma_min_db", "imbalance_sigma_db", "fading_mode"];
const NODE_KEYS: &[&str] = &["id", "initial_slot", "wake_ms", "grants", "slot_picks", "imbalance_db"];
const EVENT_KEYS: &[&str] = &["kind", "at_s", "node", "payload"];

fn check_object(value: &Value, path: &str, allowed: &[&str], required: &[&str], issues: &mut Vec<Issue>) -> bool {
    let Some(obj) = value.as_object() else {
        issues.push(Issue { path: path.to_owned(), message: "expected an object".into() });
        return false;
    };
    let at = |key: &str| if path.is_empty() { key.to_owned() } else { format!("{path}.{key}") };
    for key in obj.keys().filter(|k| !allowed.contains(&k.as_str())) {
        issues.push(Issue { path: at(key), message: "unknown field".into() });
    }
    for key in required.iter().filter(|k| !obj.contains_key(**k)) {
        issues.push(Issue { path: at(key), message: "missing required field".into() });
    }
    true
}

fn check_array(obj: &Map<String, Value>, key: &str, allowed: &[&str], required: &[&str], issues: &mut Vec<Issue>) {
    if let Some(Value::Array(items)) = obj.get(key) {
        for (i, item) in items.iter().enumerate() {
            check_object(item, &format!("{key}[{i}]"), allowed, required, issues);
        }
    }
}

/// Structural pass over the raw document so that every unknown and missing
/// key is reported, not only the first one serde trips over.
fn check_structure(doc: &Value) -> Vec<Issue> {
    let mut issues = Vec::new();
    if !check_object(doc, "", TOP_KEYS, TOP_REQUIRED, &mut issues) {
        return issues;
    }
    let obj = doc.as_object().expect("checked");
    if let Some(t) = obj.get("timing") {
        check_object(t, "timing", TIMING_KEYS, TIMING_KEYS, &mut issues);
    }
    if let Some(c) = obj.get("channel") {
        check_object(c, "channel", CHANNEL_KEYS, &CHANNEL_KEYS[..6], &mut issues);
    }
    check_array(obj, "nodes", NODE_KEYS, &["id"], &mut issues);
    check_array(obj, "events", EVENT_KEYS, &["kind", "at_s", "node"], &mut issues);
    issues
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let doc: Value = serde_json::from_str(text)
            .map_err(|e| ScenarioError::Invalid(vec![Issue { path: String::new(), message: e.to_string() }]))?;
        let issues = check_structure(&doc);
        if !issues.is_empty() {
            return Err(ScenarioError::Invalid(issues));
        }
        let scenario: Scenario = serde_json::from_value(doc)
            .map_err(|e| ScenarioError::Invalid(vec![Issue { path: String::new(), message: e.to_string() }]))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn from_file(path: &Path) -> Result<Self, ScenarioError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.to_owned(), source })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn reference_count(&self) -> usize {
        self.references.as_ref().map_or(0, Deployment::count)
    }

    pub fn node_count(&self) -> usize {
        self.reference_count() + self.sensing.count()
    }

    pub fn horizon(&self) -> Micros {
        secs(self.horizon_s)
    }

    /// Slot counts to sweep over: the sweep list, or just `timing.n_slot`.
    pub fn sweep_slots(&self) -> Vec<u8> {
        if self.sweep_n_slot.is_empty() {
            vec![self.timing.n_slot]
        } else {
            self.sweep_n_slot.clone()
        }
    }

    pub fn with_n_slot(&self, n_slot: u8) -> Self {
        let mut s = self.clone();
        s.timing.n_slot = n_slot;
        s.sweep_n_slot.clear();
        s
    }

    /// Every violated constraint, with its field path.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut issues = Vec::new();
        let mut bad = |path: &str, message: &str| issues.push(Issue { path: path.into(), message: message.into() });

        if self.schema != SCHEMA_VERSION {
            bad("schema", &format!("unsupported schema version (expected {SCHEMA_VERSION})"));
        }
        let t = &self.timing;
        if !(t.t_proc_ms >= 0.0) {
            bad("timing.t_proc_ms", "must be >= 0");
        }
        if !(t.t_slot_ms > 0.0) {
            bad("timing.t_slot_ms", "must be > 0");
        }
        if !(t.t_beacon_ms > 0.0 && t.t_beacon_ms <= t.t_slot_ms) {
            bad("timing.t_beacon_ms", "must be in (0, t_slot_ms]");
        }
        if t.n_slot == 0 {
            bad("timing.n_slot", "must be >= 1");
        }
        if !(0.0..=1.0).contains(&t.p_grant) {
            bad("timing.p_grant", "must lie in [0, 1]");
        }
        if t.n_max == 0 {
            bad("timing.n_max", "must be >= 1");
        }
        if t.h_na < 2 {
            bad("timing.h_na", "must be >= 2");
        }
        if let Err(e) = self.channel.validate() {
            bad("channel", &e.to_string());
        }
        if !(self.horizon_s > 0.0) || !self.horizon_s.is_finite() {
            bad("horizon_s", "must be a positive number of seconds");
        }
        if !(self.wake_window_s >= 0.0) || !self.wake_window_s.is_finite() {
            bad("wake_window_s", "must be >= 0");
        }
        if self.realizations == 0 {
            bad("realizations", "must be >= 1");
        }
        if self.sensing.count() == 0 {
            bad("sensing", "must place at least one node");
        }
        if self.references.as_ref().is_some_and(|r| r.count() == 0) {
            bad("references", "must place at least one node when present");
        }
        let n = self.node_count();
        if n > u8::MAX as usize {
            bad("sensing", &format!("{n} nodes exceed the 255 addressable IDs"));
        }
        for (i, &k) in self.sweep_n_slot.iter().enumerate() {
            if k == 0 {
                bad(&format!("sweep_n_slot[{i}]"), "must be >= 1");
            }
        }
        let slot_bound = self.sweep_slots().into_iter().min().unwrap_or(t.n_slot).min(t.n_slot);
        let n_ref = self.reference_count();

        let mut seen = BTreeSet::new();
        for (i, o) in self.nodes.iter().enumerate() {
            let p = format!("nodes[{i}]");
            if o.id == 0 || o.id as usize > n {
                bad(&format!("{p}.id"), &format!("must be in 1..={n}"));
            } else if !seen.insert(o.id) {
                bad(&format!("{p}.id"), "duplicate node override");
            }
            if let Some(s) = o.initial_slot {
                if s == 0 || s > slot_bound {
                    bad(&format!("{p}.initial_slot"), &format!("must be in 1..={slot_bound}"));
                }
            }
            for (j, &s) in o.slot_picks.iter().enumerate() {
                if s == 0 || s > slot_bound {
                    bad(&format!("{p}.slot_picks[{j}]"), &format!("must be in 1..={slot_bound}"));
                }
            }
            if let Some(w) = o.wake_ms {
                if !(w >= 0.0) || w >= self.horizon_s * 1e3 {
                    bad(&format!("{p}.wake_ms"), "must lie in [0, horizon)");
                }
            }
            if o.imbalance_db.is_some_and(|v| !v.is_finite()) {
                bad(&format!("{p}.imbalance_db"), "must be finite");
            }
        }
        for (i, e) in self.events.iter().enumerate() {
            let p = format!("events[{i}]");
            if !(e.at_s() >= 0.0) || e.at_s() >= self.horizon_s {
                bad(&format!("{p}.at_s"), "must lie in [0, horizon_s)");
            }
            if e.node() == 0 || e.node() as usize > n {
                bad(&format!("{p}.node"), &format!("must be in 1..={n}"));
            }
            if let EventSpec::Inject { node, payload, .. } = e {
                if (*node as usize) <= n_ref && *node != 0 {
                    bad(&format!("{p}.node"), "reference nodes do not originate messages");
                }
                match hex::decode(payload) {
                    Ok(b) if b.len() > MAX_PAYLOAD => {
                        bad(&format!("{p}.payload"), &format!("{} bytes exceed {MAX_PAYLOAD}", b.len()))
                    }
                    Ok(_) => {}
                    Err(_) => bad(&format!("{p}.payload"), "must be hex encoded"),
                }
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Invalid(issues))
        }
    }

    /// Places nodes, draws the channel and expands the events for one realization.
    pub fn build(&self, seed: u64) -> Result<SimSetup, ScenarioError> {
        self.validate()?;
        let mut placement = stream_rng(seed, STREAM_PLACEMENT);
        let mut coords: Vec<Point> = match &self.references {
            Some(r) => place_nodes(r, &mut placement)?,
            None => Vec::new(),
        };
        let n_ref = coords.len();
        coords.extend(place_nodes(&self.sensing, &mut placement)?);
        let mut links = realize_links(&coords, &self.channel, &mut stream_rng(seed, STREAM_LINKS))?;

        let mut nodes: Vec<NodeSetup> =
            (0..coords.len()).map(|i| NodeSetup { reference: i < n_ref, ..NodeSetup::default() }).collect();
        for o in &self.nodes {
            let i = o.id as usize - 1;
            let node = &mut nodes[i];
            node.initial_slot = o.initial_slot;
            node.wake_at = o.wake_ms.map(ms);
            node.grants = o.grants.clone();
            node.slot_picks = o.slot_picks.clone();
            if let Some(v) = o.imbalance_db {
                links.set_imbalance_db(i, v);
            }
        }
        let id = |v: u8| NodeId::new(v).expect("validated node id");
        let mut events: Vec<TimedEvent> = self
            .events
            .iter()
            .map(|e| TimedEvent {
                time: secs(e.at_s()),
                event: match e {
                    EventSpec::NodeOn { node, .. } => ScenarioEvent::NodeOn(id(*node)),
                    EventSpec::NodeOff { node, .. } => ScenarioEvent::NodeOff(id(*node)),
                    EventSpec::Inject { node, payload, .. } => ScenarioEvent::Inject {
                        node: id(*node),
                        payload: hex::decode(payload).expect("validated hex"),
                    },
                },
            })
            .collect();
        events.sort_by_key(|e| e.time);

        Ok(SimSetup {
            timing: self.timing.to_config(),
            policy: self.forwarding_policy,
            horizon: self.horizon(),
            wake_window: secs(self.wake_window_s),
            nodes,
            links,
            events,
            log_level: self.log_level,
        })
    }
}

/// Seed of realization `index` in a sweep with base seed `base`.
pub fn realization_seed(base: u64, index: u32) -> u64 {
    base ^ index as u64
}

pub const PRESETS: &[&str] =
    &["fig2-two-node", "fig3a-grid", "fig3b-random", "fig4-healing", "fig5a-sweep", "fig5b-sweep", "demo-5node"];

/// Five reference nodes stepping 30 m in x and 25 m in y across the area.
fn reference_line() -> Deployment {
    Deployment::Line { count: 5, dx: 30.0, dy: 25.0, origin: Point::new(0.0, 0.0) }
}

/// 5 x 5 sensing lattice centred in the 125 m x 100 m area.
fn sensing_grid() -> Deployment {
    Deployment::Grid { rows: 5, cols: 5, dx: 25.0, dy: 20.0, origin: Point::new(12.5, 10.0) }
}

fn sensing_random() -> Deployment {
    Deployment::UniformRandom { width: 125.0, height: 100.0, count: 25 }
}

fn base(name: &str, n_slot: u8, p: f64, sensing: Deployment) -> Scenario {
    Scenario {
        schema: SCHEMA_VERSION,
        name: name.to_owned(),
        timing: TimingSpec::standard(n_slot, p),
        channel: ChannelParams::default(),
        references: Some(reference_line()),
        sensing,
        horizon_s: 100.0,
        wake_window_s: 0.1,
        events: Vec::new(),
        realizations: 200,
        seed: 1,
        forwarding_policy: ForwardingPolicy::default(),
        log_level: LogLevel::Full,
        nodes: Vec::new(),
        sweep_n_slot: Vec::new(),
    }
}

pub fn preset(name: &str) -> Result<Scenario, ScenarioError> {
    let s = match name {
        "fig2-two-node" => {
            let mut s = base(name, 4, 0.5, Deployment::Explicit { points: vec![Point::new(0.0, 0.0), Point::new(10.0, 0.0)] });
            s.references = None;
            s.channel = ChannelParams::deterministic();
            s.horizon_s = 1.0;
            s.realizations = 1;
            s.nodes = vec![
                NodeOverride { id: 1, initial_slot: Some(1), wake_ms: Some(5.0), grants: vec![true; 25], ..Default::default() },
                NodeOverride {
                    id: 2,
                    initial_slot: Some(1),
                    wake_ms: Some(0.0),
                    grants: vec![true; 25],
                    slot_picks: vec![2],
                    ..Default::default()
                },
            ];
            s
        }
        "fig3a-grid" => base(name, 12, 0.5, sensing_grid()),
        "fig3b-random" => base(name, 16, 0.5, sensing_random()),
        "fig4-healing" => {
            let mut s = base(name, 12, 0.5, sensing_grid());
            s.horizon_s = 80.0;
            s.realizations = 20;
            s.events = (1..=4)
                .map(|node| EventSpec::NodeOff { at_s: 20.0, node })
                .chain([EventSpec::NodeOff { at_s: 40.0, node: 5 }, EventSpec::NodeOn { at_s: 60.0, node: 5 }])
                .collect();
            s
        }
        "fig5a-sweep" => {
            let mut s = base(name, 20, 0.5, sensing_random());
            s.sweep_n_slot = vec![12, 16, 20];
            s.log_level = LogLevel::Compact;
            s
        }
        "fig5b-sweep" => {
            let mut s = base(name, 20, 0.25, sensing_random());
            s.sweep_n_slot = vec![19, 20];
            s.log_level = LogLevel::Compact;
            s
        }
        "demo-5node" => {
            let mut s = base(
                name,
                8,
                0.5,
                Deployment::Explicit {
                    points: vec![Point::new(0.0, 20.0), Point::new(10.0, 15.0), Point::new(30.0, 0.0), Point::new(20.0, 0.0)],
                },
            );
            s.references = Some(Deployment::Explicit { points: vec![Point::new(0.0, 0.0)] });
            s.timing = TimingSpec { t_proc_ms: 100.0, t_slot_ms: 25.0, n_slot: 8, t_beacon_ms: 5.0, p_grant: 0.5, n_max: 50, h_na: 127 };
            s.channel = ChannelParams::deterministic();
            s.horizon_s = 30.0;
            s.realizations = 1;
            s.events = vec![EventSpec::Inject { at_s: 20.0, node: 4, payload: hex::encode(b"hello from node 4") }];
            // Attenuated transmitters make nodes 4 and 5 one-way toward node 1.
            let slots = [1, 4, 7, 2, 6];
            s.nodes = (1..=5u8)
                .map(|id| NodeOverride {
                    id,
                    initial_slot: Some(slots[id as usize - 1]),
                    imbalance_db: match id {
                        4 => Some(-20.0),
                        5 => Some(-10.0),
                        _ => None,
                    },
                    ..Default::default()
                })
                .collect();
            s
        }
        other => return Err(ScenarioError::UnknownPreset { name: other.to_owned() }),
    };
    Ok(s)
}
