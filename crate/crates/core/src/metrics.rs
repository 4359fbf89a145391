//! Evaluation quantities computed from event logs and the god-view link table.
//!
//! A node is a *victim* while more than one node it can decode is
//! transmitting. The victim count over time is exact and piecewise constant,
//! built from the transmission start/end records of the log.

use std::collections::VecDeque;
use std::io::{self, Write};

use thiserror::Error;

use crate::channel::TrueNeighbors;
use crate::protocol::{Micros, NodeId, NodeMachine, MICROS_PER_SEC};
use crate::sim::{LogKind, LogRecord};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("collision curve needs at least 2 realizations, got {0}")]
    TooFewRealizations(usize),
    #[error("window and grid step must be positive")]
    BadWindow,
    #[error("malformed CSV line {line}: {what}")]
    Csv { line: usize, what: String },
}

pub fn seconds(t: Micros) -> f64 {
    t as f64 / MICROS_PER_SEC as f64
}

fn fmt_seconds(t: Micros) -> String {
    format!("{}.{:06}", t / MICROS_PER_SEC, t % MICROS_PER_SEC)
}

fn parse_seconds(s: &str) -> Option<Micros> {
    let v: f64 = s.trim().parse().ok()?;
    (v >= 0.0).then(|| (v * MICROS_PER_SEC as f64).round() as Micros)
}

/// Number of nodes `receiver` can decode that are transmitting right now.
pub fn conflict_count(receiver: usize, transmitting: &[bool], god: &[TrueNeighbors]) -> usize {
    god[receiver].heard.iter().filter(|&&m| transmitting[m]).count()
}

/// Piecewise-constant victim count. Each breakpoint `(t, v)` holds on
/// `[t, next breakpoint)`; the last one holds until the horizon.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VictimTrace {
    points: Vec<(Micros, u32)>,
    horizon: Micros,
}

impl VictimTrace {
    pub fn new(horizon: Micros) -> Self {
        Self { points: vec![(0, 0)], horizon }
    }

    /// Records that the value is `v` from `t` on. `t` must not decrease.
    fn set(&mut self, t: Micros, v: u32) {
        let last = self.points.len() - 1;
        if self.points[last].0 == t {
            self.points[last].1 = v;
            if last > 0 && self.points[last - 1].1 == v {
                self.points.pop();
            }
        } else if self.points[last].1 != v {
            self.points.push((t, v));
        }
    }

    pub fn points(&self) -> &[(Micros, u32)] {
        &self.points
    }

    pub fn horizon(&self) -> Micros {
        self.horizon
    }

    /// Segments `(start, end, value)` covering `[0, horizon)`.
    pub fn segments(&self) -> impl Iterator<Item = (Micros, Micros, u32)> + '_ {
        self.points.iter().enumerate().map(move |(i, &(t, v))| {
            let end = self.points.get(i + 1).map_or(self.horizon, |p| p.0);
            (t, end, v)
        })
    }

    pub fn value_at(&self, t: Micros) -> u32 {
        match self.points.binary_search_by(|p| p.0.cmp(&t)) {
            Ok(i) => self.points[i].1,
            Err(0) => 0,
            Err(i) => self.points[i - 1].1,
        }
    }

    /// Whether any instant in `[from, to)` has at least one victim.
    pub fn any_victim_in(&self, from: Micros, to: Micros) -> bool {
        self.segments().any(|(s, e, v)| v > 0 && s < to && e > from)
    }

    pub fn max_over(&self, from: Micros, to: Micros) -> u32 {
        self.segments().filter(|&(s, e, _)| s < to && e > from).map(|(_, _, v)| v).max().unwrap_or(0)
    }

    pub fn write_csv(&self, out: &mut impl Write) -> io::Result<()> {
        writeln!(out, "t_s,victims")?;
        for &(t, v) in &self.points {
            writeln!(out, "{},{v}", fmt_seconds(t))?;
        }
        Ok(())
    }

    pub fn from_csv(text: &str, horizon: Micros) -> Result<Self, MetricsError> {
        let mut trace = Self::new(horizon);
        let mut last = 0;
        for (line, row) in text.lines().enumerate().skip(1) {
            let err = |what: &str| MetricsError::Csv { line: line + 1, what: what.to_owned() };
            let (t, v) = row.split_once(',').ok_or_else(|| err("expected two columns"))?;
            let t = parse_seconds(t).ok_or_else(|| err("bad time"))?;
            let v: u32 = v.trim().parse().map_err(|_| err("bad count"))?;
            if t < last {
                return Err(err("time decreases"));
            }
            last = t;
            trace.set(t, v);
        }
        Ok(trace)
    }
}

/// Builds the exact victim trace from a log's transmission and power records.
pub fn victim_trace(log: &[LogRecord], god: &[TrueNeighbors], horizon: Micros) -> VictimTrace {
    let n = god.len();
    let mut hearers_of = vec![Vec::new(); n];
    for (rx, sets) in god.iter().enumerate() {
        for &tx in &sets.heard {
            hearers_of[tx].push(rx);
        }
    }
    let mut count = vec![0u32; n];
    let mut on = vec![false; n];
    let mut victims = 0u32;
    let mut trace = VictimTrace::new(horizon);
    for r in log {
        let node = r.node.index();
        match r.kind {
            LogKind::TxStart { .. } => {
                for &rx in &hearers_of[node] {
                    count[rx] += 1;
                    if count[rx] == 2 && on[rx] {
                        victims += 1;
                    }
                }
            }
            LogKind::TxEnd { .. } => {
                for &rx in &hearers_of[node] {
                    if count[rx] == 2 && on[rx] {
                        victims -= 1;
                    }
                    count[rx] -= 1;
                }
            }
            LogKind::NodeOn { .. } => {
                if !on[node] && count[node] > 1 {
                    victims += 1;
                }
                on[node] = true;
            }
            LogKind::NodeOff => {
                if on[node] && count[node] > 1 {
                    victims -= 1;
                }
                on[node] = false;
            }
            _ => continue,
        }
        if r.time < horizon {
            trace.set(r.time, victims);
        }
    }
    trace
}

/// Probability, across realizations, of at least one victim instant in each
/// window `[c - T/2, c + T/2)` for centers `c = 0, step, 2 step, ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionCurve {
    pub window: Micros,
    pub points: Vec<CurvePoint>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub t: Micros,
    pub probability: f64,
    pub realizations: usize,
}

impl CollisionCurve {
    pub fn at(&self, t: Micros) -> Option<f64> {
        self.points.iter().find(|p| p.t == t).map(|p| p.probability)
    }

    pub fn write_csv(&self, out: &mut impl Write) -> io::Result<()> {
        writeln!(out, "t_s,probability,n_realizations")?;
        for p in &self.points {
            writeln!(out, "{},{:.6},{}", fmt_seconds(p.t), p.probability, p.realizations)?;
        }
        Ok(())
    }

    /// Ordinary least-squares slope (per second) over centers in `[from, to]`.
    pub fn slope(&self, from: Micros, to: Micros) -> f64 {
        let pts: Vec<(f64, f64)> = self
            .points
            .iter()
            .filter(|p| p.t >= from && p.t <= to)
            .map(|p| (seconds(p.t), p.probability))
            .collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        sxy / sxx
    }
}

pub const DEFAULT_WINDOW: Micros = MICROS_PER_SEC / 2;
pub const DEFAULT_GRID_STEP: Micros = MICROS_PER_SEC / 4;

pub fn collision_curve(
    traces: &[VictimTrace],
    window: Micros,
    step: Micros,
    horizon: Micros,
) -> Result<CollisionCurve, MetricsError> {
    if traces.len() < 2 {
        return Err(MetricsError::TooFewRealizations(traces.len()));
    }
    if window == 0 || step == 0 {
        return Err(MetricsError::BadWindow);
    }
    let half = window / 2;
    let points = (0..)
        .map(|k| k * step)
        .take_while(|&c| c <= horizon)
        .map(|c| {
            let (from, to) = (c.saturating_sub(half), c + (window - half));
            let hits = traces.iter().filter(|t| t.any_victim_in(from, to)).count();
            CurvePoint { t: c, probability: hits as f64 / traces.len() as f64, realizations: traces.len() }
        })
        .collect();
    Ok(CollisionCurve { window, points })
}

/// Earliest instant after which the trace stays at zero until the horizon.
/// A breakpoint sitting on the horizon itself does not count.
pub fn consensus_time(trace: &VictimTrace) -> Option<Micros> {
    let &(t, v) = trace.points().last().expect("trace always has a first point");
    (v == 0 && t < trace.horizon()).then_some(t)
}

/// Earliest start of a victim-free stretch lasting at least `clean_for`.
pub fn windowed_consensus_time(trace: &VictimTrace, clean_for: Micros) -> Option<Micros> {
    trace.segments().find(|&(s, e, v)| v == 0 && e - s >= clean_for).map(|(s, _, _)| s)
}

/// `(node, hop)` changes over time: each node's boot hop, then every change.
pub fn hop_traces(log: &[LogRecord]) -> Vec<(Micros, NodeId, u8)> {
    log.iter()
        .filter_map(|r| match r.kind {
            LogKind::NodeOn { hop, .. } => Some((r.time, r.node, hop)),
            LogKind::HopChange { to, .. } => Some((r.time, r.node, to)),
            _ => None,
        })
        .collect()
}

pub fn write_hop_traces(traces: &[(Micros, NodeId, u8)], out: &mut impl Write) -> io::Result<()> {
    writeln!(out, "t_s,node,hop")?;
    for &(t, node, hop) in traces {
        writeln!(out, "{},{node},{hop}", fmt_seconds(t))?;
    }
    Ok(())
}

/// Shortest hop distance from any live reference over the live part of the
/// bidirectional god-view graph. `None` when unreachable.
pub fn bfs_hops(god: &[TrueNeighbors], references: &[bool], alive: &[bool]) -> Vec<Option<u32>> {
    let mut dist = vec![None; god.len()];
    let mut queue = VecDeque::new();
    for (i, (&r, &a)) in references.iter().zip(alive).enumerate() {
        if r && a {
            dist[i] = Some(0);
            queue.push_back(i);
        }
    }
    while let Some(u) = queue.pop_front() {
        let du = dist[u].expect("queued nodes have a distance");
        for &v in &god[u].bidirectional {
            if alive[v] && dist[v].is_none() {
                dist[v] = Some(du + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeAccuracy {
    pub id: NodeId,
    pub reference: bool,
    pub claimed_hop: u8,
    pub bfs_hop: Option<u32>,
    pub heard_jaccard: f64,
    pub bidirectional_jaccard: f64,
}

pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.iter().filter(|x| b.contains(x)).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// Claimed hop vs BFS hop, and Jaccard similarity of discovered vs true
/// neighbor sets, for every powered node. Powered-off nodes are left out of
/// the true sets.
pub fn accuracy(machines: &[Option<NodeMachine>], references: &[bool], god: &[TrueNeighbors]) -> Vec<NodeAccuracy> {
    let alive: Vec<bool> = machines.iter().map(Option::is_some).collect();
    let bfs = bfs_hops(god, references, &alive);
    machines
        .iter()
        .enumerate()
        .filter_map(|(i, m)| m.as_ref().map(|m| (i, m)))
        .map(|(i, m)| {
            let live = |v: &Vec<usize>| v.iter().copied().filter(|&j| alive[j]).collect::<Vec<_>>();
            let heard: Vec<usize> = m.heard_ids().iter().map(|id| id.index()).collect();
            let bidir: Vec<usize> = m.bidirectional_ids().iter().map(|id| id.index()).collect();
            NodeAccuracy {
                id: m.id(),
                reference: references[i],
                claimed_hop: m.hop(),
                bfs_hop: bfs[i],
                heard_jaccard: jaccard(&heard, &live(&god[i].heard)),
                bidirectional_jaccard: jaccard(&bidir, &live(&god[i].bidirectional)),
            }
        })
        .collect()
}

pub fn write_accuracy(rows: &[NodeAccuracy], out: &mut impl Write) -> io::Result<()> {
    writeln!(out, "node,reference,claimed_hop,bfs_hop,heard_jaccard,bidirectional_jaccard")?;
    for r in rows {
        let bfs = r.bfs_hop.map_or_else(|| "inf".to_owned(), |h| h.to_string());
        writeln!(
            out,
            "{},{},{},{bfs},{:.4},{:.4}",
            r.id,
            u8::from(r.reference),
            r.claimed_hop,
            r.heard_jaccard,
            r.bidirectional_jaccard
        )?;
    }
    Ok(())
}

/// Pairs of powered nodes on the same slot that some powered node can decode
/// both of.
pub fn slot_conflicts(machines: &[Option<NodeMachine>], god: &[TrueNeighbors]) -> Vec<(NodeId, NodeId, NodeId)> {
    let mut out = Vec::new();
    for (h, sets) in god.iter().enumerate() {
        if machines[h].is_none() {
            continue;
        }
        let live: Vec<&NodeMachine> = sets.heard.iter().filter_map(|&m| machines[m].as_ref()).collect();
        for (i, a) in live.iter().enumerate() {
            for b in &live[i + 1..] {
                if a.slot() == b.slot() {
                    out.push((a.id(), b.id(), NodeId::from_index(h).expect("valid index")));
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::LogKind;

    fn id(v: u8) -> NodeId {
        NodeId::new(v).unwrap()
    }

    fn rec(time: Micros, node: u8, kind: LogKind) -> LogRecord {
        LogRecord { time, node: id(node), kind }
    }

    fn tx_start() -> LogKind {
        LogKind::TxStart { slot: 1, hop: 0, neighbors: 0, data: None, bytes: vec![] }
    }

    fn on() -> LogKind {
        LogKind::NodeOn { reference: false, slot: 1, hop: 30 }
    }

    fn sets(heard: &[&[usize]]) -> Vec<TrueNeighbors> {
        heard.iter().map(|h| TrueNeighbors { heard: h.to_vec(), bidirectional: h.to_vec() }).collect()
    }

    #[test]
    fn conflict_counts() {
        // 0 hears 1 and 2; 1 hears nobody; 2 hears nobody.
        let god = sets(&[&[1, 2], &[], &[]]);
        assert_eq!(conflict_count(0, &[false, false, false], &god), 0);
        assert_eq!(conflict_count(0, &[false, true, true], &god), 2);
        // 3-node configuration where node 2 is inaccessible to node 0.
        let god = sets(&[&[1], &[], &[]]);
        assert_eq!(conflict_count(0, &[false, true, true], &god), 1);
    }

    #[test]
    fn synchronized_same_slot_trace() {
        // Nodes 2 and 3 share a slot and are both heard by node 1.
        let god = sets(&[&[1, 2], &[0], &[0]]);
        let mut log = vec![rec(0, 1, on()), rec(0, 2, on()), rec(0, 3, on())];
        for k in 0..3u64 {
            let t = 100 + k * 1000;
            log.push(rec(t, 2, tx_start()));
            log.push(rec(t, 3, tx_start()));
            log.push(rec(t + 5, 2, LogKind::TxEnd { aborted: false }));
            log.push(rec(t + 5, 3, LogKind::TxEnd { aborted: false }));
        }
        let trace = victim_trace(&log, &god, 5000);
        assert_eq!(trace.points(), &[(0, 0), (100, 1), (105, 0), (1100, 1), (1105, 0), (2100, 1), (2105, 0)]);
        assert_eq!(consensus_time(&trace), Some(2105));
    }

    #[test]
    fn clean_log_gives_zero_trace() {
        let god = sets(&[&[1], &[0]]);
        let log = vec![rec(0, 1, on()), rec(0, 2, on()), rec(10, 1, tx_start()), rec(15, 1, LogKind::TxEnd { aborted: false })];
        let trace = victim_trace(&log, &god, 100);
        assert_eq!(trace.points(), &[(0, 0)]);
        assert_eq!(consensus_time(&trace), Some(0));
    }

    #[test]
    fn consensus_cases() {
        let mut t = VictimTrace::new(100 * MICROS_PER_SEC);
        t.set(MICROS_PER_SEC, 2);
        t.set(17 * MICROS_PER_SEC, 0);
        assert_eq!(consensus_time(&t), Some(17 * MICROS_PER_SEC));
        t.set(99 * MICROS_PER_SEC, 1);
        assert_eq!(consensus_time(&t), None);
        assert_eq!(windowed_consensus_time(&t, 10 * MICROS_PER_SEC), Some(17 * MICROS_PER_SEC));
        assert_eq!(t.max_over(60 * MICROS_PER_SEC, 100 * MICROS_PER_SEC), 1);
        // transmissions cut at the horizon leave a zero-length clean stretch
        t.set(100 * MICROS_PER_SEC, 0);
        assert_eq!(consensus_time(&t), None);
    }

    #[test]
    fn curve_extremes() {
        let h = 10 * MICROS_PER_SEC;
        let zero = vec![VictimTrace::new(h); 3];
        let c = collision_curve(&zero, DEFAULT_WINDOW, DEFAULT_GRID_STEP, h).unwrap();
        assert!(c.points.iter().all(|p| p.probability == 0.0 && p.realizations == 3));
        assert_eq!(c.points.len(), 41);

        let mut always = VictimTrace::new(h);
        always.set(0, 1);
        let c = collision_curve(&[always.clone(), always], DEFAULT_WINDOW, DEFAULT_GRID_STEP, h).unwrap();
        assert!(c.points.iter().all(|p| p.probability == 1.0));

        assert_eq!(collision_curve(&zero[..1], DEFAULT_WINDOW, DEFAULT_GRID_STEP, h), Err(MetricsError::TooFewRealizations(1)));
    }

    #[test]
    fn window_is_half_open() {
        let h = 10 * MICROS_PER_SEC;
        let mut t = VictimTrace::new(h);
        t.set(1_250_000, 1);
        t.set(1_250_001, 0);
        let c = collision_curve(&[t.clone(), VictimTrace::new(h)], DEFAULT_WINDOW, DEFAULT_GRID_STEP, h).unwrap();
        // centre 1.0 covers [0.75, 1.25): misses the victim at 1.25
        assert_eq!(c.at(1_000_000), Some(0.0));
        assert_eq!(c.at(1_250_000), Some(0.5));
        assert_eq!(c.at(1_500_000), Some(0.5));
        assert_eq!(c.at(1_750_000), Some(0.0));
    }

    #[test]
    fn csv_round_trip() {
        let mut t = VictimTrace::new(100 * MICROS_PER_SEC);
        t.set(1_234_567, 3);
        t.set(2_000_000, 0);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("1.234567,3"));
        assert_eq!(VictimTrace::from_csv(&text, t.horizon()).unwrap(), t);
        assert!(VictimTrace::from_csv("t_s,victims\nx,1", 10).is_err());
    }

    #[test]
    fn jaccard_arithmetic() {
        assert_eq!(jaccard(&[1, 2, 3, 4], &[1, 2, 3, 4]), 1.0);
        assert_eq!(jaccard(&[], &[1]), 0.0);
        assert_eq!(jaccard(&[1, 2, 3], &[1, 2, 3, 4]), 0.75);
        assert_eq!(jaccard(&[], &[]), 1.0);
    }

    #[test]
    fn bfs_distances() {
        // 0(ref) - 1 - 2, 3 isolated
        let god = sets(&[&[1], &[0, 2], &[1], &[]]);
        let d = bfs_hops(&god, &[true, false, false, false], &[true; 4]);
        assert_eq!(d, vec![Some(0), Some(1), Some(2), None]);
        let d = bfs_hops(&god, &[true, false, false, false], &[true, false, true, true]);
        assert_eq!(d, vec![Some(0), None, None, None]);
    }
}
