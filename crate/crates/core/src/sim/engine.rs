use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::log::{DataTag, EventLog, LogKind, LossReason};
use super::{ScenarioEvent, SimError, SimOutput, SimSetup, TimedEvent};
use crate::channel::{draw_fade, FadingMode, LinkTable};
use crate::frame::{self, Frame};
use crate::protocol::{Action, ForwardingPolicy, Micros, NodeId, NodeMachine, Role, Scripted, TimingConfig};

const STREAM_ENGINE: u64 = 2;
const STREAM_FADING: u64 = 3;
const STREAM_NODE_BASE: u64 = 100;

/// Independent, seeded random stream.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

// Equal-time order: transmission ends, then timers, then scenario events.
const RANK_TX_END: u8 = 0;
const RANK_TIMER: u8 = 2;
const RANK_SCENARIO: u8 = 3;

#[derive(Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Queued {
    time: Micros,
    rank: u8,
    node: usize,
    seq: u64,
    event: QueuedEvent,
}

#[derive(Debug, PartialEq, Eq, PartialOrd, Ord)]
enum QueuedEvent {
    TxEnd(usize),
    Timer { generation: u64 },
    Boot { generation: u64 },
    Scenario(ScenarioEvent),
}

#[derive(Debug)]
struct Transmission {
    tx: usize,
    start: Micros,
    bytes: Vec<u8>,
    /// Receivers that can decode this transmission, with their SNR.
    hearers: Vec<(usize, f64)>,
    /// Other transmissions overlapping this one in time.
    overlaps: Vec<usize>,
    aborted: bool,
}

impl Transmission {
    fn heard_by(&self, rx: usize) -> bool {
        self.hearers.iter().any(|&(h, _)| h == rx)
    }
}

struct SimNode {
    id: NodeId,
    reference: bool,
    initial_slot: Option<u8>,
    machine: Option<NodeMachine>,
    rng: Scripted<ChaCha8Rng>,
    timer_generation: u64,
    /// Start of the current uninterrupted responder stretch.
    listen_since: Option<Micros>,
    transmitting: Option<usize>,
    boot_pending: bool,
    boot_generation: u64,
}

#[derive(Debug, Clone, PartialEq)]
struct Snapshot {
    slot: u8,
    hop: u8,
    neighbors: Vec<(NodeId, bool)>,
    exhaustions: u64,
    dropped: u64,
}

impl Snapshot {
    fn of(m: &NodeMachine) -> Self {
        Self {
            slot: m.slot(),
            hop: m.hop(),
            neighbors: m.neighbors().map(|e| (e.id, e.bidirectional)).collect(),
            exhaustions: m.stats().slot_exhaustions,
            dropped: m.stats().unroutable_dropped,
        }
    }
}

/// A delivery of a message at a reference node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub time: Micros,
    pub at: NodeId,
    pub origin: NodeId,
    pub sequence: u16,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Counters {
    pub transmissions: u64,
    pub receptions: u64,
    pub lost_collision: u64,
    pub lost_not_listening: u64,
}

/// Discrete-event loop over a fixed set of nodes and a link table.
pub struct Simulation {
    timing: TimingConfig,
    policy: ForwardingPolicy,
    horizon: Micros,
    wake_window: Micros,
    links: LinkTable,
    static_hearers: Vec<Vec<(usize, f64)>>,
    now: Micros,
    queue: BinaryHeap<Reverse<Queued>>,
    seq: u64,
    nodes: Vec<SimNode>,
    txs: Vec<Transmission>,
    active: Vec<usize>,
    log: EventLog,
    engine_rng: ChaCha8Rng,
    fade_rng: ChaCha8Rng,
    deliveries: Vec<Delivery>,
    counters: Counters,
}

impl Simulation {
    pub fn new(setup: SimSetup, seed: u64) -> Result<Self, SimError> {
        setup.validate()?;
        let SimSetup { timing, policy, horizon, wake_window, nodes: node_setups, links, events, log_level } = setup;
        let static_hearers = (0..links.len())
            .map(|tx| links.hearers(tx).into_iter().map(|rx| (rx, links.snr_db(tx, rx))).collect())
            .collect();
        let nodes = node_setups
            .iter()
            .enumerate()
            .map(|(i, n)| SimNode {
                id: NodeId::from_index(i).expect("validated node count"),
                reference: n.reference,
                initial_slot: n.initial_slot,
                machine: None,
                rng: Scripted::with_script(stream_rng(seed, STREAM_NODE_BASE + i as u64), &n.grants, &n.slot_picks),
                timer_generation: 0,
                listen_since: None,
                transmitting: None,
                boot_pending: false,
                boot_generation: 0,
            })
            .collect();
        let mut sim = Self {
            timing,
            policy,
            horizon,
            wake_window,
            links,
            static_hearers,
            now: 0,
            queue: BinaryHeap::new(),
            seq: 0,
            nodes,
            txs: Vec::new(),
            active: Vec::new(),
            log: EventLog::new(log_level),
            engine_rng: stream_rng(seed, STREAM_ENGINE),
            fade_rng: stream_rng(seed, STREAM_FADING),
            deliveries: Vec::new(),
            counters: Counters::default(),
        };
        for (i, n) in node_setups.iter().enumerate() {
            let wake = match n.wake_at {
                Some(t) => t,
                None => sim.engine_rng.random_range(0..=wake_window),
            };
            sim.schedule_boot(i, wake);
        }
        for TimedEvent { time, event } in events {
            let node = event.node().index();
            sim.schedule(time, RANK_SCENARIO, node, QueuedEvent::Scenario(event));
        }
        Ok(sim)
    }

    fn schedule_boot(&mut self, node: usize, at: Micros) {
        let n = &mut self.nodes[node];
        n.boot_pending = true;
        n.boot_generation += 1;
        let generation = n.boot_generation;
        self.schedule(at, RANK_SCENARIO, node, QueuedEvent::Boot { generation });
    }

    fn schedule(&mut self, time: Micros, rank: u8, node: usize, event: QueuedEvent) {
        self.seq += 1;
        self.queue.push(Reverse(Queued { time, rank, node, seq: self.seq, event }));
    }

    pub fn now(&self) -> Micros {
        self.now
    }

    pub fn horizon(&self) -> Micros {
        self.horizon
    }

    pub fn links(&self) -> &LinkTable {
        &self.links
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    /// Machine of a powered node.
    pub fn node(&self, id: NodeId) -> Option<&NodeMachine> {
        self.nodes.get(id.index()).and_then(|n| n.machine.as_ref())
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Processes every queued event with `time <= until` (and before the horizon).
    pub fn run_until(&mut self, until: Micros) {
        let limit = until.min(self.horizon.saturating_sub(1));
        while let Some(Reverse(head)) = self.queue.peek() {
            if head.time > limit {
                break;
            }
            let Reverse(q) = self.queue.pop().expect("peeked");
            debug_assert!(q.time >= self.now, "clock moved backwards");
            self.now = q.time;
            self.dispatch(q.node, q.event);
        }
        self.now = self.now.max(limit);
    }

    pub fn run(mut self) -> SimOutput {
        self.run_until(self.horizon);
        self.finish()
    }

    pub fn finish(self) -> SimOutput {
        SimOutput {
            horizon: self.horizon,
            timing: self.timing,
            log: self.log,
            links: self.links,
            references: self.nodes.iter().map(|n| n.reference).collect(),
            machines: self.nodes.into_iter().map(|n| n.machine).collect(),
            deliveries: self.deliveries,
            counters: self.counters,
        }
    }

    fn dispatch(&mut self, node: usize, event: QueuedEvent) {
        match event {
            QueuedEvent::TxEnd(tx) => self.on_tx_end(tx),
            QueuedEvent::Timer { generation } => {
                let n = &mut self.nodes[node];
                if n.timer_generation != generation {
                    return;
                }
                let Some(machine) = n.machine.as_mut() else { return };
                let before = Snapshot::of(machine);
                let actions = machine.on_timer_expired(self.now, &mut n.rng);
                self.apply(node, actions, before);
            }
            QueuedEvent::Boot { generation } => {
                let n = &self.nodes[node];
                if n.boot_pending && n.boot_generation == generation {
                    self.boot(node);
                }
            }
            QueuedEvent::Scenario(ScenarioEvent::NodeOn(_)) => {
                let n = &self.nodes[node];
                if n.machine.is_some() || n.boot_pending {
                    self.log.push(self.now, n.id, LogKind::Warn("node_on_while_on"));
                    return;
                }
                let delay = self.engine_rng.random_range(0..=self.wake_window);
                self.schedule_boot(node, self.now + delay);
            }
            QueuedEvent::Scenario(ScenarioEvent::NodeOff(_)) => self.power_off(node),
            QueuedEvent::Scenario(ScenarioEvent::Inject { payload, .. }) => self.inject(node, payload),
        }
    }

    fn boot(&mut self, node: usize) {
        let slot = match self.nodes[node].initial_slot.take() {
            Some(s) => s,
            None => self.engine_rng.random_range(1..=self.timing.n_slot),
        };
        let n = &mut self.nodes[node];
        n.boot_pending = false;
        let machine = NodeMachine::new(self.timing.clone(), n.id, n.reference, slot, &mut n.rng)
            .expect("setup validated timing and slot")
            .with_policy(self.policy);
        self.log.push(self.now, n.id, LogKind::NodeOn { reference: n.reference, slot, hop: machine.hop() });
        let t_proc = machine.timer_remaining();
        n.machine = Some(machine);
        n.listen_since = None;
        self.set_timer(node, t_proc);
    }

    fn power_off(&mut self, node: usize) {
        let now = self.now;
        let n = &mut self.nodes[node];
        if n.machine.is_none() && !n.boot_pending {
            self.log.push(now, n.id, LogKind::Warn("node_off_while_off"));
            return;
        }
        let id = n.id;
        if let Some(tx) = n.transmitting.take() {
            self.txs[tx].aborted = true;
            self.active.retain(|&a| a != tx);
            self.log.push(now, id, LogKind::TxEnd { aborted: true });
        }
        let n = &mut self.nodes[node];
        n.machine = None;
        n.boot_pending = false;
        n.listen_since = None;
        n.timer_generation += 1;
        self.log.push(now, id, LogKind::NodeOff);
    }

    fn inject(&mut self, node: usize, payload: Vec<u8>) {
        let n = &mut self.nodes[node];
        let Some(machine) = n.machine.as_mut() else {
            self.log.push(self.now, n.id, LogKind::Drop { reason: "inject_at_off_node" });
            return;
        };
        let len = payload.len();
        match machine.inject(payload) {
            Ok(sequence) => self.log.push(self.now, n.id, LogKind::Inject { sequence, len }),
            Err(_) => self.log.push(self.now, n.id, LogKind::Drop { reason: "inject_rejected" }),
        }
    }

    fn set_timer(&mut self, node: usize, duration: Micros) {
        let n = &mut self.nodes[node];
        n.timer_generation += 1;
        let generation = n.timer_generation;
        let id = n.id;
        self.log.push(self.now, id, LogKind::Timer { duration });
        self.schedule(self.now + duration, RANK_TIMER, node, QueuedEvent::Timer { generation });
    }

    fn apply(&mut self, node: usize, actions: Vec<Action>, before: Snapshot) {
        let id = self.nodes[node].id;
        for action in actions {
            match action {
                Action::EnterRole(role) => {
                    let n = &mut self.nodes[node];
                    n.listen_since = if role.is_listening() { n.listen_since.or(Some(self.now)) } else { None };
                    self.log.push(self.now, id, LogKind::Role { to: role });
                }
                Action::StartTransmit { frame, airtime } => self.start_transmit(node, frame, airtime),
                Action::SetTimer(d) => self.set_timer(node, d),
                Action::Deliver { origin, sequence, payload } => {
                    self.log.push(self.now, id, LogKind::Deliver { origin, sequence, len: payload.len() });
                    self.deliveries.push(Delivery { time: self.now, at: id, origin, sequence, payload });
                }
            }
        }
        self.log_diff(node, before);
    }

    fn log_diff(&mut self, node: usize, before: Snapshot) {
        let n = &self.nodes[node];
        let Some(m) = n.machine.as_ref() else { return };
        let (id, now) = (n.id, self.now);
        let after = Snapshot::of(m);
        if after == before {
            return;
        }
        let log = &mut self.log;
        for &(nb, bidir) in &after.neighbors {
            match before.neighbors.iter().find(|(b, _)| *b == nb) {
                None => {
                    log.push(now, id, LogKind::NeighborAdd { neighbor: nb });
                    if bidir {
                        log.push(now, id, LogKind::NeighborBidirectional { neighbor: nb });
                    }
                }
                Some(&(_, was)) if bidir && !was => log.push(now, id, LogKind::NeighborBidirectional { neighbor: nb }),
                _ => {}
            }
        }
        for &(nb, _) in &before.neighbors {
            if !after.neighbors.iter().any(|(a, _)| *a == nb) {
                log.push(now, id, LogKind::NeighborRemove { neighbor: nb });
            }
        }
        if after.exhaustions > before.exhaustions {
            log.push(now, id, LogKind::SlotExhausted { slot: after.slot });
        }
        if after.slot != before.slot {
            log.push(now, id, LogKind::SlotChange { from: before.slot, to: after.slot });
        }
        if after.hop != before.hop {
            log.push(now, id, LogKind::HopChange { from: before.hop, to: after.hop });
        }
        if after.dropped > before.dropped {
            log.push(now, id, LogKind::Drop { reason: "unroutable" });
        }
    }

    fn start_transmit(&mut self, node: usize, frame: Frame, airtime: Micros) {
        let id = self.nodes[node].id;
        let bytes = match frame::encode(&frame) {
            Ok(b) => b,
            Err(_) => {
                self.log.push(self.now, id, LogKind::Warn("encode_failed"));
                return;
            }
        };
        let hearers = match self.links.params().fading_mode {
            FadingMode::PerPacket => (0..self.nodes.len())
                .filter(|&rx| rx != node)
                .filter_map(|rx| {
                    let snr = self.links.snr_db_with_fade(node, rx, draw_fade(&mut self.fade_rng));
                    self.links.decodable(snr).then_some((rx, snr))
                })
                .collect(),
            _ => self.static_hearers[node].clone(),
        };
        let idx = self.txs.len();
        let overlaps = self.active.clone();
        for &a in &overlaps {
            self.txs[a].overlaps.push(idx);
        }
        let b = frame.beacon();
        let data = match &frame {
            Frame::Data(d) => Some(DataTag { origin: d.origin, sequence: d.sequence, next_hop: d.next_hop }),
            Frame::Beacon(_) => None,
        };
        self.log.push(
            self.now,
            id,
            LogKind::TxStart {
                slot: b.sender_slot,
                hop: b.sender_hop,
                neighbors: b.neighbors.len(),
                data,
                bytes: if self.log.level() == super::LogLevel::Full { bytes.clone() } else { Vec::new() },
            },
        );
        self.txs.push(Transmission { tx: node, start: self.now, bytes, hearers, overlaps, aborted: false });
        self.active.push(idx);
        self.nodes[node].transmitting = Some(idx);
        self.counters.transmissions += 1;
        self.schedule(self.now + airtime, RANK_TX_END, node, QueuedEvent::TxEnd(idx));
    }

    fn on_tx_end(&mut self, tx: usize) {
        if self.txs[tx].aborted {
            return;
        }
        let sender = self.txs[tx].tx;
        self.active.retain(|&a| a != tx);
        self.nodes[sender].transmitting = None;
        let sender_id = self.nodes[sender].id;
        self.log.push(self.now, sender_id, LogKind::TxEnd { aborted: false });

        let hearers = self.txs[tx].hearers.clone();
        let start = self.txs[tx].start;
        for (rx, snr) in hearers {
            if self.nodes[rx].machine.is_none() {
                continue;
            }
            let rx_id = self.nodes[rx].id;
            let listening = self.nodes[rx].listen_since.is_some_and(|t| t <= start);
            let collided = self.txs[tx].overlaps.iter().any(|&o| {
                let other = &self.txs[o];
                other.tx != rx && other.heard_by(rx)
            });
            let lost = if collided {
                Some(LossReason::Collision)
            } else if !listening {
                Some(LossReason::NotListening)
            } else {
                None
            };
            if let Some(reason) = lost {
                match reason {
                    LossReason::Collision => self.counters.lost_collision += 1,
                    _ => self.counters.lost_not_listening += 1,
                }
                self.log.push(self.now, rx_id, LogKind::RxLost { from: sender_id, reason });
                continue;
            }
            let frame = match frame::decode(&self.txs[tx].bytes) {
                Ok(f) => f,
                Err(_) => {
                    self.log.push(self.now, rx_id, LogKind::RxLost { from: sender_id, reason: LossReason::Undecodable });
                    continue;
                }
            };
            self.counters.receptions += 1;
            self.log.push(self.now, rx_id, LogKind::Rx { from: sender_id });
            let n = &mut self.nodes[rx];
            let machine = n.machine.as_mut().expect("checked above");
            debug_assert!(machine.role() != Role::I && machine.role() != Role::P);
            let before = Snapshot::of(machine);
            let actions = machine.on_frame_received(&frame, self.now, Some(snr), &mut n.rng);
            self.apply(rx, actions, before);
        }
    }
}
