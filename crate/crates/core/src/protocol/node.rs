use std::collections::{BTreeMap, VecDeque};

use super::config::{ForwardingPolicy, Micros, NodeId, Role, TimingConfig};
use super::entropy::Entropy;
use super::ProtocolError;
use crate::frame::{Advert, BeaconFrame, DataFrame, Frame, MAX_PAYLOAD};

/// Recently seen `(origin, sequence)` pairs kept for duplicate suppression.
pub const ROUTE_CACHE_LEN: usize = 32;
/// Initiator turns an unroutable message may wait before it is dropped.
pub const MAX_ROUTE_ATTEMPTS: u32 = 100;

/// What the node knows about one neighbor it has heard.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborEntry {
    pub id: NodeId,
    pub slot: u8,
    /// Hop number the neighbor advertised in its most recent frame.
    pub hop: u8,
    pub last_heard: Micros,
    /// The neighbor listed this node in a frame, so the link works both ways.
    pub bidirectional: bool,
    pub rssi: Option<f64>,
}

/// Side effects requested from the host (simulator or radio driver).
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    EnterRole(Role),
    StartTransmit { frame: Frame, airtime: Micros },
    /// Replace any pending timer: fire after this duration.
    SetTimer(Micros),
    Deliver { origin: NodeId, sequence: u16, payload: Vec<u8> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingMessage {
    pub origin: NodeId,
    pub sequence: u16,
    pub payload: Vec<u8>,
    pub attempts: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NodeStats {
    pub malformed_ignored: u64,
    pub slot_exhaustions: u64,
    pub duplicates_dropped: u64,
    pub unroutable_attempts: u64,
    pub unroutable_dropped: u64,
    pub data_sent: u64,
    pub delivered: u64,
}

/// One node's complete protocol state. Pure: time and randomness are always
/// supplied by the caller.
#[derive(Debug, Clone)]
pub struct NodeMachine {
    config: TimingConfig,
    policy: ForwardingPolicy,
    id: NodeId,
    is_reference: bool,
    role: Role,
    slot: u8,
    timer: Micros,
    neighbors: BTreeMap<NodeId, NeighborEntry>,
    hop: u8,
    granted: bool,
    // Granted and the initiator slot of the current period is still ahead.
    initiator_pending: bool,
    msg_queue: VecDeque<PendingMessage>,
    route_cache: VecDeque<(NodeId, u16)>,
    reverse_routes: BTreeMap<NodeId, NodeId>,
    next_sequence: u16,
    stats: NodeStats,
}

impl NodeMachine {
    /// Boots a node in the processing state. The grant for the first period
    /// is drawn here.
    pub fn new(
        config: TimingConfig,
        id: NodeId,
        is_reference: bool,
        initial_slot: u8,
        rng: &mut impl Entropy,
    ) -> Result<Self, ProtocolError> {
        config.validate()?;
        if !config.slot_valid(initial_slot) {
            return Err(ProtocolError::InvalidSlot { slot: initial_slot, n_slot: config.n_slot });
        }
        let granted = rng.grant(config.p_grant);
        Ok(Self {
            hop: if is_reference { 0 } else { config.h_na },
            timer: config.t_proc,
            policy: ForwardingPolicy::default(),
            id,
            is_reference,
            role: Role::P,
            slot: initial_slot,
            neighbors: BTreeMap::new(),
            granted,
            initiator_pending: false,
            msg_queue: VecDeque::new(),
            route_cache: VecDeque::new(),
            reverse_routes: BTreeMap::new(),
            next_sequence: 0,
            stats: NodeStats::default(),
            config,
        })
    }

    pub fn with_policy(mut self, policy: ForwardingPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn config(&self) -> &TimingConfig {
        &self.config
    }
    pub fn id(&self) -> NodeId {
        self.id
    }
    pub fn is_reference(&self) -> bool {
        self.is_reference
    }
    pub fn role(&self) -> Role {
        self.role
    }
    pub fn slot(&self) -> u8 {
        self.slot
    }
    pub fn hop(&self) -> u8 {
        self.hop
    }
    /// Duration most recently assigned to the role timer.
    pub fn timer_remaining(&self) -> Micros {
        self.timer
    }
    pub fn granted(&self) -> bool {
        self.granted
    }
    pub fn stats(&self) -> &NodeStats {
        &self.stats
    }
    pub fn queue(&self) -> impl Iterator<Item = &PendingMessage> {
        self.msg_queue.iter()
    }

    /// Heard set, ordered by ID.
    pub fn neighbors(&self) -> impl Iterator<Item = &NeighborEntry> {
        self.neighbors.values()
    }

    pub fn neighbor(&self, id: NodeId) -> Option<&NeighborEntry> {
        self.neighbors.get(&id)
    }

    pub fn heard_ids(&self) -> Vec<NodeId> {
        self.neighbors.keys().copied().collect()
    }

    pub fn bidirectional_ids(&self) -> Vec<NodeId> {
        self.neighbors.values().filter(|e| e.bidirectional).map(|e| e.id).collect()
    }

    // ------------------------------------------------------------------
    // Role cycle
    // ------------------------------------------------------------------

    pub fn on_timer_expired(&mut self, now: Micros, rng: &mut impl Entropy) -> Vec<Action> {
        let cfg = &self.config;
        match self.role {
            Role::P => {
                self.role = Role::R1;
                let mut actions = vec![Action::EnterRole(Role::R1)];
                if self.granted {
                    self.initiator_pending = true;
                    let wait = (self.slot as Micros - 1) * cfg.t_slot;
                    if wait == 0 {
                        actions.extend(self.enter_initiator(rng));
                    } else {
                        self.timer = wait;
                        actions.push(Action::SetTimer(wait));
                    }
                } else {
                    self.initiator_pending = false;
                    self.timer = cfg.t_comm();
                    actions.push(Action::SetTimer(self.timer));
                }
                actions
            }
            Role::R1 if self.initiator_pending => self.enter_initiator(rng),
            Role::R1 | Role::R2 => self.enter_processing(now, rng),
            Role::I => {
                self.role = Role::R2;
                self.timer = (cfg.n_slot - self.slot) as Micros * cfg.t_slot + cfg.t_r();
                vec![Action::EnterRole(Role::R2), Action::SetTimer(self.timer)]
            }
        }
    }

    fn enter_processing(&mut self, now: Micros, rng: &mut impl Entropy) -> Vec<Action> {
        self.role = Role::P;
        self.initiator_pending = false;
        self.prune_neighbors(now);
        self.recompute_hop();
        self.granted = rng.grant(self.config.p_grant);
        self.timer = self.config.t_proc;
        vec![Action::EnterRole(Role::P), Action::SetTimer(self.timer)]
    }

    fn enter_initiator(&mut self, rng: &mut impl Entropy) -> Vec<Action> {
        self.role = Role::I;
        self.initiator_pending = false;
        self.timer = self.config.t_beacon;
        let frame = self.build_frame(rng);
        vec![
            Action::EnterRole(Role::I),
            Action::StartTransmit { frame, airtime: self.config.t_beacon },
            Action::SetTimer(self.timer),
        ]
    }

    // ------------------------------------------------------------------
    // Listen and adjust
    // ------------------------------------------------------------------

    fn frame_valid(&self, b: &BeaconFrame) -> bool {
        b.sender != self.id
            && self.config.slot_valid(b.sender_slot)
            && b.sender_hop <= self.config.h_na
            && b.neighbors.iter().all(|a| self.config.slot_valid(a.slot) && a.id != b.sender)
    }

    /// Processes a decoded frame heard while responding. Returns the new timer
    /// and, for a data frame that ends here, a delivery.
    pub fn on_frame_received(
        &mut self,
        frame: &Frame,
        now: Micros,
        rssi: Option<f64>,
        rng: &mut impl Entropy,
    ) -> Vec<Action> {
        if !self.role.is_listening() {
            return Vec::new();
        }
        let b = frame.beacon();
        if !self.frame_valid(b) {
            self.stats.malformed_ignored += 1;
            return Vec::new();
        }

        let listed = b.lists(self.id);
        let entry = self.neighbors.entry(b.sender).or_insert(NeighborEntry {
            id: b.sender,
            slot: b.sender_slot,
            hop: b.sender_hop,
            last_heard: now,
            bidirectional: false,
            rssi,
        });
        entry.slot = b.sender_slot;
        entry.hop = b.sender_hop;
        entry.last_heard = now;
        entry.rssi = rssi;
        entry.bidirectional |= listed;

        self.adjust_slot(b, rng);

        if self.role == Role::R1 && self.initiator_pending && self.slot == b.sender_slot {
            // Only reachable after slot exhaustion: skip this period's turn.
            self.initiator_pending = false;
        }
        self.timer = self.resync_timer(b.sender_slot);
        let mut actions = vec![Action::SetTimer(self.timer)];

        self.prune_neighbors(now);
        self.recompute_hop();

        if let Frame::Data(d) = frame {
            if let Some(delivery) = self.accept_data(d) {
                actions.push(delivery);
            }
        }
        actions
    }

    /// Moves off a slot reported in use by the sender or any of its heard
    /// neighbors. Returns the (possibly unchanged) slot.
    pub fn adjust_slot(&mut self, frame: &BeaconFrame, rng: &mut impl Entropy) -> u8 {
        let mut reported = vec![frame.sender_slot];
        reported.extend(frame.neighbors.iter().filter(|a| a.id != self.id).map(|a| a.slot));
        if !reported.contains(&self.slot) {
            return self.slot;
        }
        let mut excluded = [false; 256];
        for s in reported.into_iter().chain(self.neighbors.values().map(|e| e.slot)) {
            excluded[s as usize] = true;
        }
        let candidates: Vec<u8> = (1..=self.config.n_slot).filter(|&s| !excluded[s as usize]).collect();
        if candidates.is_empty() {
            self.stats.slot_exhaustions += 1;
        } else {
            self.slot = rng.pick_slot(&candidates);
        }
        self.slot
    }

    /// Timer value that re-aligns this node with a sender whose beacon in
    /// slot `sender_slot` just finished. Uses the node's already-adjusted slot.
    pub fn resync_timer(&self, sender_slot: u8) -> Micros {
        let c = &self.config;
        let (n, own, sender) = (c.n_slot as Micros, self.slot as Micros, sender_slot as Micros);
        match self.role {
            Role::R1 if self.initiator_pending && own > sender => (own - sender - 1) * c.t_slot + c.t_r(),
            Role::R1 if self.initiator_pending && own < sender => {
                (n + own - sender - 1) * c.t_slot + c.t_proc + c.t_r()
            }
            // R2, a responder without a pending turn, or an equal slot: run
            // out the sender's period.
            _ => (n - sender) * c.t_slot + c.t_r(),
        }
    }

    /// Forgets neighbors silent for longer than `n_max` periods.
    pub fn prune_neighbors(&mut self, now: Micros) -> Vec<NodeId> {
        let timeout = self.config.neighbor_timeout();
        let stale: Vec<NodeId> = self
            .neighbors
            .values()
            .filter(|e| now.saturating_sub(e.last_heard) > timeout)
            .map(|e| e.id)
            .collect();
        for id in &stale {
            self.neighbors.remove(id);
        }
        if !stale.is_empty() {
            self.recompute_hop();
        }
        stale
    }

    /// One more than the smallest hop advertised by a bidirectional neighbor,
    /// ignoring neighbors that are themselves near `h_na`.
    pub fn recompute_hop(&mut self) -> u8 {
        self.hop = if self.is_reference {
            0
        } else {
            let limit = self.config.h_na - 1;
            self.neighbors
                .values()
                .filter(|e| e.bidirectional && e.hop < limit)
                .map(|e| e.hop + 1)
                .min()
                .unwrap_or(self.config.h_na)
        };
        self.hop
    }

    // ------------------------------------------------------------------
    // Routing
    // ------------------------------------------------------------------

    fn min_hop_neighbors(&self) -> Vec<&NeighborEntry> {
        let Some(min) = self.neighbors.values().filter(|e| e.bidirectional).map(|e| e.hop).min() else {
            return Vec::new();
        };
        if min >= self.config.h_na {
            return Vec::new();
        }
        self.neighbors.values().filter(|e| e.bidirectional && e.hop == min).collect()
    }

    /// Minimum-hop bidirectional neighbor, ties broken uniformly at random.
    pub fn select_next_hop(&self, rng: &mut impl Entropy) -> Option<NodeId> {
        let ties = self.min_hop_neighbors();
        match ties.len() {
            0 => None,
            1 => Some(ties[0].id),
            n => Some(ties[rng.pick_index(n)].id),
        }
    }

    fn best_rssi_next_hop(&self) -> Option<NodeId> {
        self.min_hop_neighbors()
            .into_iter()
            .max_by(|a, b| {
                let (ra, rb) = (a.rssi.unwrap_or(f64::NEG_INFINITY), b.rssi.unwrap_or(f64::NEG_INFINITY));
                ra.total_cmp(&rb).then(b.id.cmp(&a.id))
            })
            .map(|e| e.id)
    }

    fn adverts(&self) -> Vec<Advert> {
        self.neighbors.values().map(|e| Advert { id: e.id, slot: e.slot }).collect()
    }

    /// Frame for the node's initiator slot: a data frame when a message is
    /// queued and routable, otherwise a beacon.
    pub fn build_frame(&mut self, rng: &mut impl Entropy) -> Frame {
        let beacon = BeaconFrame {
            sender: self.id,
            sender_slot: self.slot,
            sender_hop: self.hop,
            neighbors: self.adverts(),
        };
        if self.msg_queue.is_empty() {
            return Frame::Beacon(beacon);
        }
        let route = match self.policy {
            ForwardingPolicy::RandomTie => self.select_next_hop(rng).map(Some),
            ForwardingPolicy::BestRssi => self.best_rssi_next_hop().map(Some),
            ForwardingPolicy::BroadcastMin => (!self.min_hop_neighbors().is_empty()).then_some(None),
        };
        match route {
            Some(next_hop) => {
                let msg = self.msg_queue.pop_front().expect("queue checked non-empty");
                self.stats.data_sent += 1;
                Frame::Data(DataFrame {
                    beacon,
                    origin: msg.origin,
                    sequence: msg.sequence,
                    next_hop,
                    payload: msg.payload,
                })
            }
            None => {
                self.stats.unroutable_attempts += 1;
                let head = self.msg_queue.front_mut().expect("queue checked non-empty");
                head.attempts += 1;
                if head.attempts >= MAX_ROUTE_ATTEMPTS {
                    self.msg_queue.pop_front();
                    self.stats.unroutable_dropped += 1;
                }
                Frame::Beacon(beacon)
            }
        }
    }

    fn remember(&mut self, key: (NodeId, u16)) -> bool {
        if self.route_cache.contains(&key) {
            return false;
        }
        if self.route_cache.len() == ROUTE_CACHE_LEN {
            self.route_cache.pop_front();
        }
        self.route_cache.push_back(key);
        true
    }

    fn accept_data(&mut self, d: &DataFrame) -> Option<Action> {
        let for_us = match d.next_hop {
            Some(h) => h == self.id,
            None => self.hop < d.beacon.sender_hop,
        };
        if !for_us {
            return None;
        }
        if !self.remember((d.origin, d.sequence)) {
            self.stats.duplicates_dropped += 1;
            return None;
        }
        self.record_reverse_route(d);
        if self.is_reference {
            self.stats.delivered += 1;
            Some(Action::Deliver { origin: d.origin, sequence: d.sequence, payload: d.payload.clone() })
        } else {
            self.msg_queue.push_back(PendingMessage {
                origin: d.origin,
                sequence: d.sequence,
                payload: d.payload.clone(),
                attempts: 0,
            });
            None
        }
    }

    /// Remembers which neighbor handed over traffic from `frame.origin`.
    pub fn record_reverse_route(&mut self, frame: &DataFrame) {
        self.reverse_routes.insert(frame.origin, frame.beacon.sender);
    }

    pub fn reverse_next_hop(&self, origin: NodeId) -> Option<NodeId> {
        self.reverse_routes.get(&origin).copied()
    }

    /// Queues a new message originated here. Returns its sequence number.
    pub fn inject(&mut self, payload: Vec<u8>) -> Result<u16, ProtocolError> {
        if self.is_reference {
            return Err(ProtocolError::ReferenceCannotOriginate);
        }
        if payload.len() > MAX_PAYLOAD {
            return Err(ProtocolError::PayloadTooLong(payload.len()));
        }
        let sequence = self.next_sequence;
        self.next_sequence = self.next_sequence.wrapping_add(1);
        self.remember((self.id, sequence));
        self.msg_queue.push_back(PendingMessage { origin: self.id, sequence, payload, attempts: 0 });
        Ok(sequence)
    }
}
