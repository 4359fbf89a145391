use meshsync::channel::{realize_links, ChannelParams, Point};
use meshsync::metrics::{conflict_count, consensus_time, victim_trace};
use meshsync::protocol::{ForwardingPolicy, Micros, NodeId, TimingConfig, MICROS_PER_MS, MICROS_PER_SEC};
use meshsync::scenario::preset;
use meshsync::sim::{LogKind, LogLevel, LossReason, NodeSetup, ScenarioEvent, SimError, SimSetup, TimedEvent};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const MS: Micros = MICROS_PER_MS;

fn id(v: u8) -> NodeId {
    NodeId::new(v).unwrap()
}

fn setup(points: &[(f64, f64)], nodes: Vec<NodeSetup>, timing: TimingConfig, horizon: Micros) -> SimSetup {
    let coords: Vec<Point> = points.iter().map(|&(x, y)| Point::new(x, y)).collect();
    let links = realize_links(&coords, &ChannelParams::deterministic(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    SimSetup {
        timing,
        policy: ForwardingPolicy::RandomTie,
        horizon,
        wake_window: 100 * MS,
        nodes,
        links,
        events: Vec::new(),
        log_level: LogLevel::Full,
    }
}

fn fixed(slot: u8, wake: Micros, grants: &[bool]) -> NodeSetup {
    NodeSetup { initial_slot: Some(slot), wake_at: Some(wake), grants: grants.to_vec(), ..NodeSetup::default() }
}

#[test]
fn synchronized_same_slot_pair_collides_at_middle_node() {
    // 0 --40m-- 1 --40m-- 2 : ends cannot hear each other (80 m)
    let t = TimingConfig::standard(4, 1.0);
    let s = setup(
        &[(0.0, 0.0), (40.0, 0.0), (80.0, 0.0)],
        vec![fixed(2, 0, &[]), fixed(4, 0, &[]), fixed(2, 0, &[])],
        t,
        60 * MS,
    );
    assert!(!s.links.accessible(0, 2));
    let out = s.run(1).unwrap();
    let lost: Vec<_> = out
        .log
        .records()
        .iter()
        .filter(|r| r.node == id(2))
        .filter_map(|r| match r.kind {
            LogKind::RxLost { from, reason } => Some((from, reason)),
            _ => None,
        })
        .collect();
    assert_eq!(lost, vec![(id(1), LossReason::Collision), (id(3), LossReason::Collision)]);
    let god = out.links.true_neighbor_sets();
    let trace = victim_trace(out.log.records(), &god, out.horizon);
    // both ends transmit during [20, 25) ms: node 2 is the one victim
    assert_eq!(trace.value_at(22 * MS), 1);
    assert_eq!(trace.value_at(26 * MS), 0);
}

#[test]
fn half_duplex_initiator_hears_nothing() {
    let t = TimingConfig::standard(4, 1.0);
    let s = setup(&[(0.0, 0.0), (10.0, 0.0)], vec![fixed(1, 0, &[]), fixed(1, 0, &[])], t, 30 * MS);
    let out = s.run(1).unwrap();
    assert_eq!(out.counters.receptions, 0);
    assert!(out.log.records().iter().any(|r| matches!(r.kind, LogKind::RxLost { reason: LossReason::NotListening, .. })));
}

#[test]
fn identical_seeds_identical_logs() {
    let s = preset("fig3b-random").unwrap();
    let mut short = s.clone();
    short.horizon_s = 10.0;
    let a = short.build(5).unwrap().run(5).unwrap().log.to_text();
    let b = short.build(5).unwrap().run(5).unwrap().log.to_text();
    assert_eq!(a, b);
    let c = short.build(6).unwrap().run(6).unwrap().log.to_text();
    assert_ne!(a, c);
}

/// Victim count recomputed at every millisecond from the transmission
/// intervals in the log, independently of the trace builder.
#[test]
fn victim_trace_matches_sampling() {
    let mut s = preset("fig3b-random").unwrap();
    s.horizon_s = 5.0;
    let out = s.build(11).unwrap().run(11).unwrap();
    let n = out.links.len();
    let god = out.links.true_neighbor_sets();
    let trace = victim_trace(out.log.records(), &god, out.horizon);

    let mut intervals = vec![Vec::new(); n];
    let mut open = vec![None; n];
    let mut powered = vec![Vec::new(); n];
    for r in out.log.records() {
        let i = r.node.index();
        match r.kind {
            LogKind::NodeOn { .. } => powered[i].push(r.time),
            LogKind::TxStart { .. } => open[i] = Some(r.time),
            LogKind::TxEnd { .. } => intervals[i].push((open[i].take().unwrap(), r.time)),
            _ => {}
        }
    }
    let mut checked = 0;
    // sample half a millisecond off the grid so no sample sits on an edge
    for k in 0..out.horizon / MS {
        let t = k * MS + MS / 2;
        let tx: Vec<bool> = (0..n)
            .map(|i| intervals[i].iter().any(|&(a, b)| a <= t && t < b) || open[i].is_some_and(|a| a <= t))
            .collect();
        // only powered receivers can be victims; nothing powers off in this run
        let expected = (0..n)
            .filter(|&rx| powered[rx].first().is_some_and(|&a| a <= t) && conflict_count(rx, &tx, &god) > 1)
            .count() as u32;
        assert_eq!(trace.value_at(t), expected, "at {t} us");
        checked += 1;
    }
    assert_eq!(checked, 5000);
    assert!(trace.points().len() > 2, "expected some victims early on");
}

#[test]
fn three_node_clique_resolves_every_start() {
    let t = TimingConfig::standard(4, 0.5);
    for s1 in 1..=4u8 {
        for s2 in 1..=4u8 {
            for s3 in 1..=4u8 {
                let s = setup(
                    &[(0.0, 0.0), (10.0, 0.0), (5.0, 8.0)],
                    vec![fixed(s1, 0, &[]), fixed(s2, 30 * MS, &[]), fixed(s3, 70 * MS, &[])],
                    t.clone(),
                    20 * MICROS_PER_SEC,
                );
                let out = s.run(u64::from(s1) * 16 + u64::from(s2) * 4 + u64::from(s3)).unwrap();
                let slots: Vec<u8> = out.machines.iter().map(|m| m.as_ref().unwrap().slot()).collect();
                assert!(slots[0] != slots[1] && slots[1] != slots[2] && slots[0] != slots[2], "{s1}{s2}{s3}: {slots:?}");
                let god = out.links.true_neighbor_sets();
                let trace = victim_trace(out.log.records(), &god, out.horizon);
                let c = consensus_time(&trace).unwrap();
                assert!(c < 10 * MICROS_PER_SEC, "{s1}{s2}{s3}: consensus at {c}");
                for m in out.machines.iter().flatten() {
                    assert_eq!(m.bidirectional_ids().len(), 2);
                }
            }
        }
    }
}

#[test]
fn isolated_node_never_receives() {
    let t = TimingConfig::standard(4, 0.5);
    let s = setup(&[(0.0, 0.0), (500.0, 0.0)], vec![fixed(1, 0, &[]), fixed(2, 0, &[])], t, 5 * MICROS_PER_SEC);
    let out = s.run(3).unwrap();
    assert_eq!(out.counters.receptions, 0);
    assert!(out.machines.iter().flatten().all(|m| m.hop() == 30 && m.heard_ids().is_empty()));
}

#[test]
fn power_off_aborts_transmission() {
    let t = TimingConfig::standard(4, 1.0);
    let mut s = setup(&[(0.0, 0.0), (10.0, 0.0)], vec![fixed(1, 0, &[]), fixed(3, 0, &[])], t, 50 * MS);
    s.events.push(TimedEvent { time: 12 * MS, event: ScenarioEvent::NodeOff(id(1)) });
    let out = s.run(1).unwrap();
    let text = out.log.to_text();
    assert!(text.contains("12000 tx_end 1 aborted=1"));
    assert!(text.contains("12000 node_off 1"));
    assert!(out.machine(id(1)).is_none());
    assert_eq!(out.counters.receptions, 0);
}

#[test]
fn setup_validation() {
    let t = TimingConfig::standard(4, 0.5);
    let mut s = setup(&[(0.0, 0.0)], vec![fixed(1, 0, &[])], t, 0);
    assert_eq!(s.clone().run(1).err(), Some(SimError::NonPositiveHorizon));
    s.horizon = 10;
    s.events.push(TimedEvent { time: 10, event: ScenarioEvent::NodeOff(id(1)) });
    assert_eq!(s.run(1).err(), Some(SimError::EventAfterHorizon { time: 10 }));
}

#[test]
fn demo_message_reaches_reference_through_node_5() {
    let s = preset("demo-5node").unwrap();
    let out = s.build(s.seed).unwrap().run(s.seed).unwrap();
    assert_eq!(out.machine(id(4)).unwrap().hop(), 2);
    assert_eq!(out.machine(id(5)).unwrap().hop(), 1);
    assert_eq!(out.deliveries.len(), 1);
    let d = &out.deliveries[0];
    assert_eq!((d.at, d.origin), (id(1), id(4)));
    assert_eq!(d.payload, b"hello from node 4");
    assert_eq!(out.machine(id(1)).unwrap().reverse_next_hop(id(4)), Some(id(5)));
    assert_eq!(out.machine(id(5)).unwrap().reverse_next_hop(id(4)), Some(id(4)));
}

#[test]
fn two_node_preset_replays_walkthrough() {
    let s = preset("fig2-two-node").unwrap();
    let out = s.build(1).unwrap().run(1).unwrap();
    let text = out.log.to_text();
    for line in [
        "15000 rx_lost 1 from=2 reason=not_listening",
        "20000 slot 2 from=1 to=2",
        "20000 timer 2 duration_us=35000",
        "70000 timer 2 duration_us=5000",
        "80000 nbr_bidir 1 neighbor=2",
        "80000 timer 1 duration_us=25000",
        "120000 nbr_bidir 2 neighbor=1",
    ] {
        assert!(text.lines().any(|l| l == line), "missing {line:?}");
    }
}
