use meshsync::frame::{Advert, BeaconFrame, Frame};
use meshsync::protocol::{Micros, NodeId, NodeMachine, Role, Scripted, TimingConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn id(v: u8) -> NodeId {
    NodeId::new(v).unwrap()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn beacon(sender: u8, slot: u8, hop: u8, neighbors: &[(u8, u8)]) -> Frame {
    Frame::Beacon(BeaconFrame {
        sender: id(sender),
        sender_slot: slot,
        sender_hop: hop,
        neighbors: neighbors.iter().map(|&(i, s)| Advert { id: id(i), slot: s }).collect(),
    })
}

/// Boots a node and walks it into `R1` (granted or not) or `R2`.
fn node_in(cfg: &TimingConfig, me: u8, slot: u8, role: Role, granted: bool) -> (NodeMachine, Micros) {
    let mut e = Scripted::with_script(rng(1), &[granted, true], &[]);
    let mut m = NodeMachine::new(cfg.clone(), id(me), false, slot, &mut e).unwrap();
    let mut now = 0;
    loop {
        now += m.timer_remaining();
        m.on_timer_expired(now, &mut e);
        if m.role() == role {
            return (m, now);
        }
        assert!(now < 10 * cfg.period(), "never reached {role:?}");
    }
}

/// Node fed random beacons from random senders.
fn arb_beacons() -> impl Strategy<Value = Vec<(u8, u8, u8, Vec<(u8, u8)>)>> {
    prop::collection::vec(
        (2u8..12, 1u8..=8, 0u8..=30, prop::collection::vec((1u8..12, 1u8..=8), 0..6)),
        1..40,
    )
}

fn sanitize(sender: u8, ns: &[(u8, u8)]) -> Vec<(u8, u8)> {
    let mut out: Vec<(u8, u8)> = Vec::new();
    for &(i, s) in ns {
        if i != sender && !out.iter().any(|o| o.0 == i) {
            out.push((i, s));
        }
    }
    out
}

proptest! {
    #[test]
    fn machine_invariants_hold(beacons in arb_beacons(), seed in any::<u64>(), slot in 1u8..=8) {
        let cfg = TimingConfig::standard(8, 0.5);
        let mut e = rng(seed);
        let mut m = NodeMachine::new(cfg.clone(), id(1), false, slot, &mut e).unwrap();
        let mut now = 0;
        for (sender, s, hop, ns) in beacons {
            // advance to the next listening state
            while !m.role().is_listening() {
                now += m.timer_remaining();
                m.on_timer_expired(now, &mut e);
            }
            let f = beacon(sender, s, hop, &sanitize(sender, &ns));
            m.on_frame_received(&f, now, None, &mut e);
            // timer non-negativity and boundedness
            prop_assert!(m.timer_remaining() <= cfg.period() + cfg.t_slot);
            // discovered bidirectional set within heard set
            let heard = m.heard_ids();
            prop_assert!(m.bidirectional_ids().iter().all(|b| heard.contains(b)));
            prop_assert!(cfg.slot_valid(m.slot()));
            prop_assert!(m.hop() >= 1 && m.hop() <= cfg.h_na);
            // hop local consistency
            let eligible = m.neighbors().filter(|n| n.bidirectional && n.hop < cfg.h_na - 1).map(|n| n.hop).min();
            prop_assert_eq!(m.hop(), eligible.map_or(cfg.h_na, |h| h + 1));
            now += 1;
        }
    }

    #[test]
    fn slot_adjustment_soundness(own in 1u8..=10, sender_slot in 1u8..=10, ns in prop::collection::vec((3u8..20, 1u8..=10), 0..8), seed in any::<u64>()) {
        let cfg = TimingConfig::standard(10, 0.5);
        let mut e = rng(seed);
        let mut m = NodeMachine::new(cfg, id(1), false, own, &mut e).unwrap();
        let ns = sanitize(2, &ns);
        let b = match beacon(2, sender_slot, 30, &ns) { Frame::Beacon(b) => b, _ => unreachable!() };
        let reported: Vec<u8> = std::iter::once(sender_slot).chain(ns.iter().map(|n| n.1)).collect();
        let new = m.adjust_slot(&b, &mut e);
        if !reported.contains(&own) {
            prop_assert_eq!(new, own);
        } else if m.stats().slot_exhaustions == 0 {
            prop_assert!(!reported.contains(&new), "picked reported slot {new}");
        } else {
            prop_assert_eq!(new, own);
        }
    }

    #[test]
    fn reference_hop_pinned(hops in prop::collection::vec(0u8..=30, 1..6)) {
        let cfg = TimingConfig::standard(8, 1.0);
        let mut e = rng(3);
        let mut m = NodeMachine::new(cfg, id(1), true, 3, &mut e).unwrap();
        let mut now = 0;
        for (k, h) in hops.into_iter().enumerate() {
            while !m.role().is_listening() {
                now += m.timer_remaining();
                m.on_timer_expired(now, &mut e);
            }
            m.on_frame_received(&beacon(2 + k as u8, 1, h, &[(1, 3)]), now, None, &mut e);
            prop_assert_eq!(m.hop(), 0);
        }
    }

    /// The tie-break depends only on which neighbors share the minimum hop.
    #[test]
    fn tie_break_ignores_non_minimal(extra in prop::collection::vec(3u8..29, 0..5), seed in any::<u64>()) {
        let cfg = TimingConfig::standard(8, 0.5);
        let build = |extra: &[u8]| {
            let (mut m, now) = node_in(&cfg, 1, 8, Role::R1, false);
            let mut e = rng(0);
            m.on_frame_received(&beacon(2, 1, 2, &[(1, 8)]), now, None, &mut e);
            m.on_frame_received(&beacon(3, 2, 2, &[(1, 8)]), now, None, &mut e);
            for (k, &h) in extra.iter().enumerate() {
                m.on_frame_received(&beacon(10 + k as u8, 3 + k as u8, h, &[(1, 8)]), now, None, &mut e);
            }
            m
        };
        let with = build(&extra);
        let without = build(&[]);
        let picks = |m: &NodeMachine| {
            let mut e = rng(seed);
            (0..20).map(|_| m.select_next_hop(&mut e)).collect::<Vec<_>>()
        };
        prop_assert_eq!(picks(&with), picks(&without));
    }
}

#[test]
fn isolated_node_cycles_forever() {
    let cfg = TimingConfig::standard(4, 0.5);
    let mut e = rng(9);
    let mut m = NodeMachine::new(cfg.clone(), id(3), false, 2, &mut e).unwrap();
    let mut now = 0;
    let mut p_entries = 0;
    while now < 100 * cfg.period() {
        now += m.timer_remaining();
        m.on_timer_expired(now, &mut e);
        if m.role() == Role::P {
            p_entries += 1;
            assert_eq!(now % cfg.period(), 0);
        }
    }
    assert_eq!(p_entries, 100);
    assert_eq!(m.hop(), cfg.h_na);
}

#[test]
fn pruning_after_timeout() {
    let cfg = TimingConfig::standard(4, 0.5);
    let (mut m, now) = node_in(&cfg, 1, 2, Role::R1, false);
    let mut e = rng(0);
    m.on_frame_received(&beacon(2, 1, 0, &[(1, 2)]), now, None, &mut e);
    assert_eq!(m.hop(), 1);
    let timeout = cfg.neighbor_timeout();
    assert!(m.prune_neighbors(now + timeout).is_empty());
    assert_eq!(m.prune_neighbors(now + timeout + 1), vec![id(2)]);
    assert_eq!(m.hop(), cfg.h_na);
}
