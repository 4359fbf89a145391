use meshsync::frame::{decode, encode, Advert, BeaconFrame, CodecError, DataFrame, Frame, MAX_PAYLOAD};
use meshsync::protocol::NodeId;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn arb_beacon() -> impl Strategy<Value = BeaconFrame> {
    (1u8..=255, 1u8..=255, any::<u8>(), prop::collection::btree_map(1u8..=255, 1u8..=255, 0..40)).prop_map(
        |(sender, slot, hop, ns)| BeaconFrame {
            sender: NodeId::new(sender).unwrap(),
            sender_slot: slot,
            sender_hop: hop,
            neighbors: ns
                .into_iter()
                .filter(|&(i, _)| i != sender)
                .map(|(i, s)| Advert { id: NodeId::new(i).unwrap(), slot: s })
                .collect(),
        },
    )
}

fn arb_frame() -> impl Strategy<Value = Frame> {
    prop_oneof![
        arb_beacon().prop_map(Frame::Beacon),
        (arb_beacon(), 1u8..=255, any::<u16>(), any::<u8>(), prop::collection::vec(any::<u8>(), 0..=MAX_PAYLOAD))
            .prop_map(|(beacon, origin, sequence, next, payload)| {
                let next_hop = NodeId::new(next).filter(|&n| n != beacon.sender);
                Frame::Data(DataFrame { beacon, origin: NodeId::new(origin).unwrap(), sequence, next_hop, payload })
            }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn round_trip(frame in arb_frame()) {
        let bytes = encode(&frame).unwrap();
        prop_assert_eq!(bytes.len(), frame.encoded_len());
        prop_assert_eq!(decode(&bytes).unwrap(), frame);
    }

    #[test]
    fn truncation_is_an_error(frame in arb_frame(), cut in any::<prop::sample::Index>()) {
        let bytes = encode(&frame).unwrap();
        let n = cut.index(bytes.len());
        prop_assert!(decode(&bytes[..n]).is_err());
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..300)) {
        if let Ok(f) = decode(&bytes) {
            // anything accepted re-encodes to the same bytes
            prop_assert_eq!(encode(&f).unwrap(), bytes);
        }
    }
}

#[test]
fn fuzz_mutated_frames() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let seed = encode(&Frame::Beacon(BeaconFrame {
        sender: NodeId::new(3).unwrap(),
        sender_slot: 2,
        sender_hop: 1,
        neighbors: vec![Advert { id: NodeId::new(4).unwrap(), slot: 1 }],
    }))
    .unwrap();
    let mut accepted = 0;
    for _ in 0..100_000 {
        let mut b = seed.clone();
        for _ in 0..rng.random_range(1..4) {
            let i = rng.random_range(0..b.len());
            b[i] = rng.random();
        }
        match decode(&b) {
            Ok(f) => {
                accepted += 1;
                assert_eq!(encode(&f).unwrap(), b);
            }
            Err(e) => assert!((1..=5).contains(&e.code())),
        }
    }
    assert!(accepted > 0);
}

#[test]
fn specific_errors() {
    assert!(matches!(decode(&[]), Err(CodecError::Truncated { got: 0, .. })));
    assert_eq!(decode(&[2, 1, 1, 1, 0, 0]), Err(CodecError::UnsupportedVersion(2)));
    assert_eq!(decode(&[1, 9, 1, 1, 0, 0]), Err(CodecError::UnknownFrameType(9)));
    assert!(matches!(decode(&[1, 1, 1, 1, 0, 0, 0]), Err(CodecError::LengthMismatch { .. })));
    assert!(matches!(decode(&[1, 1, 0, 1, 0, 0]), Err(CodecError::InvalidField(_))));
}
