use super::*;
use crate::aggregate::SummaryConfig;
use crate::btree::AggBTree;
use crate::key::ID_LEN;
use crate::store::VecStore;

fn byte_key(timestamp: u64, first: u8) -> ItemKey {
    let mut id = [0u8; ID_LEN];
    id[0] = first;
    ItemKey::new(timestamp, id)
}

fn width8() -> SummaryConfig {
    SummaryConfig::new(8, 8, 1).unwrap()
}

fn example_items() -> Vec<ItemKey> {
    vec![
        byte_key(10, 0xa1),
        byte_key(10, 0xf3),
        byte_key(11, 0x1c),
        byte_key(13, 0x7b),
    ]
}

fn ts_keys(timestamps: &[u64]) -> Vec<ItemKey> {
    timestamps
        .iter()
        .map(|t| byte_key(*t, (*t % 251) as u8))
        .collect()
}

fn everything() -> HalfOpenRange {
    HalfOpenRange::everything()
}

mod cuts {
    use super::*;

    #[test]
    fn drops_consecutive_duplicates() {
        let l = Bound::MinusInfinity;
        let c = Bound::Key(byte_key(5, 1));
        let u = Bound::PlusInfinity;
        assert_eq!(normalize_cuts(vec![l, c, c, u]).unwrap(), vec![l, c, u]);
        assert_eq!(normalize_cuts(vec![l, u]).unwrap(), vec![l, u]);
        assert_eq!(normalize_cuts(vec![c, c]).unwrap(), vec![c]);
        assert!(matches!(
            normalize_cuts(vec![u, l]),
            Err(ProtocolError::DecreasingCuts)
        ));
    }

    #[test]
    fn monotone_input_yields_strictly_increasing_output() {
        let mut state = 3u64;
        for _ in 0..200 {
            let mut cuts = Vec::new();
            let mut ts = 0u64;
            for _ in 0..20 {
                state = state
                    .wrapping_mul(2862933555777941757)
                    .wrapping_add(3037000493);
                ts += state % 3;
                cuts.push(Bound::Key(byte_key(ts, 0)));
            }
            let first = cuts[0];
            let last = *cuts.last().unwrap();
            let normalized = normalize_cuts(cuts).unwrap();
            assert!(normalized.windows(2).all(|w| w[0] < w[1]));
            assert_eq!(normalized[0], first);
            assert_eq!(*normalized.last().unwrap(), last);
        }
    }
}

mod splitting {
    use super::*;

    #[test]
    fn empty_range_returns_endpoints() {
        let store = VecStore::from_items(width8(), vec![]);
        let cuts = split_by_rank(&store, &Bound::MinusInfinity, &Bound::PlusInfinity, 4).unwrap();
        assert_eq!(cuts, vec![Bound::MinusInfinity, Bound::PlusInfinity]);
    }

    #[test]
    fn ten_items_four_ways_cuts_at_quantile_ranks() {
        // floor(j*10/4) for j = 1..3 gives local ranks 2, 5, 7.
        let items = ts_keys(&[0, 1, 2, 3, 4, 5, 6, 7, 8, 9]);
        let store = VecStore::from_items(width8(), items.clone());
        let cuts = split_by_rank(&store, &Bound::MinusInfinity, &Bound::PlusInfinity, 4).unwrap();
        assert_eq!(
            cuts,
            vec![
                Bound::MinusInfinity,
                Bound::Key(items[2]),
                Bound::Key(items[5]),
                Bound::Key(items[7]),
                Bound::PlusInfinity,
            ]
        );
    }

    #[test]
    fn children_are_balanced_within_one_item() {
        let mut state = 11u64;
        for round in 0..50 {
            let n = 1 + (round * 7) % 120;
            let mut timestamps = Vec::new();
            let mut ts = 0;
            for _ in 0..n {
                state = state
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                ts += 1 + state % 5;
                timestamps.push(ts);
            }
            let store = VecStore::from_items(width8(), ts_keys(&timestamps));
            for b in [2u32, 3, 4, 16] {
                let lo = Bound::Key(ItemKey::at_timestamp(ts / 4));
                let hi = Bound::Key(ItemKey::at_timestamp(3 * ts / 4));
                let m = store.aggregate(&lo, &hi).unwrap().count;
                let cuts = split_by_rank(&store, &lo, &hi, b).unwrap();
                assert!(cuts.windows(2).all(|w| w[0] < w[1]));
                if m == 0 {
                    continue;
                }
                let (floor, ceil) = (m / u64::from(b), m.div_ceil(u64::from(b)));
                for pair in cuts.windows(2) {
                    let child = store.aggregate(&pair[0], &pair[1]).unwrap().count;
                    assert!(
                        child == floor || child == ceil || (floor == 0 && child <= ceil),
                        "child count {child} outside [{floor}, {ceil}]"
                    );
                }
            }
        }
    }
}

mod responding {
    use super::*;

    #[test]
    fn equal_stores_skip() {
        let store = VecStore::from_items(width8(), example_items());
        let peer = VecStore::from_items(width8(), example_items());
        let fp = peer
            .aggregate(&Bound::MinusInfinity, &Bound::PlusInfinity)
            .unwrap()
            .fingerprint();
        let outcome = respond(&store, &everything(), &fp, &ProtocolParams::default()).unwrap();
        assert_eq!(outcome, RespondOutcome::Skip);
    }

    #[test]
    fn empty_range_with_mismatch_lists_nothing() {
        let store = VecStore::from_items(width8(), vec![]);
        let peer = VecStore::from_items(width8(), example_items());
        let fp = peer
            .aggregate(&Bound::MinusInfinity, &Bound::PlusInfinity)
            .unwrap()
            .fingerprint();
        let outcome = respond(&store, &everything(), &fp, &ProtocolParams::default()).unwrap();
        assert_eq!(outcome, RespondOutcome::IdList(vec![]));
    }

    #[test]
    fn divergent_stores_split_with_recomputed_child_fingerprints() {
        let local_items = ts_keys(&[1, 2, 3, 5, 8, 13]);
        let store = VecStore::from_items(width8(), local_items.clone());
        let peer = VecStore::from_items(width8(), ts_keys(&[1, 2, 3, 5, 8, 13, 21]));
        let fp = peer
            .aggregate(&Bound::MinusInfinity, &Bound::PlusInfinity)
            .unwrap()
            .fingerprint();
        let params = ProtocolParams::new(2, 2);
        let RespondOutcome::Split(children) = respond(&store, &everything(), &fp, &params).unwrap()
        else {
            panic!("expected a split");
        };
        assert_eq!(children.len(), 2);
        let cfg = width8();
        for (range, child_fp) in &children {
            // Brute-force oracle: filter the item list, fold, fingerprint.
            let members: Vec<ItemKey> = local_items
                .iter()
                .filter(|k| range.contains(k))
                .copied()
                .collect();
            let expect = crate::aggregate::Aggregate::of_items(&members, &cfg).fingerprint();
            assert_eq!(child_fp, &expect);
        }
        assert_eq!(children[0].0.lo(), &Bound::MinusInfinity);
        assert_eq!(children[1].0.hi(), &Bound::PlusInfinity);
        assert_eq!(children[0].0.hi(), children[1].0.lo());
    }
}

mod initiating {
    use super::*;

    #[test]
    fn empty_store_fingerprint_is_identity_golden() {
        let store = VecStore::new(SummaryConfig::identifier());
        let msg = initiate(&store, &everything()).unwrap();
        let Payload::Fingerprint(fp) = &msg.elements[0].payload else {
            panic!("fingerprint")
        };
        assert_eq!(
            hex::encode(fp.as_bytes()),
            "7f9c9e31ac8256ca2f258583df262dbc"
        );
    }

    #[test]
    fn worked_example_fingerprint_golden() {
        let store = VecStore::from_items(width8(), example_items());
        let outer = HalfOpenRange::new(
            Bound::Key(ItemKey::at_timestamp(10)),
            Bound::Key(ItemKey::at_timestamp(13)),
        )
        .unwrap();
        let msg = initiate(&store, &outer).unwrap();
        let Payload::Fingerprint(fp) = &msg.elements[0].payload else {
            panic!("fingerprint")
        };
        assert_eq!(
            hex::encode(fp.as_bytes()),
            "7ade47833b79e89e01c0779ebfc7a1ba"
        );
        assert_eq!(msg.encode(), msg.encode());
    }
}

mod processing {
    use super::*;

    #[test]
    fn all_skip_message_yields_empty_reply() {
        let store = VecStore::from_items(width8(), example_items());
        let mut session = Session::new(&store, ProtocolParams::default(), Role::Initiator);
        let incoming = Message::new(vec![MessageElement {
            range: everything(),
            payload: Payload::Skip,
        }]);
        assert!(session.process(&incoming).unwrap().is_empty());
    }

    #[test]
    fn equal_stores_resolve_in_one_skip() {
        let x = VecStore::from_items(width8(), example_items());
        let y = VecStore::from_items(width8(), example_items());
        let mut sx = Session::new(&x, ProtocolParams::default(), Role::Initiator);
        let mut sy = Session::new(&y, ProtocolParams::default(), Role::Responder);
        let first = sx.initiate(&everything()).unwrap();
        let reply = sy.process(&first).unwrap();
        assert_eq!(reply.elements.len(), 1);
        assert_eq!(reply.elements[0].payload, Payload::Skip);
        assert!(sx.process(&reply).unwrap().is_empty());
        assert!(sx.delta.have.is_empty() && sx.delta.need.is_empty());
    }

    #[test]
    fn rejects_overlapping_ranges() {
        let store = VecStore::from_items(width8(), example_items());
        let mut session = Session::new(&store, ProtocolParams::default(), Role::Responder);
        let a = HalfOpenRange::new(Bound::MinusInfinity, Bound::Key(byte_key(11, 0))).unwrap();
        let b = HalfOpenRange::new(Bound::Key(byte_key(10, 0)), Bound::PlusInfinity).unwrap();
        let incoming = Message::new(vec![
            MessageElement {
                range: a,
                payload: Payload::Skip,
            },
            MessageElement {
                range: b,
                payload: Payload::Skip,
            },
        ]);
        assert!(matches!(
            session.process(&incoming),
            Err(ProtocolError::MalformedRanges)
        ));
    }

    #[test]
    fn rejects_out_of_range_id_list() {
        let store = VecStore::from_items(width8(), example_items());
        let mut session = Session::new(&store, ProtocolParams::default(), Role::Responder);
        let range = HalfOpenRange::new(Bound::MinusInfinity, Bound::Key(byte_key(5, 0))).unwrap();
        let incoming = Message::new(vec![MessageElement {
            range,
            payload: Payload::IdList {
                keys: vec![byte_key(30, 1)],
                want_reply: false,
            },
        }]);
        assert!(matches!(
            session.process(&incoming),
            Err(ProtocolError::MalformedIdList)
        ));
    }
}

mod reconciling {
    use super::*;
    use std::collections::BTreeSet;

    fn brute_force_delta(
        x: &[ItemKey],
        y: &[ItemKey],
        outer: &HalfOpenRange,
    ) -> (BTreeSet<ItemKey>, BTreeSet<ItemKey>) {
        let xs: BTreeSet<ItemKey> = x.iter().filter(|k| outer.contains(k)).copied().collect();
        let ys: BTreeSet<ItemKey> = y.iter().filter(|k| outer.contains(k)).copied().collect();
        (
            xs.difference(&ys).copied().collect(),
            ys.difference(&xs).copied().collect(),
        )
    }

    #[test]
    fn equal_stores_finish_in_one_round() {
        let x = VecStore::from_items(width8(), example_items());
        let y = VecStore::from_items(width8(), example_items());
        let out = reconcile(&x, &y, &everything(), &ProtocolParams::default(), false).unwrap();
        assert!(out.have.is_empty() && out.need.is_empty());
        assert_eq!(out.rounds, 1);
        assert_eq!(out.messages, 2);
        assert_eq!(out.counters.queried, 1);
        assert_eq!(out.counters.skips, 1);
    }

    #[test]
    fn example_set_against_empty_peer() {
        let x = VecStore::from_items(width8(), example_items());
        let y = VecStore::new(width8());
        let out = reconcile(&x, &y, &everything(), &ProtocolParams::default(), false).unwrap();
        assert!(out.need.is_empty());
        assert_eq!(
            out.have,
            example_items().into_iter().collect::<BTreeSet<_>>()
        );
        assert_eq!(out.rounds, 1);
        // The empty responder answers the first query with one id list.
        assert_eq!(out.counters.id_lists, 1);
    }

    #[test]
    fn fifty_items_six_mismatches_exact_delta() {
        let mut x_ts: Vec<u64> = (0..50).map(|i| i * 3).collect();
        let mut y_ts = x_ts.clone();
        // Three timestamps only in X, three only in Y.
        x_ts.retain(|t| ![9, 30, 120].contains(t));
        y_ts.retain(|t| ![21, 60, 141].contains(t));
        let x_items = ts_keys(&x_ts);
        let y_items = ts_keys(&y_ts);
        let x = VecStore::from_items(width8(), x_items.clone());
        let y = VecStore::from_items(width8(), y_items.clone());
        let params = ProtocolParams::new(4, 3);
        let out = reconcile(&x, &y, &everything(), &params, false).unwrap();
        let (have, need) = brute_force_delta(&x_items, &y_items, &everything());
        assert_eq!(out.have, have);
        assert_eq!(out.need, need);
        assert_eq!(out.have.len(), 3);
        assert_eq!(out.need.len(), 3);
    }

    /// Randomized instances: exactness against the set oracle, tree-shape
    /// counter relations, skip soundness, and the refinement-depth round
    /// bound. Full-width summaries keep fingerprint collisions out of the
    /// picture (the skip audit below checks that, instead of assuming it).
    #[test]
    fn randomized_instances_hold_all_protocol_invariants() {
        let mut state = 1234u64;
        let mut rand = move || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            state
        };
        let cfg = SummaryConfig::identifier();
        for case in 0..60 {
            let n = 1 + (rand() % 300) as usize;
            let mut x_items = BTreeSet::new();
            let mut y_items = BTreeSet::new();
            for _ in 0..n {
                let mut id = [0u8; ID_LEN];
                id[..8].copy_from_slice(&rand().to_be_bytes());
                let k = ItemKey::new(rand() % 500, id);
                match rand() % 3 {
                    0 => {
                        x_items.insert(k);
                    }
                    1 => {
                        y_items.insert(k);
                    }
                    _ => {
                        x_items.insert(k);
                        y_items.insert(k);
                    }
                }
            }
            let x_vec: Vec<ItemKey> = x_items.iter().copied().collect();
            let y_vec: Vec<ItemKey> = y_items.iter().copied().collect();
            let x = VecStore::from_items(cfg, x_vec.clone());
            let y = AggBTree::from_items(cfg, y_vec.clone());
            let b = 2 + (rand() % 15) as u32;
            let t = 1 + rand() % 8;
            let params = ProtocolParams::new(b, t);
            let out = reconcile(&x, &y, &everything(), &params, false).unwrap();

            let (have, need) = brute_force_delta(&x_vec, &y_vec, &everything());
            assert_eq!(out.have, have, "case {case}");
            assert_eq!(out.need, need, "case {case}");

            // Tree shape: Q = I + L, L <= 1 + (b-1)I, K <= t * id-list leaves.
            let c = &out.counters;
            let leaves = c.skips + c.id_lists;
            assert_eq!(c.queried, c.splits + leaves);
            assert!(leaves <= 1 + u64::from(b - 1) * c.splits);
            assert!(c.listed_items <= t * c.id_lists);

            // Rounds bounded by the refinement depth.
            let max_n = x.size().max(y.size()).max(1);
            let mut depth = 0u32;
            let mut span = max_n;
            while span > t {
                span /= u64::from(b);
                depth += 1;
            }
            assert!(
                out.rounds <= depth + 2,
                "case {case}: rounds {} exceed bound {}",
                out.rounds,
                depth + 2
            );

            // Skip soundness: every skipped range had equal aggregates.
            for range in &out.skipped_ranges {
                assert_eq!(
                    x.aggregate(range.lo(), range.hi()).unwrap(),
                    y.aggregate(range.lo(), range.hi()).unwrap(),
                    "case {case}: unsound skip on {range:?}"
                );
            }
        }
    }

    #[test]
    fn window_reuse_preserves_transcripts_and_never_costs_more() {
        let mut state = 777u64;
        let mut rand = move || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            state
        };
        let cfg = SummaryConfig::identifier();
        for _ in 0..10 {
            let mut x_items = Vec::new();
            let mut y_items = Vec::new();
            for _ in 0..800 {
                let mut id = [0u8; ID_LEN];
                id[..8].copy_from_slice(&rand().to_be_bytes());
                let k = ItemKey::new(rand() % 10_000, id);
                match rand() % 4 {
                    0 => x_items.push(k),
                    1 => y_items.push(k),
                    _ => {
                        x_items.push(k);
                        y_items.push(k);
                    }
                }
            }
            let params = ProtocolParams::new(8, 4);
            let outer = everything();

            let x_plain = AggBTree::from_items(cfg, x_items.clone());
            let y_plain = AggBTree::from_items(cfg, y_items.clone());
            let plain = reconcile(&x_plain, &y_plain, &outer, &params, false).unwrap();
            let plain_reconcile_visits = plain.initiator_visits + plain.responder_visits;

            let x_win = AggBTree::from_items(cfg, x_items.clone());
            let y_win = AggBTree::from_items(cfg, y_items.clone());
            let windowed = reconcile(&x_win, &y_win, &outer, &params, true).unwrap();
            let win_visits = windowed.initiator_visits + windowed.responder_visits;

            assert_eq!(windowed.transcript_hash, plain.transcript_hash);
            assert_eq!(windowed.have, plain.have);
            assert_eq!(windowed.need, plain.need);
            assert_eq!(windowed.bytes_sent, plain.bytes_sent);
            assert!(
                win_visits <= plain_reconcile_visits,
                "windowed visits {win_visits} exceed plain {plain_reconcile_visits}"
            );
        }
    }

    #[test]
    fn mismatched_configs_are_rejected() {
        let x = VecStore::new(width8());
        let y = VecStore::new(SummaryConfig::identifier());
        assert!(matches!(
            reconcile(&x, &y, &everything(), &ProtocolParams::default(), false),
            Err(ProtocolError::ConfigMismatch)
        ));
    }
}
