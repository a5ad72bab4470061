//! The range-summarizable order-statistics store interface and the sorted
//! in-memory reference backend.
//!
//! Every backend answers the same five queries over a set of [`ItemKey`]s:
//! `size`, `aggregate(l, u)`, `rank(z)`, `select(r)`, and `enumerate(l, u)`,
//! plus set-semantics `insert`/`delete`. [`VecStore`] realizes the contract
//! with a plain sorted vector and is the correctness oracle the other
//! backends are tested against.

use std::cell::Cell;

use thiserror::Error;

use crate::aggregate::{Aggregate, SummaryConfig};
use crate::key::{Bound, ItemKey};

/// Failure of a store operation.
#[derive(Debug, Error)]
pub enum StoreError {
    #[error("range lower bound exceeds upper bound")]
    InvertedBounds,
    #[error("rank {index} out of range for store of size {size}")]
    OutOfRange { index: u64, size: u64 },
    #[error("rank interval [{lo}, {hi}) invalid for store of size {size}")]
    BadRankInterval { lo: u64, hi: u64, size: u64 },
    #[error("storage I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt page {page}: {reason}")]
    Corrupt { page: u64, reason: String },
    #[error("unsupported page size {0}")]
    UnsupportedPageSize(u32),
    #[error("refusing to create store over non-empty file")]
    CreateOverExisting,
    #[error("no valid meta block; not a paged store or both slots corrupt")]
    NoValidMeta,
    #[error("another writer already holds {0}")]
    WriterBusy(std::path::PathBuf),
}

/// Work counters for one store operation: node (or page) touches and leaf
/// entries scanned.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpStats {
    pub nodes_visited: u64,
    pub entries_scanned: u64,
}

/// Interior-mutability counters shared by the backends; queries take `&self`.
#[derive(Debug, Default)]
pub(crate) struct StatCounters {
    last_nodes: Cell<u64>,
    last_entries: Cell<u64>,
    total_nodes: Cell<u64>,
    total_entries: Cell<u64>,
}

impl StatCounters {
    pub fn begin_op(&self) {
        self.last_nodes.set(0);
        self.last_entries.set(0);
    }

    pub fn visit(&self) {
        self.visit_n(1);
    }

    pub fn visit_n(&self, n: u64) {
        self.last_nodes.set(self.last_nodes.get() + n);
        self.total_nodes.set(self.total_nodes.get() + n);
    }

    pub fn scan_n(&self, n: u64) {
        self.last_entries.set(self.last_entries.get() + n);
        self.total_entries.set(self.total_entries.get() + n);
    }

    pub fn last(&self) -> OpStats {
        OpStats {
            nodes_visited: self.last_nodes.get(),
            entries_scanned: self.last_entries.get(),
        }
    }

    pub fn total(&self) -> OpStats {
        OpStats {
            nodes_visited: self.total_nodes.get(),
            entries_scanned: self.total_entries.get(),
        }
    }
}

/// Read side of a range-summarizable order-statistics store.
pub trait Rsos {
    /// The summary configuration all aggregates of this store use.
    fn summary_config(&self) -> &SummaryConfig;

    /// Number of stored items.
    fn size(&self) -> u64;

    /// Aggregate over the members of `[lo, hi)`.
    fn aggregate(&self, lo: &Bound, hi: &Bound) -> Result<Aggregate, StoreError>;

    /// Aggregate over the items at rank positions `[lo, hi)`.
    fn aggregate_by_rank(&self, lo: u64, hi: u64) -> Result<Aggregate, StoreError>;

    /// Number of items strictly below `bound`.
    fn rank(&self, bound: &Bound) -> Result<u64, StoreError>;

    /// The `index`-th smallest item (0-indexed).
    fn select(&self, index: u64) -> Result<ItemKey, StoreError>;

    /// Sorted members of `[lo, hi)`.
    fn enumerate(&self, lo: &Bound, hi: &Bound) -> Result<Vec<ItemKey>, StoreError>;

    /// Monotone snapshot version; bumped by every committed mutation.
    fn version(&self) -> u64;

    /// Counters for the most recent operation.
    fn last_stats(&self) -> OpStats;

    /// Cumulative counters since the store was created.
    fn total_stats(&self) -> OpStats;
}

/// Mutation side of a store; set semantics.
pub trait RsosMut: Rsos {
    /// Inserts `key`, returning `true` when it was not already present.
    fn insert(&mut self, key: ItemKey) -> Result<bool, StoreError>;

    /// Deletes `key`, returning `true` when it was present.
    fn delete(&mut self, key: &ItemKey) -> Result<bool, StoreError>;
}

pub(crate) fn check_bounds(lo: &Bound, hi: &Bound) -> Result<(), StoreError> {
    if lo > hi {
        return Err(StoreError::InvertedBounds);
    }
    Ok(())
}

/// Reference backend over a sorted vector. Queries cost `O(n)` in the worst
/// case; the point of this store is to be obviously correct, not fast.
#[derive(Debug)]
pub struct VecStore {
    cfg: SummaryConfig,
    items: Vec<ItemKey>,
    version: u64,
    stats: StatCounters,
}

impl VecStore {
    pub fn new(cfg: SummaryConfig) -> Self {
        Self {
            cfg,
            items: Vec::new(),
            version: 0,
            stats: StatCounters::default(),
        }
    }

    /// Bulk constructor: sorts and deduplicates `items`.
    pub fn from_items(cfg: SummaryConfig, mut items: Vec<ItemKey>) -> Self {
        items.sort_unstable();
        items.dedup();
        Self {
            cfg,
            items,
            version: 0,
            stats: StatCounters::default(),
        }
    }

    pub fn items(&self) -> &[ItemKey] {
        &self.items
    }

    /// Index of the first item at or above `bound`; equals the rank.
    fn rank_index(&self, bound: &Bound) -> usize {
        match bound {
            Bound::MinusInfinity => 0,
            Bound::PlusInfinity => self.items.len(),
            Bound::Key(k) => self.items.partition_point(|x| x < k),
        }
    }
}

impl Rsos for VecStore {
    fn summary_config(&self) -> &SummaryConfig {
        &self.cfg
    }

    fn size(&self) -> u64 {
        self.items.len() as u64
    }

    fn aggregate(&self, lo: &Bound, hi: &Bound) -> Result<Aggregate, StoreError> {
        check_bounds(lo, hi)?;
        self.stats.begin_op();
        self.stats.visit();
        let (a, b) = (self.rank_index(lo), self.rank_index(hi));
        self.stats.scan_n((b - a) as u64);
        Ok(Aggregate::of_items(&self.items[a..b], &self.cfg))
    }

    fn aggregate_by_rank(&self, lo: u64, hi: u64) -> Result<Aggregate, StoreError> {
        if lo > hi || hi > self.size() {
            return Err(StoreError::BadRankInterval {
                lo,
                hi,
                size: self.size(),
            });
        }
        self.stats.begin_op();
        self.stats.visit();
        self.stats.scan_n(hi - lo);
        Ok(Aggregate::of_items(
            &self.items[lo as usize..hi as usize],
            &self.cfg,
        ))
    }

    fn rank(&self, bound: &Bound) -> Result<u64, StoreError> {
        self.stats.begin_op();
        self.stats.visit();
        Ok(self.rank_index(bound) as u64)
    }

    fn select(&self, index: u64) -> Result<ItemKey, StoreError> {
        self.stats.begin_op();
        self.stats.visit();
        self.items
            .get(index as usize)
            .copied()
            .ok_or(StoreError::OutOfRange {
                index,
                size: self.size(),
            })
    }

    fn enumerate(&self, lo: &Bound, hi: &Bound) -> Result<Vec<ItemKey>, StoreError> {
        check_bounds(lo, hi)?;
        self.stats.begin_op();
        self.stats.visit();
        let (a, b) = (self.rank_index(lo), self.rank_index(hi));
        self.stats.scan_n((b - a) as u64);
        Ok(self.items[a..b].to_vec())
    }

    fn version(&self) -> u64 {
        self.version
    }

    fn last_stats(&self) -> OpStats {
        self.stats.last()
    }

    fn total_stats(&self) -> OpStats {
        self.stats.total()
    }
}

impl RsosMut for VecStore {
    fn insert(&mut self, key: ItemKey) -> Result<bool, StoreError> {
        self.stats.begin_op();
        self.stats.visit();
        match self.items.binary_search(&key) {
            Ok(_) => Ok(false),
            Err(pos) => {
                self.items.insert(pos, key);
                self.version += 1;
                Ok(true)
            }
        }
    }

    fn delete(&mut self, key: &ItemKey) -> Result<bool, StoreError> {
        self.stats.begin_op();
        self.stats.visit();
        match self.items.binary_search(key) {
            Ok(pos) => {
                self.items.remove(pos);
                self.version += 1;
                Ok(true)
            }
            Err(_) => Ok(false),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::key::ID_LEN;
    use std::collections::BTreeSet;

    fn byte_key(timestamp: u64, first: u8) -> ItemKey {
        let mut id = [0u8; ID_LEN];
        id[0] = first;
        ItemKey::new(timestamp, id)
    }

    fn width8() -> SummaryConfig {
        SummaryConfig::new(8, 8, 1).unwrap()
    }

    /// The worked four-record replica state.
    fn example_store() -> VecStore {
        let mut s = VecStore::new(width8());
        for k in [
            byte_key(10, 0xa1),
            byte_key(10, 0xf3),
            byte_key(11, 0x1c),
            byte_key(13, 0x7b),
        ] {
            assert!(s.insert(k).unwrap());
        }
        s
    }

    #[test]
    fn size_counts_items() {
        let mut s = VecStore::new(width8());
        assert_eq!(s.size(), 0);
        assert_eq!(example_store().size(), 4);
        for i in 0..100u8 {
            assert!(s.insert(byte_key(u64::from(i), i)).unwrap());
        }
        assert_eq!(s.size(), 100);
    }

    #[test]
    fn aggregate_over_example_range() {
        let s = example_store();
        let lo = Bound::Key(ItemKey::at_timestamp(10));
        let hi = Bound::Key(ItemKey::at_timestamp(13));
        let agg = s.aggregate(&lo, &hi).unwrap();
        assert_eq!(agg.count, 3);
        assert_eq!(agg.summary.as_le_bytes(), &[0xb0]);

        let empty = s.aggregate(&lo, &lo).unwrap();
        assert!(empty.is_empty());
        assert!(s.aggregate(&hi, &lo).is_err());
    }

    #[test]
    fn rank_and_select_on_example() {
        let s = example_store();
        assert_eq!(s.rank(&Bound::MinusInfinity).unwrap(), 0);
        assert_eq!(s.rank(&Bound::PlusInfinity).unwrap(), 4);
        // Two records precede (11, 1c..).
        assert_eq!(s.rank(&Bound::Key(byte_key(11, 0x1c))).unwrap(), 2);
        assert_eq!(s.select(2).unwrap(), byte_key(11, 0x1c));
        assert!(matches!(
            s.select(4),
            Err(StoreError::OutOfRange { index: 4, size: 4 })
        ));

        let single = VecStore::from_items(width8(), vec![byte_key(5, 9)]);
        assert_eq!(single.select(0).unwrap(), byte_key(5, 9));
    }

    #[test]
    fn enumerate_on_example() {
        let s = example_store();
        let all = s
            .enumerate(&Bound::MinusInfinity, &Bound::PlusInfinity)
            .unwrap();
        assert_eq!(all.len(), 4);
        assert!(all.windows(2).all(|w| w[0] < w[1]));
        let x = Bound::Key(byte_key(11, 0x1c));
        assert!(s.enumerate(&x, &x).unwrap().is_empty());
    }

    #[test]
    fn set_semantics() {
        let mut s = VecStore::new(width8());
        let k = byte_key(3, 3);
        assert!(s.insert(k).unwrap());
        assert!(!s.insert(k).unwrap());
        assert_eq!(s.size(), 1);
        assert!(!s.delete(&byte_key(4, 4)).unwrap());
        assert!(s.delete(&k).unwrap());
        assert_eq!(s.size(), 0);
    }

    #[test]
    fn version_bumps_only_on_effective_mutation() {
        let mut s = VecStore::new(width8());
        let k = byte_key(1, 1);
        assert_eq!(s.version(), 0);
        s.insert(k).unwrap();
        assert_eq!(s.version(), 1);
        s.insert(k).unwrap();
        assert_eq!(s.version(), 1);
        s.delete(&k).unwrap();
        assert_eq!(s.version(), 2);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        /// Small key space so scripts hit duplicates and absent deletes.
        fn small_key() -> impl Strategy<Value = ItemKey> {
            (0u64..32, 0u8..8).prop_map(|(t, b)| byte_key(t, b))
        }

        fn arb_bound() -> impl Strategy<Value = Bound> {
            prop_oneof![
                Just(Bound::MinusInfinity),
                Just(Bound::PlusInfinity),
                small_key().prop_map(Bound::Key),
            ]
        }

        proptest! {
            // The reference store against direct set-comprehension
            // re-implementations of the contract.
            #[test]
            fn matches_set_comprehension_definitions(
                keys in proptest::collection::vec(small_key(), 0..80),
                deletes in proptest::collection::vec(small_key(), 0..40),
                lo in arb_bound(),
                hi in arb_bound(),
            ) {
                let cfg = width8();
                let mut store = VecStore::new(cfg);
                let mut model: BTreeSet<ItemKey> = BTreeSet::new();
                for k in keys {
                    prop_assert_eq!(store.insert(k).unwrap(), model.insert(k));
                }
                for k in &deletes {
                    prop_assert_eq!(store.delete(k).unwrap(), model.remove(k));
                }
                prop_assert_eq!(store.size(), model.len() as u64);

                let in_order: Vec<ItemKey> = model.iter().copied().collect();
                for (r, k) in in_order.iter().enumerate() {
                    prop_assert_eq!(store.select(r as u64).unwrap(), *k);
                    prop_assert_eq!(store.rank(&Bound::Key(*k)).unwrap(), r as u64);
                }

                let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
                let members: Vec<ItemKey> =
                    in_order.iter().copied().filter(|k| lo.le_key(k) && hi.gt_key(k)).collect();
                prop_assert_eq!(store.enumerate(&lo, &hi).unwrap(), members.clone());
                prop_assert_eq!(
                    store.aggregate(&lo, &hi).unwrap(),
                    Aggregate::of_items(&members, &cfg)
                );
                let below = in_order.iter().filter(|k| lo.gt_key(k)).count() as u64;
                prop_assert_eq!(store.rank(&lo).unwrap(), below);
            }

            // aggregate(l, u) = aggregate(l, m) (+) aggregate(m, u).
            #[test]
            fn aggregates_compose_at_any_midpoint(
                keys in proptest::collection::btree_set(small_key(), 0..60),
                a in arb_bound(),
                b in arb_bound(),
                c in arb_bound(),
            ) {
                let mut cuts = [a, b, c];
                cuts.sort();
                let [lo, mid, hi] = cuts;
                let store = VecStore::from_items(width8(), keys.into_iter().collect());
                let whole = store.aggregate(&lo, &hi).unwrap();
                let parts = store
                    .aggregate(&lo, &mid).unwrap()
                    .combine(&store.aggregate(&mid, &hi).unwrap())
                    .unwrap();
                prop_assert_eq!(whole, parts);
            }

            #[test]
            fn select_inverts_rank_for_stored_keys(
                keys in proptest::collection::btree_set(small_key(), 1..60),
            ) {
                let store = VecStore::from_items(width8(), keys.iter().copied().collect());
                for k in &keys {
                    let r = store.rank(&Bound::Key(*k)).unwrap();
                    prop_assert_eq!(store.select(r).unwrap(), *k);
                }
            }

            #[test]
            fn aggregate_by_rank_matches_key_bounds(
                keys in proptest::collection::btree_set(small_key(), 0..60),
                cuts in (0u64..61, 0u64..61),
            ) {
                let store = VecStore::from_items(width8(), keys.into_iter().collect());
                let n = store.size();
                let (mut lo, mut hi) = (cuts.0.min(n), cuts.1.min(n));
                if lo > hi {
                    std::mem::swap(&mut lo, &mut hi);
                }
                let by_rank = store.aggregate_by_rank(lo, hi).unwrap();
                let lo_b = if lo == n { Bound::PlusInfinity } else { Bound::Key(store.select(lo).unwrap()) };
                let hi_b = if hi == n { Bound::PlusInfinity } else { Bound::Key(store.select(hi).unwrap()) };
                prop_assert_eq!(by_rank, store.aggregate(&lo_b, &hi_b).unwrap());
            }
        }
    }
}
