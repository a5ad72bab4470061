//! In-memory aggregate-augmented B+-tree.
//!
//! Every child reference of a branch node carries the cached aggregate of
//! that child's subtree, so range aggregates combine cached values along the
//! two boundary search paths, and rank/select navigate by the cached counts.
//! Leaves are chained in key order for sequential enumeration.
//!
//! Nodes live in an arena indexed by `usize`; freed slots are recycled
//! through a free list.

use crate::aggregate::{Aggregate, SummaryConfig};
use crate::key::{Bound, ItemKey};
use crate::store::{check_bounds, OpStats, Rsos, RsosMut, StatCounters, StoreError};

const DEFAULT_ORDER: usize = 16;
const MIN_ORDER: usize = 4;
const MAX_ORDER: usize = 256;

type NodeId = usize;

#[derive(Debug)]
enum Node {
    Leaf {
        keys: Vec<ItemKey>,
        next: Option<NodeId>,
    },
    Branch {
        /// Separator for child `i` is the smallest key in its subtree.
        seps: Vec<ItemKey>,
        children: Vec<NodeId>,
        /// Cached aggregate of each child's descendant items.
        aggs: Vec<Aggregate>,
    },
    Vacant,
}

enum Ins {
    Duplicate,
    Done,
    Split { right: NodeId, right_sep: ItemKey },
}

enum Del {
    NotFound,
    Removed,
}

/// Aggregate-augmented B+-tree backend.
#[derive(Debug)]
pub struct AggBTree {
    cfg: SummaryConfig,
    order: usize,
    root: Option<NodeId>,
    /// Number of levels; a lone leaf root is height 1, empty tree height 0.
    height: usize,
    len: u64,
    version: u64,
    nodes: Vec<Node>,
    free: Vec<NodeId>,
    stats: StatCounters,
}

impl AggBTree {
    pub fn new(cfg: SummaryConfig) -> Self {
        Self::with_order(cfg, DEFAULT_ORDER)
    }

    /// Tree with a specific fanout bound `order` (max children per branch
    /// and max keys per leaf), between 4 and 256.
    pub fn with_order(cfg: SummaryConfig, order: usize) -> Self {
        assert!(
            (MIN_ORDER..=MAX_ORDER).contains(&order),
            "order must be in [{MIN_ORDER}, {MAX_ORDER}]"
        );
        Self {
            cfg,
            order,
            root: None,
            height: 0,
            len: 0,
            version: 0,
            nodes: Vec::new(),
            free: Vec::new(),
            stats: StatCounters::default(),
        }
    }

    pub fn from_items(cfg: SummaryConfig, items: Vec<ItemKey>) -> Self {
        let mut tree = Self::new(cfg);
        for key in items {
            tree.insert(key).expect("in-memory insert is infallible");
        }
        tree
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn height(&self) -> usize {
        self.height
    }

    fn min_occupancy(&self) -> usize {
        self.order.div_ceil(2)
    }

    fn alloc(&mut self, node: Node) -> NodeId {
        if let Some(id) = self.free.pop() {
            self.nodes[id] = node;
            id
        } else {
            self.nodes.push(node);
            self.nodes.len() - 1
        }
    }

    fn release(&mut self, id: NodeId) {
        self.nodes[id] = Node::Vacant;
        self.free.push(id);
    }

    fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    /// Smallest key in the subtree rooted at `id`.
    fn subtree_min(&self, id: NodeId) -> ItemKey {
        match self.node(id) {
            Node::Leaf { keys, .. } => keys[0],
            Node::Branch { seps, .. } => seps[0],
            Node::Vacant => unreachable!("vacant node reached"),
        }
    }

    /// Aggregate of the subtree rooted at `id`, recomputed from one level
    /// of cached information.
    fn subtree_agg(&self, id: NodeId) -> Aggregate {
        let mut acc = Aggregate::identity(self.cfg.width_bits());
        match self.node(id) {
            Node::Leaf { keys, .. } => {
                for k in keys {
                    acc.push(k, &self.cfg);
                }
            }
            Node::Branch { aggs, .. } => {
                for a in aggs {
                    acc.merge(a);
                }
            }
            Node::Vacant => unreachable!("vacant node reached"),
        }
        acc
    }

    fn entry_count(&self, id: NodeId) -> usize {
        match self.node(id) {
            Node::Leaf { keys, .. } => keys.len(),
            Node::Branch { children, .. } => children.len(),
            Node::Vacant => unreachable!("vacant node reached"),
        }
    }

    /// Child to follow for `key`: the last child whose separator is at or
    /// below it, or the first child when `key` sorts before every separator.
    fn route_key(seps: &[ItemKey], key: &ItemKey) -> usize {
        seps.partition_point(|s| s <= key).saturating_sub(1)
    }

    fn route_bound(seps: &[ItemKey], bound: &Bound) -> usize {
        seps.partition_point(|s| Bound::Key(*s) <= *bound)
            .saturating_sub(1)
    }

    fn insert_rec(&mut self, id: NodeId, key: ItemKey) -> Ins {
        self.stats.visit();
        match &mut self.nodes[id] {
            Node::Leaf { keys, next } => {
                let pos = keys.partition_point(|k| k < &key);
                if keys.get(pos) == Some(&key) {
                    return Ins::Duplicate;
                }
                keys.insert(pos, key);
                if keys.len() <= self.order {
                    return Ins::Done;
                }
                let split_at = keys.len().div_ceil(2);
                let right_keys = keys.split_off(split_at);
                let right_sep = right_keys[0];
                let old_next = *next;
                let right = self.alloc(Node::Leaf {
                    keys: right_keys,
                    next: old_next,
                });
                self.stats.visit();
                let Node::Leaf { next, .. } = &mut self.nodes[id] else {
                    unreachable!()
                };
                *next = Some(right);
                Ins::Split { right, right_sep }
            }
            Node::Branch { seps, children, .. } => {
                let i = Self::route_key(seps, &key);
                let child = children[i];
                match self.insert_rec(child, key) {
                    Ins::Duplicate => Ins::Duplicate,
                    Ins::Done => {
                        // Exactly one key joined child i's subtree; fold its
                        // contribution into the cached entry.
                        let delta = Aggregate::of_item(&key, &self.cfg);
                        let Node::Branch { seps, aggs, .. } = &mut self.nodes[id] else {
                            unreachable!()
                        };
                        aggs[i].merge(&delta);
                        if key < seps[i] {
                            seps[i] = key;
                        }
                        Ins::Done
                    }
                    Ins::Split { right, right_sep } => {
                        let child_agg = self.subtree_agg(child);
                        let child_min = self.subtree_min(child);
                        let right_agg = self.subtree_agg(right);
                        let Node::Branch {
                            seps,
                            children,
                            aggs,
                        } = &mut self.nodes[id]
                        else {
                            unreachable!()
                        };
                        aggs[i] = child_agg;
                        seps[i] = child_min;
                        children.insert(i + 1, right);
                        seps.insert(i + 1, right_sep);
                        aggs.insert(i + 1, right_agg);
                        if children.len() > self.order {
                            let split_at = children.len().div_ceil(2);
                            let r_children = children.split_off(split_at);
                            let r_seps = seps.split_off(split_at);
                            let r_aggs = aggs.split_off(split_at);
                            let right_sep = r_seps[0];
                            let right = self.alloc(Node::Branch {
                                seps: r_seps,
                                children: r_children,
                                aggs: r_aggs,
                            });
                            self.stats.visit();
                            return Ins::Split { right, right_sep };
                        }
                        Ins::Done
                    }
                }
            }
            Node::Vacant => unreachable!("vacant node reached"),
        }
    }

    fn delete_rec(&mut self, id: NodeId, key: &ItemKey) -> Del {
        self.stats.visit();
        match &mut self.nodes[id] {
            Node::Leaf { keys, .. } => match keys.binary_search(key) {
                Ok(pos) => {
                    keys.remove(pos);
                    Del::Removed
                }
                Err(_) => Del::NotFound,
            },
            Node::Branch { seps, children, .. } => {
                let i = Self::route_key(seps, key);
                let child = children[i];
                if matches!(self.delete_rec(child, key), Del::NotFound) {
                    return Del::NotFound;
                }
                let child_agg = self.subtree_agg(child);
                let child_min = self.subtree_min(child);
                let Node::Branch { seps, aggs, .. } = &mut self.nodes[id] else {
                    unreachable!()
                };
                aggs[i] = child_agg;
                seps[i] = child_min;
                if self.entry_count(child) < self.min_occupancy() {
                    self.rebalance(id, i);
                }
                Del::Removed
            }
            Node::Vacant => unreachable!("vacant node reached"),
        }
    }

    /// Restores occupancy of child `i` of `parent` by borrowing from a
    /// sibling when one is above minimum, merging otherwise.
    fn rebalance(&mut self, parent: NodeId, i: usize) {
        let Node::Branch { children, .. } = self.node(parent) else {
            unreachable!()
        };
        let n_children = children.len();
        let min = self.min_occupancy();

        if i > 0 {
            let left = self.child_at(parent, i - 1);
            if self.entry_count(left) > min {
                self.shift_from_left(parent, i);
                return;
            }
        }
        if i + 1 < n_children {
            let right = self.child_at(parent, i + 1);
            if self.entry_count(right) > min {
                self.shift_from_right(parent, i);
                return;
            }
        }
        if i > 0 {
            self.merge_children(parent, i - 1);
        } else {
            self.merge_children(parent, i);
        }
    }

    fn child_at(&self, parent: NodeId, i: usize) -> NodeId {
        let Node::Branch { children, .. } = self.node(parent) else {
            unreachable!()
        };
        children[i]
    }

    /// Moves the last entry of child `i - 1` to the front of child `i`.
    fn shift_from_left(&mut self, parent: NodeId, i: usize) {
        let donor = self.child_at(parent, i - 1);
        let recipient = self.child_at(parent, i);
        self.stats.visit_n(2);
        match self.take_last(donor) {
            Moved::Key(k) => {
                let Node::Leaf { keys, .. } = &mut self.nodes[recipient] else {
                    unreachable!()
                };
                keys.insert(0, k);
            }
            Moved::Entry { child, sep, agg } => {
                let Node::Branch {
                    seps,
                    children,
                    aggs,
                } = &mut self.nodes[recipient]
                else {
                    unreachable!()
                };
                children.insert(0, child);
                seps.insert(0, sep);
                aggs.insert(0, agg);
            }
        }
        self.refresh_parent_entry(parent, i - 1);
        self.refresh_parent_entry(parent, i);
    }

    /// Moves the first entry of child `i + 1` to the back of child `i`.
    fn shift_from_right(&mut self, parent: NodeId, i: usize) {
        let donor = self.child_at(parent, i + 1);
        let recipient = self.child_at(parent, i);
        self.stats.visit_n(2);
        match self.take_first(donor) {
            Moved::Key(k) => {
                let Node::Leaf { keys, .. } = &mut self.nodes[recipient] else {
                    unreachable!()
                };
                keys.push(k);
            }
            Moved::Entry { child, sep, agg } => {
                let Node::Branch {
                    seps,
                    children,
                    aggs,
                } = &mut self.nodes[recipient]
                else {
                    unreachable!()
                };
                children.push(child);
                seps.push(sep);
                aggs.push(agg);
            }
        }
        self.refresh_parent_entry(parent, i);
        self.refresh_parent_entry(parent, i + 1);
    }

    fn take_last(&mut self, id: NodeId) -> Moved {
        match &mut self.nodes[id] {
            Node::Leaf { keys, .. } => Moved::Key(keys.pop().expect("donor not empty")),
            Node::Branch {
                seps,
                children,
                aggs,
            } => Moved::Entry {
                child: children.pop().expect("donor not empty"),
                sep: seps.pop().expect("donor not empty"),
                agg: aggs.pop().expect("donor not empty"),
            },
            Node::Vacant => unreachable!("vacant node reached"),
        }
    }

    fn take_first(&mut self, id: NodeId) -> Moved {
        match &mut self.nodes[id] {
            Node::Leaf { keys, .. } => Moved::Key(keys.remove(0)),
            Node::Branch {
                seps,
                children,
                aggs,
            } => Moved::Entry {
                child: children.remove(0),
                sep: seps.remove(0),
                agg: aggs.remove(0),
            },
            Node::Vacant => unreachable!("vacant node reached"),
        }
    }

    /// Merges child `i + 1` of `parent` into child `i` and drops its entry.
    fn merge_children(&mut self, parent: NodeId, i: usize) {
        let left = self.child_at(parent, i);
        let right = self.child_at(parent, i + 1);
        self.stats.visit_n(2);
        let absorbed = std::mem::replace(&mut self.nodes[right], Node::Vacant);
        match (&mut self.nodes[left], absorbed) {
            (Node::Leaf { keys, next }, Node::Leaf { keys: rk, next: rn }) => {
                keys.extend(rk);
                *next = rn;
            }
            (
                Node::Branch {
                    seps,
                    children,
                    aggs,
                },
                Node::Branch {
                    seps: rs,
                    children: rc,
                    aggs: ra,
                },
            ) => {
                seps.extend(rs);
                children.extend(rc);
                aggs.extend(ra);
            }
            _ => unreachable!("sibling levels differ"),
        }
        self.free.push(right);
        let Node::Branch {
            seps,
            children,
            aggs,
        } = &mut self.nodes[parent]
        else {
            unreachable!()
        };
        children.remove(i + 1);
        seps.remove(i + 1);
        aggs.remove(i + 1);
        self.refresh_parent_entry(parent, i);
    }

    fn refresh_parent_entry(&mut self, parent: NodeId, i: usize) {
        let child = self.child_at(parent, i);
        let agg = self.subtree_agg(child);
        let min = self.subtree_min(child);
        let Node::Branch { seps, aggs, .. } = &mut self.nodes[parent] else {
            unreachable!()
        };
        aggs[i] = agg;
        seps[i] = min;
    }

    fn agg_walk(&self, id: NodeId, lo: &Bound, hi: &Bound, upper: &Bound, acc: &mut Aggregate) {
        self.stats.visit();
        match self.node(id) {
            Node::Leaf { keys, .. } => {
                let a = keys.partition_point(|k| lo.gt_key(k));
                let b = keys.partition_point(|k| hi.gt_key(k));
                self.stats.scan_n((b - a) as u64);
                for k in &keys[a..b] {
                    acc.push(k, &self.cfg);
                }
            }
            Node::Branch {
                seps,
                children,
                aggs,
            } => {
                for i in 0..children.len() {
                    let child_lo = Bound::Key(seps[i]);
                    let child_hi = if i + 1 < seps.len() {
                        Bound::Key(seps[i + 1])
                    } else {
                        *upper
                    };
                    if child_hi <= *lo || *hi <= child_lo {
                        continue;
                    }
                    if *lo <= child_lo && child_hi <= *hi {
                        acc.merge(&aggs[i]);
                    } else {
                        self.agg_walk(children[i], lo, hi, &child_hi, acc);
                    }
                }
            }
            Node::Vacant => unreachable!("vacant node reached"),
        }
    }

    fn agg_rank_walk(&self, id: NodeId, lo: u64, hi: u64, acc: &mut Aggregate) {
        self.stats.visit();
        match self.node(id) {
            Node::Leaf { keys, .. } => {
                self.stats.scan_n(hi - lo);
                for k in &keys[lo as usize..hi as usize] {
                    acc.push(k, &self.cfg);
                }
            }
            Node::Branch { children, aggs, .. } => {
                let mut offset = 0u64;
                for (i, agg) in aggs.iter().enumerate() {
                    let end = offset + agg.count;
                    if hi > offset && end > lo {
                        if lo <= offset && end <= hi {
                            acc.merge(agg);
                        } else {
                            self.agg_rank_walk(
                                children[i],
                                lo.max(offset) - offset,
                                hi.min(end) - offset,
                                acc,
                            );
                        }
                    }
                    offset = end;
                }
            }
            Node::Vacant => unreachable!("vacant node reached"),
        }
    }

    /// Recomputes every cached aggregate bottom-up and checks it together
    /// with fanout bounds, key ordering, separator correctness, and leaf
    /// chain continuity. Returns the list of violations; empty means ok.
    pub fn validate(&self) -> Vec<String> {
        let mut violations = Vec::new();
        let Some(root) = self.root else {
            if self.len != 0 {
                violations.push(format!("empty tree with recorded size {}", self.len));
            }
            return violations;
        };
        let mut leaves = Vec::new();
        let summary = self.validate_walk(root, 1, true, &mut leaves, &mut violations);
        if let Some((agg, _, _)) = summary {
            if agg.count != self.len {
                violations.push(format!(
                    "tree size {} disagrees with root aggregate count {}",
                    self.len, agg.count
                ));
            }
        }
        // Leaf chain must visit exactly the in-order leaves.
        let mut chained = Vec::new();
        let mut cursor = leaves.first().copied();
        while let Some(id) = cursor {
            chained.push(id);
            if chained.len() > leaves.len() {
                violations.push("leaf chain longer than leaf count".to_string());
                break;
            }
            cursor = match self.node(id) {
                Node::Leaf { next, .. } => *next,
                _ => {
                    violations.push(format!("leaf chain reaches non-leaf node {id}"));
                    break;
                }
            };
        }
        if chained != leaves {
            violations.push("leaf chain does not match in-order leaves".to_string());
        }
        violations
    }

    /// Returns `(aggregate, min, max)` of the subtree, or `None` when the
    /// subtree is too broken to summarize.
    fn validate_walk(
        &self,
        id: NodeId,
        depth: usize,
        is_root: bool,
        leaves: &mut Vec<NodeId>,
        violations: &mut Vec<String>,
    ) -> Option<(Aggregate, ItemKey, ItemKey)> {
        match self.node(id) {
            Node::Leaf { keys, .. } => {
                leaves.push(id);
                if depth != self.height {
                    violations.push(format!(
                        "leaf {id} at depth {depth}, expected {}",
                        self.height
                    ));
                }
                if !is_root && keys.len() < self.min_occupancy() {
                    violations.push(format!("leaf {id} underfull: {} keys", keys.len()));
                }
                if keys.len() > self.order {
                    violations.push(format!("leaf {id} overfull: {} keys", keys.len()));
                }
                if keys.is_empty() {
                    violations.push(format!("leaf {id} empty"));
                    return None;
                }
                if !keys.windows(2).all(|w| w[0] < w[1]) {
                    violations.push(format!("leaf {id} keys not strictly ascending"));
                }
                Some((
                    Aggregate::of_items(keys, &self.cfg),
                    keys[0],
                    *keys.last().unwrap(),
                ))
            }
            Node::Branch {
                seps,
                children,
                aggs,
            } => {
                let fanout = children.len();
                if !is_root && fanout < self.min_occupancy() {
                    violations.push(format!("branch {id} underfull: {fanout} children"));
                }
                if is_root && fanout < 2 {
                    violations.push(format!("root branch {id} has {fanout} children"));
                }
                if fanout > self.order {
                    violations.push(format!("branch {id} overfull: {fanout} children"));
                }
                let mut acc = Aggregate::identity(self.cfg.width_bits());
                let mut min_key = None;
                let mut prev_max: Option<ItemKey> = None;
                for i in 0..fanout {
                    let Some((agg, lo, hi)) =
                        self.validate_walk(children[i], depth + 1, false, leaves, violations)
                    else {
                        continue;
                    };
                    if aggs[i] != agg {
                        violations.push(format!(
                            "branch {id} child {i}: cached aggregate {:?} != recomputed {:?}",
                            aggs[i], agg
                        ));
                    }
                    if seps[i] != lo {
                        violations.push(format!(
                            "branch {id} child {i}: separator {:?} != subtree min {:?}",
                            seps[i], lo
                        ));
                    }
                    if let Some(pm) = prev_max {
                        if pm >= lo {
                            violations
                                .push(format!("branch {id}: child {i} overlaps previous child"));
                        }
                    }
                    prev_max = Some(hi);
                    min_key.get_or_insert(lo);
                    acc.merge(&agg);
                }
                Some((acc, min_key?, prev_max?))
            }
            Node::Vacant => {
                violations.push(format!("live reference to vacant node {id}"));
                None
            }
        }
    }

    #[cfg(test)]
    pub(crate) fn corrupt_one_cached_count(&mut self) -> bool {
        for node in self.nodes.iter_mut() {
            if let Node::Branch { aggs, .. } = node {
                aggs[0].count += 1;
                return true;
            }
        }
        false
    }

    /// Snapshot of every branch node's cached aggregate vector, for
    /// update-locality checks.
    #[cfg(test)]
    pub(crate) fn cached_aggregate_snapshot(&self) -> Vec<(NodeId, Vec<Aggregate>)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(id, n)| match n {
                Node::Branch { aggs, .. } => Some((id, aggs.clone())),
                _ => None,
            })
            .collect()
    }
}

enum Moved {
    Key(ItemKey),
    Entry {
        child: NodeId,
        sep: ItemKey,
        agg: Aggregate,
    },
}

impl Rsos for AggBTree {
    fn summary_config(&self) -> &SummaryConfig {
        &self.cfg
    }

    fn size(&self) -> u64 {
        self.len
    }

    fn aggregate(&self, lo: &Bound, hi: &Bound) -> Result<Aggregate, StoreError> {
        check_bounds(lo, hi)?;
        self.stats.begin_op();
        let mut acc = Aggregate::identity(self.cfg.width_bits());
        if let Some(root) = self.root {
            if lo < hi {
                self.agg_walk(root, lo, hi, &Bound::PlusInfinity, &mut acc);
            }
        }
        Ok(acc)
    }

    fn aggregate_by_rank(&self, lo: u64, hi: u64) -> Result<Aggregate, StoreError> {
        if lo > hi || hi > self.len {
            return Err(StoreError::BadRankInterval {
                lo,
                hi,
                size: self.len,
            });
        }
        self.stats.begin_op();
        let mut acc = Aggregate::identity(self.cfg.width_bits());
        if let Some(root) = self.root {
            if lo < hi {
                self.agg_rank_walk(root, lo, hi, &mut acc);
            }
        }
        Ok(acc)
    }

    fn rank(&self, bound: &Bound) -> Result<u64, StoreError> {
        self.stats.begin_op();
        let Some(mut id) = self.root else {
            return Ok(0);
        };
        let mut acc = 0u64;
        loop {
            self.stats.visit();
            match self.node(id) {
                Node::Leaf { keys, .. } => {
                    return Ok(acc + keys.partition_point(|k| bound.gt_key(k)) as u64);
                }
                Node::Branch {
                    seps,
                    children,
                    aggs,
                } => {
                    let i = Self::route_bound(seps, bound);
                    acc += aggs[..i].iter().map(|a| a.count).sum::<u64>();
                    id = children[i];
                }
                Node::Vacant => unreachable!("vacant node reached"),
            }
        }
    }

    fn select(&self, index: u64) -> Result<ItemKey, StoreError> {
        if index >= self.len {
            return Err(StoreError::OutOfRange {
                index,
                size: self.len,
            });
        }
        self.stats.begin_op();
        let mut id = self.root.expect("nonempty tree has a root");
        let mut residual = index;
        loop {
            self.stats.visit();
            match self.node(id) {
                Node::Leaf { keys, .. } => return Ok(keys[residual as usize]),
                Node::Branch { children, aggs, .. } => {
                    let mut i = 0;
                    while residual >= aggs[i].count {
                        residual -= aggs[i].count;
                        i += 1;
                    }
                    id = children[i];
                }
                Node::Vacant => unreachable!("vacant node reached"),
            }
        }
    }

    fn enumerate(&self, lo: &Bound, hi: &Bound) -> Result<Vec<ItemKey>, StoreError> {
        check_bounds(lo, hi)?;
        self.stats.begin_op();
        let mut out = Vec::new();
        let Some(mut id) = self.root else {
            return Ok(out);
        };
        loop {
            self.stats.visit();
            match self.node(id) {
                Node::Branch { seps, children, .. } => id = children[Self::route_bound(seps, lo)],
                Node::Leaf { .. } => break,
                Node::Vacant => unreachable!("vacant node reached"),
            }
        }
        let mut start = match self.node(id) {
            Node::Leaf { keys, .. } => keys.partition_point(|k| lo.gt_key(k)),
            _ => unreachable!(),
        };
        loop {
            let Node::Leaf { keys, next } = self.node(id) else {
                unreachable!()
            };
            for k in &keys[start..] {
                self.stats.scan_n(1);
                if !hi.gt_key(k) {
                    return Ok(out);
                }
                out.push(*k);
            }
            match next {
                Some(n) => {
                    id = *n;
                    start = 0;
                    self.stats.visit();
                }
                None => return Ok(out),
            }
        }
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

impl RsosMut for AggBTree {
    fn insert(&mut self, key: ItemKey) -> Result<bool, StoreError> {
        self.stats.begin_op();
        let Some(root) = self.root else {
            let id = self.alloc(Node::Leaf {
                keys: vec![key],
                next: None,
            });
            self.stats.visit();
            self.root = Some(id);
            self.height = 1;
            self.len = 1;
            self.version += 1;
            return Ok(true);
        };
        match self.insert_rec(root, key) {
            Ins::Duplicate => Ok(false),
            Ins::Done => {
                self.len += 1;
                self.version += 1;
                Ok(true)
            }
            Ins::Split { right, right_sep } => {
                let left_sep = self.subtree_min(root);
                let left_agg = self.subtree_agg(root);
                let right_agg = self.subtree_agg(right);
                let new_root = self.alloc(Node::Branch {
                    seps: vec![left_sep, right_sep],
                    children: vec![root, right],
                    aggs: vec![left_agg, right_agg],
                });
                self.stats.visit();
                self.root = Some(new_root);
                self.height += 1;
                self.len += 1;
                self.version += 1;
                Ok(true)
            }
        }
    }

    fn delete(&mut self, key: &ItemKey) -> Result<bool, StoreError> {
        self.stats.begin_op();
        let Some(root) = self.root else {
            return Ok(false);
        };
        if matches!(self.delete_rec(root, key), Del::NotFound) {
            return Ok(false);
        }
        self.len -= 1;
        self.version += 1;
        // Collapse trivial roots.
        loop {
            let root = self.root.expect("root present");
            match self.node(root) {
                Node::Branch { children, .. } if children.len() == 1 => {
                    let only = children[0];
                    self.release(root);
                    self.root = Some(only);
                    self.height -= 1;
                }
                Node::Leaf { keys, .. } if keys.is_empty() => {
                    self.release(root);
                    self.root = None;
                    self.height = 0;
                    break;
                }
                _ => break,
            }
        }
        Ok(true)
    }
}
