//! File-backed store: an aggregate-augmented B+-tree over fixed-size pages
//! with copy-on-write commits.
//!
//! Two meta blocks (pages 0 and 1) alternate as commit targets; the valid
//! one with the highest transaction id wins on open. A write transaction
//! stages copied pages in memory under freshly allocated page numbers and
//! publishes them atomically by writing a new meta block, so readers pinned
//! to an earlier root never observe partial updates. Pages replaced by
//! copy-on-write are leaked until offline compaction, which keeps committed
//! snapshots immutable for the lifetime of the file.

mod format;
mod verify;

pub use verify::{verify_file, VerifyReport, Violation};

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, OnceLock};

use crate::aggregate::{Aggregate, SummaryConfig};
use crate::key::{Bound, ItemKey};
use crate::store::{check_bounds, OpStats, Rsos, RsosMut, StatCounters, StoreError};

use format::{
    decode_meta, decode_page, encode_meta, encode_page, BranchEntry, Geometry, MetaBlock, PageNode,
    DEFAULT_PAGE_SIZE, META_PAGE_COUNT,
};

/// Paths currently held by a writer handle; one writer per file per process.
fn writer_registry() -> &'static Mutex<BTreeSet<PathBuf>> {
    static REGISTRY: OnceLock<Mutex<BTreeSet<PathBuf>>> = OnceLock::new();
    REGISTRY.get_or_init(|| Mutex::new(BTreeSet::new()))
}

fn claim_writer(path: &Path) -> Result<PathBuf, StoreError> {
    let canonical = path.canonicalize()?;
    let mut held = writer_registry().lock().expect("registry lock");
    if !held.insert(canonical.clone()) {
        return Err(StoreError::WriterBusy(canonical));
    }
    Ok(canonical)
}

fn release_writer(path: &Path) {
    writer_registry()
        .lock()
        .expect("registry lock")
        .remove(path);
}

#[derive(Debug, Clone, Copy)]
struct Committed {
    txn_id: u64,
    root: Option<u64>,
    total: Aggregate,
}

#[derive(Debug)]
struct WriteTxn {
    root: Option<u64>,
    /// Pages owned by this transaction, parsed; keyed by page number so
    /// commit writes them in deterministic ascending order.
    dirty: BTreeMap<u64, PageNode>,
    next_page_at_start: u64,
}

enum Ins {
    Done,
    Split { right: u64, right_sep: ItemKey },
}

/// Paged file-backed store; the one writer handle for its file.
#[derive(Debug)]
pub struct PagedStore {
    file: File,
    path: PathBuf,
    /// Canonical path registered in the writer registry.
    token: PathBuf,
    geo: Geometry,
    committed: Committed,
    next_page: u64,
    txn: Option<WriteTxn>,
    stats: StatCounters,
}

impl PagedStore {
    /// Creates a fresh store at `path` (which must be absent or empty) and
    /// writes both meta slots for transaction 0.
    pub fn create(path: &Path, cfg: SummaryConfig, page_size: u32) -> Result<Self, StoreError> {
        let geo = Geometry::new(page_size, cfg)?;
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(path)?;
        if file.metadata()?.len() != 0 {
            return Err(StoreError::CreateOverExisting);
        }
        let token = claim_writer(path)?;
        let committed = Committed {
            txn_id: 0,
            root: None,
            total: Aggregate::identity(cfg.width_bits()),
        };
        let store = Self {
            file,
            path: path.to_path_buf(),
            token,
            geo,
            committed,
            next_page: META_PAGE_COUNT,
            txn: None,
            stats: StatCounters::default(),
        };
        for slot in 0..META_PAGE_COUNT {
            store.write_meta(slot)?;
        }
        Ok(store)
    }

    pub fn create_default(path: &Path, cfg: SummaryConfig) -> Result<Self, StoreError> {
        Self::create(path, cfg, DEFAULT_PAGE_SIZE)
    }

    /// Opens an existing store, settling on the valid meta block with the
    /// highest transaction id.
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let file = OpenOptions::new().read(true).write(true).open(path)?;
        let len = file.metadata()?.len();
        let slot0 = Self::read_meta_at(&file, 0)?;
        // Slot 1 sits one page in; take the stride from slot 0's header,
        // falling back to its raw page-size field (or the default) when the
        // slot is torn.
        let stride = match &slot0 {
            Some((geo, _)) => u64::from(geo.page_size),
            None => {
                let mut hdr = [0u8; 12];
                let raw = if file.read_exact_at(&mut hdr, 0).is_ok() {
                    u32::from_le_bytes(hdr[8..12].try_into().unwrap())
                } else {
                    0
                };
                if raw.is_power_of_two()
                    && (format::MIN_PAGE_SIZE..=format::MAX_PAGE_SIZE).contains(&raw)
                {
                    u64::from(raw)
                } else {
                    u64::from(DEFAULT_PAGE_SIZE)
                }
            }
        };
        let slot1 = Self::read_meta_at(&file, stride)?;
        let best = match (slot0, slot1) {
            (Some(a), Some(b)) => Some(if b.1.txn_id > a.1.txn_id { b } else { a }),
            (a, b) => a.or(b),
        };
        let (geo, meta) = best.ok_or(StoreError::NoValidMeta)?;
        let token = claim_writer(path)?;
        let next_page = len.div_ceil(u64::from(geo.page_size)).max(META_PAGE_COUNT);
        Ok(Self {
            file,
            path: path.to_path_buf(),
            token,
            geo,
            committed: Committed {
                txn_id: meta.txn_id,
                root: meta.root_page,
                total: meta.total,
            },
            next_page,
            txn: None,
            stats: StatCounters::default(),
        })
    }

    fn read_meta_at(file: &File, offset: u64) -> Result<Option<(Geometry, MetaBlock)>, StoreError> {
        let mut buf = [0u8; format::META_LEN];
        if file.read_exact_at(&mut buf, offset).is_err() {
            return Ok(None);
        }
        decode_meta(&buf)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn page_size(&self) -> u32 {
        self.geo.page_size
    }

    /// Fanout bound implied by the page capacity.
    pub fn branch_capacity(&self) -> usize {
        self.geo.branch_capacity()
    }

    pub fn txn_id(&self) -> u64 {
        self.committed.txn_id
    }

    /// Height of the committed tree in levels (0 when empty).
    pub fn height(&self) -> Result<usize, StoreError> {
        let mut h = 0;
        let mut at = self.committed.root;
        while let Some(pgno) = at {
            h += 1;
            match self.read_node(pgno)? {
                PageNode::Branch(entries) => at = Some(entries[0].child),
                PageNode::Leaf(_) => at = None,
            }
        }
        Ok(h)
    }

    /// Read-only view pinned to the currently committed transaction, with
    /// its own file handle so it never blocks the writer. Snapshots stay
    /// valid across later commits because copy-on-write never overwrites
    /// committed pages within a session.
    pub fn snapshot(&self) -> Result<PagedSnapshot, StoreError> {
        Ok(PagedSnapshot {
            file: File::open(&self.path)?,
            geo: self.geo,
            txn_id: self.committed.txn_id,
            root: self.committed.root,
            total: self.committed.total,
            stats: StatCounters::default(),
        })
    }

    fn write_meta(&self, slot: u64) -> Result<(), StoreError> {
        let meta = MetaBlock {
            txn_id: self.committed.txn_id,
            root_page: self.committed.root,
            total: self.committed.total,
        };
        let block = encode_meta(&self.geo, &meta);
        let mut page = vec![0u8; self.geo.page_size as usize];
        page[..block.len()].copy_from_slice(&block);
        self.file.write_all_at(&page, self.geo.page_offset(slot))?;
        Ok(())
    }

    /// Reads and parses a committed page from the file.
    fn read_node(&self, pgno: u64) -> Result<PageNode, StoreError> {
        fetch_from_file(&self.file, &self.geo, &self.stats, pgno)
    }

    /// Reads a page through the transaction's dirty set first, handing a
    /// borrowed view to `f` to avoid copying staged pages.
    fn with_node_txn<T>(&self, pgno: u64, f: impl FnOnce(&PageNode) -> T) -> Result<T, StoreError> {
        if let Some(txn) = &self.txn {
            if let Some(node) = txn.dirty.get(&pgno) {
                self.stats.visit();
                return Ok(f(node));
            }
        }
        Ok(f(&self.read_node(pgno)?))
    }

    /// Owned copy of a page through the transaction's dirty set.
    fn read_node_txn(&self, pgno: u64) -> Result<PageNode, StoreError> {
        self.with_node_txn(pgno, |node| node.clone())
    }

    fn alloc_page(&mut self) -> u64 {
        let pgno = self.next_page;
        self.next_page += 1;
        pgno
    }

    /// Ensures `pgno` is owned by the transaction, copying it to a fresh
    /// page number if it is still a committed page.
    fn cow(&mut self, pgno: u64) -> Result<u64, StoreError> {
        if self
            .txn
            .as_ref()
            .is_some_and(|t| t.dirty.contains_key(&pgno))
        {
            return Ok(pgno);
        }
        let node = self.read_node(pgno)?;
        let fresh = self.alloc_page();
        self.txn_mut().dirty.insert(fresh, node);
        Ok(fresh)
    }

    fn txn_mut(&mut self) -> &mut WriteTxn {
        self.txn.as_mut().expect("write transaction open")
    }

    fn begin_txn_if_needed(&mut self) {
        if self.txn.is_none() {
            self.txn = Some(WriteTxn {
                root: self.committed.root,
                dirty: BTreeMap::new(),
                next_page_at_start: self.next_page,
            });
        }
    }

    /// Membership test against the transaction's working tree.
    fn txn_contains(&self, key: &ItemKey) -> Result<bool, StoreError> {
        let root = match &self.txn {
            Some(t) => t.root,
            None => self.committed.root,
        };
        let Some(mut pgno) = root else {
            return Ok(false);
        };
        loop {
            let step = self.with_node_txn(pgno, |node| match node {
                PageNode::Branch(entries) => Err(entries[route_entries(entries, key)].child),
                PageNode::Leaf(keys) => Ok(keys.binary_search(key).is_ok()),
            })?;
            match step {
                Ok(found) => return Ok(found),
                Err(child) => pgno = child,
            }
        }
    }

    fn min_occupancy(&self) -> usize {
        self.geo.branch_capacity().div_ceil(2)
    }

    fn leaf_min_occupancy(&self) -> usize {
        self.geo.leaf_capacity().div_ceil(2)
    }

    fn dirty_node(&mut self, pgno: u64) -> &mut PageNode {
        self.txn_mut()
            .dirty
            .get_mut(&pgno)
            .expect("page owned by transaction")
    }

    fn subtree_agg_txn(&self, pgno: u64) -> Result<Aggregate, StoreError> {
        self.with_node_txn(pgno, |node| node.node_aggregate(&self.geo.cfg))
    }

    fn subtree_min_txn(&self, pgno: u64) -> Result<ItemKey, StoreError> {
        self.with_node_txn(pgno, |node| node.min_key())
    }

    fn ins_rec(&mut self, pgno: u64, key: ItemKey) -> Result<(u64, Ins), StoreError> {
        let my = self.cow(pgno)?;
        let is_leaf = matches!(self.txn_mut().dirty[&my], PageNode::Leaf(_));
        if is_leaf {
            let leaf_cap = self.geo.leaf_capacity();
            let PageNode::Leaf(keys) = self.dirty_node(my) else {
                unreachable!()
            };
            let pos = keys.partition_point(|k| k < &key);
            debug_assert!(keys.get(pos) != Some(&key), "duplicate filtered by caller");
            keys.insert(pos, key);
            if keys.len() <= leaf_cap {
                return Ok((my, Ins::Done));
            }
            let split_at = keys.len().div_ceil(2);
            let right_keys = keys.split_off(split_at);
            let right_sep = right_keys[0];
            let right = self.alloc_page();
            self.txn_mut()
                .dirty
                .insert(right, PageNode::Leaf(right_keys));
            return Ok((my, Ins::Split { right, right_sep }));
        }

        let branch_cap = self.geo.branch_capacity();
        let (i, child) = {
            let PageNode::Branch(entries) = &self.txn_mut().dirty[&my] else {
                unreachable!()
            };
            let i = route_entries(entries, &key);
            (i, entries[i].child)
        };
        let (new_child, outcome) = self.ins_rec(child, key)?;
        match outcome {
            Ins::Done => {
                // One key joined child i's subtree: fold it into the cached
                // prefix instead of recomputing the child.
                let delta = Aggregate::of_item(&key, &self.geo.cfg);
                let PageNode::Branch(entries) = self.dirty_node(my) else {
                    unreachable!()
                };
                entries[i].child = new_child;
                entries[i].agg.merge(&delta);
                if key < entries[i].sep {
                    entries[i].sep = key;
                }
                Ok((my, Ins::Done))
            }
            Ins::Split { right, right_sep } => {
                let child_agg = self.subtree_agg_txn(new_child)?;
                let child_min = self.subtree_min_txn(new_child)?;
                let right_agg = self.subtree_agg_txn(right)?;
                let PageNode::Branch(entries) = self.dirty_node(my) else {
                    unreachable!()
                };
                entries[i] = BranchEntry {
                    child: new_child,
                    agg: child_agg,
                    sep: child_min,
                };
                entries.insert(
                    i + 1,
                    BranchEntry {
                        child: right,
                        agg: right_agg,
                        sep: right_sep,
                    },
                );
                if entries.len() > branch_cap {
                    let split_at = entries.len().div_ceil(2);
                    let right_entries = entries.split_off(split_at);
                    let right_sep = right_entries[0].sep;
                    let right = self.alloc_page();
                    self.txn_mut()
                        .dirty
                        .insert(right, PageNode::Branch(right_entries));
                    return Ok((my, Ins::Split { right, right_sep }));
                }
                Ok((my, Ins::Done))
            }
        }
    }

    fn del_rec(&mut self, pgno: u64, key: &ItemKey) -> Result<u64, StoreError> {
        let my = self.cow(pgno)?;
        let is_leaf = matches!(self.txn_mut().dirty[&my], PageNode::Leaf(_));
        if is_leaf {
            let PageNode::Leaf(keys) = self.dirty_node(my) else {
                unreachable!()
            };
            let pos = keys.binary_search(key).expect("presence checked by caller");
            keys.remove(pos);
            return Ok(my);
        }
        let (i, child) = {
            let PageNode::Branch(entries) = &self.txn_mut().dirty[&my] else {
                unreachable!()
            };
            let i = route_entries(entries, key);
            (i, entries[i].child)
        };
        let new_child = self.del_rec(child, key)?;
        let cfg = self.geo.cfg;
        let (child_occupancy, child_agg, child_min, child_is_leaf) =
            self.with_node_txn(new_child, |node| {
                (
                    node.entry_count(),
                    node.node_aggregate(&cfg),
                    node.min_key(),
                    matches!(node, PageNode::Leaf(_)),
                )
            })?;
        {
            let PageNode::Branch(entries) = self.dirty_node(my) else {
                unreachable!()
            };
            entries[i] = BranchEntry {
                child: new_child,
                agg: child_agg,
                sep: child_min,
            };
        }
        let min = if child_is_leaf {
            self.leaf_min_occupancy()
        } else {
            self.min_occupancy()
        };
        if child_occupancy < min {
            self.rebalance(my, i, min)?;
        }
        Ok(my)
    }

    /// Restores occupancy of child `i` of branch `parent` (both owned by the
    /// transaction): borrow from a sibling above minimum, else merge.
    fn rebalance(&mut self, parent: u64, i: usize, min: usize) -> Result<(), StoreError> {
        let (n_children, left_pg, right_pg) = {
            let PageNode::Branch(entries) = &self.txn_mut().dirty[&parent] else {
                unreachable!()
            };
            (
                entries.len(),
                i.checked_sub(1).map(|j| entries[j].child),
                (i + 1 < entries.len()).then(|| entries[i + 1].child),
            )
        };
        debug_assert!(n_children >= 2, "root collapse handled by caller");
        if let Some(left) = left_pg {
            if self.with_node_txn(left, |n| n.entry_count())? > min {
                return self.shift(parent, i - 1, i, true);
            }
        }
        if let Some(right) = right_pg {
            if self.with_node_txn(right, |n| n.entry_count())? > min {
                return self.shift(parent, i + 1, i, false);
            }
        }
        if left_pg.is_some() {
            self.merge(parent, i - 1)
        } else {
            self.merge(parent, i)
        }
    }

    /// Moves one boundary entry from child `donor_idx` to child
    /// `recipient_idx`; the two are adjacent.
    fn shift(
        &mut self,
        parent: u64,
        donor_idx: usize,
        recipient_idx: usize,
        from_end: bool,
    ) -> Result<(), StoreError> {
        let (donor_pg, recipient_pg) = {
            let PageNode::Branch(entries) = &self.txn_mut().dirty[&parent] else {
                unreachable!()
            };
            (entries[donor_idx].child, entries[recipient_idx].child)
        };
        let donor_pg = self.cow(donor_pg)?;
        let recipient_pg = self.cow(recipient_pg)?;
        let moved = {
            match self.dirty_node(donor_pg) {
                PageNode::Leaf(keys) => {
                    let k = if from_end {
                        keys.pop().unwrap()
                    } else {
                        keys.remove(0)
                    };
                    PageNode::Leaf(vec![k])
                }
                PageNode::Branch(entries) => {
                    let e = if from_end {
                        entries.pop().unwrap()
                    } else {
                        entries.remove(0)
                    };
                    PageNode::Branch(vec![e])
                }
            }
        };
        match (self.dirty_node(recipient_pg), moved) {
            (PageNode::Leaf(keys), PageNode::Leaf(mut moved)) => {
                if from_end {
                    keys.insert(0, moved.pop().unwrap());
                } else {
                    keys.push(moved.pop().unwrap());
                }
            }
            (PageNode::Branch(entries), PageNode::Branch(mut moved)) => {
                if from_end {
                    entries.insert(0, moved.pop().unwrap());
                } else {
                    entries.push(moved.pop().unwrap());
                }
            }
            _ => unreachable!("sibling levels differ"),
        }
        for (idx, pg) in [(donor_idx, donor_pg), (recipient_idx, recipient_pg)] {
            let agg = self.subtree_agg_txn(pg)?;
            let mink = self.subtree_min_txn(pg)?;
            let PageNode::Branch(entries) = self.dirty_node(parent) else {
                unreachable!()
            };
            entries[idx] = BranchEntry {
                child: pg,
                agg,
                sep: mink,
            };
        }
        Ok(())
    }

    /// Merges child `i + 1` of `parent` into child `i`; the absorbed page is
    /// abandoned (copy-on-write never reuses committed pages in-session).
    fn merge(&mut self, parent: u64, i: usize) -> Result<(), StoreError> {
        let (left_pg, right_pg) = {
            let PageNode::Branch(entries) = &self.txn_mut().dirty[&parent] else {
                unreachable!()
            };
            (entries[i].child, entries[i + 1].child)
        };
        let left_pg = self.cow(left_pg)?;
        let right = self.read_node_txn(right_pg)?;
        self.txn_mut().dirty.remove(&right_pg);
        match (self.dirty_node(left_pg), right) {
            (PageNode::Leaf(keys), PageNode::Leaf(rk)) => keys.extend(rk),
            (PageNode::Branch(entries), PageNode::Branch(re)) => entries.extend(re),
            _ => unreachable!("sibling levels differ"),
        }
        let agg = self.subtree_agg_txn(left_pg)?;
        let mink = self.subtree_min_txn(left_pg)?;
        let PageNode::Branch(entries) = self.dirty_node(parent) else {
            unreachable!()
        };
        entries.remove(i + 1);
        entries[i] = BranchEntry {
            child: left_pg,
            agg,
            sep: mink,
        };
        Ok(())
    }

    /// Publishes the staged transaction: writes every dirty page, then the
    /// next meta slot. A transaction with no staged changes is a no-op.
    pub fn commit(&mut self) -> Result<u64, StoreError> {
        let Some(txn) = self.txn.take() else {
            return Ok(self.committed.txn_id);
        };
        if txn.dirty.is_empty() && txn.root == self.committed.root {
            return Ok(self.committed.txn_id);
        }
        let total = match txn.root {
            Some(root) => txn
                .dirty
                .get(&root)
                .expect("new root is dirty")
                .node_aggregate(&self.geo.cfg),
            None => Aggregate::identity(self.geo.cfg.width_bits()),
        };
        for (pgno, node) in &txn.dirty {
            let buf = encode_page(&self.geo, node);
            self.file.write_all_at(&buf, self.geo.page_offset(*pgno))?;
        }
        self.committed = Committed {
            txn_id: self.committed.txn_id + 1,
            root: txn.root,
            total,
        };
        self.write_meta(self.committed.txn_id % META_PAGE_COUNT)?;
        Ok(self.committed.txn_id)
    }

    /// Discards all staged changes.
    pub fn abort(&mut self) {
        if let Some(txn) = self.txn.take() {
            self.next_page = txn.next_page_at_start;
        }
    }

    pub fn has_open_txn(&self) -> bool {
        self.txn.is_some()
    }

    fn query_root(&self) -> Option<u64> {
        self.committed.root
    }
}

impl Drop for PagedStore {
    fn drop(&mut self) {
        release_writer(&self.token);
    }
}

/// Committed pages read by the query walks: the store (its own file handle)
/// or a snapshot (an independent read-only handle).
trait PageSource {
    fn geometry(&self) -> &Geometry;
    fn counters(&self) -> &StatCounters;
    fn fetch(&self, pgno: u64) -> Result<PageNode, StoreError>;
}

fn fetch_from_file(
    file: &File,
    geo: &Geometry,
    stats: &StatCounters,
    pgno: u64,
) -> Result<PageNode, StoreError> {
    stats.visit();
    let mut buf = vec![0u8; geo.page_size as usize];
    file.read_exact_at(&mut buf, geo.page_offset(pgno))
        .map_err(|e| StoreError::Corrupt {
            page: pgno,
            reason: format!("unreadable: {e}"),
        })?;
    decode_page(geo, pgno, &buf)
}

impl PageSource for PagedStore {
    fn geometry(&self) -> &Geometry {
        &self.geo
    }

    fn counters(&self) -> &StatCounters {
        &self.stats
    }

    fn fetch(&self, pgno: u64) -> Result<PageNode, StoreError> {
        fetch_from_file(&self.file, &self.geo, &self.stats, pgno)
    }
}

fn q_rank<S: PageSource>(src: &S, root: Option<u64>, bound: &Bound) -> Result<u64, StoreError> {
    src.counters().begin_op();
    let Some(mut pgno) = root else { return Ok(0) };
    let mut acc = 0u64;
    loop {
        match src.fetch(pgno)? {
            PageNode::Branch(entries) => {
                let i = route_entries_bound(&entries, bound);
                acc += entries[..i].iter().map(|e| e.agg.count).sum::<u64>();
                pgno = entries[i].child;
            }
            PageNode::Leaf(keys) => {
                return Ok(acc + keys.partition_point(|k| bound.gt_key(k)) as u64);
            }
        }
    }
}

fn q_select<S: PageSource>(
    src: &S,
    root: Option<u64>,
    size: u64,
    index: u64,
) -> Result<ItemKey, StoreError> {
    if index >= size {
        return Err(StoreError::OutOfRange { index, size });
    }
    src.counters().begin_op();
    let mut pgno = root.expect("nonempty tree has a root");
    let mut residual = index;
    loop {
        match src.fetch(pgno)? {
            PageNode::Branch(entries) => {
                let mut i = 0;
                while residual >= entries[i].agg.count {
                    residual -= entries[i].agg.count;
                    i += 1;
                }
                pgno = entries[i].child;
            }
            PageNode::Leaf(keys) => return Ok(keys[residual as usize]),
        }
    }
}

fn q_agg_walk<S: PageSource>(
    src: &S,
    pgno: u64,
    lo: &Bound,
    hi: &Bound,
    upper: &Bound,
    acc: &mut Aggregate,
) -> Result<(), StoreError> {
    let cfg = src.geometry().cfg;
    match src.fetch(pgno)? {
        PageNode::Leaf(keys) => {
            let a = keys.partition_point(|k| lo.gt_key(k));
            let b = keys.partition_point(|k| hi.gt_key(k));
            src.counters().scan_n((b - a) as u64);
            for k in &keys[a..b] {
                acc.push(k, &cfg);
            }
        }
        PageNode::Branch(entries) => {
            for i in 0..entries.len() {
                let child_lo = Bound::Key(entries[i].sep);
                let child_hi = if i + 1 < entries.len() {
                    Bound::Key(entries[i + 1].sep)
                } else {
                    *upper
                };
                if child_hi <= *lo || *hi <= child_lo {
                    continue;
                }
                if *lo <= child_lo && child_hi <= *hi {
                    acc.merge(&entries[i].agg);
                } else {
                    q_agg_walk(src, entries[i].child, lo, hi, &child_hi, acc)?;
                }
            }
        }
    }
    Ok(())
}

fn q_agg_rank_walk<S: PageSource>(
    src: &S,
    pgno: u64,
    lo: u64,
    hi: u64,
    acc: &mut Aggregate,
) -> Result<(), StoreError> {
    let cfg = src.geometry().cfg;
    match src.fetch(pgno)? {
        PageNode::Leaf(keys) => {
            src.counters().scan_n(hi - lo);
            for k in &keys[lo as usize..hi as usize] {
                acc.push(k, &cfg);
            }
        }
        PageNode::Branch(entries) => {
            let mut offset = 0u64;
            for e in &entries {
                let end = offset + e.agg.count;
                if hi > offset && end > lo {
                    if lo <= offset && end <= hi {
                        acc.merge(&e.agg);
                    } else {
                        q_agg_rank_walk(
                            src,
                            e.child,
                            lo.max(offset) - offset,
                            hi.min(end) - offset,
                            acc,
                        )?;
                    }
                }
                offset = end;
            }
        }
    }
    Ok(())
}

fn q_enumerate_walk<S: PageSource>(
    src: &S,
    pgno: u64,
    lo: &Bound,
    hi: &Bound,
    upper: &Bound,
    out: &mut Vec<ItemKey>,
) -> Result<(), StoreError> {
    match src.fetch(pgno)? {
        PageNode::Leaf(keys) => {
            let a = keys.partition_point(|k| lo.gt_key(k));
            let b = keys.partition_point(|k| hi.gt_key(k));
            src.counters().scan_n((b - a) as u64);
            out.extend_from_slice(&keys[a..b]);
        }
        PageNode::Branch(entries) => {
            for i in 0..entries.len() {
                let child_lo = Bound::Key(entries[i].sep);
                let child_hi = if i + 1 < entries.len() {
                    Bound::Key(entries[i + 1].sep)
                } else {
                    *upper
                };
                if child_hi <= *lo || *hi <= child_lo {
                    continue;
                }
                q_enumerate_walk(src, entries[i].child, lo, hi, &child_hi, out)?;
            }
        }
    }
    Ok(())
}

fn q_aggregate<S: PageSource>(
    src: &S,
    root: Option<u64>,
    lo: &Bound,
    hi: &Bound,
) -> Result<Aggregate, StoreError> {
    check_bounds(lo, hi)?;
    src.counters().begin_op();
    let mut acc = Aggregate::identity(src.geometry().cfg.width_bits());
    if let Some(root) = root {
        if lo < hi {
            q_agg_walk(src, root, lo, hi, &Bound::PlusInfinity, &mut acc)?;
        }
    }
    Ok(acc)
}

fn q_aggregate_by_rank<S: PageSource>(
    src: &S,
    root: Option<u64>,
    size: u64,
    lo: u64,
    hi: u64,
) -> Result<Aggregate, StoreError> {
    if lo > hi || hi > size {
        return Err(StoreError::BadRankInterval { lo, hi, size });
    }
    src.counters().begin_op();
    let mut acc = Aggregate::identity(src.geometry().cfg.width_bits());
    if let Some(root) = root {
        if lo < hi {
            q_agg_rank_walk(src, root, lo, hi, &mut acc)?;
        }
    }
    Ok(acc)
}

fn q_enumerate<S: PageSource>(
    src: &S,
    root: Option<u64>,
    lo: &Bound,
    hi: &Bound,
) -> Result<Vec<ItemKey>, StoreError> {
    check_bounds(lo, hi)?;
    src.counters().begin_op();
    let mut out = Vec::new();
    if let Some(root) = root {
        if lo < hi {
            q_enumerate_walk(src, root, lo, hi, &Bound::PlusInfinity, &mut out)?;
        }
    }
    Ok(out)
}

/// Child index for `key`: last entry whose separator is at or below it.
fn route_entries(entries: &[BranchEntry], key: &ItemKey) -> usize {
    entries.partition_point(|e| e.sep <= *key).saturating_sub(1)
}

fn route_entries_bound(entries: &[BranchEntry], bound: &Bound) -> usize {
    entries
        .partition_point(|e| Bound::Key(e.sep) <= *bound)
        .saturating_sub(1)
}

impl Rsos for PagedStore {
    fn summary_config(&self) -> &SummaryConfig {
        &self.geo.cfg
    }

    /// Total entries straight from the committed meta; no page walk.
    fn size(&self) -> u64 {
        self.committed.total.count
    }

    fn aggregate(&self, lo: &Bound, hi: &Bound) -> Result<Aggregate, StoreError> {
        q_aggregate(self, self.query_root(), lo, hi)
    }

    fn aggregate_by_rank(&self, lo: u64, hi: u64) -> Result<Aggregate, StoreError> {
        q_aggregate_by_rank(self, self.query_root(), self.size(), lo, hi)
    }

    fn rank(&self, bound: &Bound) -> Result<u64, StoreError> {
        q_rank(self, self.query_root(), bound)
    }

    fn select(&self, index: u64) -> Result<ItemKey, StoreError> {
        q_select(self, self.query_root(), self.size(), index)
    }

    fn enumerate(&self, lo: &Bound, hi: &Bound) -> Result<Vec<ItemKey>, StoreError> {
        q_enumerate(self, self.query_root(), lo, hi)
    }

    fn version(&self) -> u64 {
        self.committed.txn_id
    }

    fn last_stats(&self) -> OpStats {
        self.stats.last()
    }

    fn total_stats(&self) -> OpStats {
        self.stats.total()
    }
}

impl RsosMut for PagedStore {
    /// Stages an insert in the open write transaction (starting one if
    /// needed); visible to queries only after [`PagedStore::commit`].
    fn insert(&mut self, key: ItemKey) -> Result<bool, StoreError> {
        self.stats.begin_op();
        self.begin_txn_if_needed();
        if self.txn_contains(&key)? {
            return Ok(false);
        }
        let root = self.txn_mut().root;
        let Some(root) = root else {
            let pgno = self.alloc_page();
            self.txn_mut().dirty.insert(pgno, PageNode::Leaf(vec![key]));
            self.txn_mut().root = Some(pgno);
            return Ok(true);
        };
        let (new_root, outcome) = self.ins_rec(root, key)?;
        let new_root = match outcome {
            Ins::Done => new_root,
            Ins::Split { right, right_sep } => {
                let left_agg = self.subtree_agg_txn(new_root)?;
                let left_sep = self.subtree_min_txn(new_root)?;
                let right_agg = self.subtree_agg_txn(right)?;
                let pgno = self.alloc_page();
                self.txn_mut().dirty.insert(
                    pgno,
                    PageNode::Branch(vec![
                        BranchEntry {
                            child: new_root,
                            agg: left_agg,
                            sep: left_sep,
                        },
                        BranchEntry {
                            child: right,
                            agg: right_agg,
                            sep: right_sep,
                        },
                    ]),
                );
                pgno
            }
        };
        self.txn_mut().root = Some(new_root);
        Ok(true)
    }

    fn delete(&mut self, key: &ItemKey) -> Result<bool, StoreError> {
        self.stats.begin_op();
        self.begin_txn_if_needed();
        if !self.txn_contains(key)? {
            return Ok(false);
        }
        let root = self.txn_mut().root.expect("key present implies a root");
        let mut new_root = self.del_rec(root, key)?;
        // Collapse trivial roots.
        loop {
            match self.read_node_txn(new_root)? {
                PageNode::Branch(entries) if entries.len() == 1 => {
                    let only = entries[0].child;
                    self.txn_mut().dirty.remove(&new_root);
                    new_root = only;
                }
                PageNode::Leaf(keys) if keys.is_empty() => {
                    self.txn_mut().dirty.remove(&new_root);
                    self.txn_mut().root = None;
                    return Ok(true);
                }
                _ => break,
            }
        }
        // The root must be owned even when untouched by the collapse, so
        // commit can recompute totals from it.
        let new_root = self.cow(new_root)?;
        self.txn_mut().root = Some(new_root);
        Ok(true)
    }
}

/// Read-only view of a paged store pinned to one committed transaction.
/// Owns its file handle, so it neither blocks nor observes the writer.
#[derive(Debug)]
pub struct PagedSnapshot {
    file: File,
    geo: Geometry,
    txn_id: u64,
    root: Option<u64>,
    total: Aggregate,
    stats: StatCounters,
}

impl PagedSnapshot {
    pub fn txn_id(&self) -> u64 {
        self.txn_id
    }
}

impl PageSource for PagedSnapshot {
    fn geometry(&self) -> &Geometry {
        &self.geo
    }

    fn counters(&self) -> &StatCounters {
        &self.stats
    }

    fn fetch(&self, pgno: u64) -> Result<PageNode, StoreError> {
        fetch_from_file(&self.file, &self.geo, &self.stats, pgno)
    }
}

impl Rsos for PagedSnapshot {
    fn summary_config(&self) -> &SummaryConfig {
        &self.geo.cfg
    }

    fn size(&self) -> u64 {
        self.total.count
    }

    fn aggregate(&self, lo: &Bound, hi: &Bound) -> Result<Aggregate, StoreError> {
        q_aggregate(self, self.root, lo, hi)
    }

    fn aggregate_by_rank(&self, lo: u64, hi: u64) -> Result<Aggregate, StoreError> {
        q_aggregate_by_rank(self, self.root, self.size(), lo, hi)
    }

    fn rank(&self, bound: &Bound) -> Result<u64, StoreError> {
        q_rank(self, self.root, bound)
    }

    fn select(&self, index: u64) -> Result<ItemKey, StoreError> {
        q_select(self, self.root, self.size(), index)
    }

    fn enumerate(&self, lo: &Bound, hi: &Bound) -> Result<Vec<ItemKey>, StoreError> {
        q_enumerate(self, self.root, lo, hi)
    }

    fn version(&self) -> u64 {
        self.txn_id
    }

    fn last_stats(&self) -> OpStats {
        self.stats.last()
    }

    fn total_stats(&self) -> OpStats {
        self.stats.total()
    }
}
