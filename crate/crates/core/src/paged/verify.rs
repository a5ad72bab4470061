//! Offline integrity check of a paged store file.

use std::collections::HashSet;
use std::fs::File;
use std::os::unix::fs::FileExt;
use std::path::Path;

use crate::aggregate::Aggregate;
use crate::key::ItemKey;
use crate::store::StoreError;

use super::format::{decode_meta, decode_page, Geometry, MetaBlock, PageNode, META_LEN};

/// One problem found in the file, attributed to a page.
#[derive(Debug, Clone)]
pub struct Violation {
    pub page: u64,
    pub detail: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "page {}: {}", self.page, self.detail)
    }
}

/// Result of [`verify_file`]: the committed state that was checked plus
/// every violation found.
#[derive(Debug)]
pub struct VerifyReport {
    pub txn_id: u64,
    pub root_page: Option<u64>,
    pub total_entries: u64,
    pub pages_walked: u64,
    pub violations: Vec<Violation>,
}

impl VerifyReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

struct Checker<'a> {
    file: &'a File,
    geo: Geometry,
    leaf_depth: Option<usize>,
    visited: HashSet<u64>,
    pages_walked: u64,
    violations: Vec<Violation>,
}

impl Checker<'_> {
    fn flag(&mut self, page: u64, detail: String) {
        self.violations.push(Violation { page, detail });
    }

    fn read(&mut self, pgno: u64) -> Option<PageNode> {
        self.pages_walked += 1;
        let mut buf = vec![0u8; self.geo.page_size as usize];
        if let Err(e) = self
            .file
            .read_exact_at(&mut buf, self.geo.page_offset(pgno))
        {
            self.flag(pgno, format!("unreadable: {e}"));
            return None;
        }
        match decode_page(&self.geo, pgno, &buf) {
            Ok(node) => Some(node),
            Err(e) => {
                self.flag(pgno, e.to_string());
                None
            }
        }
    }

    /// Walks the subtree at `pgno`, returning its recomputed aggregate and
    /// key span (from leaf data, independent of any cached prefix).
    fn walk(
        &mut self,
        pgno: u64,
        depth: usize,
        is_root: bool,
    ) -> Option<(Aggregate, ItemKey, ItemKey)> {
        if pgno < super::format::META_PAGE_COUNT {
            self.flag(pgno, "tree reference into the meta area".into());
            return None;
        }
        if !self.visited.insert(pgno) {
            self.flag(pgno, "page referenced more than once".into());
            return None;
        }
        let node = self.read(pgno)?;
        match node {
            PageNode::Leaf(keys) => {
                match self.leaf_depth {
                    None => self.leaf_depth = Some(depth),
                    Some(d) if d != depth => {
                        self.flag(pgno, format!("leaf at depth {depth}, expected {d}"));
                    }
                    _ => {}
                }
                let min = self.geo.leaf_capacity().div_ceil(2);
                if !is_root && keys.len() < min {
                    self.flag(pgno, format!("leaf underfull: {} keys", keys.len()));
                }
                if keys.is_empty() {
                    self.flag(pgno, "empty leaf".into());
                    return None;
                }
                if !keys.windows(2).all(|w| w[0] < w[1]) {
                    self.flag(pgno, "leaf keys not strictly ascending".into());
                }
                let mut agg = Aggregate::identity(self.geo.cfg.width_bits());
                for k in &keys {
                    agg.push(k, &self.geo.cfg);
                }
                Some((agg, keys[0], *keys.last().unwrap()))
            }
            PageNode::Branch(entries) => {
                let min = self.geo.branch_capacity().div_ceil(2);
                if !is_root && entries.len() < min {
                    self.flag(
                        pgno,
                        format!("branch underfull: {} children", entries.len()),
                    );
                }
                if is_root && entries.len() < 2 {
                    self.flag(pgno, format!("root branch has {} children", entries.len()));
                }
                let mut acc = Aggregate::identity(self.geo.cfg.width_bits());
                let mut span: Option<(ItemKey, ItemKey)> = None;
                let mut prev_max: Option<ItemKey> = None;
                for (i, entry) in entries.iter().enumerate() {
                    let Some((agg, lo, hi)) = self.walk(entry.child, depth + 1, false) else {
                        continue;
                    };
                    if entry.agg != agg {
                        self.flag(
                            pgno,
                            format!(
                                "child {i}: aggregate prefix {:?} != recomputed {:?}",
                                entry.agg, agg
                            ),
                        );
                    }
                    if entry.sep != lo {
                        self.flag(
                            pgno,
                            format!(
                                "child {i}: separator {:?} != subtree min {:?}",
                                entry.sep, lo
                            ),
                        );
                    }
                    if let Some(pm) = prev_max {
                        if pm >= lo {
                            self.flag(pgno, format!("child {i} overlaps previous child"));
                        }
                    }
                    prev_max = Some(hi);
                    acc.merge(&agg);
                    span = Some((span.map_or(lo, |(s, _)| s), hi));
                }
                let (lo, hi) = span?;
                Some((acc, lo, hi))
            }
        }
    }
}

/// Checks header and meta checksums, page-type sanity, branch aggregate
/// prefixes against recomputation, key ordering, and the meta totals. Works
/// on a closed or read-only file.
pub fn verify_file(path: &Path) -> Result<VerifyReport, StoreError> {
    let file = File::open(path)?;
    let read_meta = |offset: u64| -> Result<Option<(Geometry, MetaBlock)>, StoreError> {
        let mut buf = [0u8; META_LEN];
        if file.read_exact_at(&mut buf, offset).is_err() {
            return Ok(None);
        }
        decode_meta(&buf)
    };
    let slot0 = read_meta(0)?;
    let stride = slot0
        .as_ref()
        .map_or(u64::from(super::format::DEFAULT_PAGE_SIZE), |(g, _)| {
            u64::from(g.page_size)
        });
    let slot1 = read_meta(stride)?;
    let best = match (slot0, slot1) {
        (Some(a), Some(b)) => Some(if b.1.txn_id > a.1.txn_id { b } else { a }),
        (a, b) => a.or(b),
    };
    let (geo, meta) = best.ok_or(StoreError::NoValidMeta)?;

    let mut checker = Checker {
        file: &file,
        geo,
        leaf_depth: None,
        visited: HashSet::new(),
        pages_walked: 0,
        violations: Vec::new(),
    };
    let recomputed = match meta.root_page {
        Some(root) => checker.walk(root, 1, true).map(|(agg, _, _)| agg),
        None => Some(Aggregate::identity(geo.cfg.width_bits())),
    };
    if let Some(agg) = recomputed {
        if agg != meta.total {
            checker.flag(
                0,
                format!(
                    "meta totals {:?} != recomputed tree aggregate {:?}",
                    meta.total, agg
                ),
            );
        }
    }
    Ok(VerifyReport {
        txn_id: meta.txn_id,
        root_page: meta.root_page,
        total_entries: meta.total.count,
        pages_walked: checker.pages_walked,
        violations: checker.violations,
    })
}
