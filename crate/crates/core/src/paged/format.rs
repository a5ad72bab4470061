//! On-disk layout of the paged store.
//!
//! Pages 0 and 1 are meta blocks; data pages follow. All integers are
//! little-endian except the big-endian timestamp inside canonical key
//! encodings. The layout contract is documented in `FORMAT.md` at the
//! repository root.

use crate::aggregate::{Aggregate, Summary, SummaryConfig};
use crate::key::{ItemKey, ENCODED_KEY_LEN};
use crate::store::StoreError;

pub(crate) const MAGIC: [u8; 8] = *b"RSOSPGV1";
pub(crate) const META_PAGE_COUNT: u64 = 2;
pub(crate) const META_LEN: usize = 80;

pub(crate) const DEFAULT_PAGE_SIZE: u32 = 4096;
pub(crate) const MIN_PAGE_SIZE: u32 = 512;
pub(crate) const MAX_PAGE_SIZE: u32 = 65536;

/// Aggregate components carried by branch nodes.
pub(crate) const AGG_ENTRIES: u16 = 0x1;
pub(crate) const AGG_HASHSUM: u16 = 0x2;

pub(crate) const PAGE_TYPE_BRANCH: u8 = 1;
pub(crate) const PAGE_TYPE_LEAF: u8 = 2;
pub(crate) const PAGE_HDR_LEN: usize = 4;

/// Fixed per-file geometry derived from the header fields.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Geometry {
    pub page_size: u32,
    pub cfg: SummaryConfig,
    pub agg_flags: u16,
}

impl Geometry {
    pub fn new(page_size: u32, cfg: SummaryConfig) -> Result<Self, StoreError> {
        if !page_size.is_power_of_two() || !(MIN_PAGE_SIZE..=MAX_PAGE_SIZE).contains(&page_size) {
            return Err(StoreError::UnsupportedPageSize(page_size));
        }
        Ok(Self {
            page_size,
            cfg,
            agg_flags: AGG_ENTRIES | AGG_HASHSUM,
        })
    }

    /// Branch record: child page number, aggregate prefix, separator key.
    pub fn branch_record_len(&self) -> usize {
        let mut len = 8 + ENCODED_KEY_LEN;
        if self.agg_flags & AGG_ENTRIES != 0 {
            len += 8;
        }
        if self.agg_flags & AGG_HASHSUM != 0 {
            len += self.cfg.summary_len();
        }
        len
    }

    /// Maximum children per branch page; this is the tree fanout `B`.
    pub fn branch_capacity(&self) -> usize {
        (self.page_size as usize - PAGE_HDR_LEN) / self.branch_record_len()
    }

    pub fn leaf_capacity(&self) -> usize {
        (self.page_size as usize - PAGE_HDR_LEN) / ENCODED_KEY_LEN
    }

    pub fn page_offset(&self, pgno: u64) -> u64 {
        pgno * u64::from(self.page_size)
    }
}

/// One committed tree state as recorded in a meta block.
#[derive(Debug, Clone, Copy)]
pub(crate) struct MetaBlock {
    pub txn_id: u64,
    pub root_page: Option<u64>,
    pub total: Aggregate,
}

/// Serializes header fields plus `meta` into a `META_LEN`-byte block with a
/// trailing CRC-32 over everything before it.
pub(crate) fn encode_meta(geo: &Geometry, meta: &MetaBlock) -> [u8; META_LEN] {
    let mut out = [0u8; META_LEN];
    out[0..8].copy_from_slice(&MAGIC);
    out[8..12].copy_from_slice(&geo.page_size.to_le_bytes());
    out[12..14].copy_from_slice(&geo.cfg.width_bits().to_le_bytes());
    out[14..16].copy_from_slice(&(geo.cfg.slice_offset() as u16).to_le_bytes());
    out[16..18].copy_from_slice(&(geo.cfg.slice_len() as u16).to_le_bytes());
    out[18..20].copy_from_slice(&geo.agg_flags.to_le_bytes());
    out[20..28].copy_from_slice(&meta.txn_id.to_le_bytes());
    out[28..36].copy_from_slice(&meta.root_page.unwrap_or(0).to_le_bytes());
    out[36..44].copy_from_slice(&meta.total.count.to_le_bytes());
    let sum = meta.total.summary.as_le_bytes();
    out[44..44 + sum.len()].copy_from_slice(sum);
    let crc = crc32fast::hash(&out[..META_LEN - 4]);
    out[META_LEN - 4..].copy_from_slice(&crc.to_le_bytes());
    out
}

/// Validates and decodes one meta block. `Ok(None)` means the checksum or
/// magic is bad (a stale or torn slot); hard errors mean the file cannot be
/// a store of this format at all.
pub(crate) fn decode_meta(page: &[u8]) -> Result<Option<(Geometry, MetaBlock)>, StoreError> {
    if page.len() < META_LEN {
        return Ok(None);
    }
    let block = &page[..META_LEN];
    if block[0..8] != MAGIC {
        return Ok(None);
    }
    let crc = u32::from_le_bytes(block[META_LEN - 4..].try_into().unwrap());
    if crc != crc32fast::hash(&block[..META_LEN - 4]) {
        return Ok(None);
    }
    let page_size = u32::from_le_bytes(block[8..12].try_into().unwrap());
    let width_bits = u16::from_le_bytes(block[12..14].try_into().unwrap());
    let slice_offset = u16::from_le_bytes(block[14..16].try_into().unwrap());
    let slice_len = u16::from_le_bytes(block[16..18].try_into().unwrap());
    let agg_flags = u16::from_le_bytes(block[18..20].try_into().unwrap());
    let cfg =
        SummaryConfig::new(width_bits, slice_offset.into(), slice_len.into()).map_err(|e| {
            StoreError::Corrupt {
                page: 0,
                reason: e.to_string(),
            }
        })?;
    let mut geo = Geometry::new(page_size, cfg)?;
    if agg_flags != geo.agg_flags {
        return Err(StoreError::Corrupt {
            page: 0,
            reason: format!("unsupported aggregate flags {agg_flags:#06x}"),
        });
    }
    geo.agg_flags = agg_flags;
    let txn_id = u64::from_le_bytes(block[20..28].try_into().unwrap());
    let root_raw = u64::from_le_bytes(block[28..36].try_into().unwrap());
    let count = u64::from_le_bytes(block[36..44].try_into().unwrap());
    let summary = Summary::from_le_slice(width_bits, &block[44..44 + cfg.summary_len()]);
    Ok(Some((
        geo,
        MetaBlock {
            txn_id,
            root_page: (root_raw != 0).then_some(root_raw),
            total: Aggregate { count, summary },
        },
    )))
}

/// Branch node record: child page, its cached subtree aggregate, and the
/// separator (smallest key of the child subtree).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct BranchEntry {
    pub child: u64,
    pub agg: Aggregate,
    pub sep: ItemKey,
}

/// Parsed form of a data page.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum PageNode {
    Branch(Vec<BranchEntry>),
    Leaf(Vec<ItemKey>),
}

impl PageNode {
    pub fn entry_count(&self) -> usize {
        match self {
            PageNode::Branch(entries) => entries.len(),
            PageNode::Leaf(keys) => keys.len(),
        }
    }

    pub fn min_key(&self) -> ItemKey {
        match self {
            PageNode::Branch(entries) => entries[0].sep,
            PageNode::Leaf(keys) => keys[0],
        }
    }

    /// Aggregate of the whole subtree below this node, from one level of
    /// cached information.
    pub fn node_aggregate(&self, cfg: &SummaryConfig) -> Aggregate {
        let mut acc = Aggregate::identity(cfg.width_bits());
        match self {
            PageNode::Branch(entries) => {
                for e in entries {
                    acc.merge(&e.agg);
                }
            }
            PageNode::Leaf(keys) => {
                for k in keys {
                    acc.push(k, cfg);
                }
            }
        }
        acc
    }
}

pub(crate) fn encode_page(geo: &Geometry, node: &PageNode) -> Vec<u8> {
    let mut out = vec![0u8; geo.page_size as usize];
    match node {
        PageNode::Branch(entries) => {
            debug_assert!(entries.len() <= geo.branch_capacity());
            out[0] = PAGE_TYPE_BRANCH;
            out[1] = geo.agg_flags as u8;
            out[2..4].copy_from_slice(&(entries.len() as u16).to_le_bytes());
            let mut at = PAGE_HDR_LEN;
            for e in entries {
                out[at..at + 8].copy_from_slice(&e.child.to_le_bytes());
                at += 8;
                out[at..at + 8].copy_from_slice(&e.agg.count.to_le_bytes());
                at += 8;
                let sum = e.agg.summary.as_le_bytes();
                out[at..at + sum.len()].copy_from_slice(sum);
                at += sum.len();
                out[at..at + ENCODED_KEY_LEN].copy_from_slice(&e.sep.encode());
                at += ENCODED_KEY_LEN;
            }
        }
        PageNode::Leaf(keys) => {
            debug_assert!(keys.len() <= geo.leaf_capacity());
            out[0] = PAGE_TYPE_LEAF;
            out[2..4].copy_from_slice(&(keys.len() as u16).to_le_bytes());
            let mut at = PAGE_HDR_LEN;
            for k in keys {
                out[at..at + ENCODED_KEY_LEN].copy_from_slice(&k.encode());
                at += ENCODED_KEY_LEN;
            }
        }
    }
    out
}

pub(crate) fn decode_page(geo: &Geometry, pgno: u64, buf: &[u8]) -> Result<PageNode, StoreError> {
    let corrupt = |reason: String| StoreError::Corrupt { page: pgno, reason };
    if buf.len() < PAGE_HDR_LEN {
        return Err(corrupt("short page".into()));
    }
    let n = usize::from(u16::from_le_bytes(buf[2..4].try_into().unwrap()));
    match buf[0] {
        PAGE_TYPE_BRANCH => {
            if n > geo.branch_capacity() {
                return Err(corrupt(format!("branch entry count {n} exceeds capacity")));
            }
            let swidth = geo.cfg.summary_len();
            let mut entries = Vec::with_capacity(n);
            let mut at = PAGE_HDR_LEN;
            for _ in 0..n {
                let child = u64::from_le_bytes(buf[at..at + 8].try_into().unwrap());
                at += 8;
                let count = u64::from_le_bytes(buf[at..at + 8].try_into().unwrap());
                at += 8;
                let summary = Summary::from_le_slice(geo.cfg.width_bits(), &buf[at..at + swidth]);
                at += swidth;
                let sep = ItemKey::decode(&buf[at..at + ENCODED_KEY_LEN])
                    .map_err(|e| corrupt(e.to_string()))?;
                at += ENCODED_KEY_LEN;
                entries.push(BranchEntry {
                    child,
                    agg: Aggregate { count, summary },
                    sep,
                });
            }
            Ok(PageNode::Branch(entries))
        }
        PAGE_TYPE_LEAF => {
            if n > geo.leaf_capacity() {
                return Err(corrupt(format!("leaf key count {n} exceeds capacity")));
            }
            let mut keys = Vec::with_capacity(n);
            let mut at = PAGE_HDR_LEN;
            for _ in 0..n {
                keys.push(
                    ItemKey::decode(&buf[at..at + ENCODED_KEY_LEN])
                        .map_err(|e| corrupt(e.to_string()))?,
                );
                at += ENCODED_KEY_LEN;
            }
            Ok(PageNode::Leaf(keys))
        }
        t => Err(corrupt(format!("unknown page type {t}"))),
    }
}
