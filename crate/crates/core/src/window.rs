//! Window subranges: a cached mapping from a stable outer range to its
//! absolute rank interval.
//!
//! Opening a window costs two rank descents; afterwards, nested subrange
//! queries are expressed in window-relative ranks and answered by rank
//! arithmetic plus rank-guided aggregation, instead of re-deriving the outer
//! bounds' positions on every query. A handle is pinned to the store
//! snapshot it was opened against and goes stale on any committed mutation.

use thiserror::Error;

use crate::aggregate::Aggregate;
use crate::key::{Bound, HalfOpenRange, ItemKey};
use crate::store::{Rsos, StoreError};

#[derive(Debug, Error)]
pub enum WindowError {
    #[error("stale window: opened at version {opened}, store now at {current}")]
    Stale { opened: u64, current: u64 },
    #[error("relative rank {rel} out of range for window of {count} items")]
    OutOfRange { rel: u64, count: u64 },
    #[error("relative interval [{rel_lo}, {rel_hi}) invalid for window of {count} items")]
    BadInterval {
        rel_lo: u64,
        rel_hi: u64,
        count: u64,
    },
    #[error("range lower bound exceeds upper bound")]
    InvertedBounds,
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// A resolved outer range: its bounds, their absolute ranks, and the store
/// version the mapping is valid for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowHandle {
    outer: HalfOpenRange,
    rank_lo: u64,
    rank_hi: u64,
    version: u64,
}

impl WindowHandle {
    /// Resolves `[lo, hi)` to its rank interval with exactly two rank
    /// descents.
    pub fn open<S: Rsos>(store: &S, lo: Bound, hi: Bound) -> Result<Self, WindowError> {
        let outer = HalfOpenRange::new(lo, hi).map_err(|_| WindowError::InvertedBounds)?;
        let rank_lo = store.rank(&lo)?;
        let rank_hi = store.rank(&hi)?;
        Ok(Self {
            outer,
            rank_lo,
            rank_hi,
            version: store.version(),
        })
    }

    pub fn outer(&self) -> &HalfOpenRange {
        &self.outer
    }

    pub fn rank_lo(&self) -> u64 {
        self.rank_lo
    }

    pub fn rank_hi(&self) -> u64 {
        self.rank_hi
    }

    fn check_fresh<S: Rsos>(&self, store: &S) -> Result<(), WindowError> {
        let current = store.version();
        if current != self.version {
            return Err(WindowError::Stale {
                opened: self.version,
                current,
            });
        }
        Ok(())
    }

    /// Items inside the window.
    pub fn count<S: Rsos>(&self, store: &S) -> Result<u64, WindowError> {
        self.check_fresh(store)?;
        Ok(self.rank_hi - self.rank_lo)
    }

    /// The item at window-relative rank `rel`.
    pub fn select<S: Rsos>(&self, store: &S, rel: u64) -> Result<ItemKey, WindowError> {
        self.check_fresh(store)?;
        let count = self.rank_hi - self.rank_lo;
        if rel >= count {
            return Err(WindowError::OutOfRange { rel, count });
        }
        Ok(store.select(self.rank_lo + rel)?)
    }

    /// Aggregate over the items at window-relative ranks `[rel_lo, rel_hi)`.
    /// `rel_hi = count` reaches the window's own upper bound, preserving
    /// half-open composability at the window edge.
    pub fn aggregate<S: Rsos>(
        &self,
        store: &S,
        rel_lo: u64,
        rel_hi: u64,
    ) -> Result<Aggregate, WindowError> {
        self.check_fresh(store)?;
        let count = self.rank_hi - self.rank_lo;
        if rel_lo > rel_hi || rel_hi > count {
            return Err(WindowError::BadInterval {
                rel_lo,
                rel_hi,
                count,
            });
        }
        Ok(store.aggregate_by_rank(self.rank_lo + rel_lo, self.rank_lo + rel_hi)?)
    }
}
