//! The ordered universe: timestamped record keys, range bounds, and their
//! canonical byte encodings.
//!
//! Every backend and the reconciliation protocol share these encodings
//! bit-exactly: a key encodes as its 8-byte big-endian timestamp followed by
//! the 32 identifier bytes, so the bytewise order of encodings equals the
//! logical key order.

use std::fmt;

use crate::codec::{DecodeError, Reader};

/// Length of a key identifier in bytes.
pub const ID_LEN: usize = 32;

/// Length of a canonical key encoding: big-endian timestamp plus identifier.
pub const ENCODED_KEY_LEN: usize = 8 + ID_LEN;

/// An element of the ordered universe: `(timestamp, identifier)`, ordered
/// lexicographically with the timestamp as the primary coordinate.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ItemKey {
    pub timestamp: u64,
    pub id: [u8; ID_LEN],
}

impl ItemKey {
    pub fn new(timestamp: u64, id: [u8; ID_LEN]) -> Self {
        Self { timestamp, id }
    }

    /// Key with the given timestamp and an all-zero identifier, the smallest
    /// key at that timestamp. Useful for building timestamp-aligned bounds.
    pub fn at_timestamp(timestamp: u64) -> Self {
        Self {
            timestamp,
            id: [0; ID_LEN],
        }
    }

    /// Canonical 40-byte encoding; injective and order-preserving.
    pub fn encode(&self) -> [u8; ENCODED_KEY_LEN] {
        let mut out = [0u8; ENCODED_KEY_LEN];
        out[..8].copy_from_slice(&self.timestamp.to_be_bytes());
        out[8..].copy_from_slice(&self.id);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        if bytes.len() < ENCODED_KEY_LEN {
            return Err(DecodeError::Truncated);
        }
        let mut ts = [0u8; 8];
        ts.copy_from_slice(&bytes[..8]);
        let mut id = [0u8; ID_LEN];
        id.copy_from_slice(&bytes[8..ENCODED_KEY_LEN]);
        Ok(Self {
            timestamp: u64::from_be_bytes(ts),
            id,
        })
    }
}

impl fmt::Debug for ItemKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Abbreviate the identifier; full ids are noise in test output.
        write!(
            f,
            "({}, {:02x}{:02x}{:02x}{:02x}..)",
            self.timestamp, self.id[0], self.id[1], self.id[2], self.id[3]
        )
    }
}

/// A range endpoint: either a concrete key or one of the two sentinels that
/// sit below and above every key.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Bound {
    MinusInfinity,
    Key(ItemKey),
    PlusInfinity,
}

const BOUND_TAG_MINUS_INF: u8 = 0;
const BOUND_TAG_KEY: u8 = 1;
const BOUND_TAG_PLUS_INF: u8 = 2;

impl Bound {
    /// True when `key` lies at or above this bound.
    pub fn le_key(&self, key: &ItemKey) -> bool {
        match self {
            Bound::MinusInfinity => true,
            Bound::Key(b) => b <= key,
            Bound::PlusInfinity => false,
        }
    }

    /// True when `key` lies strictly below this bound.
    pub fn gt_key(&self, key: &ItemKey) -> bool {
        match self {
            Bound::MinusInfinity => false,
            Bound::Key(b) => key < b,
            Bound::PlusInfinity => true,
        }
    }

    /// Tagged encoding: one tag byte, plus the canonical key bytes for the
    /// `Key` variant.
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        match self {
            Bound::MinusInfinity => out.push(BOUND_TAG_MINUS_INF),
            Bound::Key(k) => {
                out.push(BOUND_TAG_KEY);
                out.extend_from_slice(&k.encode());
            }
            Bound::PlusInfinity => out.push(BOUND_TAG_PLUS_INF),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(1 + ENCODED_KEY_LEN);
        self.encode_into(&mut out);
        out
    }

    /// Decodes one bound from the front of `bytes`, returning it with the
    /// number of bytes consumed. Rejects unknown tags and truncated input.
    pub fn decode(bytes: &[u8]) -> Result<(Self, usize), DecodeError> {
        let mut r = Reader::new(bytes);
        let bound = Self::read_from(&mut r)?;
        Ok((bound, r.consumed()))
    }

    pub(crate) fn read_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        match r.u8()? {
            BOUND_TAG_MINUS_INF => Ok(Bound::MinusInfinity),
            BOUND_TAG_PLUS_INF => Ok(Bound::PlusInfinity),
            BOUND_TAG_KEY => Ok(Bound::Key(ItemKey::decode(r.bytes(ENCODED_KEY_LEN)?)?)),
            tag => Err(DecodeError::BadTag(tag)),
        }
    }
}

impl fmt::Debug for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bound::MinusInfinity => write!(f, "-inf"),
            Bound::Key(k) => write!(f, "{k:?}"),
            Bound::PlusInfinity => write!(f, "+inf"),
        }
    }
}

/// Inverted range bounds (`lo > hi`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("range lower bound exceeds upper bound")]
pub struct InvertedBounds;

/// A half-open range `[lo, hi)` over the universe; membership is
/// `lo <= x < hi` under bound order.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HalfOpenRange {
    lo: Bound,
    hi: Bound,
}

impl HalfOpenRange {
    pub fn new(lo: Bound, hi: Bound) -> Result<Self, InvertedBounds> {
        if lo > hi {
            return Err(InvertedBounds);
        }
        Ok(Self { lo, hi })
    }

    /// The full universe, `[-inf, +inf)`.
    pub fn everything() -> Self {
        Self {
            lo: Bound::MinusInfinity,
            hi: Bound::PlusInfinity,
        }
    }

    pub fn lo(&self) -> &Bound {
        &self.lo
    }

    pub fn hi(&self) -> &Bound {
        &self.hi
    }

    pub fn contains(&self, key: &ItemKey) -> bool {
        self.lo.le_key(key) && self.hi.gt_key(key)
    }

    pub fn is_empty_span(&self) -> bool {
        self.lo == self.hi
    }
}

impl fmt::Debug for HalfOpenRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{:?}, {:?})", self.lo, self.hi)
    }
}
