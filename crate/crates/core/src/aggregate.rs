//! Composable range aggregates: the `(count, modular summary)` monoid that
//! every backend caches per subtree, and the 128-bit fingerprint the
//! reconciliation protocol compares.
//!
//! The summary of one item is a byte slice of its canonical key encoding
//! interpreted as a big-endian unsigned integer; summaries of a set add
//! modulo `2^width_bits`. With the default configuration the slice is the
//! full 32-byte identifier and the modulus is `2^256`.

use std::fmt;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::codec::write_uleb128;
use crate::key::{ItemKey, ENCODED_KEY_LEN};

/// Widest supported summary, in bytes.
pub const MAX_SUMMARY_BYTES: usize = 32;

/// Invalid summary configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("summary width must be a multiple of 8 in [8, 256], got {0} bits")]
    BadWidth(u16),
    #[error("slice length {len} does not match width of {width} bits")]
    SliceWidthMismatch { len: usize, width: u16 },
    #[error("slice [{offset}, {offset}+{len}) exceeds the {key} byte key encoding")]
    SliceOutOfKey {
        offset: usize,
        len: usize,
        key: usize,
    },
}

/// Two aggregates with different summary widths were combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("summary width mismatch: {left} vs {right} bits")]
pub struct WidthMismatch {
    pub left: u16,
    pub right: u16,
}

/// Where the per-item summary comes from: a `slice_len`-byte window into the
/// canonical key encoding, reduced modulo `2^width_bits`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SummaryConfig {
    width_bits: u16,
    slice_offset: u8,
    slice_len: u8,
}

impl SummaryConfig {
    pub fn new(
        width_bits: u16,
        slice_offset: usize,
        slice_len: usize,
    ) -> Result<Self, ConfigError> {
        if width_bits == 0 || !width_bits.is_multiple_of(8) || width_bits > 256 {
            return Err(ConfigError::BadWidth(width_bits));
        }
        if slice_len != usize::from(width_bits / 8) {
            return Err(ConfigError::SliceWidthMismatch {
                len: slice_len,
                width: width_bits,
            });
        }
        if slice_offset + slice_len > ENCODED_KEY_LEN {
            return Err(ConfigError::SliceOutOfKey {
                offset: slice_offset,
                len: slice_len,
                key: ENCODED_KEY_LEN,
            });
        }
        Ok(Self {
            width_bits,
            slice_offset: slice_offset as u8,
            slice_len: slice_len as u8,
        })
    }

    /// The default configuration: the full 32-byte identifier slice summed
    /// modulo `2^256`.
    pub fn identifier() -> Self {
        Self {
            width_bits: 256,
            slice_offset: 8,
            slice_len: 32,
        }
    }

    pub fn width_bits(&self) -> u16 {
        self.width_bits
    }

    /// Bytes occupied by one summary value (`width_bits / 8`).
    pub fn summary_len(&self) -> usize {
        usize::from(self.width_bits / 8)
    }

    pub fn slice_offset(&self) -> usize {
        usize::from(self.slice_offset)
    }

    pub fn slice_len(&self) -> usize {
        usize::from(self.slice_len)
    }

    /// Summary of a single item: the configured slice of its encoding read
    /// as a big-endian integer, reduced modulo `2^width_bits`.
    pub fn item_summary(&self, key: &ItemKey) -> Summary {
        let encoded = key.encode();
        let slice = &encoded[self.slice_offset()..self.slice_offset() + self.slice_len()];
        Summary::from_be_slice(self.width_bits, slice)
    }
}

impl Default for SummaryConfig {
    fn default() -> Self {
        Self::identifier()
    }
}

/// An unsigned integer modulo `2^width_bits`, stored as little-endian limbs.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Summary {
    width_bits: u16,
    value: [u8; MAX_SUMMARY_BYTES],
}

impl Summary {
    pub fn zero(width_bits: u16) -> Self {
        Self {
            width_bits,
            value: [0; MAX_SUMMARY_BYTES],
        }
    }

    /// Builds a summary from a big-endian digit string. Input longer than
    /// the summary width is reduced modulo `2^width_bits` by dropping the
    /// high-order bytes.
    pub fn from_be_slice(width_bits: u16, bytes: &[u8]) -> Self {
        let mut out = Self::zero(width_bits);
        let len = out.len().min(bytes.len());
        for (i, b) in bytes.iter().rev().take(len).enumerate() {
            out.value[i] = *b;
        }
        out
    }

    /// Reads a little-endian summary value of exactly `width_bits / 8` bytes.
    pub fn from_le_slice(width_bits: u16, bytes: &[u8]) -> Self {
        let mut out = Self::zero(width_bits);
        let len = out.len().min(bytes.len());
        out.value[..len].copy_from_slice(&bytes[..len]);
        out
    }

    pub fn width_bits(&self) -> u16 {
        self.width_bits
    }

    fn len(&self) -> usize {
        usize::from(self.width_bits / 8)
    }

    /// The value as little-endian bytes, `width_bits / 8` long.
    pub fn as_le_bytes(&self) -> &[u8] {
        &self.value[..self.len()]
    }

    pub fn is_zero(&self) -> bool {
        self.value.iter().all(|b| *b == 0)
    }

    /// Modular addition: byte-wise add with carry, dropping the final carry.
    pub(crate) fn add_assign_wrapping(&mut self, rhs: &Summary) {
        debug_assert_eq!(self.width_bits, rhs.width_bits);
        let mut carry = 0u16;
        for i in 0..self.len() {
            let sum = u16::from(self.value[i]) + u16::from(rhs.value[i]) + carry;
            self.value[i] = (sum & 0xff) as u8;
            carry = sum >> 8;
        }
    }
}

impl fmt::Debug for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x")?;
        for b in self.as_le_bytes().iter().rev() {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

/// The range aggregate `(count, summary)`; the monoid element cached per
/// subtree and fingerprinted by the protocol.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Aggregate {
    pub count: u64,
    pub summary: Summary,
}

impl Aggregate {
    /// The monoid identity `(0, 0)`.
    pub fn identity(width_bits: u16) -> Self {
        Self {
            count: 0,
            summary: Summary::zero(width_bits),
        }
    }

    pub fn of_item(key: &ItemKey, cfg: &SummaryConfig) -> Self {
        Self {
            count: 1,
            summary: cfg.item_summary(key),
        }
    }

    /// Aggregate of a strictly increasing item sequence.
    ///
    /// Panics if the input is unsorted or contains duplicates; callers own
    /// that precondition.
    pub fn of_items(items: &[ItemKey], cfg: &SummaryConfig) -> Self {
        let mut agg = Self::identity(cfg.width_bits());
        let mut prev: Option<&ItemKey> = None;
        for key in items {
            if let Some(p) = prev {
                assert!(p < key, "items must be strictly increasing");
            }
            agg.push(key, cfg);
            prev = Some(key);
        }
        agg
    }

    /// Componentwise combination; errors when the summary widths disagree.
    pub fn combine(&self, other: &Aggregate) -> Result<Aggregate, WidthMismatch> {
        if self.summary.width_bits() != other.summary.width_bits() {
            return Err(WidthMismatch {
                left: self.summary.width_bits(),
                right: other.summary.width_bits(),
            });
        }
        let mut out = *self;
        out.merge(other);
        Ok(out)
    }

    /// Unchecked in-place combine for widths known to match.
    pub(crate) fn merge(&mut self, other: &Aggregate) {
        self.count += other.count;
        self.summary.add_assign_wrapping(&other.summary);
    }

    /// Folds one more item into the aggregate.
    pub(crate) fn push(&mut self, key: &ItemKey, cfg: &SummaryConfig) {
        self.count += 1;
        self.summary.add_assign_wrapping(&cfg.item_summary(key));
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Canonical encoding hashed by [`Aggregate::fingerprint`]: the summary
    /// value as `width_bits / 8` little-endian bytes followed by the count
    /// as unsigned LEB128.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.summary.as_le_bytes().len() + 10);
        out.extend_from_slice(self.summary.as_le_bytes());
        write_uleb128(&mut out, self.count);
        out
    }

    /// The protocol comparison value: the first 16 bytes of the SHA-256 of
    /// the canonical aggregate encoding.
    pub fn fingerprint(&self) -> Fingerprint {
        let digest = Sha256::digest(self.canonical_bytes());
        let mut out = [0u8; FINGERPRINT_LEN];
        out.copy_from_slice(&digest[..FINGERPRINT_LEN]);
        Fingerprint(out)
    }
}

/// Length of a fingerprint in bytes.
pub const FINGERPRINT_LEN: usize = 16;

/// Fixed-size comparison value derived from an aggregate. Equality of
/// fingerprints is the protocol's skip test.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Fingerprint(pub [u8; FINGERPRINT_LEN]);

impl Fingerprint {
    pub fn as_bytes(&self) -> &[u8; FINGERPRINT_LEN] {
        &self.0
    }
}

impl fmt::Debug for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "fp:")?;
        for b in &self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}
