//! Canonical message encoding exchanged by reconciliation peers.
//!
//! A message is an ordered sequence of elements, each a half-open range with
//! one of three payloads: `Skip` (range matched), `Fingerprint` (compare and
//! refine), or `IdList` (explicit contents). The byte format is frozen —
//! transcript hashes are computed over these exact bytes:
//!
//! ```text
//! message := version(0x01) uleb128(count) element*
//! element := bound(lo) bound(hi) tag payload
//! payload := ''                                    tag 0, skip
//!          | fingerprint[16]                       tag 1
//!          | want_reply(0|1) uleb128(n) key[40]*n  tag 2
//! ```

use crate::aggregate::{Fingerprint, FINGERPRINT_LEN};
use crate::codec::{write_uleb128, DecodeError, Reader};
use crate::key::{Bound, HalfOpenRange, ItemKey, ENCODED_KEY_LEN};

/// Leading format byte of every encoded message.
pub const MESSAGE_FORMAT_VERSION: u8 = 0x01;

const TAG_SKIP: u8 = 0;
const TAG_FINGERPRINT: u8 = 1;
const TAG_ID_LIST: u8 = 2;

/// Payload of one message element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    /// The sender matched this range; it is resolved.
    Skip,
    /// The sender's comparison value for this range.
    Fingerprint(Fingerprint),
    /// The sender's ordered contents of this range. `want_reply` asks the
    /// receiver to answer with its own contents of the same range.
    IdList {
        keys: Vec<ItemKey>,
        want_reply: bool,
    },
}

/// One protocol element: a range and what the sender says about it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageElement {
    pub range: HalfOpenRange,
    pub payload: Payload,
}

/// An ordered batch of elements over pairwise disjoint, ascending ranges.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Message {
    pub elements: Vec<MessageElement>,
}

impl Message {
    pub fn new(elements: Vec<MessageElement>) -> Self {
        Self { elements }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.elements.len() * 100);
        out.push(MESSAGE_FORMAT_VERSION);
        write_uleb128(&mut out, self.elements.len() as u64);
        for el in &self.elements {
            el.range.lo().encode_into(&mut out);
            el.range.hi().encode_into(&mut out);
            match &el.payload {
                Payload::Skip => out.push(TAG_SKIP),
                Payload::Fingerprint(fp) => {
                    out.push(TAG_FINGERPRINT);
                    out.extend_from_slice(fp.as_bytes());
                }
                Payload::IdList { keys, want_reply } => {
                    out.push(TAG_ID_LIST);
                    out.push(u8::from(*want_reply));
                    write_uleb128(&mut out, keys.len() as u64);
                    for k in keys {
                        out.extend_from_slice(&k.encode());
                    }
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let version = r.u8()?;
        if version != MESSAGE_FORMAT_VERSION {
            return Err(DecodeError::BadVersion(version));
        }
        let count = r.uleb128()?;
        let mut elements = Vec::new();
        for _ in 0..count {
            let lo = Bound::read_from(&mut r)?;
            let hi = Bound::read_from(&mut r)?;
            let range = HalfOpenRange::new(lo, hi).map_err(|_| DecodeError::BadRange)?;
            let payload = match r.u8()? {
                TAG_SKIP => Payload::Skip,
                TAG_FINGERPRINT => {
                    let mut fp = [0u8; FINGERPRINT_LEN];
                    fp.copy_from_slice(r.bytes(FINGERPRINT_LEN)?);
                    Payload::Fingerprint(Fingerprint(fp))
                }
                TAG_ID_LIST => {
                    let want_reply = match r.u8()? {
                        0 => false,
                        1 => true,
                        b => return Err(DecodeError::BadTag(b)),
                    };
                    let n = r.uleb128()?;
                    let mut keys = Vec::with_capacity(n.min(1 << 20) as usize);
                    for _ in 0..n {
                        keys.push(ItemKey::decode(r.bytes(ENCODED_KEY_LEN)?)?);
                    }
                    Payload::IdList { keys, want_reply }
                }
                tag => return Err(DecodeError::BadTag(tag)),
            };
            elements.push(MessageElement { range, payload });
        }
        if !r.is_empty() {
            return Err(DecodeError::TrailingBytes);
        }
        Ok(Self { elements })
    }
}
