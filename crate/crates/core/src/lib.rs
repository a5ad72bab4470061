//! Range-based set reconciliation over range-summarizable
//! order-statistics stores.
//!
//! The crate provides three interchangeable backends behind one store
//! interface — a sorted-vector reference, an aggregate-augmented B+-tree,
//! and a copy-on-write paged file — plus a window-subrange acceleration
//! layer and the recursive reconciliation engine that drives two stores to
//! their exact symmetric difference.

pub mod aggregate;
pub mod btree;
pub mod codec;
pub mod key;
pub mod paged;
pub mod protocol;
pub mod store;
pub mod window;

pub use aggregate::{Aggregate, ConfigError, Fingerprint, Summary, SummaryConfig, WidthMismatch};
pub use btree::AggBTree;
pub use codec::DecodeError;
pub use key::{Bound, HalfOpenRange, InvertedBounds, ItemKey, ENCODED_KEY_LEN, ID_LEN};
pub use paged::{PagedSnapshot, PagedStore, VerifyReport};
pub use protocol::{
    initiate, normalize_cuts, reconcile, respond, split_by_rank, Message, MessageElement, Payload,
    ProtocolError, ProtocolParams, ReconcileOutcome, RespondOutcome, Role, Session, StepCounters,
};
pub use store::{OpStats, Rsos, RsosMut, StoreError, VecStore};
pub use window::{WindowError, WindowHandle};
