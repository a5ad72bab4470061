//! The recursive range reconciliation engine.
//!
//! Two peers compare fingerprints of contiguous ranges and refine only where
//! they disagree: a matched range is skipped, a small range is enumerated
//! explicitly, and a large mismatched range is split into rank-balanced
//! children whose fingerprints go back to the peer. The driver exchanges
//! canonically encoded messages between two local stores until both sides
//! fall silent, leaving the initiator with the exact `have`/`need` sets.

mod message;

pub use message::{Message, MessageElement, Payload, MESSAGE_FORMAT_VERSION};

use std::collections::{BTreeMap, BTreeSet};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::aggregate::Fingerprint;
use crate::codec::DecodeError;
use crate::key::{Bound, HalfOpenRange, ItemKey};
use crate::store::{Rsos, StoreError};

/// Refinement parameters: split fanout `b` and the explicit-enumeration
/// cutoff `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProtocolParams {
    branch_factor: u32,
    idlist_threshold: u64,
}

impl ProtocolParams {
    pub fn new(branch_factor: u32, idlist_threshold: u64) -> Self {
        assert!(branch_factor >= 2, "split fanout must be at least 2");
        assert!(
            idlist_threshold >= 1,
            "enumeration cutoff must be at least 1"
        );
        Self {
            branch_factor,
            idlist_threshold,
        }
    }

    pub fn branch_factor(&self) -> u32 {
        self.branch_factor
    }

    pub fn idlist_threshold(&self) -> u64 {
        self.idlist_threshold
    }
}

impl Default for ProtocolParams {
    /// Split fanout 16, enumeration cutoff 32.
    fn default() -> Self {
        Self {
            branch_factor: 16,
            idlist_threshold: 32,
        }
    }
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("peers use different summary configurations")]
    ConfigMismatch,
    #[error("message ranges overlap or are not ascending")]
    MalformedRanges,
    #[error("id list keys unsorted, duplicated, or outside their range")]
    MalformedIdList,
    #[error("cut sequence is decreasing")]
    DecreasingCuts,
    #[error("round limit {0} exceeded without quiescence")]
    RoundLimit(u32),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Which side of the exchange a session plays. Only the initiator
/// materializes the difference sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Initiator,
    Responder,
}

/// Outcome of one responder step on one queried range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RespondOutcome {
    /// Fingerprints matched; the range is resolved.
    Skip,
    /// At most `t` local items: their explicit ordered contents.
    IdList(Vec<ItemKey>),
    /// Rank-balanced children with their local fingerprints; the children
    /// partition the parent exactly.
    Split(Vec<(HalfOpenRange, Fingerprint)>),
}

/// Drops consecutive duplicate cuts from a non-decreasing sequence, so
/// zero-width children disappear. Decreasing input is rejected.
pub fn normalize_cuts(cuts: Vec<Bound>) -> Result<Vec<Bound>, ProtocolError> {
    let mut out: Vec<Bound> = Vec::with_capacity(cuts.len());
    for cut in cuts {
        match out.last() {
            Some(last) if cut < *last => return Err(ProtocolError::DecreasingCuts),
            Some(last) if cut == *last => {}
            _ => out.push(cut),
        }
    }
    Ok(out)
}

/// Balanced splitting by rank: cut `[lo, hi)` into at most `branch_factor`
/// consecutive parts, each holding `floor(m/b)` or `ceil(m/b)` of the `m`
/// local items. Returns the normalized cut list, `[lo, hi]` when the range
/// holds no items.
pub fn split_by_rank<S: Rsos>(
    store: &S,
    lo: &Bound,
    hi: &Bound,
    branch_factor: u32,
) -> Result<Vec<Bound>, ProtocolError> {
    assert!(branch_factor >= 2, "split fanout must be at least 2");
    let m = store.aggregate(lo, hi)?.count;
    if m == 0 {
        return Ok(vec![*lo, *hi]);
    }
    let base = store.rank(lo)?;
    let mut cuts = Vec::with_capacity(branch_factor as usize + 1);
    cuts.push(*lo);
    for j in 1..u64::from(branch_factor) {
        let q = quantile(j, m, branch_factor);
        cuts.push(Bound::Key(store.select(base + q)?));
    }
    cuts.push(*hi);
    normalize_cuts(cuts)
}

/// `floor(j * m / b)` without intermediate overflow.
fn quantile(j: u64, m: u64, b: u32) -> u64 {
    ((j as u128 * m as u128) / b as u128) as u64
}

/// One responder step: skip on fingerprint match, enumerate at or below the
/// cutoff, otherwise split by rank and fingerprint every child.
pub fn respond<S: Rsos>(
    store: &S,
    range: &HalfOpenRange,
    remote_fp: &Fingerprint,
    params: &ProtocolParams,
) -> Result<RespondOutcome, ProtocolError> {
    let mut session = Session::new(store, *params, Role::Responder);
    session.respond_one(range, remote_fp)
}

/// Opening message: the whole outer range under one fingerprint.
pub fn initiate<S: Rsos>(store: &S, outer: &HalfOpenRange) -> Result<Message, ProtocolError> {
    let agg = store.aggregate(outer.lo(), outer.hi())?;
    Ok(Message::new(vec![MessageElement {
        range: *outer,
        payload: Payload::Fingerprint(agg.fingerprint()),
    }]))
}

/// Reconciliation-tree accounting, summed over the ranges this peer
/// answered: `queried = splits + skips + id_lists`, and `listed_items` is
/// the total explicit output of its id-list leaves.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepCounters {
    pub queried: u64,
    pub splits: u64,
    pub skips: u64,
    pub id_lists: u64,
    pub listed_items: u64,
}

impl StepCounters {
    fn absorb(&mut self, other: &StepCounters) {
        self.queried += other.queried;
        self.splits += other.splits;
        self.skips += other.skips;
        self.id_lists += other.id_lists;
        self.listed_items += other.listed_items;
    }
}

/// Difference sets from the initiator's perspective.
#[derive(Debug, Clone, Default)]
pub struct DeltaSink {
    /// Local items the peer lacks.
    pub have: BTreeSet<ItemKey>,
    /// Peer items missing locally.
    pub need: BTreeSet<ItemKey>,
}

/// Locally derived ranks of range bounds, reused across a session so that
/// repeated refinement under the same outer range skips redundant rank
/// descents. Entries come only from work the session had to do anyway:
/// rank calls made for splits, cut positions chosen by rank arithmetic, and
/// range counts already in hand.
#[derive(Debug, Default)]
struct RankAnchors {
    ranks: BTreeMap<Bound, u64>,
}

impl RankAnchors {
    fn get(&self, bound: &Bound) -> Option<u64> {
        self.ranks.get(bound).copied()
    }

    fn insert(&mut self, bound: Bound, rank: u64) {
        self.ranks.insert(bound, rank);
    }
}

/// One peer's half of a reconciliation exchange. Sessions are stateless with
/// respect to the protocol (active ranges live in the messages); they only
/// accumulate counters, the initiator's difference sets, and optional rank
/// anchors.
pub struct Session<'a, S: Rsos> {
    store: &'a S,
    params: ProtocolParams,
    role: Role,
    anchors: Option<RankAnchors>,
    /// Reconciliation-tree counters for ranges answered by this peer.
    pub counters: StepCounters,
    /// Node visits attributable to answering fingerprint queries.
    pub respond_visits: u64,
    /// Difference sets; populated only in the initiator role.
    pub delta: DeltaSink,
    /// Every range this peer resolved with a fingerprint match.
    pub skipped_ranges: Vec<HalfOpenRange>,
}

impl<'a, S: Rsos> Session<'a, S> {
    pub fn new(store: &'a S, params: ProtocolParams, role: Role) -> Self {
        Self {
            store,
            params,
            role,
            anchors: None,
            counters: StepCounters::default(),
            respond_visits: 0,
            delta: DeltaSink::default(),
            skipped_ranges: Vec::new(),
        }
    }

    /// Enables rank-anchor reuse (the window path). Answers and emitted
    /// messages are identical; only local navigation work changes.
    pub fn with_windows(mut self) -> Self {
        self.anchors = Some(RankAnchors::default());
        self
    }

    pub fn initiate(&mut self, outer: &HalfOpenRange) -> Result<Message, ProtocolError> {
        initiate(self.store, outer)
    }

    /// Applies one incoming message and returns the reply; an empty reply
    /// means this side is done.
    pub fn process(&mut self, incoming: &Message) -> Result<Message, ProtocolError> {
        if incoming
            .elements
            .windows(2)
            .any(|w| w[0].range.hi() > w[1].range.lo())
        {
            return Err(ProtocolError::MalformedRanges);
        }
        let mut out = Vec::new();
        for el in &incoming.elements {
            match &el.payload {
                Payload::Skip => {}
                Payload::Fingerprint(remote_fp) => {
                    let before = self.store.total_stats().nodes_visited;
                    let outcome = self.respond_one(&el.range, remote_fp)?;
                    self.respond_visits += self.store.total_stats().nodes_visited - before;
                    self.counters.queried += 1;
                    match outcome {
                        RespondOutcome::Skip => {
                            self.counters.skips += 1;
                            self.skipped_ranges.push(el.range);
                            out.push(MessageElement {
                                range: el.range,
                                payload: Payload::Skip,
                            });
                        }
                        RespondOutcome::IdList(keys) => {
                            self.counters.id_lists += 1;
                            self.counters.listed_items += keys.len() as u64;
                            out.push(MessageElement {
                                range: el.range,
                                payload: Payload::IdList {
                                    keys,
                                    want_reply: self.role == Role::Initiator,
                                },
                            });
                        }
                        RespondOutcome::Split(children) => {
                            self.counters.splits += 1;
                            for (range, fp) in children {
                                out.push(MessageElement {
                                    range,
                                    payload: Payload::Fingerprint(fp),
                                });
                            }
                        }
                    }
                }
                Payload::IdList {
                    keys: remote,
                    want_reply,
                } => {
                    self.receive_id_list(&el.range, remote, *want_reply, &mut out)?;
                }
            }
        }
        Ok(Message::new(out))
    }

    fn receive_id_list(
        &mut self,
        range: &HalfOpenRange,
        remote: &[ItemKey],
        want_reply: bool,
        out: &mut Vec<MessageElement>,
    ) -> Result<(), ProtocolError> {
        if !remote.windows(2).all(|w| w[0] < w[1]) || remote.iter().any(|k| !range.contains(k)) {
            return Err(ProtocolError::MalformedIdList);
        }
        let local = self.store.enumerate(range.lo(), range.hi())?;
        self.propagate_count_anchor(range, local.len() as u64);
        if self.role == Role::Initiator {
            let remote_set: BTreeSet<&ItemKey> = remote.iter().collect();
            let local_set: BTreeSet<&ItemKey> = local.iter().collect();
            self.delta
                .have
                .extend(local.iter().filter(|k| !remote_set.contains(k)).copied());
            self.delta
                .need
                .extend(remote.iter().filter(|k| !local_set.contains(k)).copied());
        } else if want_reply {
            out.push(MessageElement {
                range: *range,
                payload: Payload::IdList {
                    keys: local,
                    want_reply: false,
                },
            });
        }
        Ok(())
    }

    /// Records `rank(range.hi) = rank(range.lo) + count` when the lower
    /// bound's rank is already known.
    fn propagate_count_anchor(&mut self, range: &HalfOpenRange, count: u64) {
        if let Some(anchors) = &mut self.anchors {
            if let Some(rank_lo) = anchors.get(range.lo()) {
                anchors.insert(*range.hi(), rank_lo + count);
            }
        }
    }

    /// One responder step. With anchors enabled, known rank intervals
    /// replace rank descents and key-bounded aggregation; every fallback is
    /// exactly the plain path, so anchored work never exceeds it.
    fn respond_one(
        &mut self,
        range: &HalfOpenRange,
        remote_fp: &Fingerprint,
    ) -> Result<RespondOutcome, ProtocolError> {
        let rank_lo = self.anchors.as_ref().and_then(|a| a.get(range.lo()));
        let rank_hi = self.anchors.as_ref().and_then(|a| a.get(range.hi()));
        let agg = match (rank_lo, rank_hi) {
            (Some(rl), Some(rh)) => self.store.aggregate_by_rank(rl, rh)?,
            _ => self.store.aggregate(range.lo(), range.hi())?,
        };
        self.propagate_count_anchor(range, agg.count);
        if agg.fingerprint() == *remote_fp {
            return Ok(RespondOutcome::Skip);
        }
        if agg.count <= self.params.idlist_threshold {
            return Ok(RespondOutcome::IdList(
                self.store.enumerate(range.lo(), range.hi())?,
            ));
        }

        let m = agg.count;
        let base = match rank_lo {
            Some(rl) => rl,
            None => {
                let rl = self.store.rank(range.lo())?;
                if let Some(anchors) = &mut self.anchors {
                    anchors.insert(*range.lo(), rl);
                    anchors.insert(*range.hi(), rl + m);
                }
                rl
            }
        };
        let b = self.params.branch_factor;
        let mut cuts = Vec::with_capacity(b as usize + 1);
        let mut cut_ranks: BTreeMap<Bound, u64> = BTreeMap::new();
        cut_ranks.insert(*range.lo(), base);
        cut_ranks.insert(*range.hi(), base + m);
        cuts.push(*range.lo());
        for j in 1..u64::from(b) {
            let q = quantile(j, m, b);
            let cut = Bound::Key(self.store.select(base + q)?);
            cut_ranks.entry(cut).or_insert(base + q);
            cuts.push(cut);
        }
        cuts.push(*range.hi());
        let cuts = normalize_cuts(cuts)?;
        if let Some(anchors) = &mut self.anchors {
            for (bound, rank) in &cut_ranks {
                anchors.insert(*bound, *rank);
            }
        }

        let mut children = Vec::with_capacity(cuts.len() - 1);
        let mut total = 0u64;
        for pair in cuts.windows(2) {
            let child = HalfOpenRange::new(pair[0], pair[1]).expect("cuts ascend");
            let child_agg = if self.anchors.is_some() {
                let (rl, rh) = (cut_ranks[&pair[0]], cut_ranks[&pair[1]]);
                self.store.aggregate_by_rank(rl, rh)?
            } else {
                self.store.aggregate(child.lo(), child.hi())?
            };
            total += child_agg.count;
            children.push((child, child_agg.fingerprint()));
        }
        // Children partition the parent exactly: cuts run from lo to hi and
        // every local item lands in exactly one child.
        debug_assert_eq!(children.first().map(|(r, _)| *r.lo()), Some(*range.lo()));
        debug_assert_eq!(children.last().map(|(r, _)| *r.hi()), Some(*range.hi()));
        debug_assert!(children.windows(2).all(|w| w[0].0.hi() == w[1].0.lo()));
        debug_assert_eq!(total, m);
        Ok(RespondOutcome::Split(children))
    }
}

/// Everything a finished reconciliation reports: the initiator's difference
/// sets, exchange metrics, the transcript hash over all message bytes in
/// order, and the combined accounting counters.
#[derive(Debug)]
pub struct ReconcileOutcome {
    pub have: BTreeSet<ItemKey>,
    pub need: BTreeSet<ItemKey>,
    pub rounds: u32,
    pub messages: u32,
    pub bytes_sent: u64,
    pub transcript_hash: [u8; 32],
    /// Both peers' reconciliation-tree counters combined; together they
    /// describe the whole refinement tree.
    pub counters: StepCounters,
    pub initiator_visits: u64,
    pub responder_visits: u64,
    /// Node visits spent answering fingerprint queries, both peers.
    pub respond_visits: u64,
    /// Ranges resolved by fingerprint match on either side, for post-hoc
    /// skip-soundness audits.
    pub skipped_ranges: Vec<HalfOpenRange>,
}

/// Hard cap on exchange rounds; a diagnostic guard that valid inputs never
/// reach.
pub const MAX_ROUNDS: u32 = 64;

/// Drives alternating message exchange between an initiator and a responder
/// store until both fall silent, returning the initiator-perspective
/// difference sets and full accounting. With `use_windows`, both sessions
/// reuse rank anchors; transcripts are identical either way.
pub fn reconcile<SX: Rsos, SY: Rsos>(
    initiator: &SX,
    responder: &SY,
    outer: &HalfOpenRange,
    params: &ProtocolParams,
    use_windows: bool,
) -> Result<ReconcileOutcome, ProtocolError> {
    if initiator.summary_config() != responder.summary_config() {
        return Err(ProtocolError::ConfigMismatch);
    }
    let mut session_x = Session::new(initiator, *params, Role::Initiator);
    let mut session_y = Session::new(responder, *params, Role::Responder);
    if use_windows {
        session_x = session_x.with_windows();
        session_y = session_y.with_windows();
    }
    let x_start = initiator.total_stats().nodes_visited;
    let y_start = responder.total_stats().nodes_visited;

    let mut transcript = Sha256::new();
    let first = session_x.initiate(outer)?.encode();
    transcript.update(&first);
    let mut messages = 1u32;
    let mut bytes_sent = first.len() as u64;
    let mut rounds = 0u32;
    let mut wire = first;
    let mut to_responder = true;
    loop {
        let incoming = Message::decode(&wire)?;
        let reply = if to_responder {
            rounds += 1;
            if rounds > MAX_ROUNDS {
                return Err(ProtocolError::RoundLimit(MAX_ROUNDS));
            }
            session_y.process(&incoming)?
        } else {
            session_x.process(&incoming)?
        };
        if reply.is_empty() {
            break;
        }
        wire = reply.encode();
        transcript.update(&wire);
        messages += 1;
        bytes_sent += wire.len() as u64;
        to_responder = !to_responder;
    }

    let mut counters = session_x.counters;
    counters.absorb(&session_y.counters);
    let mut skipped_ranges = session_x.skipped_ranges;
    skipped_ranges.extend(session_y.skipped_ranges);
    Ok(ReconcileOutcome {
        have: session_x.delta.have,
        need: session_x.delta.need,
        rounds,
        messages,
        bytes_sent,
        transcript_hash: transcript.finalize().into(),
        counters,
        initiator_visits: initiator.total_stats().nodes_visited - x_start,
        responder_visits: responder.total_stats().nodes_visited - y_start,
        respond_visits: session_x.respond_visits + session_y.respond_visits,
        skipped_ranges,
    })
}

#[cfg(test)]
mod tests;
