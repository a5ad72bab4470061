//! Deterministic benchmark instance generation.
//!
//! Each scenario family fixes how many items the two peers share and how
//! many each holds alone, both inside the reconciled slice and as context
//! outside it. All randomness flows from one seeded [`SplitMix64`] stream,
//! so a `(family, index, seed)` triple always produces the same item sets,
//! byte for byte, on any platform.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rsos_core::{Bound, HalfOpenRange, ItemKey, ID_LEN};

/// SplitMix64. The increment and the two mixing multipliers are the
/// standard constants; the algorithm is frozen so scenario bytes stay
/// reproducible across implementations.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub const GAMMA: u64 = 0x9e37_79b9_7f4a_7b15;
    pub const MIX_1: u64 = 0xbf58_476d_1ce4_e5b9;
    pub const MIX_2: u64 = 0x94d0_49bb_1331_11eb;

    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(Self::GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(Self::MIX_1);
        z = (z ^ (z >> 27)).wrapping_mul(Self::MIX_2);
        z ^ (z >> 31)
    }

    /// Uniform-enough draw below `n`; the modulo bias is irrelevant at the
    /// ranges used here and keeps the stream definition trivial.
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        self.next_u64() % n
    }
}

/// Reconciled slice and its out-of-slice context, in abstract ticks.
pub const SLICE_LO: u64 = 1_000_000;
pub const SLICE_HI: u64 = 2_000_000;
pub const CONTEXT_BELOW_LO: u64 = 0;
pub const CONTEXT_ABOVE_HI: u64 = 3_000_000;

/// The six scenario families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    BaseDense,
    BaseSparse,
    ScaleDense,
    ScaleSparse,
    Stress,
    StressDyn,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::BaseDense,
        Family::BaseSparse,
        Family::ScaleDense,
        Family::ScaleSparse,
        Family::Stress,
        Family::StressDyn,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Family::BaseDense => "base_dense",
            Family::BaseSparse => "base_sparse",
            Family::ScaleDense => "scale_dense",
            Family::ScaleSparse => "scale_sparse",
            Family::Stress => "stress",
            Family::StressDyn => "stress_dyn",
        }
    }

    /// Population counts at instance `index`. In-slice and out-of-slice
    /// one-sided counts apply per peer; the out-of-slice totals are split
    /// evenly below and above the slice.
    pub fn counts(&self, index: u32) -> ScenarioCounts {
        let i = u64::from(index);
        let (in_common, in_one_sided, out_common, out_one_sided) = match self {
            Family::BaseDense => (64 * i, 4 * i, 1000 * i, 200 * i),
            Family::BaseSparse => (128 * i, 6 * i, 2000 * i, 400 * i),
            Family::ScaleDense => (256 * i * i, 8 * i, 4000 * i, 800 * i),
            Family::ScaleSparse => (512 * i, 16 * i, 6000 * i, 1200 * i),
            Family::Stress => (1024 * i * i, 64 * i, 8000 * i, 1600 * i),
            Family::StressDyn => (4096 * i * i, 1024 * i * i, 4000 * i * i, 800 * i * i),
        };
        ScenarioCounts {
            in_common,
            in_one_sided,
            out_common,
            out_one_sided,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| {
                format!(
                    "unknown family {s:?} (expected one of base_dense, base_sparse, \
                 scale_dense, scale_sparse, stress, stress_dyn)"
                )
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScenarioCounts {
    pub in_common: u64,
    /// Items only one peer holds inside the slice, per peer.
    pub in_one_sided: u64,
    pub out_common: u64,
    /// Items only one peer holds outside the slice, per peer.
    pub out_one_sided: u64,
}

/// One benchmark cell: family instance, seed, and the reconciled slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScenarioSpec {
    pub family: Family,
    pub index: u32,
    pub seed: u64,
    pub slice: (u64, u64),
}

impl ScenarioSpec {
    pub fn new(family: Family, index: u32, seed: u64) -> Self {
        assert!((1..=8).contains(&index), "instance index must be in 1..=8");
        Self {
            family,
            index,
            seed,
            slice: (SLICE_LO, SLICE_HI),
        }
    }

    pub fn outer(&self) -> HalfOpenRange {
        HalfOpenRange::new(
            Bound::Key(ItemKey::at_timestamp(self.slice.0)),
            Bound::Key(ItemKey::at_timestamp(self.slice.1)),
        )
        .expect("slice bounds ordered")
    }
}

/// A generated instance: both item sets, the outer range to reconcile, and
/// the planted ground truth restricted to that range.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub items_x: Vec<ItemKey>,
    pub items_y: Vec<ItemKey>,
    pub outer: HalfOpenRange,
    pub expected_have: BTreeSet<ItemKey>,
    pub expected_need: BTreeSet<ItemKey>,
}

/// Generation order is fixed: in-slice common, X-only, Y-only; then
/// out-of-slice common, X-only, Y-only, each alternating below/above the
/// slice. Every key is distinct across the whole instance.
pub fn generate(spec: &ScenarioSpec) -> Scenario {
    let counts = spec.family.counts(spec.index);
    let mut rng = SplitMix64::new(spec.seed);
    let mut used: BTreeSet<ItemKey> = BTreeSet::new();
    let (slice_lo, slice_hi) = spec.slice;

    let fresh_key = |rng: &mut SplitMix64, used: &mut BTreeSet<ItemKey>, lo: u64, hi: u64| loop {
        let ts = lo + rng.below(hi - lo);
        let mut id = [0u8; ID_LEN];
        for chunk in id.chunks_mut(8) {
            chunk.copy_from_slice(&rng.next_u64().to_be_bytes());
        }
        let key = ItemKey::new(ts, id);
        if used.insert(key) {
            return key;
        }
    };

    let mut items_x = Vec::new();
    let mut items_y = Vec::new();
    for _ in 0..counts.in_common {
        let k = fresh_key(&mut rng, &mut used, slice_lo, slice_hi);
        items_x.push(k);
        items_y.push(k);
    }
    let mut expected_have = BTreeSet::new();
    for _ in 0..counts.in_one_sided {
        let k = fresh_key(&mut rng, &mut used, slice_lo, slice_hi);
        items_x.push(k);
        expected_have.insert(k);
    }
    let mut expected_need = BTreeSet::new();
    for _ in 0..counts.in_one_sided {
        let k = fresh_key(&mut rng, &mut used, slice_lo, slice_hi);
        items_y.push(k);
        expected_need.insert(k);
    }
    // Even positions go below the slice, odd positions above.
    let out_key = |rng: &mut SplitMix64, used: &mut BTreeSet<ItemKey>, n: u64| {
        if n.is_multiple_of(2) {
            fresh_key(rng, used, CONTEXT_BELOW_LO, slice_lo)
        } else {
            fresh_key(rng, used, slice_hi, CONTEXT_ABOVE_HI)
        }
    };
    for n in 0..counts.out_common {
        let k = out_key(&mut rng, &mut used, n);
        items_x.push(k);
        items_y.push(k);
    }
    for n in 0..counts.out_one_sided {
        let k = out_key(&mut rng, &mut used, n);
        items_x.push(k);
    }
    for n in 0..counts.out_one_sided {
        let k = out_key(&mut rng, &mut used, n);
        items_y.push(k);
    }

    Scenario {
        items_x,
        items_y,
        outer: spec.outer(),
        expected_have,
        expected_need,
    }
}
