//! Builds stores from a scenario, drives reconciliations, and collects
//! metrics. Every run is validated against the planted ground truth; a
//! mismatch is a hard failure.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rsos_core::store::RsosMut;
use rsos_core::{
    reconcile, AggBTree, ItemKey, PagedStore, ProtocolParams, ReconcileOutcome, Rsos,
    SummaryConfig, VecStore,
};
use serde::Serialize;

use crate::scenario::{generate, Scenario, ScenarioSpec};

/// Store configuration under benchmark. The `*Window` variants run the same
/// store with rank-anchor reuse enabled in the protocol sessions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Backend {
    #[serde(rename = "ref")]
    Ref,
    #[serde(rename = "btree")]
    BTree,
    #[serde(rename = "paged")]
    Paged,
    #[serde(rename = "btree+window")]
    BTreeWindow,
    #[serde(rename = "paged+window")]
    PagedWindow,
}

impl Backend {
    pub const ALL: [Backend; 5] = [
        Backend::Ref,
        Backend::BTree,
        Backend::Paged,
        Backend::BTreeWindow,
        Backend::PagedWindow,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Backend::Ref => "ref",
            Backend::BTree => "btree",
            Backend::Paged => "paged",
            Backend::BTreeWindow => "btree+window",
            Backend::PagedWindow => "paged+window",
        }
    }

    pub fn uses_windows(&self) -> bool {
        matches!(self, Backend::BTreeWindow | Backend::PagedWindow)
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Backend::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| {
                format!(
                    "unknown backend {s:?} (expected one of ref, btree, paged, \
                 btree+window, paged+window)"
                )
            })
    }
}

/// One row of benchmark output. Timing fields vary run to run; everything
/// else is deterministic for a fixed `(family, i, backend, seed)`.
#[derive(Debug, Clone, Serialize)]
pub struct RunMetrics {
    pub family: String,
    #[serde(rename = "i")]
    pub index: u32,
    pub backend: String,
    pub seed: u64,
    pub t_prep_ms: f64,
    pub t_rec_ms: f64,
    pub rounds: u32,
    pub messages: u32,
    pub bytes: u64,
    #[serde(rename = "Q")]
    pub queried: u64,
    #[serde(rename = "I")]
    pub splits: u64,
    #[serde(rename = "K")]
    pub listed_items: u64,
    pub node_visits: u64,
    pub disk_bytes: Option<u64>,
    pub transcript_hash: String,
}

/// Reconciliation parameters used by every benchmark run.
pub fn bench_params() -> ProtocolParams {
    ProtocolParams::default()
}

fn verify_ground_truth(
    out: &ReconcileOutcome,
    expected_have: &BTreeSet<ItemKey>,
    expected_need: &BTreeSet<ItemKey>,
) -> Result<()> {
    if &out.have != expected_have || &out.need != expected_need {
        bail!(
            "reconciliation disagrees with planted ground truth \
             (have {}/{} expected, need {}/{} expected)",
            out.have.len(),
            expected_have.len(),
            out.need.len(),
            expected_need.len()
        );
    }
    Ok(())
}

struct RepeatedRuns {
    t_rec_ms: f64,
    rounds: u32,
    messages: u32,
    bytes: u64,
    queried: u64,
    splits: u64,
    listed_items: u64,
    node_visits: u64,
    transcript_hash: String,
}

/// Runs `repeats` reconciliations over fixed stores, validates each against
/// the ground truth, and checks that every non-timing metric is identical
/// across repeats.
fn drive<SX: Rsos, SY: Rsos>(
    x: &SX,
    y: &SY,
    scenario: &Scenario,
    windows: bool,
    repeats: u32,
) -> Result<RepeatedRuns> {
    let params = bench_params();
    let mut agg: Option<RepeatedRuns> = None;
    let mut total_ms = 0f64;
    for run in 0..repeats.max(1) {
        let start = Instant::now();
        let out = reconcile(x, y, &scenario.outer, &params, windows)
            .with_context(|| format!("reconciliation run {run}"))?;
        total_ms += start.elapsed().as_secs_f64() * 1e3;
        verify_ground_truth(&out, &scenario.expected_have, &scenario.expected_need)?;
        let this = RepeatedRuns {
            t_rec_ms: 0.0,
            rounds: out.rounds,
            messages: out.messages,
            bytes: out.bytes_sent,
            queried: out.counters.queried,
            splits: out.counters.splits,
            listed_items: out.counters.listed_items,
            node_visits: out.initiator_visits + out.responder_visits,
            transcript_hash: hex_string(&out.transcript_hash),
        };
        match &agg {
            None => agg = Some(this),
            Some(prev) => {
                if prev.rounds != this.rounds
                    || prev.messages != this.messages
                    || prev.bytes != this.bytes
                    || prev.queried != this.queried
                    || prev.splits != this.splits
                    || prev.listed_items != this.listed_items
                    || prev.node_visits != this.node_visits
                    || prev.transcript_hash != this.transcript_hash
                {
                    bail!("non-timing metrics differ between repeated runs");
                }
            }
        }
    }
    let mut out = agg.expect("at least one run");
    out.t_rec_ms = total_ms / f64::from(repeats.max(1));
    Ok(out)
}

fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Executes one benchmark cell. `workdir` hosts the paged store files; pass
/// a scratch directory.
pub fn run(
    backend: Backend,
    spec: &ScenarioSpec,
    repeats: u32,
    workdir: &Path,
) -> Result<RunMetrics> {
    let cfg = SummaryConfig::identifier();
    let scenario = generate(spec);
    let windows = backend.uses_windows();

    let prep_start = Instant::now();
    let (runs, t_prep_ms, disk_bytes) = match backend {
        Backend::Ref => {
            let x = VecStore::from_items(cfg, scenario.items_x.clone());
            let y = VecStore::from_items(cfg, scenario.items_y.clone());
            let t_prep = prep_start.elapsed().as_secs_f64() * 1e3;
            (drive(&x, &y, &scenario, windows, repeats)?, t_prep, None)
        }
        Backend::BTree | Backend::BTreeWindow => {
            let x = AggBTree::from_items(cfg, scenario.items_x.clone());
            let y = AggBTree::from_items(cfg, scenario.items_y.clone());
            let t_prep = prep_start.elapsed().as_secs_f64() * 1e3;
            (drive(&x, &y, &scenario, windows, repeats)?, t_prep, None)
        }
        Backend::Paged | Backend::PagedWindow => {
            let dir = tempfile::tempdir_in(workdir).context("create store directory")?;
            let path_x = dir.path().join("x.rsos");
            let path_y = dir.path().join("y.rsos");
            let mut x = PagedStore::create_default(&path_x, cfg).context("create X store")?;
            let mut y = PagedStore::create_default(&path_y, cfg).context("create Y store")?;
            for k in &scenario.items_x {
                x.insert(*k)?;
            }
            x.commit()?;
            for k in &scenario.items_y {
                y.insert(*k)?;
            }
            y.commit()?;
            let t_prep = prep_start.elapsed().as_secs_f64() * 1e3;
            let disk = std::fs::metadata(&path_x)?.len() + std::fs::metadata(&path_y)?.len();
            (
                drive(&x, &y, &scenario, windows, repeats)?,
                t_prep,
                Some(disk),
            )
        }
    };

    Ok(RunMetrics {
        family: spec.family.name().to_string(),
        index: spec.index,
        backend: backend.name().to_string(),
        seed: spec.seed,
        t_prep_ms,
        t_rec_ms: runs.t_rec_ms,
        rounds: runs.rounds,
        messages: runs.messages,
        bytes: runs.bytes,
        queried: runs.queried,
        splits: runs.splits,
        listed_items: runs.listed_items,
        node_visits: runs.node_visits,
        disk_bytes,
        transcript_hash: runs.transcript_hash,
    })
}

/// Runs a batch of cells, optionally spreading them over worker threads.
/// Cells share nothing; output order matches input order either way.
pub fn run_cells(
    cells: &[(Backend, ScenarioSpec)],
    repeats: u32,
    workdir: &Path,
    parallel: bool,
) -> Result<Vec<RunMetrics>> {
    if !parallel || cells.len() < 2 {
        return cells
            .iter()
            .enumerate()
            .map(|(n, (backend, spec))| {
                let sub = workdir.join(format!("cell-{n}"));
                std::fs::create_dir_all(&sub)?;
                run(*backend, spec, repeats, &sub)
            })
            .collect();
    }
    let threads = std::thread::available_parallelism()
        .map_or(4, |n| n.get())
        .min(cells.len());
    let mut results: Vec<Option<Result<RunMetrics>>> = Vec::new();
    results.resize_with(cells.len(), || None);
    let next = std::sync::atomic::AtomicUsize::new(0);
    let results_mutex = std::sync::Mutex::new(&mut results);
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let n = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if n >= cells.len() {
                    return;
                }
                let (backend, spec) = &cells[n];
                let sub = workdir.join(format!("cell-{n}"));
                let outcome = std::fs::create_dir_all(&sub)
                    .map_err(anyhow::Error::from)
                    .and_then(|()| run(*backend, spec, repeats, &sub));
                results_mutex.lock().expect("results lock")[n] = Some(outcome);
            });
        }
    });
    results
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect()
}
