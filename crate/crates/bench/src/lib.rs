//! Shared store builders for the criterion benches.

use std::path::Path;

use rsos_cli::scenario::{generate, Scenario, ScenarioSpec};
use rsos_core::store::RsosMut;
use rsos_core::{AggBTree, PagedStore, SummaryConfig, VecStore};

pub fn scenario(spec: &ScenarioSpec) -> Scenario {
    generate(spec)
}

pub fn vec_pair(s: &Scenario) -> (VecStore, VecStore) {
    let cfg = SummaryConfig::identifier();
    (
        VecStore::from_items(cfg, s.items_x.clone()),
        VecStore::from_items(cfg, s.items_y.clone()),
    )
}

pub fn btree_pair(s: &Scenario) -> (AggBTree, AggBTree) {
    let cfg = SummaryConfig::identifier();
    (
        AggBTree::from_items(cfg, s.items_x.clone()),
        AggBTree::from_items(cfg, s.items_y.clone()),
    )
}

pub fn paged_pair(dir: &Path, s: &Scenario) -> (PagedStore, PagedStore) {
    let cfg = SummaryConfig::identifier();
    let mut x = PagedStore::create_default(&dir.join("x.rsos"), cfg).expect("create X");
    for k in &s.items_x {
        x.insert(*k).expect("insert");
    }
    x.commit().expect("commit");
    let mut y = PagedStore::create_default(&dir.join("y.rsos"), cfg).expect("create Y");
    for k in &s.items_y {
        y.insert(*k).expect("insert");
    }
    y.commit().expect("commit");
    (x, y)
}
