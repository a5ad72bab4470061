//! Per-family growth check: as the instance index grows the planted
//! difference grows, so exchanged bytes and queried ranges must not shrink.

use rsos_cli::runner::{run, Backend};
use rsos_cli::scenario::{Family, ScenarioSpec};
use tempfile::TempDir;

#[test]
fn bytes_and_queried_ranges_grow_with_instance_index() {
    let dir = TempDir::new().unwrap();
    for family in Family::ALL {
        let mut prev_bytes = 0u64;
        let mut prev_queried = 0u64;
        let mut rows = Vec::new();
        for i in 1..=3u32 {
            let spec = ScenarioSpec::new(family, i, 42);
            let m = run(Backend::BTree, &spec, 1, dir.path()).unwrap();
            assert!(
                m.bytes >= prev_bytes,
                "{family}: bytes shrank from {prev_bytes} to {} at i={i}",
                m.bytes
            );
            assert!(
                m.queried >= prev_queried,
                "{family}: queried ranges shrank from {prev_queried} to {} at i={i}",
                m.queried
            );
            prev_bytes = m.bytes;
            prev_queried = m.queried;
            rows.push((m.bytes, m.queried));
        }
        assert!(
            rows[2].0 > rows[0].0,
            "{family}: bytes did not grow across the sweep ({rows:?})"
        );
    }
}
