//! End-to-end checks of the `bench` binary's command-line contract.

use std::process::Command;

use rsos_core::store::RsosMut;
use rsos_core::{ItemKey, PagedStore, SummaryConfig, ID_LEN};
use tempfile::TempDir;

fn bench() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bench"))
}

#[test]
fn run_emits_csv_with_stable_columns() {
    let out = bench()
        .args([
            "run",
            "--family",
            "base_dense",
            "--i",
            "1",
            "--backend",
            "ref",
            "--seed",
            "42",
            "--repeats",
            "2",
        ])
        .output()
        .expect("bench run");
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    let mut lines = stdout.lines();
    assert_eq!(
        lines.next().unwrap(),
        "family,i,backend,seed,t_prep_ms,t_rec_ms,rounds,messages,bytes,Q,I,K,node_visits,\
         disk_bytes,transcript_hash"
    );
    let row = lines.next().unwrap();
    assert!(row.starts_with("base_dense,1,ref,42,"));
    assert_eq!(row.split(',').count(), 15);
}

#[test]
fn run_emits_json_to_file() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("report.json");
    let out = bench()
        .args([
            "run",
            "--family",
            "base_sparse",
            "--backend",
            "btree+window",
            "--repeats",
            "1",
        ])
        .args(["--format", "json", "--out"])
        .arg(&path)
        .output()
        .expect("bench run");
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let value: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let row = &value.as_array().unwrap()[0];
    assert_eq!(row["backend"], "btree+window");
    assert_eq!(row["i"], 1);
    assert!(row["Q"].as_u64().unwrap() >= 1);
}

#[test]
fn rejects_unknown_backend_and_family() {
    let out = bench()
        .args(["run", "--family", "base_dense", "--backend", "skiplist"])
        .output()
        .expect("bench run");
    assert!(!out.status.success());
    let out = bench()
        .args(["run", "--family", "nope", "--backend", "ref"])
        .output()
        .expect("run");
    assert!(!out.status.success());
}

#[test]
fn verify_reports_clean_and_corrupt_files() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("store.rsos");
    {
        let mut store = PagedStore::create_default(&path, SummaryConfig::identifier()).unwrap();
        for i in 0..300u64 {
            let mut id = [0u8; ID_LEN];
            id[..8].copy_from_slice(&(i * 97).to_be_bytes());
            store.insert(ItemKey::new(i, id)).unwrap();
        }
        store.commit().unwrap();
    }
    let out = bench()
        .args(["verify", "--file"])
        .arg(&path)
        .output()
        .expect("verify");
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("clean"), "{stdout}");
    assert!(stdout.contains("entries 300"), "{stdout}");

    // Flip a byte inside a data page; verification must fail the exit code.
    let mut bytes = std::fs::read(&path).unwrap();
    let victim = 2 * 4096 + 16;
    bytes[victim] ^= 0xff;
    std::fs::write(&path, &bytes).unwrap();
    let out = bench()
        .args(["verify", "--file"])
        .arg(&path)
        .output()
        .expect("verify");
    assert!(!out.status.success());
}

#[test]
fn verify_errors_on_missing_file() {
    let out = bench()
        .args(["verify", "--file", "/nonexistent/store.rsos"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
