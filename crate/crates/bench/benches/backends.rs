//! Backend comparison benches: point queries, range aggregates, and whole
//! reconciliations over the scenario families.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use rsos_benches::{btree_pair, paged_pair, scenario, vec_pair};
use rsos_cli::scenario::{Family, ScenarioSpec, SplitMix64};
use rsos_core::{reconcile, Bound, ItemKey, ProtocolParams, Rsos, ID_LEN};

fn random_key(rng: &mut SplitMix64, ts_space: u64) -> ItemKey {
    let ts = rng.below(ts_space);
    let mut id = [0u8; ID_LEN];
    for chunk in id.chunks_mut(8) {
        chunk.copy_from_slice(&rng.next_u64().to_be_bytes());
    }
    ItemKey::new(ts, id)
}

fn bench_store_ops(c: &mut Criterion) {
    let spec = ScenarioSpec::new(Family::Stress, 1, 42);
    let s = scenario(&spec);
    let (vec_x, _) = vec_pair(&s);
    let (tree_x, _) = btree_pair(&s);
    let dir = tempfile::tempdir().expect("tempdir");
    let (paged_x, _) = paged_pair(dir.path(), &s);
    let n = vec_x.size();

    let mut group = c.benchmark_group("rank");
    let mut bench_rank = |name: &str, store: &dyn Fn(&Bound) -> u64| {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            let mut rng = SplitMix64::new(7);
            b.iter(|| {
                let z = Bound::Key(random_key(&mut rng, 3_000_000));
                black_box(store(&z))
            });
        });
    };
    bench_rank("ref", &|z| vec_x.rank(z).unwrap());
    bench_rank("btree", &|z| tree_x.rank(z).unwrap());
    bench_rank("paged", &|z| paged_x.rank(z).unwrap());
    group.finish();

    let mut group = c.benchmark_group("aggregate");
    let mut bench_agg = |name: &str, run: &dyn Fn(&Bound, &Bound) -> u64| {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            let mut rng = SplitMix64::new(11);
            b.iter(|| {
                let a = Bound::Key(random_key(&mut rng, 3_000_000));
                let z = Bound::Key(random_key(&mut rng, 3_000_000));
                let (lo, hi) = if a <= z { (a, z) } else { (z, a) };
                black_box(run(&lo, &hi))
            });
        });
    };
    bench_agg("ref", &|lo, hi| vec_x.aggregate(lo, hi).unwrap().count);
    bench_agg("btree", &|lo, hi| tree_x.aggregate(lo, hi).unwrap().count);
    bench_agg("paged", &|lo, hi| paged_x.aggregate(lo, hi).unwrap().count);
    group.finish();

    let mut group = c.benchmark_group("select");
    group.bench_function(BenchmarkId::from_parameter("btree"), |b| {
        let mut rng = SplitMix64::new(13);
        b.iter(|| black_box(tree_x.select(rng.below(n)).unwrap()));
    });
    group.bench_function(BenchmarkId::from_parameter("paged"), |b| {
        let mut rng = SplitMix64::new(13);
        b.iter(|| black_box(paged_x.select(rng.below(n)).unwrap()));
    });
    group.finish();
}

fn bench_reconcile(c: &mut Criterion) {
    let params = ProtocolParams::default();
    let mut group = c.benchmark_group("reconcile");
    for family in [Family::BaseDense, Family::Stress] {
        let spec = ScenarioSpec::new(family, 1, 42);
        let s = scenario(&spec);
        let (vec_x, vec_y) = vec_pair(&s);
        let (tree_x, tree_y) = btree_pair(&s);
        let dir = tempfile::tempdir().expect("tempdir");
        let (paged_x, paged_y) = paged_pair(dir.path(), &s);

        group.bench_with_input(BenchmarkId::new("ref", family.name()), &s, |b, s| {
            b.iter(|| black_box(reconcile(&vec_x, &vec_y, &s.outer, &params, false).unwrap()))
        });
        group.bench_with_input(BenchmarkId::new("btree", family.name()), &s, |b, s| {
            b.iter(|| black_box(reconcile(&tree_x, &tree_y, &s.outer, &params, false).unwrap()))
        });
        group.bench_with_input(
            BenchmarkId::new("btree+window", family.name()),
            &s,
            |b, s| {
                b.iter(|| black_box(reconcile(&tree_x, &tree_y, &s.outer, &params, true).unwrap()))
            },
        );
        group.bench_with_input(BenchmarkId::new("paged", family.name()), &s, |b, s| {
            b.iter(|| black_box(reconcile(&paged_x, &paged_y, &s.outer, &params, false).unwrap()))
        });
        group.bench_with_input(
            BenchmarkId::new("paged+window", family.name()),
            &s,
            |b, s| {
                b.iter(|| {
                    black_box(reconcile(&paged_x, &paged_y, &s.outer, &params, true).unwrap())
                })
            },
        );
    }
    group.finish();
}

criterion_group!(benches, bench_store_ops, bench_reconcile);
criterion_main!(benches);
