use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use parforest::forest::{deserialize_trees, serialize_trees};
use parforest::{build_forest_block, build_tree, predict_forest, serialize_tree, ForestParams};
use parforest_bench::letter_like;

fn tree_building(c: &mut Criterion) {
    let mut group = c.benchmark_group("build_tree");
    group.sample_size(20);
    let params = ForestParams::with_trees(1);
    for n in [1_000, 4_000, 16_000] {
        let train = letter_like(n, 1);
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::from_parameter(n), &train, |b, train| {
            let mut index = 0u64;
            b.iter(|| {
                index += 1;
                build_tree(train, &params, 1, index).unwrap()
            })
        });
    }
    group.finish();
}

fn prediction(c: &mut Criterion) {
    let train = letter_like(4_000, 1);
    let test = letter_like(4_000, 2);
    let forest = build_forest_block(&train, &ForestParams::with_trees(50), &(0..50).collect::<Vec<u64>>(), 1).unwrap();
    let mut group = c.benchmark_group("predict_forest");
    group.throughput(Throughput::Elements(test.n_rows() as u64));
    group.bench_function("50_trees_4000_rows", |b| {
        b.iter(|| predict_forest(&forest, black_box(test.matrix())).unwrap())
    });
    group.finish();
}

fn codec(c: &mut Criterion) {
    let train = letter_like(4_000, 1);
    let forest = build_forest_block(&train, &ForestParams::with_trees(20), &(0..20).collect::<Vec<u64>>(), 1).unwrap();
    let bytes = serialize_trees(forest.trees());
    let mut group = c.benchmark_group("tree_codec");
    group.throughput(Throughput::Bytes(bytes.len() as u64));
    group.bench_function("serialize_20", |b| {
        b.iter(|| forest.trees().iter().map(|t| serialize_tree(t).len()).sum::<usize>())
    });
    group.bench_function("deserialize_20", |b| b.iter(|| deserialize_trees(black_box(&bytes)).unwrap()));
    group.finish();
}

criterion_group!(benches, tree_building, prediction, codec);
criterion_main!(benches);
