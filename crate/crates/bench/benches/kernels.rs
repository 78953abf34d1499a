use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use metalab_core::cluster::{dbscan, DbscanParams};
use metalab_core::entropy::{corrupt_labels, entropy_for_noise, EntropyBudget};
use metalab_core::metalearn::{init_model, outer_gradient, AdaptMode, GroupedTask, LabeledSet, Task, TrainConfig};
use metalab_core::stability::svcca;
use metalab_core::{Graph, Tensor};

// Small LCG so the inputs do not depend on the core crate's RNG streams.
fn values(n: usize, seed: u64) -> Vec<f64> {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
    (0..n)
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect()
}

fn matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    Tensor::matrix(rows, cols, values(rows * cols, seed)).unwrap()
}

fn task(dim: usize, way: usize, shots: usize, queries: usize) -> Task {
    let set = |n: usize, seed| {
        let x = matrix(way * n, dim, seed);
        let y = (0..way * n).map(|i| i % way).collect();
        LabeledSet::new(x, y).unwrap()
    };
    Task::new(set(shots, 1), set(queries, 2), way).unwrap()
}

fn bench_autodiff(c: &mut Criterion) {
    let mut group = c.benchmark_group("autodiff");
    for n in [32usize, 128] {
        let (a, b) = (matrix(n, n, 3), matrix(n, n, 4));
        group.bench_with_input(BenchmarkId::new("matmul_backward", n), &n, |bench, _| {
            bench.iter(|| {
                let mut g = Graph::new();
                let (pa, pb) = (g.param(a.clone()), g.param(b.clone()));
                let p = g.matmul(pa, pb).unwrap();
                let r = g.relu(p);
                let loss = g.sum(r);
                black_box(g.backward(loss, &[pa, pb]).unwrap())
            })
        });
    }
    group.finish();
}

fn bench_outer_gradient(c: &mut Criterion) {
    let params = init_model(&[16, 32, 32], 1, 5, 0).unwrap();
    let batch: Vec<GroupedTask> = (0..4)
        .map(|_| GroupedTask {
            task: task(16, 5, 1, 5),
            group: 0,
        })
        .collect();
    let mut group = c.benchmark_group("outer_gradient");
    for (name, mode) in [
        ("second_order", AdaptMode::SecondOrder),
        ("first_order", AdaptMode::FirstOrder),
        ("head_only", AdaptMode::HeadOnly),
    ] {
        let cfg = TrainConfig {
            alpha: 0.1,
            inner_steps: 5,
            mode,
            ..TrainConfig::default()
        };
        group.bench_function(name, |bench| bench.iter(|| black_box(outer_gradient(&params, &batch, &cfg).unwrap())));
    }
    group.finish();
}

fn bench_dbscan(c: &mut Criterion) {
    let mut group = c.benchmark_group("dbscan");
    for n in [100usize, 500] {
        let raw = values(n * 4, 5);
        let points: Vec<Vec<f64>> = raw.chunks(4).map(|p| p.to_vec()).collect();
        let params = DbscanParams::new(0.4, 4).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &points, |bench, pts| {
            bench.iter(|| black_box(dbscan(pts, &params).unwrap()))
        });
    }
    group.finish();
}

fn bench_svcca(c: &mut Criterion) {
    let (x, y) = (matrix(200, 64, 6), matrix(200, 64, 7));
    c.bench_function("svcca_200x64", |bench| bench.iter(|| black_box(svcca(&x, &y, 0.99).unwrap())));
}

fn bench_corrupt(c: &mut Criterion) {
    let m = 100_000;
    let labels: Vec<usize> = (0..m).map(|i| i % 10).collect();
    let budget = EntropyBudget::new(m, 10, entropy_for_noise(0.3, m, 10).unwrap()).unwrap();
    c.bench_function("corrupt_labels_100k", |bench| bench.iter(|| black_box(corrupt_labels(&labels, &budget, 0).unwrap())));
}

criterion_group!(benches, bench_autodiff, bench_outer_gradient, bench_dbscan, bench_svcca, bench_corrupt);
criterion_main!(benches);
