//! Throughput benchmarks for the hot paths: path simulation, table
//! training, and control-variate estimation.
//!
//! The crate's chunked executor produces bit-identical results with and
//! without the `parallel` feature; these benchmarks are how the two lanes
//! are compared:
//!
//! ```text
//! cargo bench -p weakcv                          # rayon executor
//! cargo bench -p weakcv --no-default-features    # sequential executor
//! ```

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;
use weakcv::estimator::{estimate_smc, estimate_with_cv};
use weakcv::models;
use weakcv::regression::{train, RegressionConfig, Truncation};
use weakcv::scheme::{simulate_paths, GridSpec, Scheme};
use weakcv::terms::{enumerate_terms, TermSet};

fn bench_simulation(c: &mut Criterion) {
    let (model, _) = models::by_name("example5d").unwrap();
    let mut group = c.benchmark_group("simulate");
    for &(scheme, j_steps) in &[(Scheme::Euler, 16), (Scheme::SecondOrder, 16)] {
        let grid = GridSpec::new(model.horizon(), j_steps).unwrap();
        let n_paths = 2048usize;
        group.throughput(Throughput::Elements((n_paths * j_steps) as u64));
        group.bench_with_input(
            BenchmarkId::new(scheme.tag(), format!("J{j_steps}xN{n_paths}")),
            &grid,
            |b, grid| {
                b.iter(|| {
                    let paths =
                        simulate_paths(&model, scheme, *grid, n_paths, black_box(42)).unwrap();
                    black_box(paths.len())
                })
            },
        );
    }
    group.finish();
}

fn bench_training(c: &mut Criterion) {
    let (model, f) = models::by_name("example5d").unwrap();
    let scheme = Scheme::SecondOrder;
    let grid = GridSpec::new(model.horizon(), 4).unwrap();
    let terms = enumerate_terms(scheme, model.dim_noise(), TermSet::Truncated, false);
    let config = RegressionConfig {
        truncation: Truncation::On { a_tilde: None },
        ..RegressionConfig::default()
    };
    let mut group = c.benchmark_group("train");
    for &n_train in &[1024usize, 4096] {
        group.throughput(Throughput::Elements(n_train as u64));
        group.bench_with_input(
            BenchmarkId::new("order2-truncated", n_train),
            &n_train,
            |b, &n_train| {
                b.iter(|| {
                    let table =
                        train(&model, &f, scheme, grid, &terms, n_train, 7, &config).unwrap();
                    black_box(table.basis_size())
                })
            },
        );
    }
    group.finish();
}

fn bench_estimation(c: &mut Criterion) {
    let (model, f) = models::by_name("example5d").unwrap();
    let scheme = Scheme::SecondOrder;
    let grid = GridSpec::new(model.horizon(), 4).unwrap();
    let terms = enumerate_terms(scheme, model.dim_noise(), TermSet::Truncated, false);
    let config = RegressionConfig {
        truncation: Truncation::On { a_tilde: None },
        ..RegressionConfig::default()
    };
    let table = train(&model, &f, scheme, grid, &terms, 4096, 7, &config).unwrap();
    let n_paths = 8192usize;

    let mut group = c.benchmark_group("estimate");
    group.throughput(Throughput::Elements(n_paths as u64));
    group.bench_function(BenchmarkId::new("smc", n_paths), |b| {
        b.iter(|| {
            let r = estimate_smc(&model, &f, scheme, grid, n_paths, black_box(11)).unwrap();
            black_box(r.estimate)
        })
    });
    group.bench_function(BenchmarkId::new("trcv", n_paths), |b| {
        b.iter(|| {
            let r = estimate_with_cv(&model, &table, n_paths, black_box(11)).unwrap();
            black_box(r.estimate)
        })
    });
    group.finish();
}

criterion_group!(benches, bench_simulation, bench_training, bench_estimation);
criterion_main!(benches);
