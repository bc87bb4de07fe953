//! Sequential versus parallel execution on the main workloads.
//!
//! Without the `parallel` feature both variants run sequentially.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rcpca::dataset::{build_blockset, Block, BlockSet, Scaling};
use rcpca::deflation::{extract, DeflationStrategy};
use rcpca::metrics::{ModeSelector, DEFAULT_RANK_TOLERANCE};
use rcpca::solver::{build_metrics, solve, Init, SolverConfig};
use rcpca::ExecPolicy;

const POLICIES: [(&str, ExecPolicy); 2] = [
    ("sequential", ExecPolicy::Sequential),
    ("parallel", ExecPolicy::Parallel),
];

fn blockset(n: usize, widths: &[usize], seed: u64) -> BlockSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blocks = widths
        .iter()
        .enumerate()
        .map(|(b, &p)| {
            let raw = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
            Block::from_raw(format!("b{b}"), raw, None, Scaling::UnitVariance).unwrap()
        })
        .collect();
    build_blockset(blocks).unwrap()
}

fn config(exec: ExecPolicy, starts: usize) -> SolverConfig {
    SolverConfig {
        m: 3.0,
        epsilon: 1e-10,
        init: Init::Random(7),
        n_starts: starts,
        seed: 7,
        exec,
        ..Default::default()
    }
}

fn metrics(c: &mut Criterion) {
    let set = blockset(400, &[60; 8], 1);
    let modes = ModeSelector::from_taus(&[0.5; 8], 0.5).unwrap();
    let mut group = c.benchmark_group("metrics");
    for (name, exec) in POLICIES {
        group.bench_function(name, |b| {
            b.iter(|| build_metrics(black_box(&set), &modes, DEFAULT_RANK_TOLERANCE, exec).unwrap())
        });
    }
    group.finish();
}

fn multistart(c: &mut Criterion) {
    let set = blockset(200, &[40; 6], 2);
    let modes = ModeSelector::from_taus(&[1.0; 6], 1.0).unwrap();
    let mut group = c.benchmark_group("multistart");
    group.sample_size(20);
    for (name, exec) in POLICIES {
        for starts in [1, 8] {
            group.bench_with_input(BenchmarkId::new(name, starts), &starts, |b, &starts| {
                b.iter(|| solve(black_box(&set), &modes, &config(exec, starts)).unwrap())
            });
        }
    }
    group.finish();
}

fn deflation(c: &mut Criterion) {
    let set = blockset(150, &[20; 5], 3);
    let modes = ModeSelector::from_taus(&[0.3; 5], 1.0).unwrap();
    let mut group = c.benchmark_group("deflation");
    group.sample_size(10);
    for (name, exec) in POLICIES {
        group.bench_function(name, |b| {
            b.iter(|| {
                extract(
                    black_box(&set),
                    &modes,
                    &config(exec, 1),
                    3,
                    DeflationStrategy::OwnComponents,
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, metrics, multistart, deflation);
criterion_main!(benches);
