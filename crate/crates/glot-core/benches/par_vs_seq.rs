//! Compares the rayon-backed data-parallel paths against their
//! sequential twins: per-sentence graph construction and diagnostic
//! dataset generation.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use glot_core::diagnostic::{build_planted_geometry, generate_relational_xor, PlantedConfig, XorSpec};
use glot_core::graph::{build_token_graphs, build_token_graphs_seq, GraphConfig};
use glot_core::numeric::Matrix;
use glot_core::par::{map_indexed, map_indexed_seq};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_sentences(n: usize, l: usize, d: usize) -> Vec<Matrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    (0..n)
        .map(|_| {
            let data = (0..l * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            Matrix::from_vec(l, d, data).unwrap()
        })
        .collect()
}

fn bench_graph_batch(c: &mut Criterion) {
    let sentences = random_sentences(32, 64, 64);
    let cfg = GraphConfig::default();

    let mut group = c.benchmark_group("graph_batch_32x64x64");
    group.bench_function("parallel", |b| {
        b.iter(|| build_token_graphs(&sentences, &cfg).unwrap())
    });
    group.bench_function("sequential", |b| {
        b.iter(|| build_token_graphs_seq(&sentences, &cfg).unwrap())
    });
    group.finish();
}

fn bench_xor_generation(c: &mut Criterion) {
    let (backbone, _) = build_planted_geometry(&PlantedConfig::default()).unwrap();
    let spec = XorSpec { n_samples: 512, seq_len: 64, ..XorSpec::default() };

    let mut group = c.benchmark_group("xor_generation_512");
    group.bench_function("parallel", |b| {
        b.iter(|| generate_relational_xor(&spec, &backbone).unwrap())
    });
    group.finish();
}

fn bench_map_indexed(c: &mut Criterion) {
    // A plain compute kernel through both map helpers.
    let work = |i: usize| -> f64 {
        let mut acc = i as f64;
        for k in 1..2_000 {
            acc += (acc + k as f64).sin() * 1e-3;
        }
        acc
    };
    let mut group = c.benchmark_group("map_indexed_256");
    for n in [64usize, 256] {
        group.bench_with_input(BenchmarkId::new("parallel", n), &n, |b, &n| {
            b.iter(|| map_indexed(n, work))
        });
        group.bench_with_input(BenchmarkId::new("sequential", n), &n, |b, &n| {
            b.iter(|| map_indexed_seq(n, work))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_graph_batch, bench_xor_generation, bench_map_indexed);
criterion_main!(benches);
