use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use curvekit_core::caml::estimate_many;
use curvekit_core::dimension::twonn_id_with;
use curvekit_core::neighborhoods::{knn_neighborhoods, svd_neighborhood_with};
use curvekit_core::synthetic::sample_sphere;
use curvekit_core::{CamlConfig, Execution, ImageTensor, SvdTruncationPlan};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn twonn(c: &mut Criterion) {
    let cloud = sample_sphere(1.0, 4_000, 1).unwrap();
    let mut g = c.benchmark_group("twonn_4000");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| twonn_id_with(black_box(&cloud), 0.1, exec).unwrap())
        });
    }
    g.finish();
}

fn curvature_batch(c: &mut Criterion) {
    let cloud = sample_sphere(1.0, 20_000, 2).unwrap();
    let bases: Vec<usize> = (0..200).map(|i| i * 97).collect();
    let batches = knn_neighborhoods(&cloud, &bases, 200, Execution::Parallel).unwrap();
    let cfg = CamlConfig::default();
    let mut g = c.benchmark_group("caml_200_points_k200");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| estimate_many(black_box(&batches), 2, &cfg, exec))
        });
    }
    g.finish();
}

fn svd_tail(c: &mut Criterion) {
    let img = ImageTensor::from_fn(64, 64, 3, |ch, i, j| {
        ((i as f64 * 0.37 + ch as f64).sin() * (j as f64 * 0.21).cos() + (i * j) as f64 * 1e-3).fract()
    })
    .unwrap();
    let plan = SvdTruncationPlan::default();
    let mut g = c.benchmark_group("svd_neighborhood_64x64x3");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| svd_neighborhood_with(black_box(&img), &plan, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, twonn, curvature_batch, svd_tail);
criterion_main!(benches);
