use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use wassdiff_bench::{cloud_pair, ring_target};
use wassdiff_core::samplers::{reference_path, run_sampler};
use wassdiff_core::score::hessian;
use wassdiff_core::transport::{w2_1d, w2_exact};
use wassdiff_core::{Algorithm, SamplerSpec, ScoreField, TargetDistribution, TimeGrid};

fn score(c: &mut Criterion) {
    let mut g = c.benchmark_group("score");
    for m in [2, 16, 128] {
        let field = ScoreField::exact(ring_target(m));
        let mut out = [0.0; 2];
        g.bench_with_input(BenchmarkId::new("eval", m), &field, |b, f| {
            b.iter(|| f.score_into(black_box(0.7), black_box(&[0.3, -1.1]), &mut out).unwrap())
        });
    }
    let tgt = ring_target(16);
    g.bench_function("hessian/16", |b| b.iter(|| hessian(&tgt, black_box(0.7), black_box(&[0.3, -1.1])).unwrap()));
    g.finish();
}

fn samplers(c: &mut Criterion) {
    let mut g = c.benchmark_group("sampler");
    g.sample_size(10);
    let grid = TimeGrid::new(2.0, 0.5, 256).unwrap();
    let field = ScoreField::exact(TargetDistribution::two_dirac(1.0));
    for alg in [Algorithm::EulerMaruyama, Algorithm::EulerOde, Algorithm::Heun] {
        let spec = SamplerSpec::new(alg, field.clone(), grid).unwrap();
        g.bench_function(BenchmarkId::new(alg.label(), 1024), |b| b.iter(|| run_sampler(&spec, 1024, black_box(3)).unwrap()));
    }
    let tgt = TargetDistribution::two_dirac(1.0);
    let fine = TimeGrid::new(2.0, 0.5, 4096).unwrap();
    g.bench_function("reference_path/4096", |b| b.iter(|| reference_path(&tgt, &fine, black_box(&[0.8]), 1e-10).unwrap()));
    g.finish();
}

fn transport(c: &mut Criterion) {
    let mut g = c.benchmark_group("w2");
    g.sample_size(10);
    for n in [256, 1024, 4096] {
        let (a, b) = cloud_pair(1, n);
        g.bench_with_input(BenchmarkId::new("sort", n), &n, |bch, _| bch.iter(|| w2_1d(&a, &b).unwrap()));
    }
    for n in [256, 1024, 2048] {
        let (a, b) = cloud_pair(2, n);
        g.bench_with_input(BenchmarkId::new("exact/d=2", n), &n, |bch, _| bch.iter(|| w2_exact(&a, &b).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, score, samplers, transport);
criterion_main!(benches);
