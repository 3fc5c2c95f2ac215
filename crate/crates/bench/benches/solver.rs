use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hfscat_bench::setup;
use hfscat_core::{evolve, free_propagate, Model};

fn propagate(c: &mut Criterion) {
    let mut g = c.benchmark_group("free_propagate");
    for m in [256, 1024, 4096] {
        let s = setup(m);
        let phi = s.probes[0].realize(&s.grid).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(m), &phi, |b, phi| {
            b.iter(|| free_propagate(phi, 1.5).unwrap())
        });
    }
    g.finish();
}

fn strang(c: &mut Criterion) {
    let s = setup(1024);
    let mut g = c.benchmark_group("evolve_100_steps");
    for (model, n) in [(Model::Rh, 1), (Model::Hartree, 2), (Model::Hf, 2)] {
        let state = s.state(n);
        g.bench_function(model.name(), |b| {
            b.iter(|| evolve(&state, &s.potential, model, 0.0, 0.5, 0.005).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, propagate, strang);
criterion_main!(benches);
