use criterion::{criterion_group, criterion_main, Criterion};
use stirring_core::exact::{build_generator, evolve, DistributionVector, GeneratorKind};
use stirring_core::flows::build_flow;
use stirring_core::stats::{identity_suite, Preset};
use stirring_core::{RateFamily, Torus};

fn generator(c: &mut Criterion) {
    let mut g = c.benchmark_group("exact");
    for n in [8, 12] {
        let torus = Torus::new(1, n).unwrap();
        let rates = RateFamily::ssep(1);
        g.bench_function(format!("build_generator_n{n}"), |b| {
            b.iter(|| build_generator(&torus, &rates, GeneratorKind::Combined, 1.0).unwrap())
        });
        let gen = build_generator(&torus, &rates, GeneratorKind::Combined, 1.0).unwrap();
        let mu0 = DistributionVector::bernoulli(torus, 0.6).unwrap();
        g.bench_function(format!("evolve_t0.2_n{n}"), |b| {
            b.iter(|| evolve(&mu0, &gen, 0.2).unwrap())
        });
    }
    g.sample_size(10);
    g.bench_function("identity_suite_ssep_d1", |b| {
        b.iter(|| identity_suite(Preset::SsepD1, 1).unwrap())
    });
    g.finish();
}

fn flows(c: &mut Criterion) {
    let mut g = c.benchmark_group("flows");
    for (d, ell) in [(1, 64), (2, 64), (3, 16)] {
        g.bench_function(format!("build_flow_d{d}_l{ell}"), |b| {
            b.iter(|| build_flow(ell, d))
        });
    }
    g.finish();
}

criterion_group!(benches, generator, flows);
criterion_main!(benches);
