use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use procpredict::bundle::{Bundle, ModelVariant};
use procpredict::estimator::EstimatorConfig;
use procpredict::markov::build_models;
use procpredict::markov::sampling::sample_tables;
use procpredict::par::Parallelism;
use procpredict::sim::{sweep_confidence, SimConfig, Strategy};
use procpredict::trace::generate::{generate_neworder_like, neworder_catalog, NewOrderConfig};

const MODES: [(&str, Parallelism); 2] = [
    ("sequential", Parallelism::Sequential),
    ("parallel", Parallelism::Parallel),
];

fn bench(c: &mut Criterion) {
    let p = 8;
    let catalog = neworder_catalog(p);
    let cfg = NewOrderConfig {
        num_txns: 4000,
        payment_fraction: 0.3,
        ..NewOrderConfig::new(p)
    };
    let records = generate_neworder_like(&cfg, 1).unwrap().records;
    let bundle = Bundle::build(&records, &catalog, 0.9, Parallelism::Parallel).unwrap();
    let model = bundle.global["NewOrder"].clone();
    let estimator = EstimatorConfig::default();

    let mut g = c.benchmark_group("parallel");
    g.sample_size(10);
    for (name, mode) in MODES {
        g.bench_with_input(BenchmarkId::new("build_models", name), &mode, |b, &m| {
            b.iter(|| build_models(&records, &catalog, m).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("sample_tables_10k", name), &mode, |b, &m| {
            b.iter(|| sample_tables(&model, 10_000, 7, m))
        });
        g.bench_with_input(BenchmarkId::new("evaluate", name), &mode, |b, &m| {
            b.iter(|| {
                bundle
                    .evaluate(ModelVariant::Global, &records, &catalog, &estimator, m)
                    .unwrap()
            })
        });
        g.bench_with_input(BenchmarkId::new("sweep_4_thresholds", name), &mode, |b, &m| {
            let sim = SimConfig {
                duration: 10_000,
                mode: m,
                ..SimConfig::new(p, 3)
            };
            b.iter(|| {
                sweep_confidence(
                    &sim,
                    &records,
                    &catalog,
                    &bundle,
                    Strategy::HoudiniGlobal,
                    &[0.0, 0.3, 0.6, 0.9],
                )
                .unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
