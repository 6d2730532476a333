//! Sequential vs rayon execution of the filtered rollout, per head within
//! one ViT-B/16 bundle and per bundle across a batch.

use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use attnfilter_core::explain::{rfem_with, rollout_baseline, RfemOptions};
use attnfilter_core::par::{self, Execution};
use attnfilter_core::synthetic::{random_bundle, BundleSpec};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn single_bundle(c: &mut Criterion) {
    let bundle = random_bundle(&BundleSpec::vit_b16(), 1);
    let mut g = c.benchmark_group("rfem_vit_b16");
    g.sample_size(10).measurement_time(Duration::from_secs(5));
    for (name, exec) in MODES {
        let opts = RfemOptions {
            exec,
            ..RfemOptions::default()
        };
        g.bench_function(BenchmarkId::new("heads", name), |b| {
            b.iter(|| rfem_with(black_box(&bundle), &opts).unwrap())
        });
    }
    g.bench_function("rollout_baseline", |b| b.iter(|| rollout_baseline(black_box(&bundle)).unwrap()));
    g.finish();
}

fn batch(c: &mut Criterion) {
    let bundles: Vec<_> = (0..8).map(|s| random_bundle(&BundleSpec::vit_b16(), s)).collect();
    let opts = RfemOptions {
        exec: Execution::Sequential,
        ..RfemOptions::default()
    };
    let mut g = c.benchmark_group("rfem_batch_of_8");
    g.sample_size(10).measurement_time(Duration::from_secs(8));
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::new("images", name), |b| {
            b.iter(|| par::map(exec, &bundles, |x| rfem_with(x, &opts).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, single_bundle, batch);
criterion_main!(benches);
