//! Sequential vs rayon evaluation of plausibility and perturbation metrics
//! over a batch of 224×224 maps.

use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use attnfilter_core::baselines::random_baseline_map;
use attnfilter_core::par::{self, Execution};
use attnfilter_core::perturbation::{self, CurveConfig, Schedule, DEFAULT_SUPPORT_THRESHOLD};
use attnfilter_core::plausibility;
use attnfilter_core::synthetic::LinearScorer;
use attnfilter_core::tensor_io::{GazeDensityMap, Grid, Image, SaliencyMap};

const SIDE: usize = 224;
const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn inputs(n: u64) -> Vec<(SaliencyMap, GazeDensityMap)> {
    (0..n)
        .map(|s| {
            let g = random_baseline_map(SIDE, SIDE, 1000 + s);
            (
                random_baseline_map(SIDE, SIDE, s),
                GazeDensityMap::new(SIDE, SIDE, g.values().to_vec()).unwrap(),
            )
        })
        .collect()
}

fn plausibility_batch(c: &mut Criterion) {
    let pairs = inputs(16);
    let mut g = c.benchmark_group("plausibility_224_x16");
    g.sample_size(10).measurement_time(Duration::from_secs(5));
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::new("images", name), |b| {
            b.iter(|| par::map(exec, black_box(&pairs), |(s, gz)| plausibility::evaluate(s, gz).unwrap()))
        });
    }
    g.finish();
}

fn correctness_batch(c: &mut Criterion) {
    let maps: Vec<SaliencyMap> = inputs(4).into_iter().map(|p| p.0).collect();
    let image = Image::filled(3, SIDE, SIDE, 0.5);
    let weights: Vec<f64> = (0..SIDE * SIDE).map(|i| (i % 13) as f64 / 13.0).collect();
    let cfg = CurveConfig {
        schedule: Schedule::Steps(50),
        ..CurveConfig::default()
    };
    let mut g = c.benchmark_group("correctness_224_x4");
    g.sample_size(10).measurement_time(Duration::from_secs(10));
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::new("images", name), |b| {
            b.iter(|| {
                par::map(exec, &maps, |s| {
                    let mut scorer = LinearScorer::new(weights.clone());
                    perturbation::evaluate(&image, s, 0, &mut scorer, &cfg, DEFAULT_SUPPORT_THRESHOLD).unwrap()
                })
            })
        });
    }
    g.finish();
}

criterion_group!(benches, plausibility_batch, correctness_batch);
criterion_main!(benches);
