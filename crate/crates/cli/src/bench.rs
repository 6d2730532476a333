use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use serde::Serialize;

use attnfilter_core::explain::{explain, ClassSelector, ExplainRequest, RfemOptions};
use attnfilter_core::par::Execution;
use attnfilter_core::synthetic::{random_bundle, BundleSpec};
use attnfilter_core::tensor_io::load_bundle;
use attnfilter_core::{AttentionBundle, Method, Result};

use crate::inputs::discover_bundles;
use crate::{Failure, Outcome};

/// Fewer images than this give a noisy runtime estimate.
const RECOMMENDED_IMAGES: usize = 100;

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Bundle directories to time; without them synthetic bundles are used
    #[arg(long, num_args = 1..)]
    pub bundles: Vec<PathBuf>,

    /// Number of synthetic ViT-B/16 bundles (12 layers, 12 heads, 197 tokens)
    #[arg(long, conflicts_with = "bundles")]
    pub synthetic: Option<usize>,

    #[arg(
        long,
        value_delimiter = ',',
        default_value = "rfem,rfem-class,rollout,saw,gradcam"
    )]
    pub method: Vec<Method>,

    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub k: f64,

    /// Seed of the first synthetic bundle
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Also write the table as JSON
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct MethodTiming {
    pub method: String,
    pub images: usize,
    pub mean_s: f64,
    pub std_s: f64,
}

#[derive(Debug, Serialize)]
pub struct BenchReport {
    pub images: usize,
    pub threads: usize,
    pub methods: Vec<MethodTiming>,
}

enum Source {
    Synthetic(usize),
    Dirs(Vec<PathBuf>),
}

impl Source {
    fn len(&self) -> usize {
        match self {
            Source::Synthetic(n) => *n,
            Source::Dirs(d) => d.len(),
        }
    }

    /// Bundles are produced one at a time; a ViT-B/16 bundle is 22 MB.
    fn get(&self, i: usize, seed: u64) -> Result<AttentionBundle> {
        match self {
            Source::Synthetic(_) => Ok(random_bundle(&BundleSpec::vit_b16().with_classes(&[0]), seed + i as u64)),
            Source::Dirs(d) => load_bundle(&d[i]),
        }
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (mean, (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt())
}

pub fn run(args: &BenchArgs) -> Outcome {
    let source = if args.bundles.is_empty() {
        Source::Synthetic(args.synthetic.unwrap_or(RECOMMENDED_IMAGES))
    } else {
        Source::Dirs(discover_bundles(&args.bundles)?)
    };
    let n = source.len();
    if n == 0 {
        return Err(Failure::config("no images to benchmark"));
    }
    if args.method.is_empty() {
        return Err(Failure::config("no methods to benchmark"));
    }
    if n < RECOMMENDED_IMAGES {
        log::warn!("timing over {n} images; use at least {RECOMMENDED_IMAGES} for a stable estimate");
    }

    let mut times: Vec<Vec<f64>> = vec![Vec::with_capacity(n); args.method.len()];
    let mut failed = 0;
    for i in 0..n {
        let bundle = match source.get(i, args.seed) {
            Ok(b) => b,
            Err(e) => {
                log::error!("image {i}: {e}");
                failed += 1;
                continue;
            }
        };
        for (m, t) in args.method.iter().zip(times.iter_mut()) {
            let req = ExplainRequest {
                method: *m,
                class: ClassSelector::Predicted,
                rfem: RfemOptions {
                    k: args.k,
                    exec: Execution::Sequential,
                    ..RfemOptions::default()
                },
                seed: args.seed,
            };
            // synthetic bundles carry gradients for class 0 only
            let req = match source {
                Source::Synthetic(_) => ExplainRequest {
                    class: ClassSelector::Index(0),
                    ..req
                },
                Source::Dirs(_) => req,
            };
            let start = Instant::now();
            match explain(&bundle, &req) {
                Ok(_) => t.push(start.elapsed().as_secs_f64()),
                Err(e) => {
                    log::error!("{} {m}: {e}", bundle.image_id());
                    failed += 1;
                }
            }
        }
    }

    let methods: Vec<MethodTiming> = args
        .method
        .iter()
        .zip(&times)
        .filter(|(_, t)| !t.is_empty())
        .map(|(m, t)| {
            let (mean_s, std_s) = mean_std(t);
            MethodTiming {
                method: m.name().to_string(),
                images: t.len(),
                mean_s,
                std_s,
            }
        })
        .collect();
    if methods.is_empty() {
        return Err(Failure {
            code: 1,
            message: "every run failed".into(),
        });
    }
    println!("{:<12} {:>7}  per-image runtime (s), single-threaded", "method", "images");
    for m in &methods {
        println!("{:<12} {:>7}  {:.4} ± {:.4}", m.method, m.images, m.mean_s, m.std_s);
    }
    if let Some(path) = &args.json {
        let report = BenchReport {
            images: n,
            threads: 1,
            methods,
        };
        let json = serde_json::to_string_pretty(&report).expect("timings serialize");
        std::fs::write(path, json)?;
    }
    Ok(failed)
}
