use std::fs;
use std::path::{Path, PathBuf};

use attnfilter_core::explain::{explain, rfem_sweep, ClassSelector, ExplainRequest, RfemOptions};
use attnfilter_core::par::{self, Execution};
use attnfilter_core::tensor_io::{load_bundle, Grid, Image, SaliencyMap};
use attnfilter_core::{Method, Result};

use crate::inputs::{discover_bundles, find_by_id, label, map_file_name, seed_for};
use crate::{overlay, ExplainArgs, MapOutput, Outcome, SweepArgs};

/// Labelled maps of one image.
type Maps = Vec<(String, SaliencyMap)>;

/// What to compute for every bundle.
struct Plan {
    methods: Vec<Method>,
    ks: Vec<f64>,
    class: ClassSelector,
    seed: u64,
    clamp: bool,
    /// label K-dependent maps with `_k<K>` even for a single K
    always_suffix: bool,
}

fn maps_for(bundle_dir: &Path, plan: &Plan) -> Result<(String, Maps)> {
    let bundle = load_bundle(bundle_dir)?;
    let id = bundle.image_id().to_string();
    let suffix = plan.always_suffix || plan.ks.len() > 1;
    let opts = RfemOptions {
        clamp_modulation: plan.clamp,
        exec: Execution::Sequential,
        ..RfemOptions::default()
    };
    let mut out = Vec::new();
    for &m in &plan.methods {
        if m.uses_k() {
            let class = match m {
                Method::RfemClass => Some(plan.class.resolve(&bundle)?),
                _ => None,
            };
            let maps = rfem_sweep(&bundle, class, &plan.ks, &opts)?;
            for (&k, s) in plan.ks.iter().zip(maps) {
                out.push((label(m, suffix.then_some(k)), s));
            }
        } else {
            let req = ExplainRequest {
                method: m,
                class: plan.class,
                rfem: opts,
                seed: seed_for(plan.seed, &id),
            };
            out.push((label(m, None), explain(&bundle, &req)?));
        }
    }
    Ok((id, out))
}

fn background(dir: Option<&PathBuf>, id: &str) -> Option<Image> {
    let path = find_by_id(dir?, id, &["npy"])?;
    match Image::read_npy(&path) {
        Ok(img) => Some(img),
        Err(e) => {
            log::warn!("{}: {e}; writing the overlay without a background", path.display());
            None
        }
    }
}

fn write_maps(id: &str, maps: &[(String, SaliencyMap)], output: &MapOutput) -> Result<()> {
    let bg = if output.png { background(output.images.as_ref(), id) } else { None };
    for (label, s) in maps {
        let path = output.out.join(map_file_name(id, label));
        s.write_npy(&path)?;
        log::info!("wrote {}", path.display());
        if output.png {
            let bg = bg.as_ref().filter(|b| (b.height(), b.width()) == s.dims());
            overlay::write(&path.with_extension("png"), s, bg)?;
        }
    }
    Ok(())
}

/// Runs the plan over every bundle; returns the written maps and the number
/// of bundles that failed.
fn execute(bundles: &[PathBuf], plan: &Plan, output: &MapOutput) -> Result<(Vec<Maps>, usize)> {
    fs::create_dir_all(&output.out)?;
    let results = par::map(Execution::Parallel, bundles, |dir| {
        let (id, maps) = maps_for(dir, plan)?;
        write_maps(&id, &maps, output)?;
        Ok(maps)
    });
    let mut ok = Vec::new();
    let mut failed = 0;
    for (dir, r) in bundles.iter().zip(results) {
        match r {
            Ok(m) => ok.push(m),
            Err::<_, attnfilter_core::Error>(e) => {
                log::error!("{}: {e}", dir.display());
                failed += 1;
            }
        }
    }
    Ok((ok, failed))
}

pub fn run(args: &ExplainArgs) -> Outcome {
    let bundles = discover_bundles(&args.bundles)?;
    let plan = Plan {
        methods: args.method.clone(),
        ks: args.k.clone(),
        class: args.class,
        seed: args.seed,
        clamp: args.clamp,
        always_suffix: false,
    };
    let (done, failed) = execute(&bundles, &plan, &args.output)?;
    let written: usize = done.iter().map(Vec::len).sum();
    println!(
        "wrote {written} map(s) for {} of {} bundle(s) to {}",
        done.len(),
        bundles.len(),
        args.output.out.display()
    );
    Ok(failed)
}

pub fn sweep(args: &SweepArgs) -> Outcome {
    let bundles = discover_bundles(&args.bundles)?;
    let plan = Plan {
        methods: vec![if args.class.is_some() { Method::RfemClass } else { Method::Rfem }],
        ks: args.k.clone(),
        class: args.class.unwrap_or_default(),
        seed: 0,
        clamp: false,
        always_suffix: true,
    };
    let (done, failed) = execute(&bundles, &plan, &args.output)?;
    println!("k\tmean_saliency\tnon_degenerate");
    for (i, k) in args.k.iter().enumerate() {
        let maps: Vec<&SaliencyMap> = done.iter().map(|m| &m[i].1).collect();
        let mean = maps
            .iter()
            .map(|s| s.values().iter().map(|&v| f64::from(v)).sum::<f64>() / s.values().len() as f64)
            .sum::<f64>()
            / maps.len().max(1) as f64;
        let live = maps.iter().filter(|s| s.is_non_degenerate()).count();
        println!("{k}\t{mean:.6}\t{live}/{}", maps.len());
    }
    Ok(failed)
}
