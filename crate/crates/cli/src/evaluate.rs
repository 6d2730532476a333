use std::cell::RefCell;
use std::path::PathBuf;

use clap::Args;

use attnfilter_core::explain::{explain, resize_bilinear, ClassSelector, ExplainRequest, RfemOptions, DEFAULT_K};
use attnfilter_core::oracle::{ClassScorer, OracleSession, OracleSpec};
use attnfilter_core::par::{self, Execution};
use attnfilter_core::perturbation::{
    self, Baseline, CurveConfig, Schedule, DEFAULT_STEP_PIXELS, DEFAULT_SUPPORT_THRESHOLD,
};
use attnfilter_core::report::{MetricReport, MetricRow, ReportMeta};
use attnfilter_core::stability::{self, PerturbationConfig, DEFAULT_RELATIVE_EPSILON, DEFAULT_SAMPLES};
use attnfilter_core::tensor_io::{GazeDensityMap, Grid, Image, SaliencyMap};
use attnfilter_core::{plausibility, Error, Method, Result};

use crate::inputs::{find_by_id, list_maps, parse_label, seed_for, MapFile};
use crate::pool::SessionPool;
use crate::{Failure, Outcome};

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Directory of `<image_id>.<method>.npy` saliency maps
    #[arg(long)]
    pub maps: PathBuf,

    /// Directory of `<image_id>.npy` or `<image_id>.png` gaze density maps
    #[arg(long)]
    pub gaze: Option<PathBuf>,

    /// Directory of `<image_id>.npy` model inputs, needed with --oracle
    #[arg(long)]
    pub images: Option<PathBuf>,

    /// Class scored by the oracle: an index or "predicted"
    #[arg(long, default_value = "predicted")]
    pub class: ClassSelector,

    /// Pixels removed or inserted per perturbation step
    #[arg(long, default_value_t = DEFAULT_STEP_PIXELS)]
    pub step: usize,

    /// Fixed number of perturbation steps instead of --step
    #[arg(long, conflicts_with = "step")]
    pub steps: Option<usize>,

    /// Fill for removed pixels: "mean" (the dataset mean, zero in normalized
    /// input space), "zero", or one value per channel
    #[arg(long, default_value = "mean")]
    pub baseline: String,

    /// Normalized saliency at or above which a pixel is kept for AD/AI/AG
    #[arg(long, default_value_t = DEFAULT_SUPPORT_THRESHOLD)]
    pub support_threshold: f32,

    /// Images per oracle score request
    #[arg(long, default_value_t = 32)]
    pub batch: usize,

    /// Also estimate LIP and LSS by re-explaining perturbed inputs
    #[arg(long)]
    pub stability: bool,

    /// Perturbed samples per image for --stability
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    pub samples: usize,

    /// Ball radius for --stability as a fraction of the input norm
    #[arg(long, default_value_t = DEFAULT_RELATIVE_EPSILON)]
    pub epsilon: f64,

    /// Sampling seed for --stability and random maps
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Output directory for report.json, report.csv and report_summary.csv
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_baseline(s: &str) -> Result<Baseline, Failure> {
    match s {
        "mean" | "zero" => Ok(Baseline::Zero),
        list => list
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map(Baseline::PerChannel)
            .map_err(|_| Failure::config(format!("--baseline must be mean, zero or numbers, got {s:?}"))),
    }
}

struct Settings<'a> {
    args: &'a EvaluateArgs,
    curve: CurveConfig,
    pool: Option<SessionPool>,
}

/// Resamples a map to the image grid when their sizes differ.
fn fit(s: &SaliencyMap, h: usize, w: usize) -> Result<SaliencyMap> {
    if s.dims() == (h, w) {
        return Ok(s.clone());
    }
    let up = resize_bilinear(&s.to_f64(), s.height(), s.width(), h, w);
    SaliencyMap::normalized(h, w, &up)
}

fn resolve_class(sel: ClassSelector, session: &mut OracleSession, image: &Image) -> Result<usize> {
    match sel {
        ClassSelector::Index(c) => Ok(c),
        ClassSelector::Predicted => {
            let p = session.score(std::slice::from_ref(image))?.remove(0);
            Ok(p.iter()
                .enumerate()
                .fold(0, |best, (i, v)| if *v > p[best] { i } else { best }))
        }
    }
}

/// LIP and LSS of one method at one image. Attention methods re-export a
/// bundle for every perturbed input.
fn stability_scores(
    session: &mut OracleSession,
    image_id: &str,
    image: &Image,
    s: &SaliencyMap,
    label: &str,
    class: usize,
    settings: &Settings,
) -> Result<(f64, f64)> {
    let args = settings.args;
    let (method, k) = parse_label(label).expect("labels are validated when listed");
    let cfg = PerturbationConfig::new(args.epsilon * image.norm(), args.samples, args.seed)?;
    let (h, w) = (image.height(), image.width());
    let fixed = fit(s, h, w)?.to_f64();
    let session = RefCell::new(session);
    let classes: Vec<usize> = if method.needs_class() { vec![class] } else { Vec::new() };
    let req = ExplainRequest {
        method,
        class: ClassSelector::Index(class),
        rfem: RfemOptions {
            k: k.unwrap_or(DEFAULT_K),
            exec: Execution::Sequential,
            output: Some((h, w)),
            ..RfemOptions::default()
        },
        seed: seed_for(args.seed, image_id),
    };
    let mut produce = |x: &Image| -> Result<Vec<f64>> {
        if matches!(method, Method::Random | Method::Cbcam) {
            return Ok(fixed.clone());
        }
        let bundle = session.borrow_mut().fetch_bundle(x, image_id, &classes)?;
        Ok(fit(&explain(&bundle, &req)?, h, w)?.to_f64())
    };
    let lip = stability::lip(image, &mut produce, &cfg)?;
    let mut score = |x: &Image| -> Result<f64> {
        Ok(session.borrow_mut().class_scores(std::slice::from_ref(x), class)?[0])
    };
    let lss = stability::lss(image, &mut produce, &mut score, &cfg)?;
    Ok((lip, lss))
}

fn load_map(m: &MapFile) -> Result<SaliencyMap> {
    SaliencyMap::read_npy(&m.path)
}

/// Scores every map of one image. Returns the rows and the failure count.
fn evaluate_image(image_id: &str, maps: &[MapFile], settings: &Settings) -> (Vec<MetricRow>, usize) {
    let args = settings.args;
    let mut failed = 0usize;
    let mut fail = |what: &str, e: &Error| {
        log::error!("{image_id}: {what}: {e}");
        failed += 1;
    };

    let gaze = match args.gaze.as_ref().map(|dir| find_by_id(dir, image_id, &["npy", "png"])) {
        None => None,
        Some(None) => {
            log::warn!("{image_id}: no gaze map; plausibility metrics left empty");
            None
        }
        Some(Some(path)) => GazeDensityMap::read(&path).map_err(|e| fail("gaze map", &e)).ok(),
    };
    let image = match (&settings.pool, args.images.as_ref().map(|dir| find_by_id(dir, image_id, &["npy"]))) {
        (Some(_), Some(None)) => {
            log::warn!("{image_id}: no input image; correctness metrics left empty");
            None
        }
        (Some(_), Some(Some(path))) => Image::read_npy(&path).map_err(|e| fail("input image", &e)).ok(),
        _ => None,
    };

    let mut rows = Vec::with_capacity(maps.len());
    for m in maps {
        let mut row = MetricRow::new(image_id, &m.label);
        let s = match load_map(m) {
            Ok(s) => s,
            Err(e) => {
                fail(&m.label, &e);
                rows.push(row);
                continue;
            }
        };
        if let Some(g) = &gaze {
            match plausibility::evaluate(&s, g) {
                Ok(p) => row.set_plausibility(&p),
                Err(e) => fail(&format!("{} plausibility", m.label), &e),
            }
        }
        if let (Some(pool), Some(x)) = (&settings.pool, &image) {
            let r = pool.with(|session| {
                let class = resolve_class(args.class, session, x)?;
                let fitted = fit(&s, x.height(), x.width())?;
                let c = perturbation::evaluate(x, &fitted, class, session, &settings.curve, args.support_threshold)?;
                let st = if args.stability {
                    Some(stability_scores(session, image_id, x, &s, &m.label, class, settings)?)
                } else {
                    None
                };
                Ok((c, st))
            });
            match r {
                Ok((c, st)) => {
                    row.set_correctness(&c);
                    if let Some((lip, lss)) = st {
                        row.lip = Some(lip);
                        row.lss = Some(lss);
                    }
                }
                Err(e) => fail(&format!("{} correctness", m.label), &e),
            }
        }
        rows.push(row);
    }
    (rows, failed)
}

fn print_summary(report: &MetricReport) {
    let shown = ["sim", "pcc", "nss", "auc_judd", "delta_a_f", "ad", "ai", "ag", "lip", "lss"];
    print!("{:<16} {:>6}", "method", "images");
    for m in shown {
        print!(" {m:>21}");
    }
    println!();
    for s in &report.aggregate {
        print!("{:<16} {:>6}", s.method, s.images);
        for m in shown {
            let cell = match report.summary(&s.method, m) {
                Some(x) if x.count > 0 => format!("{:.4} ± {:.4}", x.mean.unwrap_or(f64::NAN), x.std.unwrap_or(f64::NAN)),
                _ => "-".to_string(),
            };
            print!(" {cell:>21}");
        }
        println!();
    }
}

pub fn run(args: &EvaluateArgs, oracle: Option<OracleSpec>) -> Outcome {
    let maps = list_maps(&args.maps)?;
    if args.gaze.is_none() && oracle.is_none() {
        return Err(Failure::config("nothing to evaluate: give --gaze and/or --oracle with --images"));
    }
    if oracle.is_some() && args.images.is_none() {
        return Err(Failure::config("--oracle needs --images"));
    }
    if args.stability && oracle.is_none() {
        return Err(Failure::config("--stability needs --oracle and --images"));
    }
    let schedule = match args.steps {
        Some(n) => Schedule::Steps(n),
        None => Schedule::PixelsPerStep(args.step),
    };
    schedule.counts(1).map_err(Failure::from)?;
    let curve = CurveConfig {
        schedule,
        baseline: parse_baseline(&args.baseline)?,
        batch: args.batch,
    };
    let pool = oracle.map(SessionPool::connect).transpose()?;
    if let (Some(p), Baseline::PerChannel(v)) = (&pool, &curve.baseline) {
        if v.len() != p.info().input_shape[0] {
            return Err(Failure::config(format!(
                "--baseline has {} values for {} input channels",
                v.len(),
                p.info().input_shape[0]
            )));
        }
    }
    let settings = Settings { args, curve, pool };

    let mut groups: Vec<(String, Vec<MapFile>)> = Vec::new();
    for m in maps {
        match groups.last_mut() {
            Some((id, v)) if *id == m.image_id => v.push(m),
            _ => groups.push((m.image_id.clone(), vec![m])),
        }
    }
    let results = par::map(Execution::Parallel, &groups, |(id, maps)| evaluate_image(id, maps, &settings));
    let mut rows = Vec::new();
    let mut failed = 0;
    for (r, f) in results {
        rows.extend(r);
        failed += f;
    }

    let report = MetricReport::new(rows, ReportMeta::now());
    report.save(&args.out, "report")?;
    print_summary(&report);
    println!("report written to {}", args.out.join("report.json").display());
    Ok(failed)
}
