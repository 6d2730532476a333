use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::filter::{aggregate_heads, ksigma_filter, FilteredHeads};
use super::grid::{cls_row_grid, extract_cls_map, to_saliency, PatchGrid};
use super::rollout::{chain_product, head_mean, per_head_rollout, ClampAt, HeadAggregate, Modulation, WeightScope};
use crate::baselines::{cb_cam_map, random_baseline_map};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::par::Execution;
use crate::tensor_io::{AttentionBundle, SaliencyMap};

pub const DEFAULT_K: f64 = 1.0;

/// The K grid of the filtering ablation.
pub const K_SWEEP: [f64; 6] = [-0.5, 0.0, 0.5, 1.0, 1.5, 2.0];

/// Options shared by the filtered-rollout explainers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RfemOptions {
    pub k: f64,
    pub weight_scope: WeightScope,
    /// clamp negative `A ⊙ ∇A` entries in the class variant
    pub clamp_modulation: bool,
    pub exec: Execution,
    /// output size; defaults to the bundle's image size
    pub output: Option<(usize, usize)>,
}

impl Default for RfemOptions {
    fn default() -> Self {
        RfemOptions {
            k: DEFAULT_K,
            weight_scope: WeightScope::FullMatrix,
            clamp_modulation: false,
            exec: Execution::default(),
            output: None,
        }
    }
}

impl RfemOptions {
    pub fn with_k(k: f64) -> Self {
        RfemOptions {
            k,
            ..Default::default()
        }
    }
}

/// Intermediate products of one filtered-rollout run.
#[derive(Clone, Debug)]
pub struct RfemTrace {
    pub aggregate: HeadAggregate,
    pub filtered: FilteredHeads,
    pub combined: Mat,
    pub grid: PatchGrid,
}

fn output_size(bundle: &AttentionBundle, opts: &RfemOptions) -> (usize, usize) {
    opts.output.unwrap_or_else(|| {
        let g = bundle.geometry();
        (g.image_height, g.image_width)
    })
}

fn finish(grid: &PatchGrid, size: (usize, usize)) -> Result<SaliencyMap> {
    to_saliency(grid, size.0, size.1)
}

fn filtered_from(aggregate: HeadAggregate, k: f64) -> Result<RfemTrace> {
    let filtered = ksigma_filter(&aggregate, k)?;
    let combined = aggregate_heads(&filtered, &aggregate.weights)?;
    let grid = extract_cls_map(&combined)?;
    Ok(RfemTrace {
        aggregate,
        filtered,
        combined,
        grid,
    })
}

/// Runs the filtered rollout pipeline and keeps every intermediate.
pub fn rfem_trace(bundle: &AttentionBundle, class: Option<usize>, opts: &RfemOptions) -> Result<RfemTrace> {
    let modulation = class.map(|class| Modulation {
        class,
        clamp: opts.clamp_modulation,
    });
    let aggregate = per_head_rollout(bundle, modulation, opts.weight_scope, opts.exec)?;
    filtered_from(aggregate, opts.k)
}

/// Filtered per-head rollout explanation.
pub fn rfem(bundle: &AttentionBundle, k: f64) -> Result<SaliencyMap> {
    rfem_with(bundle, &RfemOptions::with_k(k))
}

pub fn rfem_with(bundle: &AttentionBundle, opts: &RfemOptions) -> Result<SaliencyMap> {
    let trace = rfem_trace(bundle, None, opts)?;
    finish(&trace.grid, output_size(bundle, opts))
}

/// Class-specific variant: each layer's attention is scaled elementwise by
/// its gradient for `class` before the rollout.
pub fn rfem_class(bundle: &AttentionBundle, class: usize, k: f64) -> Result<SaliencyMap> {
    rfem_class_with(bundle, class, &RfemOptions::with_k(k))
}

pub fn rfem_class_with(bundle: &AttentionBundle, class: usize, opts: &RfemOptions) -> Result<SaliencyMap> {
    let trace = rfem_trace(bundle, Some(class), opts)?;
    finish(&trace.grid, output_size(bundle, opts))
}

/// One map per K, sharing a single rollout.
pub fn rfem_sweep(
    bundle: &AttentionBundle,
    class: Option<usize>,
    ks: &[f64],
    opts: &RfemOptions,
) -> Result<Vec<SaliencyMap>> {
    let modulation = class.map(|class| Modulation {
        class,
        clamp: opts.clamp_modulation,
    });
    let aggregate = per_head_rollout(bundle, modulation, opts.weight_scope, opts.exec)?;
    let size = output_size(bundle, opts);
    ks.iter()
        .map(|&k| {
            let filtered = ksigma_filter(&aggregate, k)?;
            let combined = aggregate_heads(&filtered, &aggregate.weights)?;
            finish(&extract_cls_map(&combined)?, size)
        })
        .collect()
}

fn mean_rollout(bundle: &AttentionBundle, class: Option<usize>, clamp: ClampAt) -> Result<Mat> {
    if let Some(c) = class {
        bundle.gradients(c)?;
    }
    chain_product(bundle.layers(), bundle.tokens(), |l| {
        let mut m = head_mean(bundle, l, class, clamp)?;
        for i in 0..m.rows() {
            m[(i, i)] += 1.0;
        }
        super::rollout::normalize_rows(&mut m)?;
        Ok(m)
    })
}

/// Head-averaged attention rollout, unfiltered.
pub fn rollout_baseline(bundle: &AttentionBundle) -> Result<SaliencyMap> {
    let m = mean_rollout(bundle, None, ClampAt::Never)?;
    let g = bundle.geometry();
    finish(&extract_cls_map(&m)?, (g.image_height, g.image_width))
}

/// Rollout over gradient-scaled, head-averaged attentions with negative
/// means clamped to zero.
pub fn saw_baseline(bundle: &AttentionBundle, class: usize) -> Result<SaliencyMap> {
    let m = mean_rollout(bundle, Some(class), ClampAt::Mean)?;
    let g = bundle.geometry();
    finish(&extract_cls_map(&m)?, (g.image_height, g.image_width))
}

/// Last-layer `mean_h max(A ⊙ ∇A, 0)`, `[CLS]` row.
pub fn gradcam_vit_baseline(bundle: &AttentionBundle, class: usize) -> Result<SaliencyMap> {
    bundle.gradients(class)?;
    let last = bundle.layers() - 1;
    let m = head_mean(bundle, last, Some(class), ClampAt::Element)?;
    let grid = cls_row_grid(&m.row(0)[1..])?;
    let g = bundle.geometry();
    finish(&grid, (g.image_height, g.image_width))
}

/// Every explanation method the toolkit can produce.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Rfem,
    RfemClass,
    Rollout,
    Saw,
    Gradcam,
    Random,
    Cbcam,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Rfem,
        Method::RfemClass,
        Method::Rollout,
        Method::Saw,
        Method::Gradcam,
        Method::Random,
        Method::Cbcam,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Rfem => "rfem",
            Method::RfemClass => "rfem-class",
            Method::Rollout => "rollout",
            Method::Saw => "saw",
            Method::Gradcam => "gradcam",
            Method::Random => "random",
            Method::Cbcam => "cbcam",
        }
    }

    pub fn needs_class(self) -> bool {
        matches!(self, Method::RfemClass | Method::Saw | Method::Gradcam)
    }

    /// Whether K changes the output.
    pub fn uses_k(self) -> bool {
        matches!(self, Method::Rfem | Method::RfemClass)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// Target class for class-specific methods.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ClassSelector {
    /// argmax of the bundle logits
    #[default]
    Predicted,
    Index(usize),
}

impl ClassSelector {
    pub fn resolve(self, bundle: &AttentionBundle) -> Result<usize> {
        match self {
            ClassSelector::Index(c) => Ok(c),
            ClassSelector::Predicted => bundle.predicted_class().ok_or_else(|| {
                Error::MissingComponent(format!(
                    "logits for {} (needed to resolve the predicted class)",
                    bundle.image_id()
                ))
            }),
        }
    }
}

impl FromStr for ClassSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("predicted") {
            return Ok(ClassSelector::Predicted);
        }
        s.parse()
            .map(ClassSelector::Index)
            .map_err(|_| Error::Config(format!("class must be an index or \"predicted\", got {s:?}")))
    }
}

/// A fully specified explanation request for one bundle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExplainRequest {
    pub method: Method,
    pub class: ClassSelector,
    pub rfem: RfemOptions,
    pub seed: u64,
}

impl ExplainRequest {
    pub fn new(method: Method) -> Self {
        ExplainRequest {
            method,
            class: ClassSelector::Predicted,
            rfem: RfemOptions::default(),
            seed: 0,
        }
    }
}

/// Produces the saliency map `req` describes for `bundle`.
pub fn explain(bundle: &AttentionBundle, req: &ExplainRequest) -> Result<SaliencyMap> {
    let g = bundle.geometry();
    let (h, w) = req.rfem.output.unwrap_or((g.image_height, g.image_width));
    match req.method {
        Method::Rfem => rfem_with(bundle, &req.rfem),
        Method::RfemClass => rfem_class_with(bundle, req.class.resolve(bundle)?, &req.rfem),
        Method::Rollout => rollout_baseline(bundle),
        Method::Saw => saw_baseline(bundle, req.class.resolve(bundle)?),
        Method::Gradcam => gradcam_vit_baseline(bundle, req.class.resolve(bundle)?),
        Method::Random => Ok(random_baseline_map(h, w, req.seed)),
        Method::Cbcam => Ok(cb_cam_map(h, w)),
    }
}
