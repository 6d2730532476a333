//! Explanation maps from exported attentions.
//!
//! The filtered rollout pipeline ([`rfem`]) rolls out every head separately
//! through all layers (`Â_h = M^(L)·…·M^(1)` with `M = rownorm(A + I)`),
//! binarizes each `Â_h` at `μ_h + K·σ_h`, sums the binary maps weighted by
//! `max Â_h` and reads the `[CLS]` row as a patch grid. [`rfem_class`] scales
//! each layer's attention by its class gradient first. The remaining
//! functions are the comparison baselines.

mod filter;
mod grid;
mod methods;
mod rollout;

pub use filter::{aggregate_heads, ksigma_filter, FilteredHeads, HeadStats};
pub use grid::{extract_cls_map, resize_bilinear, to_saliency, PatchGrid};
pub use methods::{
    explain, gradcam_vit_baseline, rfem, rfem_class, rfem_class_with, rfem_sweep, rfem_trace, rfem_with,
    rollout_baseline, saw_baseline, ClassSelector, ExplainRequest, Method, RfemOptions, RfemTrace, DEFAULT_K,
    K_SWEEP,
};
pub use rollout::{augment_with_identity, grad_modulate, per_head_rollout, HeadAggregate, Modulation, WeightScope};
