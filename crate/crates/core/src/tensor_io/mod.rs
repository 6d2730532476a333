//! On-disk formats: NPY tensors, attention bundles, saliency and gaze maps.

mod bundle;
mod maps;
pub mod npy;

pub use bundle::{load_bundle, save_bundle, AttentionBundle, Geometry, MANIFEST, ROW_SUM_TOL};
pub use maps::{FixationMap, GazeDensityMap, Grid, Image, SaliencyMap};
pub(crate) use bundle::check_attention_rows;
pub use npy::{read_npy, write_npy, Dtype, NpyArray};
