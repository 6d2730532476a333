//! Statistically filtered attention explanations for Vision Transformers and
//! an evaluation suite for saliency maps.
//!
//! Explanations are computed from exported attention tensors
//! ([`tensor_io::AttentionBundle`]); evaluation covers plausibility against
//! gaze maps ([`plausibility`]), perturbation faithfulness against a scoring
//! model ([`perturbation`]) and explanation stability ([`stability`]). Models
//! are reached through a framed byte protocol ([`oracle`]).

pub mod baselines;
pub mod error;
pub mod explain;
pub mod linalg;
pub mod oracle;
pub mod par;
pub mod perturbation;
pub mod plausibility;
pub mod report;
pub mod stability;
pub mod synthetic;
pub mod tensor_io;

pub use error::{Error, Result};
pub use explain::{explain, rfem, rfem_class, ExplainRequest, Method};
pub use par::Execution;
pub use tensor_io::{AttentionBundle, GazeDensityMap, Image, SaliencyMap};
