//! Client and server sides of the oracle protocol.
//!
//! An oracle is a process (or socket) that scores images and exports
//! attentions and attention gradients. Every exchange is a request frame
//! answered by exactly one frame carrying the same id; see [`frame`].

mod client;
pub mod frame;
mod server;

pub use client::{AttentionTensor, OracleSession, OracleSpec, HANDSHAKE_TIMEOUT, PROBABILITY_TOL, REQUEST_TIMEOUT};
pub use frame::{Frame, Header, Hello, OracleInfo, PROTOCOL_MAGIC, PROTOCOL_VERSION};
pub use server::{serve, ClassOutOfRange, LinearSoftmaxModel, OracleModel};

use crate::error::Result;
use crate::tensor_io::Image;

/// Scores a batch of images for one class. Higher means more confident.
pub trait ClassScorer {
    fn class_scores(&mut self, images: &[Image], class: usize) -> Result<Vec<f64>>;
}

impl<F> ClassScorer for F
where
    F: FnMut(&[Image], usize) -> Result<Vec<f64>>,
{
    fn class_scores(&mut self, images: &[Image], class: usize) -> Result<Vec<f64>> {
        self(images, class)
    }
}
