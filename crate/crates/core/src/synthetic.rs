//! Seeded synthetic bundles for tests, benchmarks and the `bench` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::oracle::ClassScorer;
use crate::tensor_io::{AttentionBundle, Geometry, Image};

#[derive(Clone, Debug, PartialEq)]
pub struct BundleSpec {
    pub geometry: Geometry,
    pub class_count: usize,
    /// classes that get gradient tensors
    pub classes: Vec<usize>,
    /// scale of the pre-softmax logits; larger means peakier rows
    pub sharpness: f64,
}

impl BundleSpec {
    pub fn new(geometry: Geometry, class_count: usize) -> Self {
        BundleSpec {
            geometry,
            class_count,
            classes: Vec::new(),
            sharpness: 3.0,
        }
    }

    /// ViT-B/16 at 224×224: 12 layers, 12 heads, 197 tokens.
    pub fn vit_b16() -> Self {
        BundleSpec::new(Geometry::square(12, 12, 16, 224), 1000)
    }

    pub fn with_classes(mut self, classes: &[usize]) -> Self {
        self.classes = classes.to_vec();
        self
    }
}

/// Softmax-normalizes every row of a `[.., T]` buffer of logits in place.
pub fn softmax_rows(values: &mut [f32], tokens: usize) {
    let mut buf = vec![0.0f64; tokens];
    for row in values.chunks_exact_mut(tokens) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0;
        for (b, &v) in buf.iter_mut().zip(row.iter()) {
            *b = f64::from(v - max).exp();
            sum += *b;
        }
        for (v, b) in row.iter_mut().zip(&buf) {
            *v = (b / sum) as f32;
        }
    }
}

/// Random row-stochastic attentions, standard-normal gradients for the
/// requested classes and standard-normal logits.
pub fn random_bundle(spec: &BundleSpec, seed: u64) -> AttentionBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = spec.geometry;
    let mut att: Vec<f32> = (0..g.tensor_len())
        .map(|_| (rng.sample::<f64, _>(StandardNormal) * spec.sharpness) as f32)
        .collect();
    softmax_rows(&mut att, g.tokens);
    let logits = (0..spec.class_count)
        .map(|_| rng.sample::<f32, _>(StandardNormal))
        .collect();
    let mut bundle = AttentionBundle::new(format!("synthetic-{seed}"), g, spec.class_count, att, Some(logits))
        .expect("synthetic bundle is valid");
    for &c in &spec.classes {
        let grads = (0..g.tensor_len())
            .map(|_| rng.sample::<f32, _>(StandardNormal))
            .collect();
        bundle
            .insert_gradients(c, grads)
            .expect("synthetic gradients are valid");
    }
    bundle
}

/// Class-independent linear score `⟨w, Σ_c x_c⟩` over pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearScorer {
    pub weights: Vec<f64>,
}

impl LinearScorer {
    pub fn new(weights: Vec<f64>) -> Self {
        LinearScorer { weights }
    }

    pub fn score(&self, image: &Image) -> Result<f64> {
        if image.pixels() != self.weights.len() {
            return Err(Error::shape(format!(
                "{} weights for {} pixels",
                self.weights.len(),
                image.pixels()
            )));
        }
        Ok(image
            .channel_sum()
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| x * w)
            .sum())
    }
}

impl ClassScorer for LinearScorer {
    fn class_scores(&mut self, images: &[Image], _class: usize) -> Result<Vec<f64>> {
        images.iter().map(|x| self.score(x)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundles_are_valid_and_seeded() {
        let spec = BundleSpec::new(Geometry::square(2, 3, 4, 16), 10).with_classes(&[0, 9]);
        let a = random_bundle(&spec, 1);
        assert_eq!(a, random_bundle(&spec, 1));
        assert_ne!(a.attentions(), random_bundle(&spec, 2).attentions());
        assert_eq!(a.target_classes().collect::<Vec<_>>(), vec![0, 9]);
    }

    #[test]
    fn linear_scorer_sums_channels() {
        let mut s = LinearScorer::new(vec![1.0, -2.0]);
        let x = Image::new(2, 1, 2, vec![1.0, 1.0, 0.5, 0.25]).unwrap();
        assert_eq!(s.class_scores(&[x], 0).unwrap(), vec![-1.0]);
        assert!(s.score(&Image::filled(1, 1, 3, 0.0)).is_err());
    }
}
