//! Explanation stability: the Lipschitz estimate (LIP) and local surrogate
//! stability (LSS), both maximized over seeded samples from an L2 ball
//! around the input.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor_io::Image;

/// Ball radius as a fraction of `‖x0‖₂` when none is given.
pub const DEFAULT_RELATIVE_EPSILON: f64 = 0.01;
pub const DEFAULT_SAMPLES: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerturbationConfig {
    epsilon: f64,
    n_samples: usize,
    seed: u64,
}

impl PerturbationConfig {
    pub fn new(epsilon: f64, n_samples: usize, seed: u64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
        }
        if n_samples == 0 {
            return Err(Error::Config("need at least one sample".into()));
        }
        Ok(PerturbationConfig {
            epsilon,
            n_samples,
            seed,
        })
    }

    /// Defaults: `ε = 0.01·‖x0‖₂`, 50 samples.
    pub fn for_image(x0: &Image, seed: u64) -> Result<Self> {
        PerturbationConfig::new(DEFAULT_RELATIVE_EPSILON * x0.norm(), DEFAULT_SAMPLES, seed)
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn with_samples(self, n_samples: usize) -> Result<Self> {
        PerturbationConfig::new(self.epsilon, n_samples, self.seed)
    }
}

/// Draws `n_samples` points uniformly from the open ball `‖x − x0‖₂ < ε`.
///
/// Samples come from one sequential stream, so a run with more samples
/// extends a run with fewer.
pub fn sample_neighborhood(x0: &Image, cfg: &PerturbationConfig) -> Vec<Image> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dim = x0.data().len();
    let mut out = Vec::with_capacity(cfg.n_samples);
    let mut dir = vec![0.0f64; dim];
    while out.len() < cfg.n_samples {
        for d in dir.iter_mut() {
            *d = rng.sample(StandardNormal);
        }
        let len = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let u: f64 = rng.random();
        let radius = cfg.epsilon * u.powf(1.0 / dim as f64);
        if len == 0.0 {
            continue;
        }
        let mut x = x0.clone();
        for (v, d) in x.data_mut().iter_mut().zip(&dir) {
            *v += radius * d / len;
        }
        let actual = distance(&x, x0);
        // radius can round up to ε in high dimension
        if actual > 0.0 && actual < cfg.epsilon {
            out.push(x);
        }
    }
    out
}

fn distance(a: &Image, b: &Image) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn l2_diff(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("maps of length {} and {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

/// Anything that maps an input image to a flat per-pixel explanation.
pub trait MapProducer {
    fn produce(&mut self, x: &Image) -> Result<Vec<f64>>;
}

impl<F> MapProducer for F
where
    F: FnMut(&Image) -> Result<Vec<f64>>,
{
    fn produce(&mut self, x: &Image) -> Result<Vec<f64>> {
        self(x)
    }
}

/// `max ‖S(x0) − S(x̃)‖₂ / ‖x0 − x̃‖₂` over the sampled neighborhood.
pub fn lip<E: MapProducer + ?Sized>(x0: &Image, explain: &mut E, cfg: &PerturbationConfig) -> Result<f64> {
    let s0 = explain.produce(x0)?;
    let mut best: Option<f64> = None;
    for x in sample_neighborhood(x0, cfg) {
        let dx = distance(&x, x0);
        if dx == 0.0 {
            continue;
        }
        let ratio = l2_diff(&s0, &explain.produce(&x)?)? / dx;
        best = Some(best.map_or(ratio, |b: f64| b.max(ratio)));
    }
    best.ok_or(Error::DegenerateInput("every perturbation had zero norm"))
}

/// First-order surrogate `E(x) = g(x0) + ⟨S, Σ_c (x − x0)⟩` anchored at `x0`.
#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateModel {
    anchor: Image,
    saliency: Vec<f64>,
    base_score: f64,
}

impl SurrogateModel {
    pub fn new(anchor: Image, saliency: Vec<f64>, base_score: f64) -> Result<Self> {
        if saliency.len() != anchor.pixels() {
            return Err(Error::shape(format!(
                "{} saliency values for {} pixels",
                saliency.len(),
                anchor.pixels()
            )));
        }
        Ok(SurrogateModel {
            anchor,
            saliency,
            base_score,
        })
    }

    pub fn anchor(&self) -> &Image {
        &self.anchor
    }

    pub fn eval(&self, x: &Image) -> Result<f64> {
        surrogate_eval(self, x)
    }
}

pub fn surrogate_eval(s: &SurrogateModel, x: &Image) -> Result<f64> {
    if !x.same_shape(&s.anchor) {
        return Err(Error::shape(format!("{:?} vs anchor {:?}", x.shape(), s.anchor.shape())));
    }
    let n = x.pixels();
    let mut acc = 0.0;
    for c in 0..x.channels() {
        let xs = &x.data()[c * n..(c + 1) * n];
        let a = &s.anchor.data()[c * n..(c + 1) * n];
        for ((w, xv), av) in s.saliency.iter().zip(xs).zip(a) {
            acc += w * (xv - av);
        }
    }
    Ok(s.base_score + acc)
}

fn midpoint(a: &Image, b: &Image) -> Image {
    let mut m = a.clone();
    for (v, w) in m.data_mut().iter_mut().zip(b.data()) {
        *v = (*v + w) / 2.0;
    }
    m
}

/// `max |E_{x0}(m) − E_{x̃}(m)| / ‖x0 − x̃‖₂` with `m` the midpoint, each
/// surrogate built from the explanation and score at its own anchor.
pub fn lss<E, G>(x0: &Image, explain: &mut E, score: &mut G, cfg: &PerturbationConfig) -> Result<f64>
where
    E: MapProducer + ?Sized,
    G: FnMut(&Image) -> Result<f64> + ?Sized,
{
    let at_x0 = SurrogateModel::new(x0.clone(), explain.produce(x0)?, score(x0)?)?;
    let mut best: Option<f64> = None;
    for x in sample_neighborhood(x0, cfg) {
        let dx = distance(&x, x0);
        if dx == 0.0 {
            continue;
        }
        let s = explain.produce(&x)?;
        let g = score(&x)?;
        let m = midpoint(x0, &x);
        let at_x = SurrogateModel::new(x, s, g)?;
        let d = at_x0.eval(&m)? - at_x.eval(&m)?;
        let ratio = d.abs() / dx;
        best = Some(best.map_or(ratio, |b: f64| b.max(ratio)));
    }
    best.ok_or(Error::DegenerateInput("every perturbation had zero norm"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img() -> Image {
        Image::new(3, 4, 4, (0..48).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap()
    }

    #[test]
    fn samples_stay_inside_the_ball() {
        let x0 = img();
        for eps in [1e-9, 0.05, 2.0] {
            let cfg = PerturbationConfig::new(eps, 40, 9).unwrap();
            let xs = sample_neighborhood(&x0, &cfg);
            assert_eq!(xs.len(), 40);
            for x in &xs {
                let d = distance(x, &x0);
                assert!(d > 0.0 && d < eps, "{d} vs {eps}");
            }
        }
    }

    #[test]
    fn sampling_is_seeded_and_prefix_stable() {
        let x0 = img();
        let cfg = PerturbationConfig::new(0.1, 5, 1).unwrap();
        assert_eq!(sample_neighborhood(&x0, &cfg), sample_neighborhood(&x0, &cfg));
        let longer = sample_neighborhood(&x0, &cfg.with_samples(8).unwrap());
        assert_eq!(&longer[..5], &sample_neighborhood(&x0, &cfg)[..]);
    }

    #[test]
    fn config_validation() {
        assert!(PerturbationConfig::new(0.0, 1, 0).is_err());
        assert!(PerturbationConfig::new(0.1, 0, 0).is_err());
        let cfg = PerturbationConfig::for_image(&Image::filled(1, 2, 2, 1.0), 0).unwrap();
        assert!((cfg.epsilon() - 0.02).abs() < 1e-15);
        assert_eq!(cfg.n_samples(), 50);
    }

    #[test]
    fn constant_explainer_has_zero_lip() {
        let x0 = img();
        let cfg = PerturbationConfig::new(0.1, 10, 3).unwrap();
        let mut constant = |_: &Image| Ok(vec![0.5; 16]);
        assert_eq!(lip(&x0, &mut constant, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn surrogate_hand_case() {
        let anchor = Image::new(1, 1, 2, vec![0.0, 0.0]).unwrap();
        let s = SurrogateModel::new(anchor.clone(), vec![1.0, 2.0], 0.5).unwrap();
        let x = Image::new(1, 1, 2, vec![0.1, -0.1]).unwrap();
        assert!((s.eval(&x).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(s.eval(&anchor).unwrap(), 0.5);
        let zero = SurrogateModel::new(anchor, vec![0.0, 0.0], 0.5).unwrap();
        assert_eq!(zero.eval(&x).unwrap(), 0.5);
        assert!(zero.eval(&Image::filled(2, 1, 2, 0.0)).is_err());
        assert!(SurrogateModel::new(Image::filled(1, 1, 2, 0.0), vec![1.0], 0.0).is_err());
    }

    #[test]
    fn surrogate_sums_channels() {
        let anchor = Image::filled(2, 1, 1, 1.0);
        let s = SurrogateModel::new(anchor, vec![3.0], 0.0).unwrap();
        let x = Image::new(2, 1, 1, vec![2.0, 0.5]).unwrap();
        // 3 * ((2-1) + (0.5-1))
        assert_eq!(s.eval(&x).unwrap(), 1.5);
    }
}
