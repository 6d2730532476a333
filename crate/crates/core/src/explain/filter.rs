//! K-sigma binarization of aggregated heads and the weighted head sum.

use super::rollout::HeadAggregate;
use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Mean and population standard deviation of one head's `Â_h`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeadStats {
    pub mean: f64,
    pub std: f64,
}

impl HeadStats {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        HeadStats {
            mean,
            std: var.sqrt(),
        }
    }

    pub fn threshold(&self, k: f64) -> f64 {
        self.mean + k * self.std
    }
}

/// Binary maps `Ā_h` with the statistics that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct FilteredHeads {
    tokens: usize,
    binary: Vec<Vec<bool>>,
    stats: Vec<HeadStats>,
    k: f64,
}

impl FilteredHeads {
    pub fn heads(&self) -> usize {
        self.binary.len()
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn stats(&self) -> &[HeadStats] {
        &self.stats
    }

    /// Row-major `T×T` mask of head `h`.
    pub fn binary(&self, h: usize) -> &[bool] {
        &self.binary[h]
    }

    /// Number of retained entries per head.
    pub fn retained(&self) -> Vec<usize> {
        self.binary
            .iter()
            .map(|b| b.iter().filter(|&&x| x).count())
            .collect()
    }
}

/// Keeps entries with `Â_h(i,j) ≥ μ_h + K·σ_h`, statistics over the whole
/// `T×T` matrix of each head.
pub fn ksigma_filter(agg: &HeadAggregate, k: f64) -> Result<FilteredHeads> {
    if !k.is_finite() {
        return Err(Error::Numeric("K"));
    }
    let tokens = agg.tokens();
    let mut binary = Vec::with_capacity(agg.heads());
    let mut stats = Vec::with_capacity(agg.heads());
    for m in &agg.per_head {
        if !m.is_finite() {
            return Err(Error::Numeric("aggregated attention"));
        }
        let s = HeadStats::of(m.as_slice());
        let t = s.threshold(k);
        binary.push(m.as_slice().iter().map(|&v| v >= t).collect());
        stats.push(s);
    }
    Ok(FilteredHeads {
        tokens,
        binary,
        stats,
        k,
    })
}

/// `Σ_h w_h · Ā_h`, accumulated in head order.
pub fn aggregate_heads(filtered: &FilteredHeads, weights: &[f64]) -> Result<Mat> {
    if weights.len() != filtered.heads() {
        return Err(Error::shape(format!(
            "{} weights for {} heads",
            weights.len(),
            filtered.heads()
        )));
    }
    let t = filtered.tokens;
    let mut out = Mat::zeros(t, t);
    for (mask, &w) in filtered.binary.iter().zip(weights) {
        for (o, &on) in out.as_mut_slice().iter_mut().zip(mask) {
            if on {
                *o += w;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agg(mats: Vec<Mat>) -> HeadAggregate {
        let weights = mats.iter().map(Mat::max).collect();
        HeadAggregate {
            per_head: mats,
            weights,
        }
    }

    #[test]
    fn hand_threshold() {
        let a = agg(vec![Mat::from_rows(&[[1.0, 2.0], [3.0, 10.0]])]);
        let f = ksigma_filter(&a, 1.0).unwrap();
        assert_eq!(f.stats()[0].mean, 4.0);
        assert!((f.stats()[0].std - 12.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(f.binary(0), &[false, false, false, true]);
    }

    #[test]
    fn constant_matrix_keeps_everything() {
        let a = agg(vec![Mat::from_rows(&[[0.25; 4]; 4])]);
        for k in [-3.0, 0.0, 1.0, 7.5] {
            assert!(ksigma_filter(&a, k).unwrap().binary(0).iter().all(|&b| b));
        }
    }

    #[test]
    fn very_negative_k_keeps_everything() {
        let a = agg(vec![Mat::from_rows(&[[0.1, 0.9], [0.5, 0.5]])]);
        assert!(ksigma_filter(&a, -10.0).unwrap().binary(0).iter().all(|&b| b));
    }

    #[test]
    fn weighted_sum_cases() {
        let a = agg(vec![Mat::from_rows(&[[0.0, 1.0], [0.0, 0.0]])]);
        let f = ksigma_filter(&a, 1.0).unwrap();
        assert_eq!(
            aggregate_heads(&f, &[1.0]).unwrap(),
            Mat::from_rows(&[[0.0, 1.0], [0.0, 0.0]])
        );

        // disjoint supports with weights 2 and 3
        let a = agg(vec![
            Mat::from_rows(&[[5.0, 0.0], [0.0, 0.0]]),
            Mat::from_rows(&[[0.0, 0.0], [0.0, 5.0]]),
        ]);
        let f = ksigma_filter(&a, 1.0).unwrap();
        assert_eq!(
            aggregate_heads(&f, &[2.0, 3.0]).unwrap(),
            Mat::from_rows(&[[2.0, 0.0], [0.0, 3.0]])
        );
        assert!(matches!(aggregate_heads(&f, &[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn empty_masks_give_zero() {
        let f = FilteredHeads {
            tokens: 2,
            binary: vec![vec![false; 4]; 3],
            stats: vec![HeadStats { mean: 0.0, std: 0.0 }; 3],
            k: 1.0,
        };
        assert_eq!(aggregate_heads(&f, &[1.0, 2.0, 3.0]).unwrap(), Mat::zeros(2, 2));
    }
}
