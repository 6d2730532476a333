//! Agreement between a saliency map and human gaze data: SIM, PCC, NSS and
//! AUC-Judd.
//!
//! Standard deviations are population standard deviations throughout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain::resize_bilinear;
use crate::tensor_io::{FixationMap, GazeDensityMap, Grid, SaliencyMap};

/// Share of gaze-map pixels marked as fixations.
pub const FIXATION_PERCENT: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlausibilityScores {
    pub sim: f64,
    pub pcc: f64,
    pub auc_judd: f64,
    pub nss: f64,
}

fn same_dims(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::shape(format!("map {a:?} vs {b:?}")));
    }
    Ok(())
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Histogram intersection of the two maps after each is scaled to sum to 1.
pub fn sim(s: &impl Grid, g: &impl Grid) -> Result<f64> {
    same_dims(s.dims(), g.dims())?;
    sim_values(&s.to_f64(), &g.to_f64())
}

pub fn sim_values(s: &[f64], g: &[f64]) -> Result<f64> {
    let (ms, mg): (f64, f64) = (s.iter().sum(), g.iter().sum());
    if ms <= 0.0 || mg <= 0.0 {
        return Err(Error::DegenerateInput("SIM needs positive mass in both maps"));
    }
    Ok(s.iter().zip(g).map(|(a, b)| (a / ms).min(b / mg)).sum())
}

/// Pearson correlation between two maps.
pub fn pcc(s: &impl Grid, g: &impl Grid) -> Result<f64> {
    same_dims(s.dims(), g.dims())?;
    pcc_values(&s.to_f64(), &g.to_f64())
}

pub fn pcc_values(s: &[f64], g: &[f64]) -> Result<f64> {
    let (ms, ss) = mean_std(s);
    let (mg, sg) = mean_std(g);
    if ss == 0.0 || sg == 0.0 {
        return Err(Error::DegenerateInput("PCC of a constant map"));
    }
    let cov = s.iter().zip(g).map(|(a, b)| (a - ms) * (b - mg)).sum::<f64>() / s.len() as f64;
    Ok((cov / (ss * sg)).clamp(-1.0, 1.0))
}

/// Number of fixations extracted from a map with `pixels` entries:
/// `⌈0.05 · pixels⌉`.
pub fn fixation_count(pixels: usize) -> usize {
    (pixels * FIXATION_PERCENT).div_ceil(100)
}

/// Marks the top 5% of gaze pixels; ties at the cut go to the earliest
/// pixels in row-major order.
pub fn fixation_map(g: &GazeDensityMap) -> FixationMap {
    let values = g.values();
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut mask = vec![false; values.len()];
    for &i in &order[..fixation_count(values.len())] {
        mask[i] = true;
    }
    FixationMap::new(g.height(), g.width(), mask).expect("at least one fixation")
}

/// Neumaier sum returned unrounded as `(sum, correction)`.
fn compensated_sum(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        c += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    (sum, c)
}

/// Mean of the standardized saliency over fixated pixels.
///
/// Evaluated as `(n·Σ_fix s − p·Σ s) / (n·p·σ)` with compensated sums and
/// exact product errors, so scores near zero keep their relative precision.
pub fn nss(s: &impl Grid, f: &FixationMap) -> Result<f64> {
    same_dims(s.dims(), f.dims())?;
    let v = s.to_f64();
    let (_, std) = mean_std(&v);
    if std == 0.0 {
        return Err(Error::DegenerateInput("NSS of a constant map"));
    }
    let n = v.len() as f64;
    let p = f.count() as f64;
    let (fh, fl) = compensated_sum(v.iter().zip(f.mask()).filter(|(_, &fix)| fix).map(|(x, _)| *x));
    let (ah, al) = compensated_sum(v.iter().copied());
    let (x1, x2) = (n * fh, p * ah);
    let (e1, e2) = (n.mul_add(fh, -x1), p.mul_add(ah, -x2));
    let num = (x1 - x2) + ((e1 - e2) + (n * fl - p * al));
    Ok(num / (n * p * std))
}

/// Area under the ROC curve of saliency as a fixation classifier.
///
/// Every distinct saliency value is a threshold, so the curve is the full
/// empirical ROC and tied values contribute half credit through the
/// trapezoid rule.
pub fn auc_judd(s: &impl Grid, f: &FixationMap) -> Result<f64> {
    same_dims(s.dims(), f.dims())?;
    let total = f.mask().len();
    let positives = f.count();
    let negatives = total - positives;
    if negatives == 0 {
        return Err(Error::DegenerateInput("AUC-Judd with every pixel fixated"));
    }
    let values = s.values();
    let mut order: Vec<usize> = (0..total).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));

    let (p, n) = (positives as f64, negatives as f64);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut area = 0.0;
    let mut i = 0;
    while i < total {
        let v = values[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < total && values[order[i]] == v {
            if f.mask()[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let dx = (fp - fp0) as f64 / n;
        area += dx * (tp0 + tp) as f64 / (2.0 * p);
    }
    Ok(area)
}

/// All four scores. The saliency map is resampled to the gaze map's size
/// first when they differ.
pub fn evaluate(s: &SaliencyMap, g: &GazeDensityMap) -> Result<PlausibilityScores> {
    let s = if s.dims() == g.dims() {
        s.clone()
    } else {
        let up = resize_bilinear(&s.to_f64(), s.height(), s.width(), g.height(), g.width());
        SaliencyMap::normalized(g.height(), g.width(), &up)?
    };
    let f = fixation_map(g);
    Ok(PlausibilityScores {
        sim: sim(&s, g)?,
        pcc: pcc(&s, g)?,
        auc_judd: auc_judd(&s, &f)?,
        nss: nss(&s, &f)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smap(h: usize, w: usize, v: &[f32]) -> SaliencyMap {
        SaliencyMap::new(h, w, v.to_vec()).unwrap()
    }

    #[test]
    fn sim_cases() {
        let g = GazeDensityMap::new(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        assert!((sim(&g, &g).unwrap() - 1.0).abs() < 1e-15);
        let a = smap(1, 2, &[1.0, 0.0]);
        let b = smap(1, 2, &[0.0, 1.0]);
        assert_eq!(sim(&a, &b).unwrap(), 0.0);
        assert_eq!(sim_values(&[0.5, 0.5], &[1.0, 0.0]).unwrap(), 0.5);
        assert!(matches!(sim_values(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn pcc_cases() {
        assert!((pcc_values(&[1.0, 2.0, 5.0], &[1.0, 2.0, 5.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pcc_values(&[1.0, 2.0, 5.0], &[9.0, 8.0, 5.0]).unwrap() + 1.0).abs() < 1e-15);
        // numpy.corrcoef([1,2,3,4],[1,2,2,4])[0,1]
        let r = pcc_values(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 2.0, 4.0]).unwrap();
        assert!((r - 0.9233805168766388).abs() < 1e-12, "{r}");
        assert!(matches!(pcc_values(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn fixation_extraction() {
        assert_eq!(fixation_count(224 * 224), 2509);
        assert_eq!(fixation_count(100), 5);

        let mut d = vec![0.1f32; 100];
        for i in [3, 17, 42, 77, 99] {
            d[i] = 1.0;
        }
        let f = fixation_map(&GazeDensityMap::new(10, 10, d).unwrap());
        assert_eq!(f.count(), 5);
        for i in [3, 17, 42, 77, 99] {
            assert!(f.mask()[i]);
        }

        let f = fixation_map(&GazeDensityMap::new(10, 10, vec![0.5; 100]).unwrap());
        assert_eq!(f.mask().iter().position(|&x| !x), Some(5));
        assert_eq!(f.count(), 5);
    }

    #[test]
    fn nss_hand_values() {
        let s = smap(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        let at_max = FixationMap::new(2, 2, vec![false, false, false, true]).unwrap();
        assert!((nss(&s, &at_max).unwrap() - 3f64.sqrt()).abs() < 1e-12);
        let at_min = FixationMap::new(2, 2, vec![true, false, false, false]).unwrap();
        assert!((nss(&s, &at_min).unwrap() + 1.0 / 3f64.sqrt()).abs() < 1e-12);
        let all = FixationMap::new(2, 2, vec![true; 4]).unwrap();
        assert!(nss(&s, &all).unwrap().abs() < 1e-15);
        assert!(nss(&smap(1, 2, &[0.3, 0.3]), &FixationMap::new(1, 2, vec![true, false]).unwrap()).is_err());
    }

    #[test]
    fn auc_perfect_and_reversed() {
        let s = smap(1, 4, &[0.9, 0.8, 0.1, 0.2]);
        let f = FixationMap::new(1, 4, vec![true, true, false, false]).unwrap();
        assert_eq!(auc_judd(&s, &f).unwrap(), 1.0);
        let f = FixationMap::new(1, 4, vec![false, false, true, true]).unwrap();
        assert_eq!(auc_judd(&s, &f).unwrap(), 0.0);
        let all = FixationMap::new(1, 4, vec![true; 4]).unwrap();
        assert!(matches!(auc_judd(&s, &all), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn auc_of_constant_map_is_one_half() {
        let s = smap(2, 2, &[0.4; 4]);
        let f = FixationMap::new(2, 2, vec![true, false, false, false]).unwrap();
        assert_eq!(auc_judd(&s, &f).unwrap(), 0.5);
    }

    #[test]
    fn evaluate_resamples_to_gaze_size() {
        let s = smap(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        let mut d = vec![0.0f32; 64];
        for (i, v) in [(63, 1.0), (62, 0.9), (55, 0.8), (54, 0.7)] {
            d[i] = v;
        }
        let scores = evaluate(&s, &GazeDensityMap::new(8, 8, d).unwrap()).unwrap();
        // numpy: corrcoef(outer(y, y), g) with y = arange(8)/7
        assert!((scores.pcc - 0.6259015215478424).abs() < 1e-6, "{}", scores.pcc);
        // the four fixated pixels outrank every other one
        assert_eq!(scores.auc_judd, 1.0);
    }
}
