//! Faithfulness of a saliency map under pixel perturbation: deletion and
//! insertion curves, their areas, the LeRF−MoRF deletion gap and the
//! AD/AI/AG confidence metrics.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::ClassScorer;
use crate::tensor_io::{Grid, Image, SaliencyMap};

/// Pixels replaced per deletion/insertion step.
pub const DEFAULT_STEP_PIXELS: usize = 50;

/// Normalized saliency at or above which a pixel belongs to the
/// explanation's support for AD/AI/AG.
pub const DEFAULT_SUPPORT_THRESHOLD: f32 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Order {
    /// most relevant first
    MoRF,
    /// least relevant first
    LeRF,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Deletion,
    Insertion,
}

/// How many pixels change between consecutive curve points.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schedule {
    PixelsPerStep(usize),
    /// a fixed number of steps spread evenly over the image
    Steps(usize),
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::PixelsPerStep(DEFAULT_STEP_PIXELS)
    }
}

impl Schedule {
    pub fn counts(self, total: usize) -> Result<Vec<usize>> {
        match self {
            Schedule::PixelsPerStep(step) => masking_schedule(total, step),
            Schedule::Steps(0) => Err(Error::Config("step count must be positive".into())),
            Schedule::Steps(n) => {
                let mut v: Vec<usize> = (0..=n).map(|i| i * total / n).collect();
                v.dedup();
                Ok(v)
            }
        }
    }
}

/// Fill value for removed pixels.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum Baseline {
    #[default]
    Zero,
    /// one value per channel, e.g. the dataset mean in model input units
    PerChannel(Vec<f64>),
}

impl Baseline {
    fn value(&self, channel: usize) -> f64 {
        match self {
            Baseline::Zero => 0.0,
            Baseline::PerChannel(v) => v[channel],
        }
    }

    fn check(&self, image: &Image) -> Result<()> {
        if let Baseline::PerChannel(v) = self {
            if v.len() != image.channels() {
                return Err(Error::shape(format!(
                    "{} baseline values for {} channels",
                    v.len(),
                    image.channels()
                )));
            }
        }
        Ok(())
    }

    /// An image of the same shape filled with the baseline.
    pub fn image_like(&self, image: &Image) -> Result<Image> {
        self.check(image)?;
        let mut out = image.clone();
        let n = image.pixels();
        for c in 0..image.channels() {
            let v = self.value(c);
            out.data_mut()[c * n..(c + 1) * n].iter_mut().for_each(|x| *x = v);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurveConfig {
    pub schedule: Schedule,
    pub baseline: Baseline,
    /// images per scorer call
    pub batch: usize,
}

impl Default for CurveConfig {
    fn default() -> Self {
        CurveConfig {
            schedule: Schedule::default(),
            baseline: Baseline::default(),
            batch: 32,
        }
    }
}

/// Model score as a function of the fraction of perturbed pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationCurve {
    pub points: Vec<(f64, f64)>,
    pub order: Order,
    pub mode: Mode,
}

impl PerturbationCurve {
    pub fn scores(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.1)
    }
}

impl fmt::Display for PerturbationCurve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}/{:?} ({} points)", self.mode, self.order, self.points.len())
    }
}

/// Pixel indices from most to least salient; equal values keep row-major
/// order.
pub fn pixel_ranking(s: &SaliencyMap) -> Vec<usize> {
    ranking(s, Order::MoRF)
}

/// Pixel visiting order for `order`. LeRF sorts ascending, again with
/// row-major tie-breaking.
pub fn ranking(s: &SaliencyMap, order: Order) -> Vec<usize> {
    let v = s.values();
    let mut idx: Vec<usize> = (0..v.len()).collect();
    match order {
        Order::MoRF => idx.sort_by(|&a, &b| v[b].total_cmp(&v[a])),
        Order::LeRF => idx.sort_by(|&a, &b| v[a].total_cmp(&v[b])),
    }
    idx
}

/// Cumulative pixel counts `0, step, 2·step, …, total`.
pub fn masking_schedule(total: usize, step: usize) -> Result<Vec<usize>> {
    if step == 0 {
        return Err(Error::Config("step must be at least one pixel".into()));
    }
    let mut v: Vec<usize> = (0..total).step_by(step).collect();
    v.push(total);
    Ok(v)
}

fn set_pixel(dst: &mut Image, src: &Image, pixel: usize) {
    let n = dst.pixels();
    for c in 0..dst.channels() {
        dst.data_mut()[c * n + pixel] = src.data()[c * n + pixel];
    }
}

/// Runs one perturbation curve. Scores are requested in batches; any scorer
/// failure aborts the whole curve.
pub fn perturbation_curve<S: ClassScorer + ?Sized>(
    image: &Image,
    s: &SaliencyMap,
    class: usize,
    scorer: &mut S,
    order: Order,
    mode: Mode,
    cfg: &CurveConfig,
) -> Result<PerturbationCurve> {
    if s.dims() != (image.height(), image.width()) {
        return Err(Error::shape(format!(
            "saliency {:?} vs image {}x{}",
            s.dims(),
            image.height(),
            image.width()
        )));
    }
    let total = image.pixels();
    let counts = cfg.schedule.counts(total)?;
    let rank = ranking(s, order);
    let blank = cfg.baseline.image_like(image)?;
    // deletion copies baseline pixels into the image, insertion copies image
    // pixels into the baseline
    let (mut current, source) = match mode {
        Mode::Deletion => (image.clone(), &blank),
        Mode::Insertion => (blank.clone(), image),
    };

    let batch = cfg.batch.max(1);
    let mut scores = Vec::with_capacity(counts.len());
    let mut pending = Vec::with_capacity(batch);
    let mut done = 0;
    for &k in &counts {
        for &p in &rank[done..k] {
            set_pixel(&mut current, source, p);
        }
        done = k;
        pending.push(current.clone());
        if pending.len() == batch {
            scores.extend(scorer.class_scores(&pending, class)?);
            pending.clear();
        }
    }
    if !pending.is_empty() {
        scores.extend(scorer.class_scores(&pending, class)?);
    }
    if scores.len() != counts.len() {
        return Err(Error::Oracle(format!(
            "expected {} scores, got {}",
            counts.len(),
            scores.len()
        )));
    }
    let points = counts
        .iter()
        .zip(scores)
        .map(|(&k, sc)| (k as f64 / total as f64, sc))
        .collect();
    Ok(PerturbationCurve { points, order, mode })
}

pub fn deletion_curve<S: ClassScorer + ?Sized>(
    image: &Image,
    s: &SaliencyMap,
    class: usize,
    scorer: &mut S,
    order: Order,
    cfg: &CurveConfig,
) -> Result<PerturbationCurve> {
    perturbation_curve(image, s, class, scorer, order, Mode::Deletion, cfg)
}

pub fn insertion_curve<S: ClassScorer + ?Sized>(
    image: &Image,
    s: &SaliencyMap,
    class: usize,
    scorer: &mut S,
    order: Order,
    cfg: &CurveConfig,
) -> Result<PerturbationCurve> {
    perturbation_curve(image, s, class, scorer, order, Mode::Insertion, cfg)
}

/// Trapezoidal area over the fraction axis.
pub fn auc_of_curve(curve: &PerturbationCurve) -> Result<f64> {
    trapezoid(&curve.points)
}

pub fn trapezoid(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::DegenerateInput("a curve needs at least two points"));
    }
    Ok(points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum())
}

/// Deletion-curve area with least-relevant-first order minus the area with
/// most-relevant-first order.
pub fn delta_a_f<S: ClassScorer + ?Sized>(
    image: &Image,
    s: &SaliencyMap,
    class: usize,
    scorer: &mut S,
    cfg: &CurveConfig,
) -> Result<f64> {
    let lerf = deletion_curve(image, s, class, scorer, Order::LeRF, cfg)?;
    let morf = deletion_curve(image, s, class, scorer, Order::MoRF, cfg)?;
    Ok(auc_of_curve(&lerf)? - auc_of_curve(&morf)?)
}

/// Keeps pixels whose saliency is at least `threshold`; the rest take the
/// baseline value.
pub fn explanation_masked(image: &Image, s: &SaliencyMap, threshold: f32, baseline: &Baseline) -> Result<Image> {
    if s.dims() != (image.height(), image.width()) {
        return Err(Error::shape(format!("saliency {:?} vs image", s.dims())));
    }
    let mut out = baseline.image_like(image)?;
    for (p, &v) in s.values().iter().enumerate() {
        if v >= threshold {
            set_pixel(&mut out, image, p);
        }
    }
    Ok(out)
}

/// Original (`p`) and explanation-masked (`o`) class confidence.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Confidence {
    pub p: f64,
    pub o: f64,
}

impl Confidence {
    /// Per-sample drop term; `None` when `p = 0`.
    pub fn drop_term(self) -> Option<f64> {
        (self.p > 0.0).then(|| (self.p - self.o).max(0.0) / self.p)
    }

    pub fn increase_term(self) -> f64 {
        if self.o > self.p {
            1.0
        } else {
            0.0
        }
    }

    /// Per-sample gain term; `None` when `p = 1`.
    pub fn gain_term(self) -> Option<f64> {
        (self.p < 1.0).then(|| (self.o - self.p).max(0.0) / (1.0 - self.p))
    }
}

fn mean_of(terms: impl Iterator<Item = Option<f64>>, what: &str) -> Result<f64> {
    let (mut sum, mut n, mut skipped) = (0.0, 0usize, 0usize);
    for t in terms {
        match t {
            Some(v) => {
                sum += v;
                n += 1;
            }
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("{what}: skipped {skipped} sample(s) with undefined terms");
    }
    if n == 0 {
        return Err(Error::DegenerateInput("no usable samples"));
    }
    Ok(sum / n as f64)
}

/// Average Drop.
pub fn average_drop(batch: &[Confidence]) -> Result<f64> {
    mean_of(batch.iter().map(|c| c.drop_term()), "average drop")
}

/// Average Increase.
pub fn average_increase(batch: &[Confidence]) -> Result<f64> {
    mean_of(batch.iter().map(|c| Some(c.increase_term())), "average increase")
}

/// Average Gain.
pub fn average_gain(batch: &[Confidence]) -> Result<f64> {
    mean_of(batch.iter().map(|c| c.gain_term()), "average gain")
}

/// Per-image correctness scores.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectnessScores {
    /// insertion area, most relevant first
    pub iauc: f64,
    /// deletion area, most relevant first
    pub dauc: f64,
    pub delta_a_f: f64,
    pub confidence: Confidence,
}

impl CorrectnessScores {
    pub fn ad(&self) -> Option<f64> {
        self.confidence.drop_term()
    }

    pub fn ai(&self) -> f64 {
        self.confidence.increase_term()
    }

    pub fn ag(&self) -> Option<f64> {
        self.confidence.gain_term()
    }
}

/// Runs all four curves needed for IAUC, DAUC and ΔA^F plus the two
/// confidence queries for AD/AI/AG.
pub fn evaluate<S: ClassScorer + ?Sized>(
    image: &Image,
    s: &SaliencyMap,
    class: usize,
    scorer: &mut S,
    cfg: &CurveConfig,
    support_threshold: f32,
) -> Result<CorrectnessScores> {
    let morf = deletion_curve(image, s, class, scorer, Order::MoRF, cfg)?;
    let lerf = deletion_curve(image, s, class, scorer, Order::LeRF, cfg)?;
    let ins = insertion_curve(image, s, class, scorer, Order::MoRF, cfg)?;
    let dauc = auc_of_curve(&morf)?;
    let masked = explanation_masked(image, s, support_threshold, &cfg.baseline)?;
    let scores = scorer.class_scores(&[image.clone(), masked], class)?;
    let [p, o] = scores[..] else {
        return Err(Error::Oracle(format!("expected 2 scores, got {}", scores.len())));
    };
    Ok(CorrectnessScores {
        iauc: auc_of_curve(&ins)?,
        dauc,
        delta_a_f: auc_of_curve(&lerf)? - dauc,
        confidence: Confidence { p, o },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(h: usize, w: usize, v: &[f32]) -> SaliencyMap {
        SaliencyMap::new(h, w, v.to_vec()).unwrap()
    }

    #[test]
    fn ranking_with_ties() {
        let s = map(2, 2, &[0.9, 0.1, 0.5, 0.5]);
        assert_eq!(pixel_ranking(&s), vec![0, 2, 3, 1]);
        assert_eq!(ranking(&s, Order::LeRF), vec![1, 2, 3, 0]);
        assert_eq!(pixel_ranking(&map(2, 2, &[0.3; 4])), vec![0, 1, 2, 3]);
        assert_eq!(pixel_ranking(&map(1, 4, &[1.0, 0.7, 0.5, 0.0])), vec![0, 1, 2, 3]);
    }

    #[test]
    fn schedules() {
        assert_eq!(masking_schedule(100, 50).unwrap(), vec![0, 50, 100]);
        assert_eq!(masking_schedule(7, 3).unwrap(), vec![0, 3, 6, 7]);
        let big = masking_schedule(50176, 50).unwrap();
        assert_eq!(big.len(), 1005);
        assert_eq!(*big.last().unwrap(), 50176);
        assert!(masking_schedule(10, 0).is_err());
        assert_eq!(Schedule::Steps(4).counts(10).unwrap(), vec![0, 2, 5, 7, 10]);
        assert_eq!(Schedule::Steps(8).counts(3).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn trapezoid_cases() {
        assert!((trapezoid(&[(0.0, 0.6), (0.5, 0.6), (1.0, 0.6)]).unwrap() - 0.6).abs() < 1e-15);
        assert_eq!(trapezoid(&[(0.0, 1.0), (1.0, 0.0)]).unwrap(), 0.5);
        assert_eq!(trapezoid(&[(0.0, 1.0), (0.5, 0.5), (1.0, 0.25)]).unwrap(), 0.5625);
        assert!(trapezoid(&[(0.0, 1.0)]).is_err());
    }

    #[test]
    fn confidence_terms() {
        let c = Confidence { p: 0.8, o: 0.6 };
        assert!((c.drop_term().unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(c.increase_term(), 0.0);
        assert_eq!(c.gain_term(), Some(0.0));
        let c = Confidence { p: 0.5, o: 0.75 };
        assert_eq!(c.drop_term(), Some(0.0));
        assert_eq!(c.increase_term(), 1.0);
        assert_eq!(c.gain_term(), Some(0.5));
        let same = [Confidence { p: 0.3, o: 0.3 }, Confidence { p: 0.9, o: 0.9 }];
        assert_eq!(average_drop(&same).unwrap(), 0.0);
        assert_eq!(average_increase(&same).unwrap(), 0.0);
        assert_eq!(average_gain(&same).unwrap(), 0.0);
    }

    #[test]
    fn undefined_terms_are_skipped() {
        let batch = [Confidence { p: 0.0, o: 0.5 }, Confidence { p: 0.5, o: 0.25 }];
        assert_eq!(average_drop(&batch).unwrap(), 0.5);
        let batch = [Confidence { p: 1.0, o: 0.5 }];
        assert!(average_gain(&batch).is_err());
    }

    #[test]
    fn endpoints_match_intact_and_blank() {
        let img = Image::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let s = map(2, 2, &[0.1, 0.2, 0.3, 0.4]);
        let mut sum = |imgs: &[Image], _c: usize| -> Result<Vec<f64>> {
            Ok(imgs.iter().map(|i| i.data().iter().sum()).collect())
        };
        let cfg = CurveConfig {
            schedule: Schedule::PixelsPerStep(1),
            batch: 3,
            ..Default::default()
        };
        let del = deletion_curve(&img, &s, 0, &mut sum, Order::MoRF, &cfg).unwrap();
        assert_eq!(del.scores().collect::<Vec<_>>(), vec![10.0, 6.0, 3.0, 1.0, 0.0]);
        let ins = insertion_curve(&img, &s, 0, &mut sum, Order::MoRF, &cfg).unwrap();
        assert_eq!(ins.scores().collect::<Vec<_>>(), vec![0.0, 4.0, 7.0, 9.0, 10.0]);
        assert_eq!(del.points[2].0, 0.5);
    }

    #[test]
    fn scorer_failure_aborts() {
        let img = Image::filled(1, 2, 2, 1.0);
        let s = map(2, 2, &[0.1, 0.2, 0.3, 0.4]);
        let mut calls = 0;
        let mut flaky = |imgs: &[Image], _c: usize| -> Result<Vec<f64>> {
            calls += 1;
            if calls > 1 {
                Err(Error::Oracle("gone".into()))
            } else {
                Ok(vec![1.0; imgs.len()])
            }
        };
        let cfg = CurveConfig {
            schedule: Schedule::PixelsPerStep(1),
            batch: 2,
            ..Default::default()
        };
        assert!(matches!(
            deletion_curve(&img, &s, 0, &mut flaky, Order::MoRF, &cfg),
            Err(Error::Oracle(_))
        ));
    }

    #[test]
    fn support_mask() {
        let img = Image::new(2, 1, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let s = map(1, 2, &[0.2, 0.5]);
        let out = explanation_masked(&img, &s, 0.5, &Baseline::PerChannel(vec![-1.0, -2.0])).unwrap();
        assert_eq!(out.data(), &[-1.0, 2.0, -2.0, 4.0]);
        assert!(explanation_masked(&img, &s, 0.5, &Baseline::PerChannel(vec![0.0])).is_err());
    }
}
