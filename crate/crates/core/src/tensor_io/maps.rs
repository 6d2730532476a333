use std::path::Path;

use super::npy;
use crate::error::{Error, Result};

/// Read access to a row-major 2-D grid of f32 values.
pub trait Grid {
    fn height(&self) -> usize;
    fn width(&self) -> usize;
    fn values(&self) -> &[f32];

    fn dims(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    fn to_f64(&self) -> Vec<f64> {
        self.values().iter().map(|&v| f64::from(v)).collect()
    }
}

/// Dense importance field over an image, values in `[0,1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    height: usize,
    width: usize,
    values: Vec<f32>,
    non_degenerate: bool,
}

impl SaliencyMap {
    /// Wraps values already in `[0,1]`.
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::shape(format!(
                "{} values for a {height}x{width} map",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("saliency map"));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config("saliency values must lie in [0,1]".into()));
        }
        let (lo, hi) = min_max(values.iter().map(|&v| f64::from(v)));
        Ok(SaliencyMap {
            height,
            width,
            values,
            non_degenerate: hi > lo,
        })
    }

    /// Min-max normalizes arbitrary finite values into a map. A constant
    /// field becomes all zeros with the non-degenerate flag cleared.
    pub fn normalized(height: usize, width: usize, raw: &[f64]) -> Result<Self> {
        if raw.len() != height * width {
            return Err(Error::shape(format!(
                "{} values for a {height}x{width} map",
                raw.len()
            )));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("saliency map"));
        }
        let (lo, hi) = min_max(raw.iter().copied());
        // resampling a constant field can leave rounding-level ripples
        let flat = hi - lo <= 1e-12 * hi.abs().max(lo.abs());
        let values = if !flat {
            let span = hi - lo;
            raw.iter().map(|&v| ((v - lo) / span) as f32).collect()
        } else {
            vec![0.0; raw.len()]
        };
        Ok(SaliencyMap {
            height,
            width,
            values,
            non_degenerate: !flat,
        })
    }

    /// False when the source field was constant.
    pub fn is_non_degenerate(&self) -> bool {
        self.non_degenerate
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }

    /// `(row, col)` of the first maximum in row-major order.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        (best / self.width.max(1), best % self.width.max(1))
    }

    pub fn read_npy(path: impl AsRef<Path>) -> Result<Self> {
        let arr = npy::read_npy(path)?;
        let (h, w) = grid_dims(&arr.shape)?;
        SaliencyMap::new(h, w, arr.data)
    }

    pub fn write_npy(&self, path: impl AsRef<Path>) -> Result<()> {
        npy::write_npy(path, &[self.height, self.width], &self.values)
    }
}

impl Grid for SaliencyMap {
    fn height(&self) -> usize {
        self.height
    }
    fn width(&self) -> usize {
        self.width
    }
    fn values(&self) -> &[f32] {
        &self.values
    }
}

/// Continuous human-attention ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct GazeDensityMap {
    height: usize,
    width: usize,
    density: Vec<f32>,
}

impl GazeDensityMap {
    pub fn new(height: usize, width: usize, density: Vec<f32>) -> Result<Self> {
        if density.len() != height * width {
            return Err(Error::shape(format!(
                "{} values for a {height}x{width} gaze map",
                density.len()
            )));
        }
        if density.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("gaze map"));
        }
        if density.iter().any(|&v| v < 0.0) {
            return Err(Error::DegenerateInput("gaze density has negative values"));
        }
        if !density.iter().any(|&v| v > 0.0) {
            return Err(Error::DegenerateInput("gaze density has no positive mass"));
        }
        Ok(GazeDensityMap {
            height,
            width,
            density,
        })
    }

    /// Reads a `.npy` grid or an 8-bit grayscale PNG (density = value/255),
    /// chosen by extension.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png {
            Self::read_png(path)
        } else {
            let arr = npy::read_npy(path)?;
            let (h, w) = grid_dims(&arr.shape)?;
            GazeDensityMap::new(h, w, arr.data)
        }
    }

    pub fn read_png(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path.as_ref())
            .map_err(|e| Error::Format(format!("{}: {e}", path.as_ref().display())))?
            .into_luma8();
        let (w, h) = img.dimensions();
        let density = img.pixels().map(|p| f32::from(p.0[0]) / 255.0).collect();
        GazeDensityMap::new(h as usize, w as usize, density)
    }
}

impl Grid for GazeDensityMap {
    fn height(&self) -> usize {
        self.height
    }
    fn width(&self) -> usize {
        self.width
    }
    fn values(&self) -> &[f32] {
        &self.density
    }
}

/// Binary fixation locations derived from a gaze map.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FixationMap {
    height: usize,
    width: usize,
    fixations: Vec<bool>,
    count: usize,
}

impl FixationMap {
    pub fn new(height: usize, width: usize, fixations: Vec<bool>) -> Result<Self> {
        if fixations.len() != height * width {
            return Err(Error::shape(format!(
                "{} values for a {height}x{width} fixation map",
                fixations.len()
            )));
        }
        let count = fixations.iter().filter(|&&f| f).count();
        if count == 0 {
            return Err(Error::DegenerateInput("fixation map has no fixations"));
        }
        Ok(FixationMap {
            height,
            width,
            fixations,
            count,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mask(&self) -> &[bool] {
        &self.fixations
    }

    pub fn is_fixated(&self, row: usize, col: usize) -> bool {
        self.fixations[row * self.width + col]
    }
}

/// A `[C,H,W]` image in the scoring model's input normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::shape(format!(
                "{} values for a [{channels},{height},{width}] image",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("image"));
        }
        Ok(Image {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Image {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    /// Sum over channels, one value per pixel.
    pub fn channel_sum(&self) -> Vec<f64> {
        let n = self.pixels();
        let mut out = vec![0.0; n];
        for c in 0..self.channels {
            for (o, v) in out.iter_mut().zip(&self.data[c * n..(c + 1) * n]) {
                *o += v;
            }
        }
        out
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.shape() == other.shape()
    }

    pub fn read_npy(path: impl AsRef<Path>) -> Result<Self> {
        let arr = npy::read_npy(path)?;
        let [c, h, w] = match arr.shape.as_slice() {
            &[c, h, w] => [c, h, w],
            &[h, w] => [1, h, w],
            other => return Err(Error::shape(format!("expected [C,H,W] image, got {other:?}"))),
        };
        Image::new(c, h, w, arr.data.iter().map(|&v| f64::from(v)).collect())
    }

    pub fn write_npy(&self, path: impl AsRef<Path>) -> Result<()> {
        npy::write_npy(path, &self.shape(), &self.to_f32())
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32).collect()
    }
}

fn grid_dims(shape: &[usize]) -> Result<(usize, usize)> {
    match *shape {
        [h, w] => Ok((h, w)),
        [1, h, w] => Ok((h, w)),
        _ => Err(Error::shape(format!("expected a 2-D grid, got shape {shape:?}"))),
    }
}

pub(crate) fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_and_degenerate_flag() {
        let m = SaliencyMap::normalized(1, 3, &[2.0, 4.0, 6.0]).unwrap();
        assert_eq!(m.values(), &[0.0, 0.5, 1.0]);
        assert!(m.is_non_degenerate());
        let c = SaliencyMap::normalized(2, 2, &[3.0; 4]).unwrap();
        assert_eq!(c.values(), &[0.0; 4]);
        assert!(!c.is_non_degenerate());
    }

    #[test]
    fn saliency_rejects_out_of_range() {
        assert!(SaliencyMap::new(1, 2, vec![0.0, 1.5]).is_err());
        assert!(SaliencyMap::new(1, 2, vec![0.0, f32::NAN]).is_err());
        assert!(SaliencyMap::new(1, 3, vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn gaze_needs_positive_mass() {
        assert!(matches!(
            GazeDensityMap::new(1, 2, vec![0.0, 0.0]),
            Err(Error::DegenerateInput(_))
        ));
        assert!(GazeDensityMap::new(1, 2, vec![-1.0, 2.0]).is_err());
        assert!(GazeDensityMap::new(1, 2, vec![0.0, 2.0]).is_ok());
    }

    #[test]
    fn gaze_png_is_scaled() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.png");
        let img = image::GrayImage::from_raw(2, 1, vec![0, 255]).unwrap();
        img.save(&p).unwrap();
        let g = GazeDensityMap::read(&p).unwrap();
        assert_eq!(g.dims(), (1, 2));
        assert_eq!(g.values(), &[0.0, 1.0]);
    }

    #[test]
    fn fixation_count() {
        let f = FixationMap::new(1, 3, vec![true, false, true]).unwrap();
        assert_eq!(f.count(), 2);
        assert!(FixationMap::new(1, 2, vec![false, false]).is_err());
    }

    #[test]
    fn channel_sum() {
        let img = Image::new(2, 1, 2, vec![1.0, 2.0, 10.0, 20.0]).unwrap();
        assert_eq!(img.channel_sum(), vec![11.0, 22.0]);
        assert_eq!(img.channel(1), &[10.0, 20.0]);
    }
}
