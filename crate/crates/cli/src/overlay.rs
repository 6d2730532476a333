//! Heatmap PNGs: saliency through a viridis lookup table, blended at 50%
//! over a grayscale rendering of the input image when one is available.

use std::path::Path;

use image::{Rgb, RgbImage};

use attnfilter_core::tensor_io::{Grid, Image, SaliencyMap};
use attnfilter_core::{Error, Result};

pub const ALPHA: f64 = 0.5;

/// Viridis sampled at nine evenly spaced points.
const VIRIDIS: [[u8; 3]; 9] = [
    [68, 1, 84],
    [71, 45, 123],
    [59, 82, 139],
    [44, 114, 142],
    [33, 145, 140],
    [40, 174, 128],
    [94, 201, 98],
    [173, 220, 48],
    [253, 231, 37],
];

pub fn colormap(v: f32) -> [u8; 3] {
    let t = f64::from(v.clamp(0.0, 1.0)) * (VIRIDIS.len() - 1) as f64;
    let i = (t.floor() as usize).min(VIRIDIS.len() - 2);
    let f = t - i as f64;
    let (a, b) = (VIRIDIS[i], VIRIDIS[i + 1]);
    std::array::from_fn(|c| (f64::from(a[c]) * (1.0 - f) + f64::from(b[c]) * f).round() as u8)
}

/// Channel mean of the image stretched to `[0, 255]`.
fn grayscale(image: &Image) -> Vec<f64> {
    let mut g: Vec<f64> = image.channel_sum().iter().map(|v| v / image.channels() as f64).collect();
    let (lo, hi) = g.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    for v in g.iter_mut() {
        *v = (*v - lo) / span * 255.0;
    }
    g
}

pub fn render(s: &SaliencyMap, background: Option<&Image>) -> Result<RgbImage> {
    let (h, w) = s.dims();
    let gray = match background {
        Some(img) if (img.height(), img.width()) != (h, w) => {
            return Err(Error::Shape(format!(
                "overlay background is {}x{}, map is {h}x{w}",
                img.height(),
                img.width()
            )))
        }
        Some(img) => Some(grayscale(img)),
        None => None,
    };
    let mut out = RgbImage::new(w as u32, h as u32);
    for (i, &v) in s.values().iter().enumerate() {
        let c = colormap(v);
        let px = match &gray {
            Some(g) => std::array::from_fn(|k| (ALPHA * f64::from(c[k]) + (1.0 - ALPHA) * g[i]).round() as u8),
            None => c,
        };
        out.put_pixel((i % w) as u32, (i / w) as u32, Rgb(px));
    }
    Ok(out)
}

pub fn write(path: &Path, s: &SaliencyMap, background: Option<&Image>) -> Result<()> {
    render(s, background)?
        .save(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}
