use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::tensor_io::SaliencyMap;

/// Patch-level importance: the `[CLS]` row reshaped to `side × side`.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchGrid {
    side: usize,
    values: Vec<f64>,
}

impl PatchGrid {
    pub fn new(side: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != side * side {
            return Err(Error::Geometry(format!(
                "{} values do not form a {side}x{side} grid",
                values.len()
            )));
        }
        Ok(PatchGrid { side, values })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.side + col]
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Drops the `[CLS]` self-entry from row 0 of a `T×T` matrix and reshapes
/// the remaining `N = T-1` entries row-major.
pub fn extract_cls_map(m: &Mat) -> Result<PatchGrid> {
    if !m.is_square() || m.rows() < 2 {
        return Err(Error::Geometry(format!(
            "expected a square TxT matrix with T >= 2, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    cls_row_grid(&m.row(0)[1..])
}

pub(crate) fn cls_row_grid(patches: &[f64]) -> Result<PatchGrid> {
    let n = patches.len();
    let side = n.isqrt();
    if side * side != n {
        return Err(Error::Geometry(format!("{n} patches is not a perfect square")));
    }
    PatchGrid::new(side, patches.to_vec())
}

/// Corner-aligned bilinear resampling of a row-major grid.
///
/// Source coordinates are kept as exact rationals `x·(in-1)/(out-1)` and both
/// weights are computed by direct division, so the result is exactly
/// mirror-symmetric whenever the input is.
pub fn resize_bilinear(
    src: &[f64],
    src_h: usize,
    src_w: usize,
    dst_h: usize,
    dst_w: usize,
) -> Vec<f64> {
    assert_eq!(src.len(), src_h * src_w, "source size");
    if src_h == 0 || src_w == 0 || dst_h == 0 || dst_w == 0 {
        return vec![0.0; dst_h * dst_w];
    }
    let xs = axis_taps(src_w, dst_w);
    let ys = axis_taps(src_h, dst_h);
    let mut out = Vec::with_capacity(dst_h * dst_w);
    for &(y0, y1, wy0, wy1) in &ys {
        let r0 = &src[y0 * src_w..(y0 + 1) * src_w];
        let r1 = &src[y1 * src_w..(y1 + 1) * src_w];
        for &(x0, x1, wx0, wx1) in &xs {
            let top = r0[x0] * wx0 + r0[x1] * wx1;
            let bottom = r1[x0] * wx0 + r1[x1] * wx1;
            out.push(top * wy0 + bottom * wy1);
        }
    }
    out
}

fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64, f64)> {
    if dst == 1 || src == 1 {
        return vec![(0, 0, 1.0, 0.0); dst];
    }
    let d = dst - 1;
    (0..dst)
        .map(|x| {
            let n = x * (src - 1);
            let i0 = n / d;
            let rem = n % d;
            let i1 = (i0 + 1).min(src - 1);
            ((i0), i1, (d - rem) as f64 / d as f64, rem as f64 / d as f64)
        })
        .collect()
}

/// Upsamples a patch grid to `height × width` and min-max normalizes it.
pub fn to_saliency(grid: &PatchGrid, height: usize, width: usize) -> Result<SaliencyMap> {
    if height < grid.side || width < grid.side {
        return Err(Error::Geometry(format!(
            "cannot upsample a {0}x{0} grid to {height}x{width}",
            grid.side
        )));
    }
    let up = resize_bilinear(&grid.values, grid.side, grid.side, height, width);
    SaliencyMap::normalized(height, width, &up)
}
