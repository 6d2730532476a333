//! Layer-wise attention products: identity augmentation, gradient
//! modulation and per-head rollout.

use crate::error::{Error, Result};
use crate::linalg::{gemm_into, Mat};
use crate::par::{self, Execution};
use crate::tensor_io::AttentionBundle;

/// Per-head aggregated attention `Â_h` with its head weight.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadAggregate {
    pub per_head: Vec<Mat>,
    pub weights: Vec<f64>,
}

impl HeadAggregate {
    pub fn heads(&self) -> usize {
        self.per_head.len()
    }

    pub fn tokens(&self) -> usize {
        self.per_head.first().map_or(0, Mat::rows)
    }
}

/// Which entries of `Â_h` define the head weight.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum WeightScope {
    /// max over all `T²` entries
    #[default]
    FullMatrix,
    /// max over the patch entries of the `[CLS]` row
    ClsRow,
}

impl WeightScope {
    pub fn weight(self, m: &Mat) -> f64 {
        match self {
            WeightScope::FullMatrix => m.max(),
            WeightScope::ClsRow => m.row(0)[1..]
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Class-specific modulation of the layer matrices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Modulation {
    pub class: usize,
    /// zero negative `A ⊙ ∇A` entries before adding the identity
    pub clamp: bool,
}

/// Adds `I` and rescales every row to sum to one.
///
/// Rows whose sum is zero are left as they are; that only happens with
/// signed, gradient-modulated input.
pub fn augment_with_identity(a: &Mat) -> Result<Mat> {
    if !a.is_square() {
        return Err(Error::shape(format!("{}x{} is not square", a.rows(), a.cols())));
    }
    if !a.is_finite() {
        return Err(Error::Numeric("attention matrix"));
    }
    let mut m = a.clone();
    add_identity_and_normalize(&mut m)?;
    Ok(m)
}

/// `(a ⊙ g) + I`, without normalization.
pub fn grad_modulate(a: &Mat, g: &Mat) -> Result<Mat> {
    if (a.rows(), a.cols()) != (g.rows(), g.cols()) {
        return Err(Error::shape(format!(
            "attention {}x{} vs gradient {}x{}",
            a.rows(),
            a.cols(),
            g.rows(),
            g.cols()
        )));
    }
    if !a.is_square() {
        return Err(Error::shape(format!("{}x{} is not square", a.rows(), a.cols())));
    }
    let n = a.rows();
    let mut out = Mat::zeros(n, n);
    for ((o, x), y) in out.as_mut_slice().iter_mut().zip(a.as_slice()).zip(g.as_slice()) {
        *o = x * y;
    }
    for i in 0..n {
        out[(i, i)] += 1.0;
    }
    Ok(out)
}

fn add_identity_and_normalize(m: &mut Mat) -> Result<()> {
    let n = m.rows();
    for i in 0..n {
        m[(i, i)] += 1.0;
    }
    normalize_rows(m)
}

pub(crate) fn normalize_rows(m: &mut Mat) -> Result<()> {
    for i in 0..m.rows() {
        let row = m.row_mut(i);
        let sum: f64 = row.iter().sum();
        if !sum.is_finite() {
            return Err(Error::Numeric("row sum"));
        }
        if sum != 0.0 {
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
    }
    Ok(())
}

/// One head's layer matrix, identity-augmented and row-normalized.
pub(crate) fn layer_matrix(
    bundle: &AttentionBundle,
    layer: usize,
    head: usize,
    modulation: Option<Modulation>,
) -> Result<Mat> {
    let t = bundle.tokens();
    let a = bundle.attention(layer, head);
    let mut m = match modulation {
        None => Mat::from_f32(t, t, a),
        Some(Modulation { class, clamp }) => {
            let g = bundle.gradient(class, layer, head)?;
            let mut m = Mat::zeros(t, t);
            for ((o, &x), &y) in m.as_mut_slice().iter_mut().zip(a).zip(g) {
                let v = f64::from(x) * f64::from(y);
                *o = if clamp { v.max(0.0) } else { v };
            }
            m
        }
    };
    add_identity_and_normalize(&mut m)?;
    Ok(m)
}

/// `M^(L) · … · M^(1)` for a sequence of layer matrices produced lazily.
pub(crate) fn chain_product<F>(layers: usize, tokens: usize, mut layer: F) -> Result<Mat>
where
    F: FnMut(usize) -> Result<Mat>,
{
    if layers == 0 {
        return Ok(Mat::identity(tokens));
    }
    let mut acc = layer(0)?;
    let mut scratch = Mat::zeros(tokens, tokens);
    for l in 1..layers {
        let m = layer(l)?;
        gemm_into(&m, &acc, &mut scratch);
        std::mem::swap(&mut acc, &mut scratch);
    }
    Ok(acc)
}

/// Rolls out each head separately through all layers.
pub fn per_head_rollout(
    bundle: &AttentionBundle,
    modulation: Option<Modulation>,
    scope: WeightScope,
    exec: Execution,
) -> Result<HeadAggregate> {
    if let Some(m) = modulation {
        bundle.gradients(m.class)?;
    }
    let (layers, tokens) = (bundle.layers(), bundle.tokens());
    let per_head = par::map_range(exec, bundle.heads(), |h| {
        chain_product(layers, tokens, |l| layer_matrix(bundle, l, h, modulation))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let weights = per_head.iter().map(|m| scope.weight(m)).collect();
    Ok(HeadAggregate { per_head, weights })
}

/// Head-averaged layer matrix `mean_h(A ⊙ G)` with optional clamping of the
/// mean. `gradients = None` means plain attention.
pub(crate) fn head_mean(
    bundle: &AttentionBundle,
    layer: usize,
    class: Option<usize>,
    clamp: ClampAt,
) -> Result<Mat> {
    let t = bundle.tokens();
    let mut acc = Mat::zeros(t, t);
    for h in 0..bundle.heads() {
        let a = bundle.attention(layer, h);
        let out = acc.as_mut_slice();
        match class {
            None => {
                for (o, &x) in out.iter_mut().zip(a) {
                    *o += f64::from(x);
                }
            }
            Some(c) => {
                let g = bundle.gradient(c, layer, h)?;
                for ((o, &x), &y) in out.iter_mut().zip(a).zip(g) {
                    let v = f64::from(x) * f64::from(y);
                    *o += if clamp == ClampAt::Element { v.max(0.0) } else { v };
                }
            }
        }
    }
    let heads = bundle.heads() as f64;
    for v in acc.as_mut_slice() {
        *v /= heads;
        if clamp == ClampAt::Mean {
            *v = v.max(0.0);
        }
    }
    Ok(acc)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum ClampAt {
    Never,
    /// clamp each `A ⊙ ∇A` entry before averaging heads
    Element,
    /// clamp the head mean
    Mean,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_io::Geometry;

    fn close(a: &Mat, b: &Mat, tol: f64) -> bool {
        a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn identity_is_a_fixed_point() {
        let i = Mat::identity(3);
        assert_eq!(augment_with_identity(&i).unwrap(), i);
    }

    #[test]
    fn uniform_matrix_hand_value() {
        let u = Mat::from_rows(&[[1.0 / 3.0; 3]; 3]);
        let m = augment_with_identity(&u).unwrap();
        let expect = Mat::from_rows(&[
            [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
            [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
            [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
        ]);
        assert!(close(&m, &expect, 1e-15));
    }

    #[test]
    fn nan_is_numeric_error() {
        let mut a = Mat::identity(2);
        a[(0, 1)] = f64::NAN;
        assert!(matches!(augment_with_identity(&a), Err(Error::Numeric(_))));
    }

    #[test]
    fn modulation_hand_cases() {
        let a = Mat::from_rows(&[[0.5, 0.5], [0.2, 0.8]]);
        let ones = Mat::from_rows(&[[1.0; 2]; 2]);
        let mut a_plus_i = a.clone();
        a_plus_i[(0, 0)] += 1.0;
        a_plus_i[(1, 1)] += 1.0;
        assert_eq!(grad_modulate(&a, &ones).unwrap(), a_plus_i);
        assert_eq!(grad_modulate(&a, &Mat::zeros(2, 2)).unwrap(), Mat::identity(2));
        let g = Mat::from_rows(&[[2.0, 0.0], [1.0, 1.0]]);
        let expect = Mat::from_rows(&[[2.0, 0.0], [0.2, 1.8]]);
        assert!(close(&grad_modulate(&a, &g).unwrap(), &expect, 1e-15));
        assert!(matches!(grad_modulate(&a, &Mat::zeros(2, 3)), Err(Error::Shape(_))));
    }

    fn bundle_from_layers(layers: &[[[f32; 3]; 3]]) -> AttentionBundle {
        // T=3 needs N=2 patches: a 1x2 image with patch size 1.
        let geo = Geometry {
            layers: layers.len(),
            heads: 1,
            tokens: 3,
            patch_size: 1,
            image_height: 1,
            image_width: 2,
        };
        let att = layers.iter().flat_map(|m| m.iter().flatten().copied()).collect();
        AttentionBundle::new("t", geo, 1, att, None).unwrap()
    }

    #[test]
    fn single_layer_is_one_factor() {
        let l1 = [[0.2, 0.3, 0.5], [0.1, 0.8, 0.1], [0.6, 0.2, 0.2]];
        let b = bundle_from_layers(&[l1]);
        let agg = per_head_rollout(&b, None, WeightScope::FullMatrix, Execution::Sequential).unwrap();
        let a = Mat::from_rows(&l1.map(|r| r.map(f64::from)));
        assert_eq!(agg.per_head[0], augment_with_identity(&a).unwrap());
        assert_eq!(agg.weights[0], agg.per_head[0].max());
    }

    #[test]
    fn identity_chain() {
        let eye = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let b = bundle_from_layers(&[eye, eye]);
        let agg = per_head_rollout(&b, None, WeightScope::FullMatrix, Execution::Sequential).unwrap();
        assert_eq!(agg.per_head[0], Mat::identity(3));
    }

    #[test]
    fn two_layer_hand_product() {
        // Hand-computed: M1 = (A1+I)/2, M2 = (A2+I)/2, result = M2·M1.
        let a1 = [[0.5, 0.5, 0.0], [0.0, 1.0, 0.0], [0.25, 0.25, 0.5]];
        let a2 = [[0.0, 0.5, 0.5], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        let b = bundle_from_layers(&[a1, a2]);
        let agg = per_head_rollout(&b, None, WeightScope::FullMatrix, Execution::Sequential).unwrap();
        // M1 = [[.75,.25,0],[0,1,0],[.125,.125,.75]]
        // M2 = [[.5,.25,.25],[.5,.5,0],[0,0,1]]
        // M2·M1 row0 = [.5*.75+.25*0+.25*.125, .5*.25+.25*1+.25*.125, .25*.75]
        let expect = Mat::from_rows(&[
            [0.40625, 0.40625, 0.1875],
            [0.375, 0.625, 0.0],
            [0.125, 0.125, 0.75],
        ]);
        assert!(close(&agg.per_head[0], &expect, 1e-15));
        assert_eq!(agg.weights[0], 0.75);
    }

    #[test]
    fn missing_gradients() {
        let eye = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let b = bundle_from_layers(&[eye]);
        let m = Modulation { class: 0, clamp: false };
        assert!(matches!(
            per_head_rollout(&b, Some(m), WeightScope::FullMatrix, Execution::Sequential),
            Err(Error::GradientMissing(0))
        ));
    }

    #[test]
    fn cls_row_weight_scope() {
        let m = Mat::from_rows(&[[0.9, 0.05, 0.05], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]]);
        assert_eq!(WeightScope::FullMatrix.weight(&m), 1.0);
        assert_eq!(WeightScope::ClsRow.weight(&m), 0.05);
    }
}
