use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::npy::{self, NpyArray};
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";
pub const ATTENTIONS_FILE: &str = "attentions.npy";
pub const LOGITS_FILE: &str = "logits.npy";

/// Tolerance on attention row sums.
pub const ROW_SUM_TOL: f64 = 1e-4;

/// ViT geometry of an exported bundle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    pub layers: usize,
    pub heads: usize,
    pub tokens: usize,
    pub patch_size: usize,
    pub image_height: usize,
    pub image_width: usize,
}

impl Geometry {
    /// Geometry for a square image with the token count derived from it.
    pub fn square(layers: usize, heads: usize, patch_size: usize, image_side: usize) -> Self {
        let per_side = image_side / patch_size.max(1);
        Geometry {
            layers,
            heads,
            tokens: per_side * per_side + 1,
            patch_size,
            image_height: image_side,
            image_width: image_side,
        }
    }

    /// Number of patch tokens, excluding `[CLS]`.
    pub fn patches(&self) -> usize {
        self.tokens.saturating_sub(1)
    }

    /// Elements in one `[L,H,T,T]` tensor.
    pub fn tensor_len(&self) -> usize {
        self.layers * self.heads * self.tokens * self.tokens
    }

    pub fn tensor_shape(&self) -> [usize; 4] {
        [self.layers, self.heads, self.tokens, self.tokens]
    }

    fn check(&self) -> Result<()> {
        let bad = |detail: String| Err(Error::invalid("geometry", detail));
        if self.layers == 0 || self.heads == 0 || self.tokens < 2 || self.patch_size == 0 {
            return bad(format!("degenerate geometry {self:?}"));
        }
        let p = self.patch_size;
        if !self.image_height.is_multiple_of(p) || !self.image_width.is_multiple_of(p) {
            return bad(format!(
                "image {}x{} is not a multiple of patch size {p}",
                self.image_height, self.image_width
            ));
        }
        let n = self.image_height * self.image_width / (p * p);
        if self.tokens != n + 1 {
            return bad(format!(
                "tokens = {} but {}*{}/{p}^2 + 1 = {}",
                self.tokens,
                self.image_height,
                self.image_width,
                n + 1
            ));
        }
        Ok(())
    }
}

/// Per-image export of a ViT forward (and optionally backward) pass.
///
/// Attentions and gradients are `[L,H,T,T]` row-major float32 tensors. A
/// bundle can only be built through validating constructors, so every
/// instance satisfies the container invariants.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionBundle {
    image_id: String,
    geometry: Geometry,
    class_count: usize,
    attentions: Vec<f32>,
    gradients: BTreeMap<usize, Vec<f32>>,
    logits: Option<Vec<f32>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    image_id: String,
    layers: usize,
    heads: usize,
    tokens: usize,
    patch_size: usize,
    image_height: usize,
    image_width: usize,
    class_count: usize,
    target_classes: Vec<usize>,
    files: BTreeMap<String, String>,
}

fn gradient_key(class: usize) -> String {
    format!("gradients_{class}")
}

impl AttentionBundle {
    pub fn new(
        image_id: impl Into<String>,
        geometry: Geometry,
        class_count: usize,
        attentions: Vec<f32>,
        logits: Option<Vec<f32>>,
    ) -> Result<Self> {
        geometry.check()?;
        if attentions.len() != geometry.tensor_len() {
            return Err(Error::invalid(
                "attention-shape",
                format!(
                    "expected {:?} ({} values), got {}",
                    geometry.tensor_shape(),
                    geometry.tensor_len(),
                    attentions.len()
                ),
            ));
        }
        check_attention_rows(&attentions, geometry.tokens)?;
        if let Some(l) = &logits {
            if l.len() != class_count {
                return Err(Error::invalid(
                    "logits-length",
                    format!("{} logits for class_count {class_count}", l.len()),
                ));
            }
            if l.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("finite", "non-finite logit"));
            }
        }
        Ok(AttentionBundle {
            image_id: image_id.into(),
            geometry,
            class_count,
            attentions,
            gradients: BTreeMap::new(),
            logits,
        })
    }

    /// Attaches attention gradients for `class`, replacing any existing ones.
    pub fn with_gradients(mut self, class: usize, gradients: Vec<f32>) -> Result<Self> {
        self.insert_gradients(class, gradients)?;
        Ok(self)
    }

    pub fn insert_gradients(&mut self, class: usize, gradients: Vec<f32>) -> Result<()> {
        if class >= self.class_count {
            return Err(Error::invalid(
                "target-class",
                format!("class {class} >= class_count {}", self.class_count),
            ));
        }
        if gradients.len() != self.attentions.len() {
            return Err(Error::invalid(
                "gradient-shape",
                format!(
                    "gradients for class {class} have {} values, attentions have {}",
                    gradients.len(),
                    self.attentions.len()
                ),
            ));
        }
        if gradients.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("finite", format!("non-finite gradient for class {class}")));
        }
        self.gradients.insert(class, gradients);
        Ok(())
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn layers(&self) -> usize {
        self.geometry.layers
    }

    pub fn heads(&self) -> usize {
        self.geometry.heads
    }

    pub fn tokens(&self) -> usize {
        self.geometry.tokens
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn attentions(&self) -> &[f32] {
        &self.attentions
    }

    /// The `T×T` attention matrix of head `h` in layer `l`, row-major.
    pub fn attention(&self, layer: usize, head: usize) -> &[f32] {
        let t2 = self.geometry.tokens * self.geometry.tokens;
        let start = (layer * self.geometry.heads + head) * t2;
        &self.attentions[start..start + t2]
    }

    pub fn target_classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.gradients.keys().copied()
    }

    pub fn gradients(&self, class: usize) -> Result<&[f32]> {
        self.gradients
            .get(&class)
            .map(Vec::as_slice)
            .ok_or(Error::GradientMissing(class))
    }

    pub fn gradient(&self, class: usize, layer: usize, head: usize) -> Result<&[f32]> {
        let g = self.gradients(class)?;
        let t2 = self.geometry.tokens * self.geometry.tokens;
        let start = (layer * self.geometry.heads + head) * t2;
        Ok(&g[start..start + t2])
    }

    pub fn logits(&self) -> Option<&[f32]> {
        self.logits.as_deref()
    }

    /// Index of the largest logit; first index wins ties.
    pub fn predicted_class(&self) -> Option<usize> {
        let logits = self.logits.as_ref()?;
        let mut best = 0;
        for (i, v) in logits.iter().enumerate() {
            if *v > logits[best] {
                best = i;
            }
        }
        (!logits.is_empty()).then_some(best)
    }
}

pub(crate) fn check_attention_rows(att: &[f32], tokens: usize) -> Result<()> {
    for (r, row) in att.chunks_exact(tokens).enumerate() {
        let mut sum = 0.0f64;
        for &v in row {
            if !v.is_finite() {
                return Err(Error::invalid("finite", format!("non-finite attention in row {r}")));
            }
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(
                    "attention-range",
                    format!("attention value {v} outside [0,1] in row {r}"),
                ));
            }
            sum += f64::from(v);
        }
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::invalid(
                "row-stochastic",
                format!("row {r} sums to {sum}"),
            ));
        }
    }
    Ok(())
}

/// Loads and validates a bundle directory.
pub fn load_bundle(dir: impl AsRef<Path>) -> Result<AttentionBundle> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST);
    if !manifest_path.is_file() {
        return Err(Error::MissingComponent(manifest_path.display().to_string()));
    }
    let manifest: Manifest = serde_json::from_slice(&fs::read(&manifest_path)?)
        .map_err(|e| Error::invalid("manifest", e.to_string()))?;

    let geometry = Geometry {
        layers: manifest.layers,
        heads: manifest.heads,
        tokens: manifest.tokens,
        patch_size: manifest.patch_size,
        image_height: manifest.image_height,
        image_width: manifest.image_width,
    };
    geometry.check()?;

    let read = |key: &str, default: Option<&str>| -> Result<Option<NpyArray>> {
        let rel = manifest.files.get(key).map(String::as_str).or(default);
        let Some(rel) = rel else { return Ok(None) };
        let path = dir.join(rel);
        if !path.is_file() {
            return Err(Error::MissingComponent(path.display().to_string()));
        }
        npy::read_npy(&path).map(Some)
    };

    let attentions = read("attentions", Some(ATTENTIONS_FILE))?.expect("default path");
    expect_shape(&attentions, &geometry.tensor_shape(), "attention-shape")?;

    let logits = if manifest.files.contains_key("logits") || dir.join(LOGITS_FILE).is_file() {
        let arr = read("logits", Some(LOGITS_FILE))?.expect("default path");
        expect_shape(&arr, &[manifest.class_count], "logits-length")?;
        Some(arr.data)
    } else {
        None
    };

    let mut bundle = AttentionBundle::new(
        manifest.image_id,
        geometry,
        manifest.class_count,
        attentions.data,
        logits,
    )?;

    for &class in &manifest.target_classes {
        let key = gradient_key(class);
        let default = format!("{key}.npy");
        let arr = read(&key, Some(&default))?.expect("default path");
        expect_shape(&arr, &geometry.tensor_shape(), "gradient-shape")?;
        bundle.insert_gradients(class, arr.data)?;
    }
    Ok(bundle)
}

fn expect_shape(arr: &NpyArray, shape: &[usize], invariant: &'static str) -> Result<()> {
    if arr.shape != shape {
        return Err(Error::invalid(
            invariant,
            format!("expected shape {shape:?}, found {:?}", arr.shape),
        ));
    }
    Ok(())
}

/// Writes `bundle` to `dir`. An existing non-empty directory is only
/// replaced when `overwrite` is set.
pub fn save_bundle(bundle: &AttentionBundle, dir: impl AsRef<Path>, overwrite: bool) -> Result<()> {
    let dir = dir.as_ref();
    if dir.exists() {
        let non_empty = fs::read_dir(dir)?.next().is_some();
        if non_empty && !overwrite {
            return Err(Error::AlreadyExists(dir.to_path_buf()));
        }
    }
    fs::create_dir_all(dir)?;

    let g = bundle.geometry;
    let mut files = BTreeMap::new();
    npy::write_npy(dir.join(ATTENTIONS_FILE), &g.tensor_shape(), &bundle.attentions)?;
    files.insert("attentions".to_string(), ATTENTIONS_FILE.to_string());
    if let Some(logits) = &bundle.logits {
        npy::write_npy(dir.join(LOGITS_FILE), &[logits.len()], logits)?;
        files.insert("logits".to_string(), LOGITS_FILE.to_string());
    }
    for (class, grads) in &bundle.gradients {
        let key = gradient_key(*class);
        let name = format!("{key}.npy");
        npy::write_npy(dir.join(&name), &g.tensor_shape(), grads)?;
        files.insert(key, name);
    }

    let manifest = Manifest {
        image_id: bundle.image_id.clone(),
        layers: g.layers,
        heads: g.heads,
        tokens: g.tokens,
        patch_size: g.patch_size,
        image_height: g.image_height,
        image_width: g.image_width,
        class_count: bundle.class_count,
        target_classes: bundle.gradients.keys().copied().collect(),
        files,
    };
    let json = serde_json::to_vec_pretty(&manifest).map_err(std::io::Error::other)?;
    fs::write(dir.join(MANIFEST), json)?;
    Ok(())
}
