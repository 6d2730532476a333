//! Locating bundles, maps, images and gaze maps on disk, and the file
//! naming scheme that ties them together.

use std::fs;
use std::path::{Path, PathBuf};

use attnfilter_core::tensor_io::MANIFEST;
use attnfilter_core::Method;

use crate::Failure;

fn is_bundle(dir: &Path) -> bool {
    dir.join(MANIFEST).is_file()
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Failure::config(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    out.sort();
    Ok(out)
}

/// Expands every argument into bundle directories: a bundle itself, or the
/// bundles directly inside it. Fails when nothing is found.
pub fn discover_bundles(paths: &[PathBuf]) -> Result<Vec<PathBuf>, Failure> {
    let mut found = Vec::new();
    for p in paths {
        if is_bundle(p) {
            found.push(p.clone());
            continue;
        }
        if !p.is_dir() {
            return Err(Failure::config(format!("{} is not a bundle directory", p.display())));
        }
        let inner: Vec<PathBuf> = sorted_entries(p)?.into_iter().filter(|d| is_bundle(d)).collect();
        if inner.is_empty() {
            return Err(Failure::config(format!("no bundles under {}", p.display())));
        }
        found.extend(inner);
    }
    if found.is_empty() {
        return Err(Failure::config("no bundles given"));
    }
    Ok(found)
}

/// Report label of a map: the method name, with `_k<K>` when several K
/// values were written.
pub fn label(method: Method, k: Option<f64>) -> String {
    match k {
        Some(k) => format!("{}_k{k}", method.name()),
        None => method.name().to_string(),
    }
}

/// Method and optional K encoded in a label.
pub fn parse_label(label: &str) -> Option<(Method, Option<f64>)> {
    let (name, k) = match label.split_once("_k") {
        Some((name, k)) => (name, Some(k.parse::<f64>().ok()?)),
        None => (label, None),
    };
    let m: Method = name.parse().ok()?;
    Some((m, k))
}

/// Splits `<image_id>.<label>.npy` into image id and label. Image ids may
/// contain dots; the label is the longest valid suffix.
pub fn parse_map_name(file_name: &str) -> Option<(String, String)> {
    let stem = file_name.strip_suffix(".npy")?;
    stem.match_indices('.')
        .map(|(i, _)| i)
        .filter(|&i| i > 0)
        .find(|&i| parse_label(&stem[i + 1..]).is_some())
        .map(|i| (stem[..i].to_string(), stem[i + 1..].to_string()))
}

pub fn map_file_name(image_id: &str, label: &str) -> String {
    format!("{image_id}.{label}.npy")
}

/// A saliency map file found in a maps directory.
#[derive(Clone, Debug)]
pub struct MapFile {
    pub image_id: String,
    pub label: String,
    pub path: PathBuf,
}

/// Map files in `dir`, sorted by image id then label.
pub fn list_maps(dir: &Path) -> Result<Vec<MapFile>, Failure> {
    let mut maps = Vec::new();
    for path in sorted_entries(dir)? {
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if !name.ends_with(".npy") {
            continue;
        }
        match parse_map_name(name) {
            Some((image_id, label)) => maps.push(MapFile { image_id, label, path }),
            None => log::warn!("skipping {name}: not named <image_id>.<method>.npy"),
        }
    }
    maps.sort_by(|a, b| (&a.image_id, &a.label).cmp(&(&b.image_id, &b.label)));
    if maps.is_empty() {
        return Err(Failure::config(format!("no saliency maps in {}", dir.display())));
    }
    Ok(maps)
}

/// `<dir>/<image_id>.<ext>` for the first extension that exists.
pub fn find_by_id(dir: &Path, image_id: &str, exts: &[&str]) -> Option<PathBuf> {
    exts.iter()
        .map(|e| dir.join(format!("{image_id}.{e}")))
        .find(|p| p.is_file())
}

/// Image inputs `<image_id>.npy` in `dir`, sorted.
pub fn list_images(dir: &Path) -> Result<Vec<(String, PathBuf)>, Failure> {
    let images: Vec<(String, PathBuf)> = sorted_entries(dir)?
        .into_iter()
        .filter_map(|p| {
            let id = p.file_name()?.to_str()?.strip_suffix(".npy")?.to_string();
            Some((id, p))
        })
        .collect();
    if images.is_empty() {
        return Err(Failure::config(format!("no .npy images in {}", dir.display())));
    }
    Ok(images)
}

/// Per-image seed so that random maps differ between images but not
/// between runs.
pub fn seed_for(seed: u64, image_id: &str) -> u64 {
    // FNV-1a
    let h = image_id
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3));
    seed ^ h
}
