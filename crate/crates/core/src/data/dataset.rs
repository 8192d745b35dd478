use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::exec;
use crate::tensor::{LabelGrid, Tensor};

use super::image_io::{load_and_preprocess, mask_from_intensity};

/// One network-ready pair: image (1, 1, H, W) in [0, 1] and labels (1, H, W).
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Tensor<f32>,
    pub mask: LabelGrid,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: Tensor<f32>, mask: LabelGrid, k: usize) -> Result<Self> {
        let id = id.into();
        let [n, c, h, w] = image.shape().dims();
        if (n, c) != (1, 1) || (mask.n(), mask.h(), mask.w()) != (1, h, w) {
            return Err(Error::data(format!(
                "sample {id}: image {} and mask 1x{}x{} do not match",
                image.shape(),
                mask.h(),
                mask.w()
            )));
        }
        mask.check_range(k)
            .map_err(|e| Error::data(format!("sample {id}: {e}")))?;
        Ok(Sample { id, image, mask })
    }
}

pub fn load_sample(
    id: &str,
    image: &Path,
    mask: &Path,
    h: usize,
    w: usize,
    k: usize,
    thresholds: &[f64],
) -> Result<Sample> {
    let img = load_and_preprocess(image, h, w)?;
    let m = mask_from_intensity(mask, k, thresholds, h, w)?;
    Sample::new(id, img, m, k)
}

fn stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let rd = fs::read_dir(dir).map_err(|e| Error::Ingest {
        path: dir.to_path_buf(),
        message: format!("cannot list directory: {e}"),
    })?;
    let mut paths: Vec<PathBuf> = Vec::new();
    for entry in rd {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && !path.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.')) {
            paths.push(path);
        }
    }
    paths.sort();
    let mut out = BTreeMap::new();
    for path in paths {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        if let Some(prev) = out.insert(stem.clone(), path.clone()) {
            return Err(Error::Ingest {
                path,
                message: format!("stem {stem} also used by {}", prev.display()),
            });
        }
    }
    Ok(out)
}

/// Unlabelled images for prediction: `dir/images/*` when that directory
/// exists, else every file in `dir`, ordered by id.
pub fn load_image_dir(dir: &Path, h: usize, w: usize) -> Result<Vec<(String, Tensor<f32>)>> {
    let sub = dir.join("images");
    let files = stems(if sub.is_dir() { &sub } else { dir })?;
    if files.is_empty() {
        return Err(Error::Ingest {
            path: dir.to_path_buf(),
            message: "no images found".into(),
        });
    }
    let files: Vec<(&String, &PathBuf)> = files.iter().collect();
    exec::map_indices(files.len(), |i| {
        let (id, path) = files[i];
        Ok((id.clone(), load_and_preprocess(path, h, w)?))
    })
    .into_iter()
    .collect()
}

/// Loads `dir/images/<id>.<ext>` with `dir/masks/<id>.<ext>`, ordered by id.
/// Files are decoded in parallel; the result order does not depend on it.
pub fn load_dataset_dir(dir: &Path, h: usize, w: usize, k: usize, thresholds: &[f64]) -> Result<Vec<Sample>> {
    let images = stems(&dir.join("images"))?;
    let masks = stems(&dir.join("masks"))?;
    if let Some((stem, path)) = images.iter().find(|(s, _)| !masks.contains_key(*s)) {
        return Err(Error::Ingest {
            path: path.clone(),
            message: format!("no mask with stem {stem} in {}", dir.join("masks").display()),
        });
    }
    if let Some((stem, path)) = masks.iter().find(|(s, _)| !images.contains_key(*s)) {
        return Err(Error::Ingest {
            path: path.clone(),
            message: format!("no image with stem {stem} in {}", dir.join("images").display()),
        });
    }
    if images.is_empty() {
        return Err(Error::Ingest {
            path: dir.join("images"),
            message: "no images found".into(),
        });
    }
    let pairs: Vec<(&String, &PathBuf, &PathBuf)> = images.iter().map(|(s, p)| (s, p, &masks[s])).collect();
    exec::map_indices(pairs.len(), |i| {
        let (id, img, mask) = pairs[i];
        load_sample(id, img, mask, h, w, k, thresholds)
    })
    .into_iter()
    .collect()
}
