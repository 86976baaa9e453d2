//! Image dataset ingestion and train / eval split.

use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use tch::Tensor;

use crate::error::{Error, Result};
use crate::image_plane::ImagePlane;
use crate::metrics::seeded_rng;

/// Largest default evaluation split.
pub const MAX_EVAL: usize = 3000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub root: PathBuf,
    /// Images are resized to `target_size × target_size`.
    pub target_size: usize,
    /// Defaults to `min(3000, n − 1)` so the training split is never empty.
    pub eval_count: Option<usize>,
    pub split_seed: u64,
}

impl DatasetSpec {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into(), target_size: 128, eval_count: None, split_seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<ImagePlane>,
    pub eval: Vec<ImagePlane>,
    pub train_paths: Vec<PathBuf>,
    pub eval_paths: Vec<PathBuf>,
}

/// Decodes every image file under `spec.root` (non-recursive, sorted by
/// name), resizes it bilinearly and splits it by `spec.split_seed`.
pub fn ingest(spec: &DatasetSpec) -> Result<Dataset> {
    let entries = fs::read_dir(&spec.root).map_err(|e| Error::io(&spec.root, e))?;
    let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_file()).collect();
    paths.sort();

    let mut images = Vec::new();
    let mut failed = Vec::new();
    for path in paths {
        match load_resized(&path, spec.target_size) {
            Ok(img) => images.push((path, img)),
            Err(_) => failed.push(path),
        }
    }
    if images.len() < 2 {
        let listed: Vec<String> = failed.iter().map(|p| p.display().to_string()).collect();
        return Err(Error::Config(format!(
            "{} needs at least 2 decodable images, found {}; undecodable: [{}]",
            spec.root.display(),
            images.len(),
            listed.join(", ")
        )));
    }
    if !failed.is_empty() {
        log::warn!("skipped {} undecodable files under {}", failed.len(), spec.root.display());
    }

    let n = images.len();
    let eval_count = spec.eval_count.unwrap_or_else(|| MAX_EVAL.min(n - 1));
    if eval_count == 0 || eval_count >= n {
        return Err(Error::Config(format!("eval_count {eval_count} must be in [1, {}] for {n} images", n - 1)));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(spec.split_seed));
    let mut slots: Vec<Option<(PathBuf, ImagePlane)>> = images.into_iter().map(Some).collect();
    let mut ds = Dataset { train: vec![], eval: vec![], train_paths: vec![], eval_paths: vec![] };
    for (rank, &i) in order.iter().enumerate() {
        let (path, img) = slots[i].take().expect("each index once");
        if rank < eval_count {
            ds.eval.push(img);
            ds.eval_paths.push(path);
        } else {
            ds.train.push(img);
            ds.train_paths.push(path);
        }
    }
    Ok(ds)
}

fn load_resized(path: &Path, size: usize) -> Result<ImagePlane> {
    let img = image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?.to_rgb8();
    let resized = if img.dimensions() == (size as u32, size as u32) {
        img
    } else {
        imageops::resize(&img, size as u32, size as u32, FilterType::Triangle)
    };
    ImagePlane::from_rgb8(&resized)
}

impl Dataset {
    pub fn from_images(train: Vec<ImagePlane>, eval: Vec<ImagePlane>) -> Self {
        Self { train, eval, train_paths: vec![], eval_paths: vec![] }
    }

    /// `[B,3,H,W]` batch of training images drawn uniformly with replacement.
    pub fn sample_batch<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Tensor> {
        if self.train.is_empty() {
            return Err(Error::contract("training split is empty"));
        }
        let picks: Vec<&ImagePlane> = (0..batch).map(|_| &self.train[rng.gen_range(0..self.train.len())]).collect();
        ImagePlane::stack(&picks)
    }
}
