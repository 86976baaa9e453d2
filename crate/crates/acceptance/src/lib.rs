//! Image fixtures for the acceptance criteria.

use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use rand::Rng;
use wmark::metrics::seeded_rng;
use wmark::ImagePlane;

pub fn natural_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/natural")
}

/// The fixture photographs, in file name order.
pub fn natural_images() -> Vec<image::RgbImage> {
    let mut paths: Vec<_> = std::fs::read_dir(natural_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    paths.sort();
    paths.iter().map(|p| image::open(p).unwrap().to_rgb8()).collect()
}

/// `n` natural `side × side` patches: random `2·side` crops of the fixture
/// photographs, downscaled by two.
pub fn patches(n: usize, side: u32, seed: u64) -> Vec<ImagePlane> {
    let sources = natural_images();
    let mut rng = seeded_rng(seed);
    (0..n)
        .map(|i| {
            let src = &sources[i % sources.len()];
            let (w, h) = src.dimensions();
            let x = rng.gen_range(0..=w - 2 * side);
            let y = rng.gen_range(0..=h - 2 * side);
            let crop = imageops::crop_imm(src, x, y, 2 * side, 2 * side).to_image();
            ImagePlane::from_rgb8(&imageops::resize(&crop, side, side, FilterType::Triangle)).unwrap()
        })
        .collect()
}

/// Uniform noise image.
pub fn random_image(h: usize, w: usize, seed: u64) -> ImagePlane {
    let mut rng = seeded_rng(seed);
    ImagePlane::from_fn(h, w, |_, _, _| rng.gen()).unwrap()
}
