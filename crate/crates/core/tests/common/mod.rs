//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use std::path::Path;

use rand::Rng;
use wmark::metrics::seeded_rng;
use wmark::nets::NetConfig;
use wmark::ImagePlane;

pub fn random_image(h: usize, w: usize, seed: u64) -> ImagePlane {
    let mut rng = seeded_rng(seed);
    ImagePlane::from_fn(h, w, |_, _, _| rng.gen()).unwrap()
}

/// A folder of `n` noise images, `side × side`.
pub fn write_image_dir(dir: &Path, n: usize, side: usize, seed: u64) {
    std::fs::create_dir_all(dir).unwrap();
    for i in 0..n {
        random_image(side, side, seed + i as u64).save_png(dir.join(format!("img{i:04}.png"))).unwrap();
    }
}

pub fn tiny_nets(message_len: usize) -> NetConfig {
    NetConfig { message_len, encoder_channels: 4, decoder_channels: 4, discriminator_channels: 4 }
}
