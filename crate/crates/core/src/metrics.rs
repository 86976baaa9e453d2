//! Bit accuracy, PSNR, colorspace conversion and seeded randomness.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::image_plane::ImagePlane;
use crate::message::{BitMessage, SoftMessage};

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

const KR: f64 = 0.299;
const KB: f64 = 0.114;
const KG: f64 = 1.0 - KR - KB;

/// Fraction of positions where the thresholded estimate matches `truth`.
pub fn bit_accuracy(estimate: &SoftMessage, truth: &BitMessage) -> Result<f64> {
    ensure(estimate.len() == truth.len(), || {
        format!("estimate has {} values, truth has {} bits", estimate.len(), truth.len())
    })?;
    bit_match_fraction(&estimate.threshold(), truth)
}

pub fn bit_match_fraction(a: &BitMessage, b: &BitMessage) -> Result<f64> {
    let diff = a.hamming_distance(b)?;
    Ok(1.0 - diff as f64 / a.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelSelect {
    Rgb,
    Y,
    U,
    V,
}

pub fn psnr(a: &ImagePlane, b: &ImagePlane, select: ChannelSelect) -> Result<f64> {
    psnr_with_cap(a, b, select, PSNR_CAP_DB)
}

/// `10·log10(1 / MSE)` over the selected channels with peak value 1.
pub fn psnr_with_cap(a: &ImagePlane, b: &ImagePlane, select: ChannelSelect, cap: f64) -> Result<f64> {
    ensure(a.dims() == b.dims(), || format!("dimension mismatch: {:?} vs {:?}", a.dims(), b.dims()))?;
    let mse = match select {
        ChannelSelect::Rgb => mse(a.data(), b.data(), 0..3),
        yuv => {
            let c = match yuv {
                ChannelSelect::Y => 0,
                ChannelSelect::U => 1,
                _ => 2,
            };
            mse(rgb_to_yuv(a).data(), rgb_to_yuv(b).data(), c..c + 1)
        }
    };
    if mse == 0.0 {
        Ok(cap)
    } else {
        Ok((10.0 * (1.0 / mse).log10()).min(cap))
    }
}

fn mse(a: &[f32], b: &[f32], channels: std::ops::Range<usize>) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (pa, pb) in a.chunks_exact(3).zip(b.chunks_exact(3)) {
        for c in channels.clone() {
            let d = pa[c] as f64 - pb[c] as f64;
            sum += d * d;
            count += 1;
        }
    }
    sum / count as f64
}

/// BT.601 full-range RGB → YUV with U and V centered at 0.5.
pub fn rgb_to_yuv(img: &ImagePlane) -> ImagePlane {
    img.map_pixels(|[r, g, b]| {
        let (r, g, b) = (r as f64, g as f64, b as f64);
        let y = KR * r + KG * g + KB * b;
        let u = 0.5 * (b - y) / (1.0 - KB) + 0.5;
        let v = 0.5 * (r - y) / (1.0 - KR) + 0.5;
        [y as f32, u as f32, v as f32]
    })
}

pub fn yuv_to_rgb(img: &ImagePlane) -> ImagePlane {
    img.map_pixels(|[y, u, v]| {
        let (y, u, v) = (y as f64, u as f64 - 0.5, v as f64 - 0.5);
        let r = y + 2.0 * (1.0 - KR) * v;
        let b = y + 2.0 * (1.0 - KB) * u;
        let g = (y - KR * r - KB * b) / KG;
        [r as f32, g as f32, b as f32]
    })
}

/// Deterministic random source used everywhere randomness is needed.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent seed for sub-stream `stream` (splitmix64 mix).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Arithmetic mean, 0 for an empty slice.
pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_plane(seed: u64, h: usize, w: usize) -> ImagePlane {
        use rand::Rng;
        let mut rng = seeded_rng(seed);
        ImagePlane::from_fn(h, w, |_, _, _| rng.gen::<f32>()).unwrap()
    }

    #[test]
    fn bit_accuracy_examples() {
        let mut rng = seeded_rng(1);
        let truth = BitMessage::random(120, &mut rng);
        assert_eq!(bit_accuracy(&SoftMessage::from(&truth), &truth).unwrap(), 1.0);
        assert_eq!(bit_accuracy(&SoftMessage::from(&truth.complement()), &truth).unwrap(), 0.0);
        let half: Vec<f32> =
            truth.bits().iter().enumerate().map(|(i, &b)| if i < 60 { b as f32 } else { 1.0 - b as f32 }).collect();
        assert_eq!(bit_accuracy(&SoftMessage::new(half), &truth).unwrap(), 0.5);
        assert!(bit_accuracy(&SoftMessage::new(vec![0.0; 3]), &truth).is_err());
    }

    #[test]
    fn psnr_examples() {
        let a = random_plane(2, 16, 16).map_pixels(|p| p.map(|v| v * 0.8));
        assert_eq!(psnr(&a, &a, ChannelSelect::Rgb).unwrap(), PSNR_CAP_DB);
        let b = a.map_pixels(|p| p.map(|v| v + 0.1));
        assert!((psnr(&a, &b, ChannelSelect::Rgb).unwrap() - 20.0).abs() < 1e-4);
        let small = random_plane(3, 8, 8);
        assert!(psnr(&a, &small, ChannelSelect::Y).is_err());
    }

    #[test]
    fn yuv_reference_points() {
        let black = rgb_to_yuv(&ImagePlane::filled(8, 8, [0.0; 3]).unwrap());
        assert_eq!(black.pixel(0, 0), [0.0, 0.5, 0.5]);
        let white = rgb_to_yuv(&ImagePlane::filled(8, 8, [1.0; 3]).unwrap());
        for (got, want) in white.pixel(3, 3).iter().zip([1.0, 0.5, 0.5]) {
            assert!((got - want).abs() < 1e-6);
        }
    }

    #[test]
    fn yuv_round_trip() {
        let img = random_plane(4, 12, 9);
        let back = yuv_to_rgb(&rgb_to_yuv(&img));
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(7, 0), derive_seed(7, 1));
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
    }

    proptest! {
        #[test]
        fn psnr_is_symmetric(seed in 0u64..1000) {
            let a = random_plane(seed, 8, 8);
            let b = random_plane(seed + 1, 8, 8);
            for sel in [ChannelSelect::Rgb, ChannelSelect::Y, ChannelSelect::U, ChannelSelect::V] {
                prop_assert_eq!(psnr(&a, &b, sel).unwrap(), psnr(&b, &a, sel).unwrap());
            }
        }

        #[test]
        fn psnr_decreases_with_perturbation(seed in 0u64..1000, d1 in 0.001f32..0.2, extra in 0.001f32..0.2) {
            let a = random_plane(seed, 8, 8).map_pixels(|p| p.map(|v| v * 0.5));
            let b1 = a.map_pixels(|p| p.map(|v| v + d1));
            let b2 = a.map_pixels(|p| p.map(|v| v + d1 + extra));
            prop_assert!(psnr(&a, &b2, ChannelSelect::Rgb).unwrap() < psnr(&a, &b1, ChannelSelect::Rgb).unwrap());
        }

        #[test]
        fn thresholded_soft_messages_are_fully_accurate(vals in proptest::collection::vec(prop_oneof![-3.0f32..0.49, 0.51f32..3.0], 1..200)) {
            let soft = SoftMessage::new(vals);
            prop_assert_eq!(bit_accuracy(&soft, &soft.threshold()).unwrap(), 1.0);
        }

        #[test]
        fn yuv_is_affine(seed in 0u64..1000, alpha in 0.0f32..1.0) {
            let a = random_plane(seed, 8, 8);
            let b = random_plane(seed + 7, 8, 8);
            let mut mix = a.clone();
            for (m, (x, y)) in mix.data_mut().iter_mut().zip(a.data().iter().zip(b.data())) {
                *m = alpha * x + (1.0 - alpha) * y;
            }
            let (ya, yb, ym) = (rgb_to_yuv(&a), rgb_to_yuv(&b), rgb_to_yuv(&mix));
            for i in 0..ym.data().len() {
                let expect = alpha * ya.data()[i] + (1.0 - alpha) * yb.data()[i];
                prop_assert!((ym.data()[i] - expect).abs() < 1e-5);
            }
        }
    }
}
