//! Plane implementations of the geometric, noise and palette distortions.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::image_plane::ImagePlane;

/// Side of the square crop keeping fraction `p` of the area.
pub fn crop_side(p: f64, height: usize, width: usize) -> usize {
    (p.sqrt() * height.min(width) as f64).floor() as usize
}

/// Square crop of `crop_side(p, H, W)` pixels at a uniform position.
pub fn random_crop<R: Rng + ?Sized>(img: &ImagePlane, p: f64, rng: &mut R) -> Result<ImagePlane> {
    let (h, w) = img.dims();
    let side = crop_side(p, h, w);
    let y = rng.gen_range(0..=h.saturating_sub(side));
    let x = rng.gen_range(0..=w.saturating_sub(side));
    img.crop(y, x, side, side)
}

/// Each pixel reverts to the cover pixel with probability `p`.
pub fn dropout<R: Rng + ?Sized>(encoded: &ImagePlane, cover: &ImagePlane, p: f64, rng: &mut R) -> ImagePlane {
    let mut out = encoded.clone();
    let (h, w) = out.dims();
    for y in 0..h {
        for x in 0..w {
            if rng.gen::<f64>() < p {
                out.set_pixel(y, x, cover.pixel(y, x));
            }
        }
    }
    out
}

/// Normalized 1-D Gaussian of length `2·ceil(2σ)+1`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (2.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-radius..=radius).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Mirror index without repeating the edge sample (`dcb|abcd|cba`).
fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - m }) as usize
}

/// Separable blur with [`gaussian_kernel`] and mirrored borders.
pub fn gaussian_blur(img: &ImagePlane, sigma: f64) -> ImagePlane {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let (h, w) = img.dims();
    let mut tmp = vec![0f64; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let acc: f64 = k
                    .iter()
                    .enumerate()
                    .map(|(j, kv)| kv * img.get(y, reflect(x as i64 + j as i64 - r, w), c) as f64)
                    .sum();
                tmp[(y * w + x) * 3 + c] = acc;
            }
        }
    }
    ImagePlane::from_fn(h, w, |y, x, c| {
        let acc: f64 =
            k.iter().enumerate().map(|(j, kv)| kv * tmp[(reflect(y as i64 + j as i64 - r, h) * w + x) * 3 + c]).sum();
        acc as f32
    })
    .expect("same dimensions")
    .clipped()
}

/// Adds i.i.d. `N(0, σ²)` noise per channel, then clips.
pub fn gaussian_noise<R: Rng + ?Sized>(img: &ImagePlane, sigma: f64, rng: &mut R) -> ImagePlane {
    let normal = Normal::new(0.0, sigma).expect("sigma checked by spec");
    let mut out = img.clone();
    for v in out.data_mut() {
        *v += normal.sample(rng) as f32;
    }
    out.clipped()
}

/// Sets exactly `round(p·H·W)` uniformly chosen pixels to black or white.
pub fn salt_pepper<R: Rng + ?Sized>(img: &ImagePlane, p: f64, rng: &mut R) -> ImagePlane {
    let (h, w) = img.dims();
    let count = (p * (h * w) as f64).round() as usize;
    let mut out = img.clone();
    for idx in index::sample(rng, h * w, count.min(h * w)) {
        let v = if rng.gen::<bool>() { 1.0 } else { 0.0 };
        out.set_pixel(idx / w, idx % w, [v; 3]);
    }
    out
}

/// Median-cut palette quantization to at most `colors` colors, without
/// dithering. Works on 8-bit colors; each pixel takes the mean color of its
/// final box.
pub fn median_cut(img: &ImagePlane, colors: usize) -> ImagePlane {
    let rgb8: Vec<[u8; 3]> = img.quantized().pixels().map(|p| p.map(|v| (v * 255.0).round() as u8)).collect();
    let mut boxes: Vec<Vec<usize>> = vec![(0..rgb8.len()).collect()];
    while boxes.len() < colors {
        // Split the box with the widest single-channel range.
        let widest = boxes
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let (ch, range) = widest_channel(&rgb8, b);
                (i, ch, range)
            })
            .filter(|&(_, _, range)| range > 0)
            .max_by_key(|&(i, _, range)| (range, std::cmp::Reverse(i)));
        let Some((i, ch, _)) = widest else { break };
        let mut members = std::mem::take(&mut boxes[i]);
        members.sort_by_key(|&p| (rgb8[p][ch], p));
        let mid = members.len() / 2;
        // Keep equal values together so both halves are non-empty and distinct.
        let pivot = rgb8[members[mid]][ch];
        let split = members.iter().position(|&p| rgb8[p][ch] >= pivot).filter(|&s| s > 0).unwrap_or_else(|| {
            members.iter().position(|&p| rgb8[p][ch] > pivot).expect("range > 0 leaves a larger value")
        });
        let upper = members.split_off(split);
        boxes[i] = members;
        boxes.push(upper);
    }
    let mut data = vec![0f32; rgb8.len() * 3];
    for members in &boxes {
        let mut sum = [0u64; 3];
        for &p in members {
            for c in 0..3 {
                sum[c] += u64::from(rgb8[p][c]);
            }
        }
        let n = members.len() as u64;
        let mean = sum.map(|s| ((s + n / 2) / n) as f32 / 255.0);
        for &p in members {
            data[p * 3..p * 3 + 3].copy_from_slice(&mean);
        }
    }
    ImagePlane::new(img.height(), img.width(), data).expect("same dimensions")
}

fn widest_channel(rgb8: &[[u8; 3]], members: &[usize]) -> (usize, u8) {
    (0..3)
        .map(|c| {
            let lo = members.iter().map(|&p| rgb8[p][c]).min().unwrap_or(0);
            let hi = members.iter().map(|&p| rgb8[p][c]).max().unwrap_or(0);
            (c, hi - lo)
        })
        .max_by_key(|&(c, r)| (r, std::cmp::Reverse(c)))
        .expect("three channels")
}

/// Scales the width by `factor` with bilinear interpolation (half-pixel
/// centers, no antialiasing); the height is unchanged.
pub fn resize_width_bilinear(img: &ImagePlane, factor: f64) -> Result<ImagePlane> {
    let (h, w) = img.dims();
    let new_w = ((w as f64 * factor).round() as usize).max(1);
    let scale = w as f64 / new_w as f64;
    ImagePlane::from_fn(h, new_w, |y, x, c| {
        let src = ((x as f64 + 0.5) * scale - 0.5).max(0.0);
        let x0 = (src.floor() as usize).min(w - 1);
        let x1 = (x0 + 1).min(w - 1);
        let t = (src - x0 as f64) as f32;
        img.get(y, x0, c) * (1.0 - t) + img.get(y, x1, c) * t
    })
}
