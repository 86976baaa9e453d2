//! Real JPEG round trip and its differentiable approximation.
//!
//! The approximation mirrors the reference encoder: JFIF YCbCr, no chroma
//! subsampling, orthonormal 8×8 DCT and the Annex K tables scaled with the
//! libjpeg quality rule. Rounding is replaced by `r + (x − r)³` with
//! `r = round(x)`, which agrees with rounding to within 0.125 and has a
//! non-zero gradient almost everywhere.

use image::codecs::jpeg::JpegEncoder;
use image::{ImageFormat, RgbImage};
use tch::{Device, Kind, Tensor};

use crate::error::{Error, Result};
use crate::image_plane::ImagePlane;

#[rustfmt::skip]
const LUMA_BASE: [u16; 64] = [
    16, 11, 10, 16,  24,  40,  51,  61,
    12, 12, 14, 19,  26,  58,  60,  55,
    14, 13, 16, 24,  40,  57,  69,  56,
    14, 17, 22, 29,  51,  87,  80,  62,
    18, 22, 37, 56,  68, 109, 103,  77,
    24, 35, 55, 64,  81, 104, 113,  92,
    49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103,  99,
];

#[rustfmt::skip]
const CHROMA_BASE: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99,
    18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99,
    47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
];

/// Luma and chroma quantization tables (row-major 8×8) for quality `q`.
pub fn quant_tables(q: u8) -> ([f64; 64], [f64; 64]) {
    let q = u32::from(q.clamp(1, 100));
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let scaled = |base: &[u16; 64]| base.map(|v| ((u32::from(v) * scale + 50) / 100).clamp(1, 255) as f64);
    (scaled(&LUMA_BASE), scaled(&CHROMA_BASE))
}

/// Encodes to JPEG at quality `q` in memory and decodes again.
pub fn jpeg_real(img: &ImagePlane, q: u8) -> Result<ImagePlane> {
    let rgb: RgbImage = img.to_rgb8();
    let mut buf = Vec::new();
    let wrap = |source| Error::Image { path: "<in-memory jpeg>".into(), source };
    JpegEncoder::new_with_quality(&mut buf, q).encode_image(&rgb).map_err(wrap)?;
    let decoded = image::load_from_memory_with_format(&buf, ImageFormat::Jpeg).map_err(wrap)?;
    ImagePlane::from_rgb8(&decoded.to_rgb8())
}

fn dct_matrix(kind: Kind) -> Tensor {
    let mut m = [0f64; 64];
    for u in 0..8 {
        let alpha = if u == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
        for x in 0..8 {
            m[u * 8 + x] = alpha * (((2 * x + 1) * u) as f64 * std::f64::consts::PI / 16.0).cos();
        }
    }
    Tensor::from_slice(&m).view([8, 8]).to_kind(kind)
}

#[rustfmt::skip]
const RGB_TO_YCC: [f64; 9] = [
     0.299,     0.587,     0.114,
    -0.168736, -0.331264,  0.5,
     0.5,      -0.418688, -0.081312,
];

#[rustfmt::skip]
const YCC_TO_RGB: [f64; 9] = [
    1.0,  0.0,       1.402,
    1.0, -0.344136, -0.714136,
    1.0,  1.772,     0.0,
];

fn mix(m: &[f64; 9], x: &Tensor) -> Tensor {
    let m = Tensor::from_slice(m).view([3, 3]).to_kind(x.kind());
    Tensor::einsum("ij,bjhw->bihw", &[m, x.shallow_clone()], None::<i64>)
}

fn soft_round(x: &Tensor) -> Tensor {
    let r = x.round();
    let d = x - &r;
    r + &d * &d * &d
}

/// Differentiable JPEG round trip of a `[B,3,H,W]` batch in [0,1].
pub fn jpeg_diff(x: &Tensor, q: f64) -> Tensor {
    let kind = x.kind();
    let size = x.size();
    let (b, h, w) = (size[0], size[2], size[3]);
    let (ph, pw) = ((8 - h % 8) % 8, (8 - w % 8) % 8);
    let padded = if ph > 0 || pw > 0 { x.replication_pad2d([0, pw, 0, ph]) } else { x.shallow_clone() };
    let (hp, wp) = (h + ph, w + pw);

    let offset = Tensor::from_slice(&[0.0f64, 128.0, 128.0]).view([1, 3, 1, 1]).to_kind(kind);
    let ycc = mix(&RGB_TO_YCC, &(padded * 255.0)) + &offset - 128.0;
    let blocks = ycc.view([b, 3, hp / 8, 8, wp / 8, 8]).permute([0, 1, 2, 4, 3, 5]);
    let c = dct_matrix(kind);
    let coeffs = c.matmul(&blocks).matmul(&c.tr());

    let (luma, chroma) = quant_tables(q.round().clamp(1.0, 100.0) as u8);
    let mut table = Vec::with_capacity(3 * 64);
    table.extend_from_slice(&luma);
    table.extend_from_slice(&chroma);
    table.extend_from_slice(&chroma);
    let table = Tensor::from_slice(&table).view([1, 3, 1, 1, 8, 8]).to_kind(kind);
    let quantized = soft_round(&(&coeffs / &table)) * &table;

    let spatial = c.tr().matmul(&quantized).matmul(&c);
    let ycc = spatial.permute([0, 1, 2, 4, 3, 5]).reshape([b, 3, hp, wp]) + 128.0 - &offset;
    let rgb = mix(&YCC_TO_RGB, &ycc) / 255.0;
    rgb.narrow(2, 0, h).narrow(3, 0, w).clamp(0.0, 1.0)
}

pub(super) fn jpeg_diff_plane(img: &ImagePlane, q: f64) -> Result<ImagePlane> {
    let out = tch::no_grad(|| jpeg_diff(&img.to_tensor().unsqueeze(0), q));
    ImagePlane::from_tensor(&out)
}

/// Largest relative disagreement between the analytic gradient of
/// `mean(jpeg_diff(I))` and central finite differences, computed in double
/// precision. Pixels where both gradients vanish are skipped.
pub fn jpeg_diff_gradcheck(q: f64, probe: &ImagePlane) -> f64 {
    const H: f64 = 1e-6;
    let base = probe.to_tensor().unsqueeze(0).to_kind(Kind::Double);
    let input = base.detach().set_requires_grad(true);
    let out = jpeg_diff(&input, q).mean(Kind::Double);
    let grad = Tensor::run_backward(&[out], &[&input], false, false).remove(0).flatten(0, -1);
    let analytic = Vec::<f64>::try_from(&grad).expect("double gradient");

    let flat = Vec::<f64>::try_from(&base.flatten(0, -1)).expect("double input");
    let eval = |v: &[f64]| -> f64 {
        let t = Tensor::from_slice(v).view(base.size().as_slice()).to_device(Device::Cpu);
        tch::no_grad(|| jpeg_diff(&t, q).mean(Kind::Double).double_value(&[]))
    };
    let mut worst = 0f64;
    let mut probe_vals = flat.clone();
    for (i, &a) in analytic.iter().enumerate() {
        probe_vals[i] = flat[i] + H;
        let up = eval(&probe_vals);
        probe_vals[i] = flat[i] - H;
        let down = eval(&probe_vals);
        probe_vals[i] = flat[i];
        let numeric = (up - down) / (2.0 * H);
        let scale = a.abs().max(numeric.abs());
        if scale > 1e-12 {
            worst = worst.max((a - numeric).abs() / scale);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::seeded_rng;
    use rand::Rng;

    #[test]
    fn quality_scaling_matches_libjpeg() {
        let (l50, c50) = quant_tables(50);
        assert_eq!(l50[0], 16.0);
        assert_eq!(c50[63], 99.0);
        let (l100, c100) = quant_tables(100);
        assert!(l100.iter().chain(c100.iter()).all(|&v| v == 1.0));
        let (l10, _) = quant_tables(10);
        // scale 500: (16·500 + 50)/100 = 80.
        assert_eq!(l10[0], 80.0);
        let (l1, _) = quant_tables(1);
        assert_eq!(l1[0], 255.0);
    }

    #[test]
    fn dct_is_orthonormal() {
        let c = dct_matrix(Kind::Double);
        let eye = c.matmul(&c.tr());
        let err = (eye - Tensor::eye(8, (Kind::Double, Device::Cpu))).abs().max().double_value(&[]);
        assert!(err < 1e-12);
    }

    #[test]
    fn soft_round_stays_near_rounding() {
        let x = Tensor::linspace(-3.0, 3.0, 601, (Kind::Double, Device::Cpu));
        let err = (soft_round(&x) - x.round()).abs().max().double_value(&[]);
        assert!(err <= 0.125 + 1e-12);
    }

    #[test]
    fn odd_sizes_survive() {
        let mut rng = seeded_rng(1);
        let img = ImagePlane::from_fn(13, 19, |_, _, _| rng.gen()).unwrap();
        let out = jpeg_diff_plane(&img, 75.0).unwrap();
        assert_eq!(out.dims(), (13, 19));
        assert!(out.in_unit_range());
        assert_eq!(jpeg_real(&img, 75).unwrap().dims(), (13, 19));
    }

    #[test]
    fn gradcheck_small_probe() {
        let mut rng = seeded_rng(2);
        let probe = ImagePlane::from_fn(8, 8, |_, _, _| rng.gen_range(0.2..0.8)).unwrap();
        let err = jpeg_diff_gradcheck(50.0, &probe);
        assert!(err <= 1e-2, "{err}");
    }
}
