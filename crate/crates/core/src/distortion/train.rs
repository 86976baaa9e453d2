//! Batch distortions for training.

use rand::Rng;
use tch::Tensor;

use super::{apply, jpeg, ops, DistortionSpec, Family};
use crate::error::Result;
use crate::image_plane::ImagePlane;
use crate::tensor_util;

/// Applies `spec` to a `[B,3,H,W]` batch so that the result can be
/// back-propagated to `encoded`.
///
/// JPEG uses the differentiable approximation. Families without a useful
/// analytic gradient (salt-and-pepper, hue, saturation, palette) forward the
/// true distortion and pass gradients straight through. Crop positions are
/// shared by the whole batch.
pub fn apply_tensor<R: Rng + ?Sized>(
    spec: &DistortionSpec,
    encoded: &Tensor,
    cover: &Tensor,
    rng: &mut R,
) -> Result<Tensor> {
    if spec.is_neutral() {
        return Ok(encoded.shallow_clone());
    }
    let size = encoded.size();
    let (b, h, w) = (size[0], size[2], size[3]);
    let s = spec.strength();
    Ok(match spec.family() {
        Family::Identity => encoded.shallow_clone(),
        Family::Jpeg | Family::JpegDiff => jpeg::jpeg_diff(encoded, s),
        Family::Crop => {
            let side = ops::crop_side(s, h as usize, w as usize) as i64;
            let y = rng.gen_range(0..=h - side);
            let x = rng.gen_range(0..=w - side);
            encoded.narrow(2, y, side).narrow(3, x, side)
        }
        Family::Dropout => {
            let keep_cover = tensor_util::bernoulli(rng, &[b, 1, h, w], s).to_kind(encoded.kind());
            &keep_cover * cover + (1.0 - &keep_cover) * encoded
        }
        Family::GaussianBlur => {
            let k = ops::gaussian_kernel(s);
            let n = k.len() as i64;
            let k1 = Tensor::from_slice(&k).to_kind(encoded.kind());
            let k2 = k1.view([n, 1]).matmul(&k1.view([1, n]));
            let weight = k2.view([1, 1, n, n]).repeat([3, 1, 1, 1]);
            let r = n / 2;
            let padded = encoded.reflection_pad2d([r, r, r, r]);
            padded.conv2d(&weight, None::<Tensor>, [1, 1], [0, 0], [1, 1], 3).clamp(0.0, 1.0)
        }
        Family::GaussianNoise => {
            let noise = tensor_util::normal(rng, &size, s).to_kind(encoded.kind());
            (encoded + noise).clamp(0.0, 1.0)
        }
        Family::ResizeWidth => {
            let new_w = ((w as f64 * s).round() as i64).max(1);
            encoded.upsample_bilinear2d([h, new_w], false, None, None)
        }
        Family::SaltPepper | Family::Hue | Family::Saturation | Family::Gif => {
            let enc_planes = ImagePlane::unstack(&encoded.detach())?;
            let cov_planes = ImagePlane::unstack(&cover.detach())?;
            let out: Vec<ImagePlane> =
                enc_planes.iter().zip(&cov_planes).map(|(e, c)| apply(spec, e, c, rng)).collect::<Result<_>>()?;
            let target = ImagePlane::stack(&out.iter().collect::<Vec<_>>())?.to_kind(encoded.kind());
            straight_through(encoded, &target)
        }
    })
}

/// Value of `target`, gradient of the identity with respect to `x`.
fn straight_through(x: &Tensor, target: &Tensor) -> Tensor {
    x + (target - x.detach())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tch::Kind;

    fn mean_abs(a: &Tensor, b: &Tensor) -> f64 {
        tensor_util::scalar(&(a - b).abs().mean(Kind::Double))
    }
    use crate::metrics::seeded_rng;

    fn batch(seed: u64, h: i64, w: i64) -> Tensor {
        tensor_util::uniform(&mut seeded_rng(seed), &[2, 3, h, w])
    }

    #[test]
    fn resize_matches_plane_version() {
        let x = batch(1, 16, 20);
        let spec: DistortionSpec = "resize_width:0.7".parse().unwrap();
        let t = apply_tensor(&spec, &x, &x, &mut seeded_rng(0)).unwrap();
        let planes = ImagePlane::unstack(&x).unwrap();
        let want = ops::resize_width_bilinear(&planes[0], 0.7).unwrap();
        let got = ImagePlane::from_tensor(&t.get(0)).unwrap();
        assert_eq!(got.dims(), want.dims());
        assert!(mean_abs(&got.to_tensor(), &want.to_tensor()) < 1e-6);
    }

    #[test]
    fn blur_matches_plane_version() {
        let x = batch(2, 12, 12);
        let spec: DistortionSpec = "gaussian_blur:1.0".parse().unwrap();
        let t = apply_tensor(&spec, &x, &x, &mut seeded_rng(0)).unwrap();
        let plane = ImagePlane::unstack(&x).unwrap().remove(1);
        let want = ops::gaussian_blur(&plane, 1.0);
        assert!(mean_abs(&t.get(1), &want.to_tensor()) < 1e-6);
    }

    #[test]
    fn straight_through_families_carry_gradients() {
        let x = batch(3, 8, 8).set_requires_grad(true);
        for name in ["hue:0.4", "gif:16", "salt_pepper:0.1", "saturation:5", "dropout:0.3", "jpeg:50", "crop:0.5"] {
            let spec: DistortionSpec = name.parse().unwrap();
            let y = apply_tensor(&spec, &x, &x.detach(), &mut seeded_rng(1)).unwrap();
            let g = Tensor::run_backward(&[y.sum(Kind::Float)], &[&x], false, false).remove(0);
            assert!(tensor_util::scalar(&g.abs().sum(Kind::Float)) > 0.0, "{name}");
        }
    }

    #[test]
    fn dropout_mixes_cover() {
        let enc = Tensor::ones([1, 3, 100, 100], (Kind::Float, tch::Device::Cpu));
        let cov = Tensor::zeros([1, 3, 100, 100], (Kind::Float, tch::Device::Cpu));
        let spec: DistortionSpec = "dropout:0.3".parse().unwrap();
        let y = apply_tensor(&spec, &enc, &cov, &mut seeded_rng(4)).unwrap();
        let frac = 1.0 - tensor_util::scalar(&y.mean(Kind::Float));
        assert!((frac - 0.3).abs() < 0.02, "{frac}");
    }
}
