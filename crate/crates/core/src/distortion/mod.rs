//! Image distortions used for evaluation and for the baseline trainers.
//!
//! [`apply`] works on [`ImagePlane`]s and uses a real JPEG codec;
//! [`apply_tensor`] works on training batches and keeps every family usable
//! inside a computation graph (analytically where possible, through a
//! straight-through estimator otherwise).

mod color;
mod jpeg;
mod ops;
mod train;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::image_plane::ImagePlane;

pub use color::{hsv_to_rgb, rgb_to_hsv, scale_saturation, shift_hue};
pub use jpeg::{jpeg_diff, jpeg_diff_gradcheck, jpeg_real, quant_tables};
pub use ops::{
    crop_side, dropout, gaussian_blur, gaussian_kernel, gaussian_noise, median_cut, random_crop, resize_width_bilinear,
    salt_pepper,
};
pub use train::apply_tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Identity,
    Jpeg,
    JpegDiff,
    Crop,
    Dropout,
    GaussianBlur,
    GaussianNoise,
    SaltPepper,
    Hue,
    Saturation,
    Gif,
    ResizeWidth,
}

impl Family {
    pub const ALL: [Family; 12] = [
        Family::Identity,
        Family::Jpeg,
        Family::JpegDiff,
        Family::Crop,
        Family::Dropout,
        Family::GaussianBlur,
        Family::GaussianNoise,
        Family::SaltPepper,
        Family::Hue,
        Family::Saturation,
        Family::Gif,
        Family::ResizeWidth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Identity => "identity",
            Family::Jpeg => "jpeg",
            Family::JpegDiff => "jpeg_diff",
            Family::Crop => "crop",
            Family::Dropout => "dropout",
            Family::GaussianBlur => "gaussian_blur",
            Family::GaussianNoise => "gaussian_noise",
            Family::SaltPepper => "salt_pepper",
            Family::Hue => "hue",
            Family::Saturation => "saturation",
            Family::Gif => "gif",
            Family::ResizeWidth => "resize_width",
        }
    }

    fn integral(self) -> bool {
        matches!(self, Family::Jpeg | Family::JpegDiff | Family::Gif)
    }

    /// Strength at which the family leaves its input unchanged, if any.
    pub fn neutral_strength(self) -> Option<f64> {
        match self {
            Family::Identity | Family::GaussianBlur | Family::GaussianNoise => Some(0.0),
            Family::Dropout | Family::SaltPepper | Family::Hue => Some(0.0),
            Family::Saturation | Family::ResizeWidth | Family::Crop => Some(1.0),
            Family::Jpeg | Family::JpegDiff | Family::Gif => None,
        }
    }

    fn check_domain(self, s: f64) -> std::result::Result<(), &'static str> {
        let ok = s.is_finite()
            && match self {
                Family::Identity => s == 0.0,
                Family::Jpeg | Family::JpegDiff => (1.0..=100.0).contains(&s) && s.fract() == 0.0,
                Family::Crop | Family::ResizeWidth => s > 0.0 && s <= 1.0,
                Family::Dropout | Family::SaltPepper => (0.0..=1.0).contains(&s),
                Family::GaussianBlur | Family::GaussianNoise | Family::Saturation => s >= 0.0,
                Family::Hue => (0.0..1.0).contains(&s),
                Family::Gif => (1.0..=256.0).contains(&s) && s.fract() == 0.0,
            };
        if ok {
            return Ok(());
        }
        Err(match self {
            Family::Identity => "identity takes no strength",
            Family::Jpeg | Family::JpegDiff => "quality must be an integer in [1, 100]",
            Family::Crop | Family::ResizeWidth => "fraction must be in (0, 1]",
            Family::Dropout | Family::SaltPepper => "probability must be in [0, 1]",
            Family::GaussianBlur | Family::GaussianNoise => "sigma must be non-negative",
            Family::Saturation => "factor must be non-negative",
            Family::Hue => "hue shift must be in [0, 1)",
            Family::Gif => "palette size must be an integer in [1, 256]",
        })
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::contract(format!("unknown distortion family `{s}`")))
    }
}

/// A distortion family with its strength, written `family:strength`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistortionSpec {
    family: Family,
    strength: f64,
}

impl DistortionSpec {
    pub fn new(family: Family, strength: f64) -> Result<Self> {
        family.check_domain(strength).map_err(|why| Error::contract(format!("{}:{strength}: {why}", family.name())))?;
        Ok(Self { family, strength })
    }

    pub const fn identity() -> Self {
        Self { family: Family::Identity, strength: 0.0 }
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn strength(&self) -> f64 {
        self.strength
    }

    /// True when the spec provably returns its input.
    pub fn is_neutral(&self) -> bool {
        self.family.neutral_strength() == Some(self.strength)
    }
}

impl fmt::Display for DistortionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = self.family.name();
        if self.family == Family::Identity {
            return f.write_str(name);
        }
        if self.family.integral() {
            return write!(f, "{name}:{}", self.strength as i64);
        }
        let two = format!("{:.2}", self.strength);
        if two.parse::<f64>().ok() == Some(self.strength) {
            write!(f, "{name}:{two}")
        } else {
            write!(f, "{name}:{}", self.strength)
        }
    }
}

impl FromStr for DistortionSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s.split_once(':') {
            None if s == "identity" => Ok(Self::identity()),
            None => Err(Error::contract(format!("distortion `{s}` must be written family:strength"))),
            Some((family, strength)) => {
                let family: Family = family.parse()?;
                let strength: f64 = strength
                    .parse()
                    .map_err(|_| Error::contract(format!("distortion `{s}`: strength is not a number")))?;
                Self::new(family, strength)
            }
        }
    }
}

impl Serialize for DistortionSpec {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        ser.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DistortionSpec {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn specs(list: &[(Family, f64)]) -> Vec<DistortionSpec> {
    list.iter().map(|&(f, s)| DistortionSpec::new(f, s).expect("suite strengths are in domain")).collect()
}

/// Distortions seen by the combined baseline during training.
pub fn known_suite() -> Vec<DistortionSpec> {
    specs(&[
        (Family::Identity, 0.0),
        (Family::Jpeg, 50.0),
        (Family::Crop, 0.3),
        (Family::Dropout, 0.3),
        (Family::GaussianBlur, 1.0),
    ])
}

/// Held-out distortions, three strengths per family.
pub fn unknown_suite() -> Vec<DistortionSpec> {
    use Family::*;
    specs(&[
        (GaussianNoise, 0.06),
        (GaussianNoise, 0.08),
        (GaussianNoise, 0.10),
        (SaltPepper, 0.05),
        (SaltPepper, 0.10),
        (SaltPepper, 0.15),
        (Hue, 0.2),
        (Hue, 0.4),
        (Hue, 0.6),
        (Saturation, 5.0),
        (Saturation, 10.0),
        (Saturation, 15.0),
        (Gif, 64.0),
        (Gif, 32.0),
        (Gif, 16.0),
        (ResizeWidth, 0.9),
        (ResizeWidth, 0.7),
        (ResizeWidth, 0.5),
    ])
}

/// The four distortions of the model ablation comparison.
pub fn ablation_suite() -> Vec<DistortionSpec> {
    specs(&[(Family::Jpeg, 50.0), (Family::Crop, 0.09), (Family::GaussianBlur, 1.0), (Family::Dropout, 0.3)])
}

/// Known and unknown suites plus the small crop of the ablation suite.
pub fn full_suite() -> Vec<DistortionSpec> {
    let mut all = known_suite();
    all.extend(unknown_suite());
    all.push(DistortionSpec::new(Family::Crop, 0.09).expect("in domain"));
    all
}

/// Applies `spec` to an encoded image. `cover` is consulted only by dropout.
/// Crop and resize return a smaller image.
pub fn apply<R: Rng + ?Sized>(
    spec: &DistortionSpec,
    encoded: &ImagePlane,
    cover: &ImagePlane,
    rng: &mut R,
) -> Result<ImagePlane> {
    if encoded.dims() != cover.dims() {
        return Err(Error::contract(format!("encoded image is {:?} but cover is {:?}", encoded.dims(), cover.dims())));
    }
    if spec.is_neutral() {
        return Ok(encoded.clone());
    }
    let s = spec.strength;
    match spec.family {
        Family::Identity => Ok(encoded.clone()),
        Family::Jpeg => jpeg_real(encoded, s as u8),
        Family::JpegDiff => jpeg::jpeg_diff_plane(encoded, s),
        Family::Crop => ops::random_crop(encoded, s, rng),
        Family::Dropout => Ok(ops::dropout(encoded, cover, s, rng)),
        Family::GaussianBlur => Ok(ops::gaussian_blur(encoded, s)),
        Family::GaussianNoise => Ok(ops::gaussian_noise(encoded, s, rng)),
        Family::SaltPepper => Ok(ops::salt_pepper(encoded, s, rng)),
        Family::Hue => Ok(color::shift_hue(encoded, s)),
        Family::Saturation => Ok(color::scale_saturation(encoded, s)),
        Family::Gif => Ok(median_cut(encoded, s as usize)),
        Family::ResizeWidth => resize_width_bilinear(encoded, s),
    }
}
