//! Learned attack network and the FGSM baseline.
//!
//! The attack network is a small CNN that maps an encoded image to an
//! adversarial image. It is trained to maximize the watermark decoder's
//! message error while paying an L2 penalty for moving away from its input.

use rand::Rng;
use serde::{Deserialize, Serialize};
use tch::nn::{self, Module};
use tch::{Device, Tensor};

use crate::error::{ensure, Error, Result};
use crate::image_plane::ImagePlane;
use crate::layers::Conv;
use crate::nets::Decoder;
use crate::tensor_util::mse;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    /// `I_adv = CNN(I)`.
    Conv,
    /// `I_adv = I + CNN(I)`.
    Residual,
    /// `I_adv = I + ε·tanh(CNN(I))`.
    Capped,
    /// One signed gradient step on the decoder's message loss.
    Fgsm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// Channel counts from the output backwards: `[3, 16]` is
    /// `Conv₃ ∘ LeakyReLU ∘ Conv₁₆`, `[3, 16, 32]` adds a 32-channel layer
    /// in front.
    #[serde(default = "default_widths")]
    pub widths: Vec<usize>,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default = "default_slope")]
    pub leaky_slope: f64,
}

fn default_widths() -> Vec<usize> {
    vec![3, 16]
}

fn default_slope() -> f64 {
    0.2
}

impl Default for AttackSpec {
    fn default() -> Self {
        Self { kind: AttackKind::Conv, widths: default_widths(), epsilon: None, leaky_slope: default_slope() }
    }
}

impl AttackSpec {
    pub fn capped(epsilon: f64) -> Self {
        Self { kind: AttackKind::Capped, epsilon: Some(epsilon), ..Self::default() }
    }

    pub fn fgsm(epsilon: f64) -> Self {
        Self { kind: AttackKind::Fgsm, epsilon: Some(epsilon), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let needs_eps = matches!(self.kind, AttackKind::Capped | AttackKind::Fgsm);
        match (needs_eps, self.epsilon) {
            (true, None) => return Err(Error::Config(format!("{:?} attack requires epsilon", self.kind))),
            (false, Some(_)) => return Err(Error::Config(format!("{:?} attack takes no epsilon", self.kind))),
            (true, Some(e)) if !(e > 0.0 && e.is_finite()) => {
                return Err(Error::Config(format!("epsilon must be positive, got {e}")))
            }
            _ => {}
        }
        if !(0.0..=1.0).contains(&self.leaky_slope) {
            return Err(Error::Config(format!("leaky slope {} outside [0,1]", self.leaky_slope)));
        }
        if self.kind != AttackKind::Fgsm && (self.widths.len() < 2 || self.widths[0] != 3 || self.widths.contains(&0)) {
            return Err(Error::Config(format!(
                "attack widths must start with 3 output channels and have at least one hidden layer, got {:?}",
                self.widths
            )));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct AttackNet {
    pub vs: nn::VarStore,
    spec: AttackSpec,
    convs: Vec<Conv>,
}

impl AttackNet {
    pub fn new<R: Rng + ?Sized>(spec: &AttackSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        ensure(spec.kind != AttackKind::Fgsm, || "fgsm has no network; use fgsm_attack".into())?;
        let vs = nn::VarStore::new(Device::Cpu);
        let root = vs.root();
        let mut chans: Vec<i64> = spec.widths.iter().rev().map(|&w| w as i64).collect();
        chans.insert(0, 3);
        let convs = chans
            .windows(2)
            .enumerate()
            .map(|(i, w)| Conv::new(&(&root / format!("conv{i}")), w[0], w[1], 3, 1, 1, rng))
            .collect();
        Ok(Self { vs, spec: spec.clone(), convs })
    }

    pub fn spec(&self) -> &AttackSpec {
        &self.spec
    }

    /// Convolutions in application order; the last one produces 3 channels.
    pub fn convs(&self) -> &[Conv] {
        &self.convs
    }

    fn cnn(&self, xs: &Tensor) -> Tensor {
        let last = self.convs.len() - 1;
        let mut h = xs.shallow_clone();
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(&h);
            if i < last {
                h = leaky_relu(&h, self.spec.leaky_slope);
            }
        }
        h
    }

    /// Attack output before clipping to the pixel range.
    pub fn forward_unclipped(&self, img: &Tensor) -> Tensor {
        match self.spec.kind {
            AttackKind::Conv => self.cnn(img),
            AttackKind::Residual => img + self.cnn(img),
            AttackKind::Capped => img + self.cnn(img).tanh() * self.spec.epsilon.unwrap_or(0.0),
            AttackKind::Fgsm => unreachable!("rejected in AttackNet::new"),
        }
    }

    pub fn forward(&self, img: &Tensor) -> Tensor {
        self.forward_unclipped(img).clamp(0.0, 1.0)
    }

    pub fn attack_image(&self, img: &ImagePlane) -> Result<ImagePlane> {
        let out = tch::no_grad(|| self.forward(&img.to_tensor().unsqueeze(0)));
        ImagePlane::from_tensor(&out)
    }
}

/// Leaky ReLU for slopes in [0, 1].
fn leaky_relu(xs: &Tensor, slope: f64) -> Tensor {
    xs.maximum(&(xs * slope))
}

/// `clip(I + ε·sign(∇_I mean((F_dec(I) − X')²)))` with the decoder in
/// inference mode. Only the image gradient is computed.
pub fn fgsm_attack(decoder: &Decoder, encoded: &Tensor, target: &Tensor, epsilon: f64) -> Result<Tensor> {
    ensure(epsilon >= 0.0 && epsilon.is_finite(), || format!("fgsm epsilon {epsilon} must be non-negative"))?;
    let input = encoded.detach().set_requires_grad(true);
    let loss = mse(&decoder.forward_t(&input, false), target);
    let grad = Tensor::run_backward(&[loss], &[&input], false, false).remove(0);
    Ok(tch::no_grad(|| (encoded.detach() + grad.sign() * epsilon).clamp(0.0, 1.0)))
}

/// `α₁·mean((I_adv − I_en)²) − α₂·mean((X'_adv − X')²)`; the attack
/// minimizes this.
pub fn adversarial_loss(
    adv: &Tensor,
    encoded: &Tensor,
    decoded_adv: &Tensor,
    target: &Tensor,
    alpha1: f64,
    alpha2: f64,
) -> Tensor {
    mse(adv, encoded) * alpha1 - mse(decoded_adv, target) * alpha2
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::seeded_rng;
    use crate::tensor_util::{scalar, uniform};

    #[test]
    fn spec_validation() {
        assert!(AttackSpec::default().validate().is_ok());
        assert!(AttackSpec::capped(0.03).validate().is_ok());
        assert!(AttackSpec { kind: AttackKind::Capped, ..Default::default() }.validate().is_err());
        assert!(AttackSpec { epsilon: Some(0.1), ..Default::default() }.validate().is_err());
        assert!(AttackSpec { widths: vec![4, 16], ..Default::default() }.validate().is_err());
        assert!(AttackSpec { widths: vec![3], ..Default::default() }.validate().is_err());
        assert!(AttackNet::new(&AttackSpec::fgsm(0.1), &mut seeded_rng(0)).is_err());
    }

    #[test]
    fn widths_map_to_layers() {
        let spec = AttackSpec { widths: vec![3, 16, 32], ..Default::default() };
        let net = AttackNet::new(&spec, &mut seeded_rng(0)).unwrap();
        let shapes: Vec<_> = net.convs().iter().map(|c| c.ws.size()).collect();
        assert_eq!(shapes, vec![vec![32, 3, 3, 3], vec![16, 32, 3, 3], vec![3, 16, 3, 3]]);
    }

    #[test]
    fn residual_with_zero_final_layer_is_identity() {
        let spec = AttackSpec { kind: AttackKind::Residual, ..Default::default() };
        let net = AttackNet::new(&spec, &mut seeded_rng(1)).unwrap();
        tch::no_grad(|| {
            let last = net.convs().last().unwrap();
            let _ = last.ws.shallow_clone().zero_();
            let _ = last.bs.shallow_clone().zero_();
        });
        let img = uniform(&mut seeded_rng(2), &[2, 3, 12, 12]);
        assert!(net.forward(&img).equal(&img));
    }

    #[test]
    fn zero_weights_give_constant_clipped_bias() {
        let net = AttackNet::new(&AttackSpec::default(), &mut seeded_rng(1)).unwrap();
        tch::no_grad(|| {
            for c in net.convs() {
                let _ = c.ws.shallow_clone().zero_();
            }
            net.convs()[1].bs.shallow_clone().copy_(&Tensor::from_slice(&[0.25f32, -0.5, 1.5]));
        });
        let out = net.forward(&uniform(&mut seeded_rng(3), &[1, 3, 9, 9]));
        for (c, want) in [0.25, 0.0, 1.0].into_iter().enumerate() {
            let ch = out.get(0).get(c as i64);
            assert_eq!(scalar(&ch.min()), want);
            assert_eq!(scalar(&ch.max()), want);
        }
    }

    #[test]
    fn adversarial_loss_arithmetic() {
        let img = Tensor::zeros([1, 3, 10, 10], (tch::Kind::Float, Device::Cpu));
        let adv = &img + 0.1;
        let target = Tensor::ones([1, 8], (tch::Kind::Float, Device::Cpu));
        let decoded = &target - 0.5;
        let loss = scalar(&adversarial_loss(&adv, &img, &decoded, &target, 15.0, 1.0));
        assert!((loss - (-0.10)).abs() < 1e-6, "{loss}");
        assert!(scalar(&adversarial_loss(&img, &img, &target, &target, 15.0, 1.0)).abs() < 1e-12);
    }
}
