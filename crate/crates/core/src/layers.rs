//! Layer building blocks with host-seeded initialization.

use rand::Rng;
use tch::nn::{self, ModuleT};
use tch::{Kind, Tensor};

use crate::tensor_util;

/// Batch-norm momentum in libtorch convention; running averages keep 99% of
/// their previous value per update.
pub const BN_MOMENTUM: f64 = 0.01;

/// 2-D convolution whose weights are drawn from a host RNG with PyTorch's
/// default bound `1/sqrt(fan_in)`.
#[derive(Debug)]
pub struct Conv {
    pub ws: Tensor,
    pub bs: Tensor,
    pub stride: i64,
    pub padding: i64,
}

impl Conv {
    pub fn new<R: Rng + ?Sized>(
        p: &nn::Path,
        c_in: i64,
        c_out: i64,
        ksize: i64,
        stride: i64,
        padding: i64,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / ((c_in * ksize * ksize) as f64).sqrt();
        let ws = p.var_copy("weight", &tensor_util::uniform_range(rng, &[c_out, c_in, ksize, ksize], -bound, bound));
        let bs = p.var_copy("bias", &tensor_util::uniform_range(rng, &[c_out], -bound, bound));
        Self { ws, bs, stride, padding }
    }

    pub fn forward_with(&self, xs: &Tensor, ws: &Tensor) -> Tensor {
        xs.conv2d(ws, Some(&self.bs), [self.stride; 2], [self.padding; 2], [1, 1], 1)
    }
}

impl nn::Module for Conv {
    fn forward(&self, xs: &Tensor) -> Tensor {
        self.forward_with(xs, &self.ws)
    }
}

pub fn linear<R: Rng + ?Sized>(p: &nn::Path, d_in: i64, d_out: i64, rng: &mut R) -> nn::Linear {
    let bound = 1.0 / (d_in as f64).sqrt();
    nn::Linear {
        ws: p.var_copy("weight", &tensor_util::uniform_range(rng, &[d_out, d_in], -bound, bound)),
        bs: Some(p.var_copy("bias", &tensor_util::uniform_range(rng, &[d_out], -bound, bound))),
    }
}

pub fn batch_norm(p: &nn::Path, channels: i64) -> nn::BatchNorm {
    let cfg = nn::BatchNormConfig {
        momentum: BN_MOMENTUM,
        ws_init: nn::Init::Const(1.0),
        bs_init: nn::Init::Const(0.0),
        ..Default::default()
    };
    nn::batch_norm2d(p, channels, cfg)
}

/// 3×3 convolution, batch norm, ReLU.
#[derive(Debug)]
pub struct ConvBnRelu {
    conv: Conv,
    bn: nn::BatchNorm,
}

impl ConvBnRelu {
    pub fn new<R: Rng + ?Sized>(p: &nn::Path, c_in: i64, c_out: i64, stride: i64, padding: i64, rng: &mut R) -> Self {
        Self {
            conv: Conv::new(&(p / "conv"), c_in, c_out, 3, stride, padding, rng),
            bn: batch_norm(&(p / "bn"), c_out),
        }
    }
}

impl ModuleT for ConvBnRelu {
    fn forward_t(&self, xs: &Tensor, train: bool) -> Tensor {
        use nn::Module;
        self.bn.forward_t(&self.conv.forward(xs), train).relu()
    }
}

/// Power-iteration state for spectral normalization of one weight.
///
/// The left singular vector estimate `u` lives in the var store as a
/// non-trainable buffer so it is checkpointed with the weights.
#[derive(Debug)]
pub struct SpectralState {
    u: Tensor,
}

impl SpectralState {
    pub fn new<R: Rng + ?Sized>(p: &nn::Path, rows: i64, rng: &mut R) -> Self {
        let init = tensor_util::normal(rng, &[rows], 1.0);
        let init = &init / init.norm().clamp_min(1e-12);
        let u = p.zeros_no_train("sn_u", &[rows]);
        tch::no_grad(|| {
            let mut u = u.shallow_clone();
            u.copy_(&init);
        });
        Self { u }
    }

    /// Returns `weight / sigma`, where `sigma` estimates the largest singular
    /// value of the weight reshaped to `[out, -1]`. In training mode one power
    /// iteration refines the stored vector first.
    pub fn normalize(&self, weight: &Tensor, train: bool) -> Tensor {
        let rows = weight.size()[0];
        let mat = weight.view([rows, -1]);
        let (u, v) = tch::no_grad(|| {
            let mat = mat.detach();
            let mut u = self.u.to_kind(mat.kind());
            if train {
                let v = l2_normalize(&mat.tr().mv(&u));
                u = l2_normalize(&mat.mv(&v));
                let mut stored = self.u.shallow_clone();
                stored.copy_(&u);
            }
            let v = l2_normalize(&mat.tr().mv(&u));
            (u, v)
        });
        let sigma = u.dot(&mat.mv(&v));
        weight / sigma
    }

    pub fn u(&self) -> &Tensor {
        &self.u
    }
}

fn l2_normalize(t: &Tensor) -> Tensor {
    t / t.norm().clamp_min(1e-12)
}

/// Spectrally normalized 3×3 convolution + batch norm + ReLU.
#[derive(Debug)]
pub struct SnConvBnRelu {
    conv: Conv,
    sn: SpectralState,
    bn: nn::BatchNorm,
}

impl SnConvBnRelu {
    pub fn new<R: Rng + ?Sized>(p: &nn::Path, c_in: i64, c_out: i64, rng: &mut R) -> Self {
        let conv = Conv::new(&(p / "conv"), c_in, c_out, 3, 1, 1, rng);
        let sn = SpectralState::new(&(p / "conv"), c_out, rng);
        Self { conv, sn, bn: batch_norm(&(p / "bn"), c_out) }
    }

    pub fn normalized_weight(&self, train: bool) -> Tensor {
        self.sn.normalize(&self.conv.ws, train)
    }
}

impl ModuleT for SnConvBnRelu {
    fn forward_t(&self, xs: &Tensor, train: bool) -> Tensor {
        let w = self.normalized_weight(train);
        self.bn.forward_t(&self.conv.forward_with(xs, &w), train).relu()
    }
}

/// Spectrally normalized fully connected layer.
#[derive(Debug)]
pub struct SnLinear {
    lin: nn::Linear,
    sn: SpectralState,
}

impl SnLinear {
    pub fn new<R: Rng + ?Sized>(p: &nn::Path, d_in: i64, d_out: i64, rng: &mut R) -> Self {
        let lin = linear(p, d_in, d_out, rng);
        let sn = SpectralState::new(p, d_out, rng);
        Self { lin, sn }
    }

    pub fn normalized_weight(&self, train: bool) -> Tensor {
        self.sn.normalize(&self.lin.ws, train)
    }
}

impl ModuleT for SnLinear {
    fn forward_t(&self, xs: &Tensor, train: bool) -> Tensor {
        let w = self.normalized_weight(train);
        xs.linear(&w, self.lin.bs.as_ref())
    }
}

/// Largest singular value of `weight` viewed as `[out, -1]`, estimated with
/// `iters` fresh power iterations from a fixed start vector.
pub fn spectral_norm_estimate(weight: &Tensor, iters: usize) -> f64 {
    tch::no_grad(|| {
        let mat = weight.detach().to_kind(Kind::Double);
        let mat = mat.view([mat.size()[0], -1]);
        let mut v = l2_normalize(&Tensor::ones([mat.size()[1]], (Kind::Double, mat.device())));
        for _ in 0..iters {
            let u = l2_normalize(&mat.mv(&v));
            v = l2_normalize(&mat.tr().mv(&u));
        }
        mat.mv(&v).norm().double_value(&[])
    })
}
