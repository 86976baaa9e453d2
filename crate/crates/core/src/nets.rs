//! Watermark encoder, decoder and GAN discriminator.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tch::nn::{self, Module, ModuleT};
use tch::{Device, Tensor};

use crate::checkpoint::{self, Checkpoint};
use crate::error::{ensure, Error, Result};
use crate::image_plane::{ImagePlane, MIN_SIDE};
use crate::layers::{self, Conv, ConvBnRelu, SnConvBnRelu, SnLinear};
use crate::message::{BitMessage, SoftMessage};
use crate::metrics::derive_seed;
use crate::metrics::seeded_rng;
use crate::tensor_util;

pub const CHECKPOINT_KIND: &str = "watermark";

/// Bumped whenever a layer layout changes, so old checkpoints are refused.
const ARCH_REVISION: &str = "hidden-v1";

/// Reflect padding applied to the cover before the valid convolutions of the
/// encoder; six 3×3 valid convolutions consume it exactly.
const ENCODER_PAD: i64 = 6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub message_len: usize,
    pub encoder_channels: usize,
    pub decoder_channels: usize,
    pub discriminator_channels: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self { message_len: 120, encoder_channels: 64, decoder_channels: 64, discriminator_channels: 64 }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.message_len == 0
            || self.encoder_channels == 0
            || self.decoder_channels == 0
            || self.discriminator_channels == 0
        {
            return Err(Error::Config(format!("network sizes must be positive: {self:?}")));
        }
        Ok(())
    }

    /// Hex digest identifying the layer layout and sizes.
    pub fn arch_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(ARCH_REVISION.as_bytes());
        h.update(serde_json::to_vec(self).expect("config serializes"));
        hex::encode(&h.finalize()[..8])
    }
}

fn check_side(h: i64, w: i64) -> Result<()> {
    ensure(h >= MIN_SIDE as i64 && w >= MIN_SIDE as i64, || {
        format!("image {h}x{w} is smaller than {MIN_SIDE}x{MIN_SIDE}")
    })
}

#[derive(Debug)]
pub struct Encoder {
    pub vs: nn::VarStore,
    message_len: i64,
    features: Vec<ConvBnRelu>,
    after_concat: ConvBnRelu,
    out: Conv,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(cfg: &NetConfig, rng: &mut R) -> Self {
        let vs = nn::VarStore::new(Device::Cpu);
        let root = vs.root();
        let c = cfg.encoder_channels as i64;
        let l = cfg.message_len as i64;
        let features = (0..4)
            .map(|i| ConvBnRelu::new(&(&root / format!("block{i}")), if i == 0 { 3 } else { c }, c, 1, 0, rng))
            .collect();
        let after_concat = ConvBnRelu::new(&(&root / "block4"), c + l + 3, c, 1, 0, rng);
        let out = Conv::new(&(&root / "out"), c, 3, 3, 1, 0, rng);
        Self { vs, message_len: l, features, after_concat, out }
    }

    /// `[B,3,H,W]` covers and `[B,L]` messages to `[B,3,H,W]` encoded images.
    pub fn forward_t(&self, cover: &Tensor, msg: &Tensor, train: bool) -> Tensor {
        let padded = cover.reflection_pad2d([ENCODER_PAD; 4]);
        let mut f = padded.shallow_clone();
        for block in &self.features {
            f = block.forward_t(&f, train);
        }
        let (b, h, w) = (f.size()[0], f.size()[2], f.size()[3]);
        let margin = (padded.size()[2] - h) / 2;
        let cover_view = padded.narrow(2, margin, h).narrow(3, margin, w);
        let replicated = msg.view([b, self.message_len, 1, 1]).expand([b, self.message_len, h, w], false);
        let joined = Tensor::cat(&[f, replicated, cover_view], 1);
        self.out.forward(&self.after_concat.forward_t(&joined, train)).clamp(0.0, 1.0)
    }

    pub fn encode_image(&self, cover: &ImagePlane, msg: &BitMessage) -> Result<ImagePlane> {
        ensure(msg.len() as i64 == self.message_len, || {
            format!("encoder expects a {}-bit message, got {}", self.message_len, msg.len())
        })?;
        let out = tch::no_grad(|| {
            self.forward_t(&cover.to_tensor().unsqueeze(0), &tensor_util::messages_to_tensor(&[msg]), false)
        });
        ImagePlane::from_tensor(&out)
    }
}

#[derive(Debug)]
pub struct Decoder {
    pub vs: nn::VarStore,
    message_len: i64,
    blocks: Vec<ConvBnRelu>,
    head: nn::Linear,
}

impl Decoder {
    pub fn new<R: Rng + ?Sized>(cfg: &NetConfig, rng: &mut R) -> Self {
        let vs = nn::VarStore::new(Device::Cpu);
        let root = vs.root();
        let c = cfg.decoder_channels as i64;
        let l = cfg.message_len as i64;
        // The last block is as wide as the message so that the pooled
        // feature has one channel per bit.
        let blocks = (0..7)
            .map(|i| {
                let c_in = if i == 0 { 3 } else { c };
                let c_out = if i == 6 { l } else { c };
                let stride = if i >= 5 { 2 } else { 1 };
                ConvBnRelu::new(&(&root / format!("block{i}")), c_in, c_out, stride, 1, rng)
            })
            .collect();
        let head = layers::linear(&(&root / "head"), l, l, rng);
        Self { vs, message_len: l, blocks, head }
    }

    /// `[B,3,H,W]` images of any size ≥ 8×8 to `[B,L]` soft messages.
    pub fn forward_t(&self, img: &Tensor, train: bool) -> Tensor {
        let mut h = img.shallow_clone();
        for block in &self.blocks {
            h = block.forward_t(&h, train);
        }
        self.head.forward(&h.mean_dim(&[2i64, 3][..], false, h.kind()))
    }

    pub fn decode_message(&self, img: &ImagePlane) -> Result<SoftMessage> {
        check_side(img.height() as i64, img.width() as i64)?;
        let out = tch::no_grad(|| self.forward_t(&img.to_tensor().unsqueeze(0), false));
        Ok(SoftMessage::new(tensor_util::rows(&out)?.remove(0)))
    }

    pub fn message_len(&self) -> usize {
        self.message_len as usize
    }
}

/// Spectrally normalized critic producing one realness logit per image.
#[derive(Debug)]
pub struct Discriminator {
    pub vs: nn::VarStore,
    blocks: Vec<SnConvBnRelu>,
    head: SnLinear,
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(cfg: &NetConfig, rng: &mut R) -> Self {
        let vs = nn::VarStore::new(Device::Cpu);
        let root = vs.root();
        let c = cfg.discriminator_channels as i64;
        let blocks = (0..3)
            .map(|i| SnConvBnRelu::new(&(&root / format!("block{i}")), if i == 0 { 3 } else { c }, c, rng))
            .collect();
        let head = SnLinear::new(&(&root / "head"), c, 1, rng);
        Self { vs, blocks, head }
    }

    /// `[B,3,H,W]` to `[B]` logits. Training mode advances the power
    /// iteration of every normalized weight once.
    pub fn forward_t(&self, img: &Tensor, train: bool) -> Tensor {
        let mut h = img.shallow_clone();
        for block in &self.blocks {
            h = block.forward_t(&h, train);
        }
        self.head.forward_t(&h.mean_dim(&[2i64, 3][..], false, h.kind()), train).squeeze_dim(1)
    }

    pub fn discriminate(&self, img: &ImagePlane) -> f64 {
        tch::no_grad(|| tensor_util::scalar(&self.forward_t(&img.to_tensor().unsqueeze(0), false).squeeze()))
    }

    /// Normalized weight of every layer, as used by the current forward pass.
    pub fn normalized_weights(&self) -> Vec<Tensor> {
        tch::no_grad(|| {
            let mut ws: Vec<Tensor> = self.blocks.iter().map(|b| b.normalized_weight(false)).collect();
            ws.push(self.head.normalized_weight(false));
            ws
        })
    }
}

/// Encoder, decoder and discriminator sharing one configuration.
#[derive(Debug)]
pub struct WatermarkModel {
    pub cfg: NetConfig,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub discriminator: Discriminator,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SavedMeta {
    nets: NetConfig,
    arch_hash: String,
    #[serde(default)]
    extra: serde_json::Value,
}

impl WatermarkModel {
    /// Each network draws from its own stream derived from `seed`.
    pub fn new(cfg: &NetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg: cfg.clone(),
            encoder: Encoder::new(cfg, &mut seeded_rng(derive_seed(seed, 1))),
            decoder: Decoder::new(cfg, &mut seeded_rng(derive_seed(seed, 2))),
            discriminator: Discriminator::new(cfg, &mut seeded_rng(derive_seed(seed, 3))),
        })
    }

    pub fn message_len(&self) -> usize {
        self.cfg.message_len
    }

    /// Saves the three networks plus any extra var stores (e.g. an attack
    /// network) and free-form metadata.
    pub fn save(
        &self,
        path: impl AsRef<Path>,
        step: u64,
        extra: serde_json::Value,
        extra_sections: &[(&str, &nn::VarStore)],
    ) -> Result<()> {
        let meta = SavedMeta { nets: self.cfg.clone(), arch_hash: self.cfg.arch_hash(), extra };
        let mut sections: Vec<(&str, &nn::VarStore)> = vec![
            ("encoder", &self.encoder.vs),
            ("decoder", &self.decoder.vs),
            ("discriminator", &self.discriminator.vs),
        ];
        sections.extend_from_slice(extra_sections);
        checkpoint::save(path, CHECKPOINT_KIND, step, serde_json::to_value(meta)?, &sections)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Checkpoint)> {
        let path = path.as_ref();
        let ck = Checkpoint::load(path)?;
        ck.expect_kind(CHECKPOINT_KIND, path)?;
        let bad = |reason: String| Error::Checkpoint { path: path.to_path_buf(), reason };
        let meta: SavedMeta =
            serde_json::from_value(ck.header.config.clone()).map_err(|e| bad(format!("bad metadata: {e}")))?;
        if meta.arch_hash != meta.nets.arch_hash() {
            return Err(bad(format!(
                "architecture hash {} does not match this build ({})",
                meta.arch_hash,
                meta.nets.arch_hash()
            )));
        }
        let mut model = Self::new(&meta.nets, 0)?;
        ck.restore("encoder", &mut model.encoder.vs)?;
        ck.restore("decoder", &mut model.decoder.vs)?;
        ck.restore("discriminator", &mut model.discriminator.vs)?;
        Ok((model, ck))
    }

    /// Metadata stored by [`WatermarkModel::save`] under `extra`.
    pub fn extra_metadata(ck: &Checkpoint) -> serde_json::Value {
        ck.header.config.get("extra").cloned().unwrap_or(serde_json::Value::Null)
    }
}
