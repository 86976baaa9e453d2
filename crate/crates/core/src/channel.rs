//! Learned channel codec for binary messages.
//!
//! The encoder expands a `D`-bit source message into an `N`-bit redundant
//! code; the decoder recovers the source from a corrupted (possibly soft)
//! code. Both are small MLPs trained end to end through a simulated binary
//! symmetric channel, with a straight-through Bernoulli binarization between
//! them.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use tch::nn::{self, Module, OptimizerConfig};
use tch::{Device, Kind, Tensor};

use crate::checkpoint::{self, Checkpoint};
use crate::error::{ensure, Error, Result};
use crate::layers;
use crate::message::{BitMessage, SoftMessage};
use crate::tensor_util;

pub const CHECKPOINT_KIND: &str = "channel";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub source_len: usize,
    pub code_len: usize,
    pub hidden_widths: Vec<usize>,
    pub train_noise_max: f64,
    pub train_steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            source_len: 30,
            code_len: 120,
            hidden_widths: vec![512, 512],
            train_noise_max: 0.3,
            train_steps: 10_000,
            learning_rate: 1e-3,
            batch_size: 256,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.source_len == 0 {
            return bad("source_len must be positive".into());
        }
        if self.code_len <= self.source_len {
            return bad(format!("code_len {} must exceed source_len {}", self.code_len, self.source_len));
        }
        if !(0.0..=0.5).contains(&self.train_noise_max) {
            return bad(format!("train_noise_max {} outside [0, 0.5]", self.train_noise_max));
        }
        if self.hidden_widths.contains(&0) {
            return bad("hidden widths must be positive".into());
        }
        if self.train_steps == 0 || self.batch_size == 0 {
            return bad("train_steps and batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        Ok(())
    }
}

/// Fully connected ReLU network with a linear output layer.
#[derive(Debug)]
struct Mlp {
    layers: Vec<nn::Linear>,
}

impl Mlp {
    fn new<R: Rng + ?Sized>(p: &nn::Path, d_in: usize, hidden: &[usize], d_out: usize, rng: &mut R) -> Self {
        let mut dims = vec![d_in as i64];
        dims.extend(hidden.iter().map(|&h| h as i64));
        dims.push(d_out as i64);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| layers::linear(&(p / format!("fc{i}")), w[0], w[1], rng))
            .collect();
        Self { layers }
    }
}

impl Module for Mlp {
    fn forward(&self, xs: &Tensor) -> Tensor {
        let last = self.layers.len() - 1;
        let mut h = xs.shallow_clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h);
            if i < last {
                h = h.relu();
            }
        }
        h
    }
}

/// Bits in {0,1} are presented to the networks as {-1,+1}.
fn signed(bits: &Tensor) -> Tensor {
    bits * 2.0 - 1.0
}

pub struct ChannelModel {
    cfg: ChannelConfig,
    vs: nn::VarStore,
    encoder: Mlp,
    decoder: Mlp,
}

impl std::fmt::Debug for ChannelModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChannelModel").field("cfg", &self.cfg).finish_non_exhaustive()
    }
}

impl ChannelModel {
    pub fn new<R: Rng + ?Sized>(cfg: &ChannelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let vs = nn::VarStore::new(Device::Cpu);
        let root = vs.root();
        let encoder = Mlp::new(&(&root / "encoder"), cfg.source_len, &cfg.hidden_widths, cfg.code_len, rng);
        let decoder = Mlp::new(&(&root / "decoder"), cfg.code_len, &cfg.hidden_widths, cfg.source_len, rng);
        Ok(Self { cfg: cfg.clone(), vs, encoder, decoder })
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.cfg
    }

    pub fn source_len(&self) -> usize {
        self.cfg.source_len
    }

    pub fn code_len(&self) -> usize {
        self.cfg.code_len
    }

    pub fn var_store(&self) -> &nn::VarStore {
        &self.vs
    }

    /// Encoder probabilities `P(code bit = 1)` for a `[B, D]` bit batch.
    pub fn encode_probs(&self, bits: &Tensor) -> Tensor {
        self.encoder.forward(&signed(bits)).sigmoid()
    }

    /// Inference-mode encoding of a `[B, D]` bit batch to `[B, N]` bits.
    pub fn encode_batch(&self, bits: &Tensor) -> Tensor {
        tch::no_grad(|| self.encode_probs(bits).ge(0.5).to_kind(Kind::Float))
    }

    /// Decoder logits for a `[B, N]` batch of (soft) code bits in [0,1].
    pub fn decode_logits(&self, code: &Tensor) -> Tensor {
        self.decoder.forward(&signed(&code.clamp(0.0, 1.0)))
    }

    /// Inference-mode decoding of a `[B, N]` batch to `[B, D]` bits.
    pub fn decode_batch(&self, code: &Tensor) -> Tensor {
        tch::no_grad(|| self.decode_logits(code).ge(0.0).to_kind(Kind::Float))
    }

    pub fn encode(&self, x: &BitMessage) -> Result<BitMessage> {
        ensure(x.len() == self.cfg.source_len, || {
            format!("channel encoder expects {} bits, got {}", self.cfg.source_len, x.len())
        })?;
        let out = self.encode_batch(&tensor_util::messages_to_tensor(&[x]));
        bits_from_row(&out)
    }

    /// Decodes a hard code word.
    pub fn decode(&self, code: &BitMessage) -> Result<BitMessage> {
        self.decode_soft(&SoftMessage::from(code))
    }

    /// Decodes a real-valued code estimate; values are clamped to [0,1] so the
    /// watermark decoder's raw output can be passed directly.
    pub fn decode_soft(&self, code: &SoftMessage) -> Result<BitMessage> {
        ensure(code.len() == self.cfg.code_len, || {
            format!("channel decoder expects {} bits, got {}", self.cfg.code_len, code.len())
        })?;
        let t = Tensor::from_slice(code.values()).view([1, code.len() as i64]);
        bits_from_row(&self.decode_batch(&t))
    }

    pub fn save(&self, path: impl AsRef<Path>, step: u64) -> Result<()> {
        checkpoint::save(path, CHECKPOINT_KIND, step, serde_json::to_value(&self.cfg)?, &[("channel", &self.vs)])
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let ck = Checkpoint::load(path)?;
        ck.expect_kind(CHECKPOINT_KIND, path)?;
        let cfg: ChannelConfig = serde_json::from_value(ck.header.config.clone())
            .map_err(|e| Error::Checkpoint { path: path.to_path_buf(), reason: format!("bad channel config: {e}") })?;
        let mut model = Self::new(&cfg, &mut crate::metrics::seeded_rng(0))?;
        ck.restore("channel", &mut model.vs)?;
        Ok(model)
    }
}

fn bits_from_row(t: &Tensor) -> Result<BitMessage> {
    let row = tensor_util::rows(t)?.remove(0);
    BitMessage::new(row.into_iter().map(|v| u8::from(v >= 0.5)).collect())
}

/// Flips each bit independently with probability `p`.
pub fn bsc_corrupt<R: Rng + ?Sized>(msg: &BitMessage, p: f64, rng: &mut R) -> Result<BitMessage> {
    ensure((0.0..=1.0).contains(&p), || format!("flip probability {p} outside [0,1]"))?;
    let bits = msg.bits().iter().map(|&b| if rng.gen::<f64>() < p { 1 - b } else { b }).collect();
    BitMessage::new(bits)
}

/// Tensor form of [`bsc_corrupt`] for `[B, N]` batches of hard or
/// straight-through bits. `y + n - 2yn` is XOR on {0,1} and keeps gradients
/// flowing to `y`.
pub fn bsc_corrupt_tensor<R: Rng + ?Sized>(bits: &Tensor, p: f64, rng: &mut R) -> Tensor {
    let flips = tensor_util::bernoulli(rng, &bits.size(), p);
    bits + &flips - bits * &flips * 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStep {
    pub step: usize,
    pub noise: f64,
    pub loss: f64,
}

/// Trains a codec from scratch on uniformly random source messages.
///
/// Each batch draws one flip probability uniformly from
/// `[0, train_noise_max]`; the objective is per-bit binary cross-entropy of
/// the reconstructed source. `on_step` receives every step's metrics.
pub fn train_channel<R: Rng + ?Sized>(
    cfg: &ChannelConfig,
    rng: &mut R,
    mut on_step: impl FnMut(&ChannelStep),
) -> Result<ChannelModel> {
    let model = ChannelModel::new(cfg, rng)?;
    let mut opt = nn::Adam::default().build(&model.vs, cfg.learning_rate)?;
    let (b, d, n) = (cfg.batch_size as i64, cfg.source_len as i64, cfg.code_len as i64);
    for step in 0..cfg.train_steps {
        let x = tensor_util::random_bits(rng, b, d);
        let probs = model.encode_probs(&x);
        let hard = tensor_util::uniform(rng, &[b, n]).lt_tensor(&probs.detach()).to_kind(Kind::Float);
        let code = &hard + &probs - probs.detach();
        let noise = rng.gen::<f64>() * cfg.train_noise_max;
        let received = bsc_corrupt_tensor(&code, noise, rng);
        let logits = model.decoder.forward(&signed(&received));
        let loss = logits.binary_cross_entropy_with_logits::<Tensor>(&x, None, None, tch::Reduction::Mean);
        opt.backward_step(&loss);
        on_step(&ChannelStep { step, noise, loss: tensor_util::scalar(&loss) });
    }
    Ok(model)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub noise: f64,
    pub accuracy: f64,
}

/// Mean source-bit accuracy after a BSC of each strength in `noise_grid`,
/// over `trials` random messages per grid point.
pub fn robustness_curve<R: Rng + ?Sized>(
    model: &ChannelModel,
    noise_grid: &[f64],
    trials: usize,
    rng: &mut R,
) -> Result<Vec<CurvePoint>> {
    ensure(!noise_grid.is_empty(), || "robustness curve needs a non-empty noise grid".into())?;
    ensure(trials > 0, || "robustness curve needs at least one trial".into())?;
    for &p in noise_grid {
        ensure((0.0..=0.5).contains(&p), || format!("noise {p} outside [0, 0.5]"))?;
    }
    let d = model.source_len() as i64;
    noise_grid
        .iter()
        .map(|&noise| {
            let x = tensor_util::random_bits(rng, trials as i64, d);
            let code = bsc_corrupt_tensor(&model.encode_batch(&x), noise, rng);
            let decoded = model.decode_batch(&code);
            let accuracy = tensor_util::scalar(&decoded.eq_tensor(&x).to_kind(Kind::Double).mean(Kind::Double));
            Ok(CurvePoint { noise, accuracy })
        })
        .collect()
}

/// Writes a curve as CSV with columns `noise,accuracy,trials,N,D`.
pub fn write_curve_csv(
    out: &mut impl Write,
    points: &[CurvePoint],
    trials: usize,
    code_len: usize,
    source_len: usize,
) -> std::io::Result<()> {
    writeln!(out, "noise,accuracy,trials,N,D")?;
    for p in points {
        writeln!(out, "{},{},{},{},{}", p.noise, p.accuracy, trials, code_len, source_len)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::seeded_rng;

    fn small_cfg() -> ChannelConfig {
        ChannelConfig {
            source_len: 6,
            code_len: 12,
            hidden_widths: vec![32],
            train_steps: 10,
            batch_size: 8,
            ..Default::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(ChannelConfig::default().validate().is_ok());
        let mut c = ChannelConfig { code_len: 30, ..Default::default() };
        assert!(c.validate().is_err());
        c = ChannelConfig { train_noise_max: 0.6, ..Default::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn bsc_edge_probabilities() {
        let mut rng = seeded_rng(1);
        let m = BitMessage::random(120, &mut rng);
        assert_eq!(bsc_corrupt(&m, 0.0, &mut rng).unwrap(), m);
        assert_eq!(bsc_corrupt(&m, 1.0, &mut rng).unwrap(), m.complement());
        assert!(bsc_corrupt(&m, 1.5, &mut rng).is_err());
        assert!(bsc_corrupt(&m, -0.1, &mut rng).is_err());
    }

    #[test]
    fn bsc_tensor_is_xor() {
        let mut rng = seeded_rng(2);
        let bits = tensor_util::random_bits(&mut rng, 4, 16);
        assert!(bsc_corrupt_tensor(&bits, 1.0, &mut rng).equal(&(1.0 - &bits)));
        assert!(bsc_corrupt_tensor(&bits, 0.0, &mut rng).equal(&bits));
    }

    #[test]
    fn shapes_and_length_contracts() {
        let mut rng = seeded_rng(3);
        let model = ChannelModel::new(&small_cfg(), &mut rng).unwrap();
        let x = BitMessage::random(6, &mut rng);
        let code = model.encode(&x).unwrap();
        assert_eq!(code.len(), 12);
        assert_eq!(model.encode(&x).unwrap(), code);
        assert_eq!(model.decode(&code).unwrap().len(), 6);
        assert!(model.encode(&BitMessage::zeros(7)).is_err());
        assert!(model.decode_soft(&SoftMessage::new(vec![0.0; 11])).is_err());
        assert!(robustness_curve(&model, &[], 10, &mut rng).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = seeded_rng(4);
        let model = train_channel(&small_cfg(), &mut rng, |_| {}).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        model.save(&path, 10).unwrap();
        let back = ChannelModel::load(&path).unwrap();
        assert_eq!(back.config(), model.config());
        assert_eq!(tensor_util::fingerprint(back.var_store()), tensor_util::fingerprint(model.var_store()));
    }

    #[test]
    fn curve_csv_layout() {
        let mut out = Vec::new();
        let pts = [CurvePoint { noise: 0.0, accuracy: 1.0 }, CurvePoint { noise: 0.1, accuracy: 0.97 }];
        write_curve_csv(&mut out, &pts, 3000, 120, 30).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().next().unwrap(), "noise,accuracy,trials,N,D");
        assert_eq!(text.lines().nth(2).unwrap(), "0.1,0.97,3000,120,30");
    }
}
