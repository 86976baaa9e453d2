//! Training losses and procedures for the watermark networks.
//!
//! Four modes share one step structure. The baselines (identity, specialized,
//! combined) pass the encoded batch through a fixed distortion before the
//! decoder. Adversarial mode alternates between `num_iter` updates of the
//! attack network (watermark networks frozen) and one update of the decoder
//! and encoder on the combined objective (attack frozen). The discriminator
//! is updated once per step on covers versus encoded images.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tch::nn::{self, OptimizerConfig};
use tch::{Kind, Tensor};

use crate::attack::{adversarial_loss, fgsm_attack, AttackKind, AttackNet, AttackSpec};
use crate::dataset::Dataset;
use crate::distortion::{self, DistortionSpec};
use crate::error::{ensure, Error, Result};
use crate::metrics::{derive_seed, seeded_rng};
use crate::nets::{Discriminator, NetConfig, WatermarkModel};
use crate::tensor_util::{self, mse, scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Identity,
    Specialized,
    Combined,
    Adversarial,
}

/// Loss weights. Field names follow the symbols of the objective:
/// `image_l2` = α₁ᴵ, `image_gan` = α₂ᴵ, `message` = αᴹ,
/// `adv_image` = α₁ᵃᵈᵛ, `adv_message` = α₂ᵃᵈᵛ, `adv_watermark` = α_Wᵃᵈᵛ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub image_l2: f64,
    pub image_gan: f64,
    pub message: f64,
    pub adv_image: f64,
    pub adv_message: f64,
    pub adv_watermark: f64,
}

impl LossWeights {
    pub const ADVERSARIAL: LossWeights = LossWeights {
        image_l2: 18.0,
        image_gan: 0.01,
        message: 0.3,
        adv_image: 15.0,
        adv_message: 1.0,
        adv_watermark: 0.2,
    };

    pub const BASELINE: LossWeights = LossWeights {
        image_l2: 6.0,
        image_gan: 0.01,
        message: 1.0,
        adv_image: 0.0,
        adv_message: 0.0,
        adv_watermark: 0.0,
    };

    pub fn for_mode(mode: TrainMode) -> Self {
        match mode {
            TrainMode::Adversarial => Self::ADVERSARIAL,
            _ => Self::BASELINE,
        }
    }

    fn validate(&self) -> Result<()> {
        let all = [self.image_l2, self.image_gan, self.message, self.adv_image, self.adv_message, self.adv_watermark];
        if all.iter().all(|w| *w >= 0.0 && w.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config(format!("loss weights must be non-negative: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    /// One spec for specialized mode, the sampling pool for combined mode.
    pub distortions: Vec<DistortionSpec>,
    /// Mode defaults apply when absent.
    pub weights: Option<LossWeights>,
    pub num_iter: usize,
    pub max_steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub nets: NetConfig,
    pub attack: Option<AttackSpec>,
    pub warm_start: Option<PathBuf>,
    /// Steps without attack updates when training adversarially from scratch.
    pub attack_warmup_steps: usize,
    pub seed: u64,
    /// Zero disables periodic checkpoints; the final one is always written.
    pub checkpoint_every: usize,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Identity,
            distortions: Vec::new(),
            weights: None,
            num_iter: 5,
            max_steps: 10_000,
            learning_rate: 1e-3,
            batch_size: 16,
            nets: NetConfig::default(),
            attack: None,
            warm_start: None,
            attack_warmup_steps: 1000,
            seed: 0,
            checkpoint_every: 0,
            log_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn adversarial() -> Self {
        Self { mode: TrainMode::Adversarial, attack: Some(AttackSpec::default()), ..Self::default() }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn effective_weights(&self) -> LossWeights {
        self.weights.unwrap_or_else(|| LossWeights::for_mode(self.mode))
    }

    pub fn validate(&self) -> Result<()> {
        self.nets.validate()?;
        self.effective_weights().validate()?;
        let cfg_err = |m: String| Err(Error::Config(m));
        if self.max_steps == 0 || self.batch_size == 0 || self.num_iter == 0 {
            return cfg_err("max_steps, batch_size and num_iter must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return cfg_err(format!("learning_rate {} must be positive", self.learning_rate));
        }
        match self.mode {
            TrainMode::Specialized if self.distortions.len() != 1 => {
                cfg_err(format!("specialized mode needs exactly one distortion, got {}", self.distortions.len()))
            }
            TrainMode::Combined if self.distortions.is_empty() => {
                cfg_err("combined mode needs at least one distortion".into())
            }
            TrainMode::Adversarial => match &self.attack {
                None => cfg_err("adversarial mode requires an attack spec".into()),
                Some(spec) => spec.validate(),
            },
            _ => Ok(()),
        }
    }
}

/// `α₁·mean((I_co − I_en)²) + α₂·L_G(I_en)` with the non-saturating
/// generator term `L_G = mean(softplus(−D(I_en)))`.
pub fn image_loss(cover: &Tensor, encoded: &Tensor, disc: &Discriminator, alpha1: f64, alpha2: f64) -> Tensor {
    let l2 = mse(cover, encoded) * alpha1;
    if alpha2 == 0.0 {
        return l2;
    }
    l2 + generator_gan_loss(&disc.forward_t(encoded, true)) * alpha2
}

pub fn generator_gan_loss(fake_logits: &Tensor) -> Tensor {
    (-fake_logits).softplus().mean(fake_logits.kind())
}

/// `mean(softplus(−D(real))) + mean(softplus(D(fake)))`.
pub fn discriminator_loss(real_logits: &Tensor, fake_logits: &Tensor) -> Tensor {
    (-real_logits).softplus().mean(real_logits.kind()) + fake_logits.softplus().mean(fake_logits.kind())
}

/// `αᴹ·mean((X'_dec − X')²)`.
pub fn message_loss(decoded: &Tensor, target: &Tensor, alpha: f64) -> Result<Tensor> {
    ensure(decoded.size() == target.size(), || {
        format!("decoded message shape {:?} differs from target {:?}", decoded.size(), target.size())
    })?;
    Ok(mse(decoded, target) * alpha)
}

/// `L_I + L_M + α_W·mean((X'_adv − X')²)`.
pub fn watermark_loss(
    l_image: &Tensor,
    l_message: &Tensor,
    decoded_adv: &Tensor,
    target: &Tensor,
    alpha_w: f64,
) -> Tensor {
    let base = l_image + l_message;
    if alpha_w == 0.0 {
        return base;
    }
    base + mse(decoded_adv, target) * alpha_w
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    /// Distortion applied before the decoder (baseline modes).
    pub distortion: Option<String>,
    pub image_mse: f64,
    pub image_loss: f64,
    pub message_loss: f64,
    pub total_loss: f64,
    pub disc_loss: f64,
    pub bit_acc: f64,
    pub psnr: f64,
    /// Adversarial objective before each attack update and once after the
    /// last one (empty outside the attack phase).
    pub inner_losses: Vec<f64>,
    /// Decoder message MSE on the attacked batch before and after the
    /// attack updates.
    pub adv_message_mse_before: Option<f64>,
    pub adv_message_mse_after: Option<f64>,
    pub attack_updates: usize,
}

/// Phases of one training step, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Attack updates (or FGSM); a no-op outside adversarial training.
    Attack,
    /// Joint encoder / decoder update.
    Watermark,
    Discriminator,
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: WatermarkModel,
    pub attack: Option<AttackNet>,
    weights: LossWeights,
    opt_enc: nn::Optimizer,
    opt_dec: nn::Optimizer,
    opt_disc: nn::Optimizer,
    opt_attack: Option<nn::Optimizer>,
    rng: ChaCha8Rng,
    step: usize,
    warm_started: bool,
}

impl Trainer {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = match &cfg.warm_start {
            Some(path) => {
                let (model, _) = WatermarkModel::load(path)?;
                if model.cfg.message_len != cfg.nets.message_len {
                    return Err(Error::Config(format!(
                        "warm start {} has message_len {}, config asks for {}",
                        path.display(),
                        model.cfg.message_len,
                        cfg.nets.message_len
                    )));
                }
                if model.cfg != cfg.nets {
                    return Err(Error::Config(format!(
                        "warm start {} has networks {:?}, config asks for {:?}",
                        path.display(),
                        model.cfg,
                        cfg.nets
                    )));
                }
                model
            }
            None => WatermarkModel::new(&cfg.nets, cfg.seed)?,
        };
        let attack = match (&cfg.attack, cfg.mode) {
            (Some(spec), TrainMode::Adversarial) if spec.kind != AttackKind::Fgsm => {
                Some(AttackNet::new(spec, &mut seeded_rng(derive_seed(cfg.seed, 4)))?)
            }
            _ => None,
        };
        let lr = cfg.learning_rate;
        let adam = || nn::Adam::default();
        Ok(Self {
            weights: cfg.effective_weights(),
            opt_enc: adam().build(&model.encoder.vs, lr)?,
            opt_dec: adam().build(&model.decoder.vs, lr)?,
            opt_disc: adam().build(&model.discriminator.vs, lr)?,
            opt_attack: attack.as_ref().map(|a| adam().build(&a.vs, lr)).transpose()?,
            rng: seeded_rng(derive_seed(cfg.seed, 5)),
            step: 0,
            warm_started: cfg.warm_start.is_some(),
            cfg: cfg.clone(),
            model,
            attack,
        })
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// Whether this step trains against the attack.
    fn attack_active(&self) -> bool {
        self.cfg.mode == TrainMode::Adversarial && (self.warm_started || self.step >= self.cfg.attack_warmup_steps)
    }

    /// Runs one full training step on a freshly sampled batch.
    pub fn step(&mut self, data: &Dataset) -> Result<StepMetrics> {
        let cover = data.sample_batch(self.cfg.batch_size, &mut self.rng)?;
        let msg = tensor_util::random_bits(&mut self.rng, self.cfg.batch_size as i64, self.cfg.nets.message_len as i64);
        self.step_on(&cover, &msg)
    }

    /// One training step on an explicit batch.
    pub fn step_on(&mut self, cover: &Tensor, msg: &Tensor) -> Result<StepMetrics> {
        self.step_observed(cover, msg, |_, _| {})
    }

    /// [`Trainer::step_on`] calling `observe` after each of its phases.
    pub fn step_observed(
        &mut self,
        cover: &Tensor,
        msg: &Tensor,
        mut observe: impl FnMut(Phase, &Trainer),
    ) -> Result<StepMetrics> {
        let w = self.weights;
        let encoded = self.model.encoder.forward_t(cover, msg, true);

        let mut m = StepMetrics { step: self.step, ..StepMetrics::default() };

        // Attack phase, then the adversarial image the watermark update sees.
        let attacked = if self.attack_active() {
            let kind = self.cfg.attack.as_ref().map(|a| a.kind);
            if kind == Some(AttackKind::Fgsm) {
                let eps = self.cfg.attack.as_ref().and_then(|a| a.epsilon).unwrap_or(0.0);
                Some(fgsm_attack(&self.model.decoder, &encoded.detach(), msg, eps)?)
            } else {
                self.attack_inner_loop(&encoded.detach(), msg, &mut m)?;
                let attack = self.attack.as_mut().expect("attack network in adversarial mode");
                attack.vs.freeze();
                Some(attack.forward(&encoded))
            }
        } else {
            None
        };
        observe(Phase::Attack, self);

        // Decoder input for the baselines.
        let distorted = match self.cfg.mode {
            TrainMode::Identity | TrainMode::Adversarial => encoded.shallow_clone(),
            TrainMode::Specialized | TrainMode::Combined => {
                let pick = self.rng.gen_range(0..self.cfg.distortions.len());
                let spec = self.cfg.distortions[pick];
                m.distortion = Some(spec.to_string());
                distortion::apply_tensor(&spec, &encoded, cover, &mut self.rng)?
            }
        };

        self.model.discriminator.vs.freeze();
        let decoded = self.model.decoder.forward_t(&distorted, true);
        let l_image = image_loss(cover, &encoded, &self.model.discriminator, w.image_l2, w.image_gan);
        let l_message = message_loss(&decoded, msg, w.message)?;
        let total = match &attacked {
            Some(adv) => {
                let decoded_adv = self.model.decoder.forward_t(adv, true);
                watermark_loss(&l_image, &l_message, &decoded_adv, msg, w.adv_watermark)
            }
            None => &l_image + &l_message,
        };
        self.opt_enc.zero_grad();
        self.opt_dec.zero_grad();
        total.backward();
        self.opt_enc.step();
        self.opt_dec.step();
        self.model.discriminator.vs.unfreeze();
        if let Some(attack) = self.attack.as_mut() {
            attack.vs.unfreeze();
        }
        observe(Phase::Watermark, self);

        let image_mse = scalar(&mse(cover, &encoded));
        m.image_mse = image_mse;
        m.image_loss = scalar(&l_image);
        m.message_loss = scalar(&l_message);
        m.total_loss = scalar(&total);
        m.psnr = if image_mse > 0.0 { -10.0 * image_mse.log10() } else { crate::metrics::PSNR_CAP_DB };
        m.bit_acc = scalar(
            &decoded.detach().ge(0.5).to_kind(Kind::Float).eq_tensor(msg).to_kind(Kind::Double).mean(Kind::Double),
        );

        if w.image_gan > 0.0 {
            let real = self.model.discriminator.forward_t(cover, true);
            let fake = self.model.discriminator.forward_t(&encoded.detach(), true);
            let l_disc = discriminator_loss(&real, &fake);
            self.opt_disc.backward_step(&l_disc);
            m.disc_loss = scalar(&l_disc);
        }
        observe(Phase::Discriminator, self);

        self.step += 1;
        Ok(m)
    }

    /// `num_iter` attack updates on a fixed encoded batch with the watermark
    /// networks frozen and the decoder in inference mode.
    pub fn attack_inner_loop(&mut self, encoded: &Tensor, msg: &Tensor, m: &mut StepMetrics) -> Result<()> {
        let w = self.weights;
        let attack = self.attack.as_ref().ok_or_else(|| Error::contract("no attack network to train"))?;
        let opt = self.opt_attack.as_mut().expect("optimizer exists with the network");
        self.model.encoder.vs.freeze();
        self.model.decoder.vs.freeze();
        self.model.discriminator.vs.freeze();
        for _ in 0..self.cfg.num_iter {
            let adv = attack.forward(encoded);
            let decoded = self.model.decoder.forward_t(&adv, false);
            if m.adv_message_mse_before.is_none() {
                m.adv_message_mse_before = Some(scalar(&mse(&decoded, msg)));
            }
            let loss = adversarial_loss(&adv, encoded, &decoded, msg, w.adv_image, w.adv_message);
            m.inner_losses.push(scalar(&loss));
            opt.backward_step(&loss);
            m.attack_updates += 1;
        }
        tch::no_grad(|| {
            let adv = attack.forward(encoded);
            let decoded = self.model.decoder.forward_t(&adv, false);
            m.adv_message_mse_after = Some(scalar(&mse(&decoded, msg)));
            m.inner_losses.push(scalar(&adversarial_loss(&adv, encoded, &decoded, msg, w.adv_image, w.adv_message)));
        });
        self.model.encoder.vs.unfreeze();
        self.model.decoder.vs.unfreeze();
        self.model.discriminator.vs.unfreeze();
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let extra = serde_json::json!({ "train": self.cfg, "step": self.step });
        let sections: Vec<(&str, &nn::VarStore)> = self.attack.iter().map(|a| ("attack", &a.vs)).collect();
        self.model.save(path, self.step as u64, extra, &sections)
    }
}

/// Runs `cfg.max_steps` steps. With `out_dir`, writes `train_log.jsonl`
/// (every `log_every` steps), periodic `step_<n>.ckpt` files and
/// `final.ckpt`.
pub fn train(
    cfg: &TrainConfig,
    data: &Dataset,
    out_dir: Option<&Path>,
    mut on_step: impl FnMut(&StepMetrics),
) -> Result<Trainer> {
    ensure(!data.train.is_empty(), || "dataset has no training images".into())?;
    let mut trainer = Trainer::new(cfg)?;
    let mut log = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join("train_log.jsonl");
            Some((BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?), path))
        }
        None => None,
    };
    for _ in 0..cfg.max_steps {
        let metrics = trainer.step(data)?;
        on_step(&metrics);
        if let Some((writer, path)) = log.as_mut() {
            if cfg.log_every > 0 && metrics.step % cfg.log_every == 0 {
                serde_json::to_writer(&mut *writer, &metrics)?;
                writeln!(writer).map_err(|e| Error::io(path.as_path(), e))?;
            }
        }
        if let Some(dir) = out_dir {
            let done = trainer.step_count();
            if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.max_steps {
                trainer.save(dir.join(format!("step_{done}.ckpt")))?;
            }
        }
    }
    if let Some((mut writer, path)) = log {
        writer.flush().map_err(|e| Error::io(path, e))?;
    }
    if let Some(dir) = out_dir {
        trainer.save(dir.join("final.ckpt"))?;
    }
    Ok(trainer)
}
