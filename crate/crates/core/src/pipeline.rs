//! End-to-end embedding, extraction and evaluation.

use std::path::Path;

use crate::channel::ChannelModel;
use crate::distortion::{self, DistortionSpec};
use crate::error::{ensure, Error, Result};
use crate::image_plane::ImagePlane;
use crate::message::BitMessage;
use crate::metrics::{self, bit_accuracy, bit_match_fraction, derive_seed, psnr, seeded_rng, ChannelSelect};
use crate::nets::WatermarkModel;
use crate::report::{AccuracyEntry, EvalReport, PsnrStats, SCHEMA_VERSION};

/// A watermark model with an optional channel codec in front of it.
pub struct Pipeline<'a> {
    pub channel: Option<&'a ChannelModel>,
    pub watermark: &'a WatermarkModel,
}

impl<'a> Pipeline<'a> {
    /// Fails unless the codec's code length equals the watermark message
    /// length.
    pub fn new(channel: Option<&'a ChannelModel>, watermark: &'a WatermarkModel) -> Result<Self> {
        if let Some(ch) = channel {
            ensure(ch.code_len() == watermark.message_len(), || {
                format!(
                    "channel codec produces {}-bit codes but the watermark model embeds {}-bit messages",
                    ch.code_len(),
                    watermark.message_len()
                )
            })?;
        }
        Ok(Self { channel, watermark })
    }

    /// Length of the user-facing message.
    pub fn message_len(&self) -> usize {
        self.channel.map_or(self.watermark.message_len(), |c| c.source_len())
    }

    /// Redundant code for `message` (the message itself without a codec).
    pub fn code_for(&self, message: &BitMessage) -> Result<BitMessage> {
        ensure(message.len() == self.message_len(), || {
            format!("message has {} bits, pipeline expects {}", message.len(), self.message_len())
        })?;
        match self.channel {
            Some(ch) => ch.encode(message),
            None => Ok(message.clone()),
        }
    }

    /// Encoded image, quantized to 8 bits exactly as it is persisted.
    pub fn embed_plane(&self, cover: &ImagePlane, message: &BitMessage) -> Result<ImagePlane> {
        let code = self.code_for(message)?;
        Ok(self.watermark.encoder.encode_image(cover, &code)?.quantized())
    }

    pub fn extract_plane(&self, img: &ImagePlane) -> Result<BitMessage> {
        let soft = self.watermark.decoder.decode_message(img)?;
        match self.channel {
            Some(ch) => ch.decode_soft(&soft),
            None => Ok(soft.threshold()),
        }
    }

    /// Reads `cover_path`, embeds `message` and writes a PNG to `out_path`.
    pub fn embed(
        &self,
        cover_path: impl AsRef<Path>,
        message: &BitMessage,
        out_path: impl AsRef<Path>,
    ) -> Result<ImagePlane> {
        let cover = ImagePlane::load(cover_path)?;
        let encoded = self.embed_plane(&cover, message)?;
        encoded.save_png(out_path)?;
        Ok(encoded)
    }

    pub fn extract(&self, image_path: impl AsRef<Path>) -> Result<BitMessage> {
        self.extract_plane(&ImagePlane::load(image_path)?)
    }

    /// Embeds a fresh random message in every image, applies each suite
    /// distortion and records code- and message-level bit accuracy, plus the
    /// mean per-image PSNR of the encoded images. Image `i` uses its own
    /// random stream derived from `seed`, so results do not depend on
    /// evaluation order.
    pub fn evaluate(
        &self,
        images: &[ImagePlane],
        suite: &[DistortionSpec],
        seed: u64,
        model_id: &str,
        suite_name: &str,
    ) -> Result<EvalReport> {
        ensure(!suite.is_empty(), || "evaluation suite is empty".into())?;
        ensure(!images.is_empty(), || "evaluation needs at least one image".into())?;
        let mut code_acc = vec![0.0; suite.len()];
        let mut msg_acc = vec![0.0; suite.len()];
        let mut psnrs = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
        for (i, cover) in images.iter().enumerate() {
            let mut rng = seeded_rng(derive_seed(seed, i as u64));
            let message = BitMessage::random(self.message_len(), &mut rng);
            let code = self.code_for(&message)?;
            let encoded = self.watermark.encoder.encode_image(cover, &code)?.quantized();
            for (slot, sel) in
                [ChannelSelect::Rgb, ChannelSelect::Y, ChannelSelect::U, ChannelSelect::V].iter().enumerate()
            {
                psnrs[slot].push(psnr(cover, &encoded, *sel)?);
            }
            for (k, spec) in suite.iter().enumerate() {
                let distorted = distortion::apply(spec, &encoded, cover, &mut rng)?;
                let soft = self.watermark.decoder.decode_message(&distorted)?;
                code_acc[k] += bit_accuracy(&soft, &code)?;
                let decoded = match self.channel {
                    Some(ch) => ch.decode_soft(&soft)?,
                    None => soft.threshold(),
                };
                msg_acc[k] += bit_match_fraction(&decoded, &message)?;
            }
        }
        let n = images.len() as f64;
        let entries = suite
            .iter()
            .enumerate()
            .map(|(k, spec)| AccuracyEntry {
                distortion: spec.to_string(),
                code_accuracy: code_acc[k] / n,
                message_accuracy: msg_acc[k] / n,
            })
            .collect();
        let report = EvalReport {
            schema_version: SCHEMA_VERSION,
            model_id: model_id.to_string(),
            suite: suite_name.to_string(),
            seed,
            image_count: images.len(),
            channel: self.channel.is_some(),
            psnr_aggregation: "mean of per-image PSNR".into(),
            dropout_semantics: "p = probability that a pixel is replaced by the cover pixel".into(),
            psnr: PsnrStats {
                rgb: metrics::mean(&psnrs[0]),
                y: metrics::mean(&psnrs[1]),
                u: metrics::mean(&psnrs[2]),
                v: metrics::mean(&psnrs[3]),
            },
            entries,
        };
        report.validate().map_err(|e| Error::contract(format!("evaluation produced an invalid report: {e}")))?;
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelConfig;
    use crate::nets::NetConfig;

    fn tiny_nets(message_len: usize) -> NetConfig {
        NetConfig { message_len, encoder_channels: 4, decoder_channels: 4, discriminator_channels: 4 }
    }

    #[test]
    fn incompatible_lengths_name_both() {
        let ch = ChannelModel::new(
            &ChannelConfig { source_len: 4, code_len: 10, hidden_widths: vec![8], ..Default::default() },
            &mut seeded_rng(0),
        )
        .unwrap();
        let wm = WatermarkModel::new(&tiny_nets(12), 0).unwrap();
        let err = Pipeline::new(Some(&ch), &wm).err().unwrap().to_string();
        assert!(err.contains("10") && err.contains("12"), "{err}");
    }

    #[test]
    fn evaluate_is_deterministic_and_complete() {
        let wm = WatermarkModel::new(&tiny_nets(8), 1).unwrap();
        let p = Pipeline::new(None, &wm).unwrap();
        let mut rng = seeded_rng(2);
        let images: Vec<_> =
            (0..2).map(|_| ImagePlane::from_fn(16, 16, |_, _, _| rand::Rng::gen(&mut rng)).unwrap()).collect();
        let suite = distortion::known_suite();
        let a = p.evaluate(&images, &suite, 7, "m", "known").unwrap();
        let b = p.evaluate(&images, &suite, 7, "m", "known").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.entries.len(), suite.len());
        assert!(p.evaluate(&images, &[], 7, "m", "none").is_err());
        for e in &a.entries {
            assert_eq!(e.code_accuracy, e.message_accuracy);
        }
    }

    #[test]
    fn embedded_png_reloads_exactly() {
        let wm = WatermarkModel::new(&tiny_nets(8), 3).unwrap();
        let p = Pipeline::new(None, &wm).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let cover_path = dir.path().join("cover.png");
        let mut rng = seeded_rng(4);
        ImagePlane::from_fn(12, 12, |_, _, _| rand::Rng::gen(&mut rng)).unwrap().save_png(&cover_path).unwrap();
        let msg = BitMessage::random(8, &mut rng);
        let out = dir.path().join("enc.png");
        let encoded = p.embed(&cover_path, &msg, &out).unwrap();
        assert_eq!(ImagePlane::load(&out).unwrap(), encoded);
        assert_eq!(p.extract(&out).unwrap().len(), 8);
        assert!(p.embed(&cover_path, &BitMessage::zeros(9), &out).is_err());
    }
}
