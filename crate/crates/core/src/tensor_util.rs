//! Host-side random tensors and small tensor helpers.
//!
//! All training randomness is drawn from explicit ChaCha streams and
//! uploaded, so runs do not depend on libtorch's process-global generator.

use rand::Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};
use tch::{nn, Kind, Tensor};

use crate::error::Result;
use crate::message::BitMessage;

pub fn uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[i64]) -> Tensor {
    let n: i64 = shape.iter().product();
    let data: Vec<f32> = (0..n).map(|_| rng.gen::<f32>()).collect();
    Tensor::from_slice(&data).view(shape)
}

pub fn uniform_range<R: Rng + ?Sized>(rng: &mut R, shape: &[i64], lo: f64, hi: f64) -> Tensor {
    let n: i64 = shape.iter().product();
    let data: Vec<f32> = (0..n).map(|_| rng.gen_range(lo..hi) as f32).collect();
    Tensor::from_slice(&data).view(shape)
}

pub fn normal<R: Rng + ?Sized>(rng: &mut R, shape: &[i64], stdev: f64) -> Tensor {
    let n: i64 = shape.iter().product();
    let data: Vec<f32> = (0..n).map(|_| (rng.sample::<f64, _>(StandardNormal) * stdev) as f32).collect();
    Tensor::from_slice(&data).view(shape)
}

/// 0/1 float tensor with `P(1) = p` per entry.
pub fn bernoulli<R: Rng + ?Sized>(rng: &mut R, shape: &[i64], p: f64) -> Tensor {
    let n: i64 = shape.iter().product();
    let data: Vec<f32> = (0..n).map(|_| f32::from(u8::from(rng.gen::<f64>() < p))).collect();
    Tensor::from_slice(&data).view(shape)
}

/// Uniformly random `[batch, len]` bit tensor.
pub fn random_bits<R: Rng + ?Sized>(rng: &mut R, batch: i64, len: i64) -> Tensor {
    bernoulli(rng, &[batch, len], 0.5)
}

pub fn messages_to_tensor(msgs: &[&BitMessage]) -> Tensor {
    let len = msgs.first().map_or(0, |m| m.len()) as i64;
    let data: Vec<f32> = msgs.iter().flat_map(|m| m.to_f32()).collect();
    Tensor::from_slice(&data).view([msgs.len() as i64, len])
}

/// Rows of a `[B, N]` tensor as vectors.
pub fn rows(t: &Tensor) -> Result<Vec<Vec<f32>>> {
    let t = t.detach().to_kind(Kind::Float).contiguous();
    let n = t.size()[1] as usize;
    let flat = Vec::<f32>::try_from(&t.flatten(0, -1))?;
    Ok(flat.chunks(n.max(1)).map(|c| c.to_vec()).collect())
}

pub fn mse(a: &Tensor, b: &Tensor) -> Tensor {
    (a - b).square().mean(a.kind())
}

pub fn scalar(t: &Tensor) -> f64 {
    t.double_value(&[])
}

/// SHA-256 over every variable (trainable or not) of a var store, in name
/// order.
pub fn fingerprint(vs: &nn::VarStore) -> String {
    hash_vars(vs.variables().into_iter().collect())
}

/// [`fingerprint`] restricted to trainable parameters, so normalization
/// statistics and power-iteration state do not count as updates. Used to
/// assert which networks an optimizer step touched.
pub fn parameter_fingerprint(vs: &nn::VarStore) -> String {
    let params: std::collections::HashSet<usize> =
        vs.trainable_variables().iter().map(|t| t.data_ptr() as usize).collect();
    hash_vars(vs.variables().into_iter().filter(|(_, t)| params.contains(&(t.data_ptr() as usize))).collect())
}

fn hash_vars(mut vars: Vec<(String, Tensor)>) -> String {
    vars.sort_by(|a, b| a.0.cmp(&b.0));
    let mut hasher = Sha256::new();
    for (name, t) in vars {
        hasher.update(name.as_bytes());
        let flat = t.detach().to_kind(Kind::Double).flatten(0, -1).contiguous();
        let values = Vec::<f64>::try_from(&flat).expect("float variable");
        for v in values {
            hasher.update(v.to_le_bytes());
        }
    }
    hex::encode(hasher.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::seeded_rng;

    #[test]
    fn random_tensors_follow_the_seed() {
        let a = uniform(&mut seeded_rng(3), &[4, 5]);
        let b = uniform(&mut seeded_rng(3), &[4, 5]);
        assert!(a.equal(&b));
        let bits = random_bits(&mut seeded_rng(4), 64, 120);
        let mean = scalar(&bits.mean(Kind::Float));
        assert!((mean - 0.5).abs() < 0.05);
        assert_eq!(scalar(&bernoulli(&mut seeded_rng(1), &[100], 0.0).sum(Kind::Float)), 0.0);
    }

    #[test]
    fn parameter_fingerprint_ignores_running_statistics() {
        use tch::nn::ModuleT;
        let vs = nn::VarStore::new(tch::Device::Cpu);
        let bn = crate::layers::batch_norm(&vs.root(), 3);
        let (all, params) = (fingerprint(&vs), parameter_fingerprint(&vs));
        let _ = bn.forward_t(&uniform(&mut seeded_rng(0), &[4, 3, 5, 5]), true);
        assert_ne!(fingerprint(&vs), all);
        assert_eq!(parameter_fingerprint(&vs), params);
    }
}
