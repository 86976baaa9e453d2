use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Decision threshold applied to decoder outputs. Values equal to the
/// threshold round to 1.
pub const BIT_THRESHOLD: f32 = 0.5;

/// Fixed-length binary message.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct BitMessage {
    bits: Vec<u8>,
}

impl BitMessage {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        ensure(!bits.is_empty(), || "message must contain at least one bit".into())?;
        if let Some(pos) = bits.iter().position(|&b| b > 1) {
            return Err(Error::contract(format!("message bit {pos} is {}, expected 0 or 1", bits[pos])));
        }
        Ok(Self { bits })
    }

    pub fn zeros(len: usize) -> Self {
        assert!(len > 0, "message length must be positive");
        Self { bits: vec![0; len] }
    }

    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        assert!(len > 0, "message length must be positive");
        Self { bits: (0..len).map(|_| rng.gen_range(0..=1u8)).collect() }
    }

    /// Parses a string of `0`/`1` characters.
    pub fn from_binary_str(s: &str) -> Result<Self> {
        let bits = s
            .trim()
            .chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                other => Err(Error::contract(format!("invalid binary digit {other:?}"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        Self::new(bits)
    }

    /// Parses a hex string, most significant bit of each nibble first.
    pub fn from_hex(s: &str) -> Result<Self> {
        let mut bits = Vec::with_capacity(s.len() * 4);
        for c in s.trim().chars() {
            let nibble = c.to_digit(16).ok_or_else(|| Error::contract(format!("invalid hex digit {c:?}")))?;
            bits.extend((0..4).rev().map(|k| ((nibble >> k) & 1) as u8));
        }
        Self::new(bits)
    }

    pub fn to_hex(&self) -> Result<String> {
        ensure(self.len().is_multiple_of(4), || {
            format!("hex output needs a length divisible by 4, got {}", self.len())
        })?;
        Ok(self
            .bits
            .chunks(4)
            .map(|c| {
                let v = c.iter().fold(0u32, |acc, &b| (acc << 1) | b as u32);
                char::from_digit(v, 16).expect("nibble")
            })
            .collect())
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn complement(&self) -> Self {
        Self { bits: self.bits.iter().map(|b| 1 - b).collect() }
    }

    pub fn hamming_distance(&self, other: &BitMessage) -> Result<usize> {
        ensure(self.len() == other.len(), || format!("length mismatch: {} vs {}", self.len(), other.len()))?;
        Ok(self.bits.iter().zip(&other.bits).filter(|(a, b)| a != b).count())
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.bits.iter().map(|&b| b as f32).collect()
    }
}

impl TryFrom<Vec<u8>> for BitMessage {
    type Error = Error;
    fn try_from(bits: Vec<u8>) -> Result<Self> {
        Self::new(bits)
    }
}

impl From<BitMessage> for Vec<u8> {
    fn from(m: BitMessage) -> Self {
        m.bits
    }
}

impl fmt::Display for BitMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.bits {
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

/// Real-valued decoder output estimating a [`BitMessage`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftMessage {
    values: Vec<f32>,
}

impl SoftMessage {
    pub fn new(values: Vec<f32>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn threshold(&self) -> BitMessage {
        BitMessage { bits: self.values.iter().map(|&v| u8::from(v >= BIT_THRESHOLD)).collect() }
    }
}

impl From<&BitMessage> for SoftMessage {
    fn from(m: &BitMessage) -> Self {
        Self { values: m.to_f32() }
    }
}
