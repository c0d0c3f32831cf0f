//! Binary checkpoints, little-endian:
//!
//! ```text
//! "TCCK" | version u32 (= 1) | K u32 | D u32 | head u8 (0 linear, 1 cosine) | has_bias u8
//! | K*D f64 weights, row-major | K f64 bias (if has_bias) | gamma_raw f64
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Classifier, HeadKind};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

const MAGIC: &[u8; 4] = b"TCCK";
const VERSION: u32 = 1;
const HEADER: usize = 18;

/// Human-readable summary written next to a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierMeta {
    pub head: HeadKind,
    pub num_classes: usize,
    pub dim: usize,
    pub has_bias: bool,
    pub gamma_raw: f64,
    pub gamma: f64,
    pub weight_norm: f64,
}

impl Classifier {
    pub fn meta(&self) -> ClassifierMeta {
        ClassifierMeta {
            head: self.head,
            num_classes: self.num_classes(),
            dim: self.dim(),
            has_bias: self.bias.is_some(),
            gamma_raw: self.gamma_raw,
            gamma: self.gamma(),
            weight_norm: self.weights.frobenius_norm(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER + 8 * (self.weights.as_slice().len() + self.num_classes() + 1));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.num_classes() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        out.push(match self.head {
            HeadKind::Linear => 0,
            HeadKind::Cosine => 1,
        });
        out.push(u8::from(self.bias.is_some()));
        let values = self.weights.as_slice().iter().chain(self.bias.iter().flatten()).chain([&self.gamma_raw]);
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Classifier> {
        if b.len() < 4 || &b[..4] != MAGIC {
            return Err(Error::Format("missing TCCK magic".into()));
        }
        if b.len() < HEADER {
            return Err(Error::Corrupt("checkpoint header truncated".into()));
        }
        let word = |at: usize| u32::from_le_bytes(b[at..at + 4].try_into().unwrap()) as usize;
        if word(4) != VERSION as usize {
            return Err(Error::Format(format!("unsupported checkpoint version {}", word(4))));
        }
        let (k, d) = (word(8), word(12));
        let head = match b[16] {
            0 => HeadKind::Linear,
            1 => HeadKind::Cosine,
            t => return Err(Error::Format(format!("unknown head tag {t}"))),
        };
        let has_bias = match b[17] {
            0 => false,
            1 => true,
            t => return Err(Error::Corrupt(format!("bias flag byte {t}"))),
        };
        let count = k * d + if has_bias { k } else { 0 } + 1;
        if b.len() != HEADER + 8 * count {
            return Err(Error::Corrupt(format!("checkpoint is {} bytes, expected {}", b.len(), HEADER + 8 * count)));
        }
        let vals: Vec<f64> = b[HEADER..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let weights = Matrix::from_vec(k, d, vals[..k * d].to_vec())?;
        let bias = has_bias.then(|| vals[k * d..k * d + k].to_vec());
        if head == HeadKind::Cosine && bias.is_some() {
            return Err(Error::validation("cosine checkpoint carries a bias"));
        }
        Ok(Classifier { weights, bias, head, gamma_raw: vals[count - 1] })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Classifier> {
        Classifier::from_bytes(&std::fs::read(path)?)
    }
}
