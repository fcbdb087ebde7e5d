//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "ERSCKPT" | version u32 | config json (u64 len + bytes) | sha256(config json)
//! | dataset digest [32] | stage u8 | lambda 4×f64 | final loss f64
//! | terms flag u8 [+ 5×f64] | records u64 count × (step u64, 5×f64)
//! | tensor count u32 | manifest: (name u16 len + bytes, rank u8, dims u64…)
//! | arrays: (u64 len, f64…) per tensor | sha256 of everything before
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::config::{Stage, TrainConfig};
use crate::autodiff::Tensor;
use crate::lambda::LambdaVector;
use crate::losses::{EntropyStateRecord, ScanTermValues};
use crate::model::{ClusterHead, EncoderParams, Layer};

pub const MAGIC: &[u8; 7] = b"ERSCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint format version {found}, this build reads version {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Trained parameters plus the configuration and trajectory that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub dataset_digest: [u8; 32],
    pub encoder: EncoderParams,
    pub head: ClusterHead,
    /// Epoch-mean objective of the last epoch.
    pub final_loss: f64,
    /// Clustering terms on the full dataset after the last epoch, for
    /// stages that optimize them.
    pub final_terms: Option<ScanTermValues>,
    pub records: Vec<EntropyStateRecord>,
}

impl Checkpoint {
    pub fn stage(&self) -> Stage {
        self.config.stage
    }

    pub fn lambda(&self) -> LambdaVector {
        self.config.lambda
    }

    pub fn config_digest(&self) -> [u8; 32] {
        self.config.digest()
    }

    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.encoder.layers.iter().enumerate() {
            out.push((format!("encoder.{i}.weight"), &layer.weight));
            out.push((format!("encoder.{i}.bias"), &layer.bias));
        }
        out.push(("head.weight".into(), &self.head.layer.weight));
        out.push(("head.bias".into(), &self.head.layer.bias));
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let json = self.config.to_json();
        b.extend_from_slice(&(json.len() as u64).to_le_bytes());
        b.extend_from_slice(json.as_bytes());
        b.extend_from_slice(&Sha256::digest(json.as_bytes()));
        b.extend_from_slice(&self.dataset_digest);
        b.push(self.stage().code());
        for x in self.lambda().to_array() {
            b.extend_from_slice(&x.to_le_bytes());
        }
        b.extend_from_slice(&self.final_loss.to_le_bytes());
        match self.final_terms {
            Some(t) => {
                b.push(1);
                put_f64s(&mut b, &t.to_array());
            }
            None => b.push(0),
        }
        b.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for r in &self.records {
            b.extend_from_slice(&r.step.to_le_bytes());
            put_f64s(&mut b, &r.terms.to_array());
        }
        let tensors = self.tensors();
        b.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, t) in &tensors {
            b.extend_from_slice(&(name.len() as u16).to_le_bytes());
            b.extend_from_slice(name.as_bytes());
            b.push(t.rank() as u8);
            for &d in t.shape() {
                b.extend_from_slice(&(d as u64).to_le_bytes());
            }
        }
        for (_, t) in &tensors {
            b.extend_from_slice(&(t.len() as u64).to_le_bytes());
            put_f64s(&mut b, t.data());
        }
        let trailer = Sha256::digest(&b);
        b.extend_from_slice(&trailer);
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let header = MAGIC.len() + 4;
        if bytes.len() < header || &bytes[..MAGIC.len()] != MAGIC {
            return Err(corrupt("missing magic"));
        }
        let found = u32::from_le_bytes(bytes[MAGIC.len()..header].try_into().expect("4 bytes"));
        if found != FORMAT_VERSION {
            return Err(CheckpointError::VersionMismatch {
                found,
                expected: FORMAT_VERSION,
            });
        }
        if bytes.len() < header + 32 {
            return Err(corrupt("truncated"));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != trailer {
            return Err(corrupt("digest mismatch"));
        }

        let mut r = Reader {
            buf: body,
            pos: header,
        };
        let json_len = r.len()?;
        let json = r.take(json_len)?;
        let digest = r.take(32)?;
        if Sha256::digest(json).as_slice() != digest {
            return Err(corrupt("config digest mismatch"));
        }
        let json = std::str::from_utf8(json).map_err(|_| corrupt("config is not utf-8"))?;
        let config: TrainConfig =
            serde_json::from_str(json).map_err(|e| corrupt(&format!("config: {e}")))?;
        let dataset_digest: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let stage = Stage::from_code(r.u8()?).ok_or_else(|| corrupt("unknown stage"))?;
        let lambda = LambdaVector::from_array([r.f64()?, r.f64()?, r.f64()?, r.f64()?]);
        if stage != config.stage
            || lambda.to_array().map(f64::to_bits) != config.lambda.to_array().map(f64::to_bits)
        {
            return Err(corrupt("stage or lambda disagrees with config"));
        }
        let final_loss = r.f64()?;
        let final_terms = match r.u8()? {
            0 => None,
            1 => Some(r.terms()?),
            _ => return Err(corrupt("bad terms flag")),
        };
        let n_records = r.len()?;
        let mut records = Vec::with_capacity(n_records.min(1 << 16));
        for _ in 0..n_records {
            let step = r.u64()?;
            records.push(EntropyStateRecord {
                step,
                terms: r.terms()?,
            });
        }

        let n_tensors = r.u32()? as usize;
        let mut manifest = Vec::with_capacity(n_tensors.min(1 << 10));
        for _ in 0..n_tensors {
            let name_len = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| corrupt("tensor name"))?;
            let rank = r.u8()? as usize;
            let dims = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>, _>>()?;
            manifest.push((name, dims));
        }
        let mut tensors = Vec::with_capacity(manifest.len());
        for (name, dims) in manifest {
            let n = r.len()?;
            if dims.iter().product::<usize>() != n {
                return Err(corrupt(&format!(
                    "tensor {name}: shape {dims:?} holds {n} values"
                )));
            }
            let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
            let t = Tensor::new(dims, data).map_err(|e| corrupt(&format!("tensor {name}: {e}")))?;
            tensors.push((name, t));
        }
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes"));
        }
        let (encoder, head) = assemble(tensors)?;
        Ok(Self {
            config,
            dataset_digest,
            encoder,
            head,
            final_loss,
            final_terms,
            records,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn assemble(
    tensors: Vec<(String, Tensor)>,
) -> Result<(EncoderParams, ClusterHead), CheckpointError> {
    if tensors.len() < 4 || !tensors.len().is_multiple_of(2) {
        return Err(corrupt("unexpected tensor count"));
    }
    let mut layers = Vec::new();
    let mut it = tensors.into_iter();
    let n_encoder = (it.len() - 2) / 2;
    let mut next_layer = |wname: &str, bname: &str| -> Result<Layer, CheckpointError> {
        let (wn, weight) = it.next().expect("counted");
        let (bn, bias) = it.next().expect("counted");
        if wn != wname || bn != bname {
            return Err(corrupt(&format!(
                "expected {wname}/{bname}, found {wn}/{bn}"
            )));
        }
        if weight.rank() != 2 || bias.shape() != [weight.shape()[1]] {
            return Err(corrupt(&format!("{wname}: inconsistent shapes")));
        }
        Ok(Layer { weight, bias })
    };
    for i in 0..n_encoder {
        layers.push(next_layer(
            &format!("encoder.{i}.weight"),
            &format!("encoder.{i}.bias"),
        )?);
    }
    let head = next_layer("head.weight", "head.bias")?;
    let chained = layers.windows(2).all(|w| w[0].out_dim() == w[1].in_dim());
    if !chained || layers.last().map(Layer::out_dim) != Some(head.in_dim()) {
        return Err(corrupt("layer widths do not chain"));
    }
    Ok((EncoderParams { layers }, ClusterHead { layer: head }))
}

fn corrupt(msg: &str) -> CheckpointError {
    CheckpointError::Corrupt(msg.to_string())
}

fn put_f64s(b: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        b.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| corrupt("truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn len(&mut self) -> Result<usize, CheckpointError> {
        usize::try_from(self.u64()?).map_err(|_| corrupt("length overflow"))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn terms(&mut self) -> Result<ScanTermValues, CheckpointError> {
        Ok(ScanTermValues::from_array([
            self.f64()?,
            self.f64()?,
            self.f64()?,
            self.f64()?,
            self.f64()?,
        ]))
    }
}
