//! Checkpoint files.
//!
//! Layout, little-endian:
//!
//! ```text
//! "DSCK" | u32 version | u32 header_len | header (canonical JSON)
//! then per record: u32 name_len | name | u32 ndim | ndim × u64 dims | f32 payload
//! ```
//!
//! Records hold the encoder parameters in layout order followed, when
//! optimizer state is saved, by `adamw.m.<name>` and `adamw.v.<name>` moment
//! buffers.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{parameter_layout, Encoder, EncoderConfig, TrainConfig};
use crate::image::Reader;
use crate::tensor::{AdamWConfig, AdamWState, Tensor};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"DSCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub encoder: Encoder,
    pub optimizer: Option<AdamWState>,
    /// Epoch (1-based) the parameters come from; 0 for an untrained encoder.
    pub epoch: usize,
    pub val_mae_history: Vec<f64>,
    pub train_config: Option<TrainConfig>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerHeader {
    config: AdamWConfig,
    step: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    encoder: EncoderConfig,
    epoch: usize,
    val_mae_history: Vec<f64>,
    train: Option<TrainConfig>,
    optimizer: Option<OptimizerHeader>,
    records: usize,
}

fn push_record(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f32]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_record(r: &mut Reader<'_>) -> Result<(String, Tensor<f32>)> {
    let at = r.offset();
    let len = r.u32("record name length")? as usize;
    let name = std::str::from_utf8(r.take(len, "record name")?)
        .map_err(|_| Error::format(at + 4, "record name is not UTF-8"))?
        .to_string();
    let ndim = r.u32("record ndim")? as usize;
    let mut shape = Vec::with_capacity(ndim.min(8));
    for _ in 0..ndim {
        shape.push(r.u64("record dims")? as usize);
    }
    let n = shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| Error::format(r.offset(), format!("record '{name}' size overflows")))?;
    let data = r.f32s(n, &format!("payload of '{name}'"))?;
    Ok((name, Tensor::new(shape, data)?))
}

impl Checkpoint {
    /// Wraps an encoder with no optimizer state or history.
    pub fn from_encoder(encoder: Encoder) -> Self {
        Self {
            encoder,
            optimizer: None,
            epoch: 0,
            val_mae_history: Vec::new(),
            train_config: None,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if !self.encoder.is_initialized() {
            return Err(Error::State("cannot save an uninitialized encoder".into()));
        }
        let n_params = self.encoder.params().len();
        let header = Header {
            encoder: self.encoder.config().clone(),
            epoch: self.epoch,
            val_mae_history: self.val_mae_history.clone(),
            train: self.train_config.clone(),
            optimizer: self.optimizer.as_ref().map(|o| OptimizerHeader {
                config: o.config,
                step: o.step_count(),
            }),
            records: if self.optimizer.is_some() { 3 * n_params } else { n_params },
        };
        // serde_json::Value keeps object keys sorted, giving a canonical form
        let blob = serde_json::to_string(&serde_json::to_value(&header)?)?;

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(blob.len() as u32).to_le_bytes());
        out.extend_from_slice(blob.as_bytes());
        let params = self.encoder.params();
        for (name, p) in self.encoder.names().iter().zip(params) {
            push_record(&mut out, name, p.shape(), p.data());
        }
        if let Some(opt) = &self.optimizer {
            for (prefix, moments) in [("m", opt.first_moment()), ("v", opt.second_moment())] {
                if moments.len() != n_params {
                    return Err(Error::State("optimizer state does not match the encoder".into()));
                }
                for ((name, p), m) in self.encoder.names().iter().zip(params).zip(moments) {
                    push_record(&mut out, &format!("adamw.{prefix}.{name}"), p.shape(), m);
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf);
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::format(0, format!("bad magic {magic:?}, expected \"DSCK\"")));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(
                4,
                format!("unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"),
            ));
        }
        let len = r.u32("header length")? as usize;
        let at = r.offset();
        let header: Header = serde_json::from_slice(r.take(len, "header")?)
            .map_err(|e| Error::format(at, format!("corrupt header: {e}")))?;
        header.encoder.validate()?;

        let layout = parameter_layout(&header.encoder);
        let n = layout.len();
        let expected_records = if header.optimizer.is_some() { 3 * n } else { n };
        if header.records != expected_records {
            return Err(Error::format(
                at,
                format!("header lists {} records, layout needs {expected_records}", header.records),
            ));
        }
        let mut records = Vec::with_capacity(expected_records);
        for _ in 0..expected_records {
            records.push(read_record(&mut r)?);
        }
        if r.remaining() != 0 {
            return Err(Error::format(
                r.offset(),
                format!("{} trailing bytes after the last record", r.remaining()),
            ));
        }
        let moments = records.split_off(n);
        let encoder = Encoder::from_parameters(header.encoder, records)?;

        let optimizer = match header.optimizer {
            None => None,
            Some(h) => {
                let (m, v) = moments.split_at(n);
                let unpack = |set: &[(String, Tensor<f32>)], prefix: &str| -> Result<Vec<Vec<f32>>> {
                    set.iter()
                        .zip(encoder.names())
                        .map(|((name, t), pname)| {
                            if *name != format!("adamw.{prefix}.{pname}") {
                                return Err(Error::validation(format!(
                                    "unexpected record '{name}' in optimizer state"
                                )));
                            }
                            Ok(t.data().to_vec())
                        })
                        .collect()
                };
                Some(AdamWState::from_parts(h.config, h.step, unpack(m, "m")?, unpack(v, "v")?)?)
            }
        };
        Ok(Self {
            encoder,
            optimizer,
            epoch: header.epoch,
            val_mae_history: header.val_mae_history,
            train_config: header.train,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ckpt.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&buf)
}

/// Loads a checkpoint and insists on a particular encoder configuration.
pub fn load_checkpoint_for(path: impl AsRef<Path>, expected: &EncoderConfig) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    let diff = ckpt.encoder.config().diff(expected);
    if !diff.is_empty() {
        return Err(Error::ConfigMismatch(diff));
    }
    Ok(ckpt)
}

/// Hex SHA-256 of a file, used to tie reports to the checkpoint they used.
pub fn file_sha256(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&buf).iter().map(|b| format!("{b:02x}")).collect())
}
