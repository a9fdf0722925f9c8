//! Raw tensor files, checkpoints and 16-bit PGM export.
//!
//! Raw tensor: `"IAHT"`, u8 version, u8 rank, little-endian u32 dims,
//! little-endian f64 payload, CRC32 of everything before it.
//!
//! Checkpoint: `"IAHC"`, u8 version, u32 header length, `key=value` header
//! lines (sorted), u32 tensor count, then per tensor (sorted by name) a u16
//! name length, the name, a u64 blob length and a raw tensor blob; CRC32 of
//! everything before it.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::train::TrainConfig;
use super::TrainError;
use crate::model::{Hierarchy, ModelConfig};
use crate::rng::{RngState, GENERATOR_NAME};
use crate::spectral::Spectrum;
use crate::tensor::Tensor;

pub const RAW_MAGIC: &[u8; 4] = b"IAHT";
pub const RAW_VERSION: u8 = 1;
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"IAHC";
pub const CHECKPOINT_VERSION: u8 = 1;

fn push_crc(mut bytes: Vec<u8>) -> Vec<u8> {
    let crc = crc32fast::hash(&bytes);
    bytes.extend_from_slice(&crc.to_le_bytes());
    bytes
}

/// Splits off and verifies the trailing CRC32.
fn verified_body<'a>(bytes: &'a [u8], what: &str) -> Result<&'a [u8], TrainError> {
    if bytes.len() < 4 {
        return Err(TrainError::Checksum(format!("{what} is truncated")));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(TrainError::Checksum(format!("{what} checksum mismatch")));
    }
    Ok(body)
}

/// Little-endian cursor over a byte slice.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TrainError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| TrainError::Format("unexpected end of data".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, TrainError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, TrainError> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self) -> Result<u32, TrainError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64, TrainError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

pub fn raw_to_bytes(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(10 + 4 * t.rank() + 8 * t.len());
    out.extend_from_slice(RAW_MAGIC);
    out.push(RAW_VERSION);
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    push_crc(out)
}

pub fn raw_from_bytes(bytes: &[u8]) -> Result<Tensor, TrainError> {
    if bytes.len() < 4 || &bytes[..4] != RAW_MAGIC {
        return Err(TrainError::Format(
            "not a raw tensor file (bad magic)".into(),
        ));
    }
    let body = verified_body(bytes, "raw tensor")?;
    let mut r = Reader {
        bytes: body,
        pos: 4,
    };
    let version = r.u8()?;
    if version > RAW_VERSION {
        return Err(TrainError::Version {
            found: version,
            supported: RAW_VERSION,
        });
    }
    let rank = r.u8()? as usize;
    let shape: Vec<usize> = (0..rank)
        .map(|_| r.u32().map(|d| d as usize))
        .collect::<Result<_, _>>()?;
    let expected: usize = shape.iter().product();
    let payload = body.len() - r.pos;
    if payload != expected * 8 {
        return Err(TrainError::Format(format!(
            "shape {shape:?} declares {expected} values but the payload holds {} bytes",
            payload
        )));
    }
    let data = r
        .take(payload)?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Tensor::new(shape, data).map_err(|e| TrainError::Format(e.to_string()))
}

pub fn save_raw(t: &Tensor, path: &Path) -> Result<(), TrainError> {
    Ok(fs::write(path, raw_to_bytes(t))?)
}

pub fn load_raw(path: &Path) -> Result<Tensor, TrainError> {
    raw_from_bytes(&fs::read(path)?)
}

/// Everything needed to resume or reproduce a trained model.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub train_config: Option<TrainConfig>,
    pub params: BTreeMap<String, Tensor>,
    pub rng_state: RngState,
    pub step: u64,
    /// Extra header lines (for example data normalization).
    pub extra: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn capture(
        model: &Hierarchy,
        train_config: Option<TrainConfig>,
        rng_state: RngState,
        step: u64,
    ) -> Self {
        Self {
            model_config: model.config().clone(),
            train_config,
            params: model
                .params()
                .iter()
                .map(|(n, t)| (n.to_string(), t.clone()))
                .collect(),
            rng_state,
            step,
            extra: BTreeMap::new(),
        }
    }

    /// Rebuilds the model and overwrites its parameters.
    pub fn restore(&self) -> Result<Hierarchy, TrainError> {
        let mut model = Hierarchy::new(self.model_config.clone())?;
        if model.params().len() != self.params.len() {
            return Err(TrainError::Format(format!(
                "checkpoint has {} tensors, model expects {}",
                self.params.len(),
                model.params().len()
            )));
        }
        let ids: Vec<_> = model.params().ids().collect();
        for id in ids {
            let name = model.params().name(id).to_string();
            let value = self
                .params
                .get(&name)
                .ok_or_else(|| TrainError::Format(format!("checkpoint lacks tensor {name}")))?;
            if value.shape() != model.params().get(id).shape() {
                return Err(TrainError::Format(format!(
                    "tensor {name} has the wrong shape"
                )));
            }
            *model.params_mut().get_mut(id) = value.clone();
        }
        Ok(model)
    }

    fn header(&self) -> String {
        let mut pairs: BTreeMap<String, String> =
            self.model_config.to_pairs().into_iter().collect();
        if let Some(tc) = &self.train_config {
            pairs.extend(tc.to_pairs());
        }
        pairs.insert("rng.generator".into(), GENERATOR_NAME.into());
        pairs.insert("rng.seed".into(), self.rng_state.seed.to_string());
        pairs.insert("rng.stream".into(), self.rng_state.stream.to_string());
        pairs.insert("rng.word_pos".into(), self.rng_state.word_pos.to_string());
        pairs.insert("step".into(), self.step.to_string());
        for (k, v) in &self.extra {
            pairs.insert(format!("extra.{k}"), v.clone());
        }
        pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = self.header();
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.push(CHECKPOINT_VERSION);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in &self.params {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let blob = raw_to_bytes(t);
            out.extend_from_slice(&(blob.len() as u64).to_le_bytes());
            out.extend_from_slice(&blob);
        }
        push_crc(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TrainError> {
        if bytes.len() < 5 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(TrainError::Format("not a checkpoint (bad magic)".into()));
        }
        if bytes[4] > CHECKPOINT_VERSION {
            return Err(TrainError::Version {
                found: bytes[4],
                supported: CHECKPOINT_VERSION,
            });
        }
        let body = verified_body(bytes, "checkpoint")?;
        let mut r = Reader {
            bytes: body,
            pos: 5,
        };
        let header_len = r.u32()? as usize;
        let header = std::str::from_utf8(r.take(header_len)?)
            .map_err(|_| TrainError::Format("header is not UTF-8".into()))?;
        let pairs = parse_pairs(header)?;
        let count = r.u32()? as usize;
        let mut params = BTreeMap::new();
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| TrainError::Format("tensor name is not UTF-8".into()))?
                .to_string();
            let blob_len = r.u64()? as usize;
            params.insert(name, raw_from_bytes(r.take(blob_len)?)?);
        }
        if !r.done() {
            return Err(TrainError::Format("trailing bytes after tensors".into()));
        }
        let field = |k: &str| {
            pairs
                .get(k)
                .ok_or_else(|| TrainError::Format(format!("missing header key {k}")))
        };
        let num = |k: &str| -> Result<u128, TrainError> {
            field(k)?
                .parse()
                .map_err(|_| TrainError::Format(format!("invalid header value for {k}")))
        };
        if field("rng.generator")? != GENERATOR_NAME {
            return Err(TrainError::Format(
                "checkpoint uses an unknown random generator".into(),
            ));
        }
        let train_config = if pairs.keys().any(|k| k.starts_with("train.")) {
            Some(TrainConfig::from_pairs(&pairs)?)
        } else {
            None
        };
        let extra = pairs
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("extra.").map(|k| (k.to_string(), v.clone())))
            .collect();
        Ok(Self {
            model_config: ModelConfig::from_pairs(&pairs)?,
            train_config,
            params,
            rng_state: RngState {
                seed: num("rng.seed")? as u64,
                stream: num("rng.stream")? as u64,
                word_pos: num("rng.word_pos")?,
            },
            step: num("step")? as u64,
            extra,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        Ok(fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, TrainError> {
    text.lines()
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| TrainError::Format(format!("malformed header line {l:?}")))
        })
        .collect()
}

/// 16-bit binary PGM with `lo..=hi` mapped linearly onto `0..=65535`.
pub fn pgm_bytes(image: &Tensor, lo: f64, hi: f64) -> Result<Vec<u8>, TrainError> {
    let [h, w] = image.shape() else {
        return Err(TrainError::Format(format!(
            "PGM needs a 2-D image, got {:?}",
            image.shape()
        )));
    };
    let mut out = format!("P5\n{w} {h}\n65535\n").into_bytes();
    let span = if hi > lo { hi - lo } else { 1.0 };
    for &v in image.data() {
        let q = (((v - lo) / span).clamp(0.0, 1.0) * 65535.0).round() as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    Ok(out)
}

/// Writes `image` scaled to its own value range.
pub fn save_pgm(image: &Tensor, path: &Path) -> Result<(), TrainError> {
    let lo = image.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = image
        .data()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(fs::write(path, pgm_bytes(image, lo, hi)?)?)
}

/// `ln(1 + |X|)` with DC moved to the centre, for viewing spectra.
pub fn log_magnitude(spectrum: &Spectrum) -> Tensor {
    let (h, w) = (spectrum.height, spectrum.width);
    Tensor::from_fn(&[h, w], |i| {
        let (y, x) = (i / w, i % w);
        let u = (y + h / 2) % h;
        let v = (x + w / 2) % w;
        spectrum.get(u, v).norm().ln_1p()
    })
}
