//! Parameter checkpoints: one binary file with a key=value config header
//! followed by named tensors. Save/load round trips are byte-identical.
//!
//! Layout: magic `MOTC`, version u32, config line count u32, then each
//! line as (u32 length, UTF-8 `key=value`); tensor count u32, then each
//! tensor as (u32 name length, name, u32 rank, u64 extents...,
//! little-endian f64 data).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::params::MotParams;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MOTC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A loaded checkpoint: the model config, free-form metadata lines, and
/// every named tensor (model parameters plus extras such as
/// normalization statistics).
#[derive(Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub extras: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor)>,
}

fn push_line(buf: &mut Vec<u8>, key: &str, value: &str) {
    let line = format!("{key}={value}");
    buf.extend_from_slice(&(line.len() as u32).to_le_bytes());
    buf.extend_from_slice(line.as_bytes());
}

pub fn encode_checkpoint(
    params: &MotParams,
    extras: &BTreeMap<String, String>,
    extra_tensors: &[(String, Tensor)],
) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());

    let config_kv = params.config.to_kv();
    let n_lines = config_kv.len() + extras.len();
    buf.extend_from_slice(&(n_lines as u32).to_le_bytes());
    for (k, v) in &config_kv {
        push_line(&mut buf, k, v);
    }
    for (k, v) in extras {
        push_line(&mut buf, &format!("extra.{k}"), v);
    }

    let n_tensors = params.set.len() + extra_tensors.len();
    buf.extend_from_slice(&(n_tensors as u32).to_le_bytes());
    let named = params
        .set
        .iter()
        .map(|(n, t)| (n.to_string(), t.clone()))
        .chain(extra_tensors.iter().cloned());
    for (name, t) in named {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &e in t.shape() {
            buf.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

pub fn save_checkpoint(
    path: &Path,
    params: &MotParams,
    extras: &BTreeMap<String, String>,
    extra_tensors: &[(String, Tensor)],
) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, encode_checkpoint(params, extras, extra_tensors))?;
    Ok(())
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Checkpoint("checkpoint truncated".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(data: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { data, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad checkpoint magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let n_lines = r.u32()? as usize;
    let mut config_kv = BTreeMap::new();
    let mut extras = BTreeMap::new();
    for _ in 0..n_lines {
        let len = r.u32()? as usize;
        let line = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("non-UTF-8 config line".into()))?;
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Checkpoint(format!("bad config line {line:?}")))?;
        if let Some(extra_key) = k.strip_prefix("extra.") {
            extras.insert(extra_key.to_string(), v.to_string());
        } else {
            config_kv.insert(k.to_string(), v.to_string());
        }
    }
    let config = ModelConfig::from_kv(&config_kv)?;

    let n_tensors = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Checkpoint("non-UTF-8 tensor name".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 8)?;
        let data: Vec<f64> =
            raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        tensors.push((name, Tensor::new(shape, data).map_err(|e| Error::Checkpoint(e.to_string()))?));
    }
    if r.pos != data.len() {
        return Err(Error::Checkpoint("trailing bytes in checkpoint".into()));
    }
    Ok(Checkpoint { config, extras, tensors })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let data = fs::read(path)?;
    decode_checkpoint(&data)
}

impl Checkpoint {
    /// Rebuild the model parameters; returns the leftover non-parameter
    /// tensors (normalization stats and the like).
    pub fn into_params(self) -> Result<(MotParams, Vec<(String, Tensor)>)> {
        let params = MotParams::from_named(&self.config, &self.tensors)?;
        let param_names: std::collections::HashSet<String> =
            params.set.iter().map(|(n, _)| n.to_string()).collect();
        let leftover =
            self.tensors.into_iter().filter(|(n, _)| !param_names.contains(n)).collect();
        Ok((params, leftover))
    }
}
