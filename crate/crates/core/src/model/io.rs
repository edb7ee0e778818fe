//! Binary model files: magic, version, config text, then named `f64`
//! tensors, all little-endian.

use std::fs;
use std::path::Path;

use super::{ModelConfig, S2m2Ecg};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const MODEL_MAGIC: &[u8; 8] = b"S2M2MODL";
pub const MODEL_VERSION: u32 = 1;
const RUNNING_MEAN: &str = "head.bn_running_mean";
const RUNNING_VAR: &str = "head.bn_running_var";

struct ModelFile {
    config_text: String,
    tensors: Vec<(String, Tensor)>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                detail: format!("truncated while reading {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let at = self.pos as u64;
        String::from_utf8(self.take(n, what)?.to_vec()).map_err(|_| Error::Format {
            offset: at,
            detail: format!("{what} is not UTF-8"),
        })
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn encode(model: &S2m2Ecg) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    put_str(&mut out, &model.config.to_text());
    let running = model.running_stats();
    let n = running.mean.len();
    let buffers = [
        (RUNNING_MEAN, Tensor::from_parts(vec![n], running.mean.clone())),
        (RUNNING_VAR, Tensor::from_parts(vec![n], running.var.clone())),
    ];
    let count = model.store.len() + buffers.len();
    out.extend_from_slice(&(count as u32).to_le_bytes());
    let params = model.store.iter().map(|(_, name, t)| (name, t));
    for (name, t) in params.chain(buffers.iter().map(|(n, t)| (*n, t))) {
        put_str(&mut out, name);
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn decode(bytes: &[u8]) -> Result<ModelFile> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8, "magic")? != MODEL_MAGIC {
        return Err(Error::Format {
            offset: 0,
            detail: "not a model file (bad magic)".into(),
        });
    }
    let version = c.u32("version")?;
    if version != MODEL_VERSION {
        return Err(Error::Format {
            offset: 8,
            detail: format!("unsupported model version {version}"),
        });
    }
    let config_text = c.string("config")?;
    let count = c.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name = c.string("tensor name")?;
        let rank = c.u32("rank")? as usize;
        let shape = (0..rank).map(|_| c.u64("dim").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| Error::Format {
            offset: c.pos as u64,
            detail: format!("tensor `{name}` shape {shape:?} overflows"),
        })?;
        let at = c.pos as u64;
        let raw = c.take(len.saturating_mul(8), &format!("tensor `{name}`"))?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Format {
            offset: at,
            detail: format!("tensor `{name}`: {e}"),
        })?;
        tensors.push((name, t));
    }
    if c.pos != bytes.len() {
        return Err(Error::Format {
            offset: c.pos as u64,
            detail: format!("{} trailing bytes", bytes.len() - c.pos),
        });
    }
    Ok(ModelFile { config_text, tensors })
}

impl S2m2Ecg {
    /// Serialized form; see [`save_model`].
    pub fn to_bytes(&self) -> Vec<u8> {
        encode(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let file = decode(bytes)?;
        let config = ModelConfig::from_text(&file.config_text)?;
        let mut model = S2m2Ecg::new(config, 0)?;
        model.assign(file.tensors)?;
        Ok(model)
    }

    /// Replaces this model's weights with those stored in `path`, which must
    /// match this model's architecture tensor for tensor.
    pub fn load_weights(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        self.assign(decode(&bytes)?.tensors)
    }

    fn assign(&mut self, tensors: Vec<(String, Tensor)>) -> Result<()> {
        let mut by_name: std::collections::HashMap<String, Tensor> = tensors.into_iter().collect();
        let ids: Vec<_> = self.store.ids().collect();
        let mut fresh = Vec::with_capacity(ids.len());
        for id in ids {
            let name = self.store.name(id).to_string();
            let expected = self.store.get(id).shape().to_vec();
            let t = by_name.remove(&name).ok_or_else(|| Error::ParamShape {
                name: name.clone(),
                expected: expected.clone(),
                found: Vec::new(),
            })?;
            if t.shape() != expected.as_slice() {
                return Err(Error::ParamShape {
                    name,
                    expected,
                    found: t.shape().to_vec(),
                });
            }
            fresh.push((id, t));
        }
        let n = self.running.mean.len();
        let mut buffer = |name: &str| -> Result<Vec<f64>> {
            let t = by_name.remove(name).ok_or_else(|| Error::ParamShape {
                name: name.into(),
                expected: vec![n],
                found: Vec::new(),
            })?;
            if t.shape() != [n] {
                return Err(Error::ParamShape {
                    name: name.into(),
                    expected: vec![n],
                    found: t.shape().to_vec(),
                });
            }
            Ok(t.into_data())
        };
        let mean = buffer(RUNNING_MEAN)?;
        let var = buffer(RUNNING_VAR)?;
        if let Some(extra) = by_name.keys().min() {
            return Err(Error::Format {
                offset: 0,
                detail: format!("file has tensor `{extra}` that this model does not"),
            });
        }
        for (id, t) in fresh {
            self.store.replace(id, t);
        }
        self.running.mean = mean;
        self.running.var = var;
        Ok(())
    }
}

pub fn save_model(model: &S2m2Ecg, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<S2m2Ecg> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    S2m2Ecg::from_bytes(&bytes)
}
