//! Self-describing binary checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! b"LOEVCKPT" | u32 version | u32 header_len | header JSON
//! u32 n_tensors | per tensor: u32 name_len, name, u32 ndim, u32 dims.., f32 data..
//! ```
//!
//! The header holds the model config, the step, the optimizer step count and
//! free-form metadata. Optimizer moments are stored as `adam.m.<name>` and
//! `adam.v.<name>` tensors after the parameters.

use std::io::Write;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::nn::ParamSet;
use crate::trainer::AdamState;

const MAGIC: &[u8; 8] = b"LOEVCKPT";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    step: u64,
    adam_t: Option<u64>,
    meta: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub step: u64,
    pub params: ParamSet<f32>,
    pub adam: Option<AdamState<f32>>,
    pub meta: serde_json::Value,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, v: &ArrayD<f32>) {
    put_u32(out, name.len());
    out.extend_from_slice(name.as_bytes());
    put_u32(out, v.ndim());
    for &d in v.shape() {
        put_u32(out, d);
    }
    for x in v.iter() {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn tensor(&mut self) -> Result<(String, ArrayD<f32>)> {
        let len = self.u32()?;
        let name = String::from_utf8(self.take(len)?.to_vec()).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let ndim = self.u32()?;
        let dims = (0..ndim).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
        let count: usize = dims.iter().product();
        let data: Vec<f32> = self
            .take(count * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let arr = ArrayD::from_shape_vec(IxDyn(&dims), data).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok((name, arr))
    }
}

impl Checkpoint {
    pub fn from_model(model: &Model<f32>, step: u64, adam: Option<AdamState<f32>>, meta: serde_json::Value) -> Self {
        Checkpoint {
            model: model.config.clone(),
            step,
            params: model.params.clone(),
            adam,
            meta,
        }
    }

    pub fn to_model(&self) -> Result<Model<f32>> {
        Model::from_params(&self.model, self.params.clone())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            model: self.model.clone(),
            step: self.step,
            adam_t: self.adam.as_ref().map(|a| a.t),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION as usize);
        put_u32(&mut out, json.len());
        out.extend_from_slice(&json);
        let n = self.params.len() * if self.adam.is_some() { 3 } else { 1 };
        put_u32(&mut out, n);
        for t in &self.params.tensors {
            put_tensor(&mut out, &t.name, &t.value);
        }
        if let Some(adam) = &self.adam {
            for t in &adam.m.tensors {
                put_tensor(&mut out, &format!("adam.m.{}", t.name), &t.value);
            }
            for t in &adam.v.tensors {
                put_tensor(&mut out, &format!("adam.v.{}", t.name), &t.value);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION as usize {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let len = r.u32()?;
        let header: Header = serde_json::from_slice(r.take(len)?)?;
        let n = r.u32()?;
        let mut params = ParamSet::new();
        let mut m = ParamSet::new();
        let mut v = ParamSet::new();
        for _ in 0..n {
            let (name, arr) = r.tensor()?;
            if let Some(rest) = name.strip_prefix("adam.m.") {
                m.push(rest, arr);
            } else if let Some(rest) = name.strip_prefix("adam.v.") {
                v.push(rest, arr);
            } else {
                params.push(name, arr);
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        let adam = match header.adam_t {
            Some(t) => {
                params.check_layout(&m)?;
                params.check_layout(&v)?;
                Some(AdamState { t, m, v })
            }
            None => None,
        };
        let ckpt = Checkpoint {
            model: header.model,
            step: header.step,
            params,
            adam,
            meta: header.meta,
        };
        ckpt.to_model()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_bytes(&std::fs::read(path)?)
    }
}
