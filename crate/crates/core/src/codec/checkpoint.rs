//! Model files: `"A2CM" | version u8 | config_len u32 | config JSON |
//! tensor_count u32 | tensors`, each tensor `name_len u16 | name | ndim u8 |
//! dims u32... | values f32...`, little-endian throughout.

use std::collections::HashMap;
use std::path::Path;

use super::{model_init, CodecConfig, Model};
use crate::error::{Error, Result};
use crate::nn::Params;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"A2CM";
pub const CHECKPOINT_VERSION: u8 = 1;

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub(crate) fn encode_model(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.push(CHECKPOINT_VERSION);
    let cfg = serde_json::to_vec(&model.cfg).expect("config serializes");
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg);
    let mut count = 0u32;
    let mut body = Vec::new();
    model.visit("", &mut |name, shape, v| {
        count += 1;
        body.extend_from_slice(&(name.len() as u16).to_le_bytes());
        body.extend_from_slice(name.as_bytes());
        body.push(shape.len() as u8);
        for &d in shape {
            body.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in v {
            body.extend_from_slice(&(x as f32).to_le_bytes());
        }
    });
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&body);
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .pos
            .checked_add(n)
            .and_then(|end| self.bytes.get(self.pos..end))
            .ok_or_else(|| bad(format!("truncated at byte {}", self.pos)))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub(crate) fn decode_model(bytes: &[u8]) -> Result<Model> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != CHECKPOINT_MAGIC {
        return Err(bad("not a model file"));
    }
    let version = c.take(1)?[0];
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported model version {version}")));
    }
    let len = c.u32()? as usize;
    let cfg: CodecConfig = serde_json::from_slice(c.take(len)?)
        .map_err(|e| bad(format!("bad config: {e}")))?;
    let mut model = model_init(&cfg, 0)?;
    let count = c.u32()? as usize;
    let mut tensors: HashMap<String, (Vec<usize>, Vec<f64>)> = HashMap::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(c.take(2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(c.take(name_len)?)
            .map_err(|_| bad("tensor name is not UTF-8"))?
            .to_string();
        let ndim = c.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(c.u32()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| bad("tensor too large"))?;
        let raw = c.take(n.checked_mul(4).ok_or_else(|| bad("tensor too large"))?)?;
        let values = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        tensors.insert(name, (shape, values));
    }
    if c.pos != bytes.len() {
        return Err(bad("trailing bytes after tensors"));
    }
    let mut missing = None;
    model.visit_mut("", &mut |name, shape, v| match tensors.remove(name) {
        Some((s, values)) if s == shape => v.copy_from_slice(&values),
        Some(_) => {
            missing.get_or_insert_with(|| format!("tensor {name} has the wrong shape"));
        }
        None => {
            missing.get_or_insert_with(|| format!("tensor {name} missing"));
        }
    });
    if let Some(msg) = missing {
        return Err(bad(msg));
    }
    if let Some(name) = tensors.keys().next() {
        return Err(bad(format!("unexpected tensor {name}")));
    }
    if model.flatten().iter().any(|v| !v.is_finite()) {
        return Err(bad("non-finite parameter"));
    }
    Ok(model)
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_model(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    decode_model(&std::fs::read(path)?)
}
