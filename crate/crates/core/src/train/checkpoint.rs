//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! "AMSA"  version:u32  epoch:u64  step:u64  count:u32
//! count x { name_len:u32  name:utf8  rank:u32  dims:u64 x rank  data:f64 x Π dims }
//! ```

use std::fs;
use std::path::Path;

use indexmap::IndexMap;

use super::optim::AdamState;
use crate::blocks::ParamStore;
use crate::error::{Error, Result};
use crate::network::ModelConfig;
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"AMSA";
pub const VERSION: u32 = 1;

const MODEL_KEY: &str = "meta.model";
const PARAM_PREFIX: &str = "param.";
const ADAM_M_PREFIX: &str = "adam.m.";
const ADAM_V_PREFIX: &str = "adam.v.";

#[derive(Clone, Debug, PartialEq)]
pub struct StoredTensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl StoredTensor {
    fn bitwise_eq(&self, other: &StoredTensor) -> bool {
        self.dims == other.dims
            && self.data.len() == other.data.len()
            && self.data.iter().zip(&other.data).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub epoch: u64,
    pub step: u64,
    pub tensors: IndexMap<String, StoredTensor>,
}

fn corrupt(message: impl Into<String>) -> Error {
    Error::Checkpoint(message.into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| corrupt(format!("truncated at byte {} reading {what}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
            for &d in &t.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(corrupt("bad magic, not an AMSA checkpoint"));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(corrupt(format!("unsupported version {version}, expected {VERSION}")));
        }
        let epoch = r.u64("epoch")?;
        let step = r.u64("step")?;
        let count = r.u32("tensor count")?;
        let mut tensors = IndexMap::new();
        for _ in 0..count {
            let len = r.u32("name length")? as usize;
            let name = std::str::from_utf8(r.take(len, "name")?)
                .map_err(|_| corrupt(format!("tensor name at byte {} is not UTF-8", r.pos - len)))?
                .to_string();
            let rank = r.u32("rank")? as usize;
            let mut dims = Vec::with_capacity(rank.min(8));
            let mut numel: usize = 1;
            for _ in 0..rank {
                let d = usize::try_from(r.u64("dim")?).map_err(|_| corrupt(format!("{name}: dim too large")))?;
                numel = numel
                    .checked_mul(d)
                    .filter(|n| n.checked_mul(8).is_some())
                    .ok_or_else(|| corrupt(format!("{name}: dim product overflows")))?;
                dims.push(d);
            }
            let data = r
                .take(numel * 8, &name)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            if tensors.insert(name.clone(), StoredTensor { dims, data }).is_some() {
                return Err(corrupt(format!("duplicate tensor {name}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { epoch, step, tensors })
    }

    /// Writes through a temporary sibling and renames, so a crash never
    /// leaves a half-written checkpoint at `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.encode()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    pub fn bitwise_eq(&self, other: &Checkpoint) -> bool {
        self.epoch == other.epoch
            && self.step == other.step
            && self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|((ka, a), (kb, b))| ka == kb && a.bitwise_eq(b))
    }
}

/// Everything needed to resume training or run inference.
#[derive(Clone, Debug)]
pub struct TrainingState {
    pub model: ModelConfig,
    pub params: ParamStore,
    pub adam: AdamState,
    pub epoch: u64,
}

fn model_to_vec(c: &ModelConfig) -> Vec<f64> {
    // the seed is split so each half is exact in an f64
    vec![
        c.levels as f64,
        c.base_channels as f64,
        c.blocks_per_level as f64,
        c.patch as f64,
        f64::from(u8::from(c.symmetric_mode)),
        f64::from(u8::from(c.use_aff)),
        f64::from((c.seed >> 32) as u32),
        f64::from(c.seed as u32),
    ]
}

fn model_from_vec(v: &[f64]) -> Result<ModelConfig> {
    let int = |x: f64| -> Result<u64> {
        if x >= 0.0 && x.fract() == 0.0 && x <= f64::from(u32::MAX) {
            Ok(x as u64)
        } else {
            Err(corrupt(format!("bad model config entry {x}")))
        }
    };
    let flag = |x: f64| -> Result<bool> {
        match int(x)? {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(corrupt(format!("bad model config flag {x}"))),
        }
    };
    if v.len() != 8 {
        return Err(corrupt(format!("model config has {} entries, expected 8", v.len())));
    }
    let cfg = ModelConfig {
        levels: int(v[0])? as usize,
        base_channels: int(v[1])? as usize,
        blocks_per_level: int(v[2])? as usize,
        patch: int(v[3])? as usize,
        symmetric_mode: flag(v[4])?,
        use_aff: flag(v[5])?,
        seed: (int(v[6])? << 32) | int(v[7])?,
    };
    cfg.validate().map_err(|e| corrupt(format!("invalid model config: {e}")))?;
    Ok(cfg)
}

fn stored(t: &Tensor) -> StoredTensor {
    StoredTensor {
        dims: t.shape().0.to_vec(),
        data: t.to_vec(),
    }
}

fn to_tensor(name: &str, s: &StoredTensor) -> Result<Tensor> {
    let dims: [usize; 4] = s
        .dims
        .as_slice()
        .try_into()
        .map_err(|_| corrupt(format!("{name}: expected rank 4, got {}", s.dims.len())))?;
    Tensor::new(Shape(dims), s.data.clone()).map_err(|e| corrupt(format!("{name}: {e}")))
}

impl TrainingState {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut tensors = IndexMap::new();
        let meta = model_to_vec(&self.model);
        tensors.insert(
            MODEL_KEY.to_string(),
            StoredTensor {
                dims: vec![meta.len()],
                data: meta,
            },
        );
        for (name, t) in self.params.iter() {
            tensors.insert(format!("{PARAM_PREFIX}{name}"), stored(t));
        }
        for (prefix, moments) in [(ADAM_M_PREFIX, &self.adam.m), (ADAM_V_PREFIX, &self.adam.v)] {
            for (name, data) in moments {
                let dims = self.params.get(name).map(|t| t.shape().0.to_vec()).unwrap_or_else(|_| vec![data.len()]);
                tensors.insert(
                    format!("{prefix}{name}"),
                    StoredTensor {
                        dims,
                        data: data.clone(),
                    },
                );
            }
        }
        Checkpoint {
            epoch: self.epoch,
            step: self.adam.step,
            tensors,
        }
    }

    /// Rebuilds the state; the parameter table must match the layout the
    /// stored config produces. Missing optimizer moments start at zero.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let meta = ckpt
            .tensors
            .get(MODEL_KEY)
            .ok_or_else(|| corrupt(format!("missing {MODEL_KEY}")))?;
        let model = model_from_vec(&meta.data)?;
        let template = crate::network::AmsaUnet::new(model.clone())?.init_params()?;
        let mut params = ParamStore::new();
        for (name, expected) in template.iter() {
            let key = format!("{PARAM_PREFIX}{name}");
            let s = ckpt.tensors.get(&key).ok_or_else(|| corrupt(format!("missing parameter {name}")))?;
            let t = to_tensor(&key, s)?;
            if t.shape() != expected.shape() {
                return Err(corrupt(format!("{name}: shape {} but the model needs {}", t.shape(), expected.shape())));
            }
            params.insert(name, t)?;
        }
        let param_count = ckpt.tensors.keys().filter(|k| k.starts_with(PARAM_PREFIX)).count();
        if param_count != params.len() {
            return Err(corrupt(format!("{param_count} parameters stored, model has {}", params.len())));
        }
        let mut adam = AdamState::new(&params);
        adam.step = ckpt.step;
        for (prefix, moments) in [(ADAM_M_PREFIX, &mut adam.m), (ADAM_V_PREFIX, &mut adam.v)] {
            for (name, slot) in moments.iter_mut() {
                if let Some(s) = ckpt.tensors.get(&format!("{prefix}{name}")) {
                    if s.data.len() != slot.len() {
                        return Err(corrupt(format!("{prefix}{name}: wrong length")));
                    }
                    slot.copy_from_slice(&s.data);
                }
            }
        }
        Ok(TrainingState {
            model,
            params,
            adam,
            epoch: ckpt.epoch,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
