//! Flat binary checkpoint container.
//!
//! All integers are little-endian; strings are a `u64` byte length followed by
//! UTF-8; tensors are `u32` rank, `u64` dims, then `f64` values.
//!
//! ```text
//! magic    8 bytes  "SCDCKPT\0"
//! version  u32      (currently 1)
//! iteration u64
//! config   string   resolved run config (TOML)
//! count    u64      parameter/buffer entries, each:
//!            name string, trainable u8, tensor
//! count    u64      optimizer moment entries, each:
//!            name string, step u64, m tensor, v tensor
//! ```

use std::path::Path;

use scd_autograd::{ParamStore, Tensor};

use super::optim::{AdamW, MomentState};
use crate::config::RunConfig;
use crate::error::{Result, ScdError};
use crate::model::ScdModel;

pub const MAGIC: [u8; 8] = *b"SCDCKPT\0";
pub const VERSION: u32 = 1;

/// Everything needed to resume or evaluate a run.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub iteration: usize,
    pub config: RunConfig,
    pub model: ScdModel,
    pub store: ParamStore,
    pub optimizer: AdamW,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
    fn tensor(&mut self, shape: &[usize], data: &[f64]) {
        self.u32(shape.len() as u32);
        for &d in shape {
            self.u64(d as u64);
        }
        self.f64s(data);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn corrupt(msg: impl Into<String>) -> ScdError {
    ScdError::Checkpoint(msg.into())
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(corrupt("truncated checkpoint"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        if n > (self.buf.len() - self.pos) as u64 * 8 + 8 {
            return Err(corrupt(format!("implausible length {n}")));
        }
        Ok(n as usize)
    }
    fn str(&mut self) -> Result<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| corrupt("string is not UTF-8"))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| corrupt("tensor too large"))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
    fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(corrupt(format!("tensor rank {rank}")));
        }
        let shape = (0..rank).map(|_| self.len()).collect::<Result<Vec<_>>>()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| corrupt("tensor too large"))?;
        let data = self.f64s(n)?;
        Tensor::new(shape, data).map_err(|e| corrupt(e.to_string()))
    }
}

/// Serialises a run state into the container format.
pub fn encode(iteration: usize, config: &RunConfig, store: &ParamStore, optimizer: &AdamW) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(&MAGIC);
    w.u32(VERSION);
    w.u64(iteration as u64);
    w.str(&config.to_toml_string());
    w.u64(store.len() as u64);
    for (_, e) in store.iter() {
        w.str(&e.name);
        w.u8(e.trainable as u8);
        w.tensor(e.value.shape(), e.value.data());
    }
    let moments: Vec<_> = store.iter().filter_map(|(id, e)| optimizer.state(id).map(|s| (e, s))).collect();
    w.u64(moments.len() as u64);
    for (e, s) in moments {
        w.str(&e.name);
        w.u64(s.step);
        w.tensor(e.value.shape(), &s.m);
        w.tensor(e.value.shape(), &s.v);
    }
    w.0
}

pub fn save(path: &Path, iteration: usize, config: &RunConfig, store: &ParamStore, optimizer: &AdamW) -> Result<()> {
    std::fs::write(path, encode(iteration, config, store, optimizer)).map_err(|e| ScdError::io(path, e))
}

/// Parses a container and rebuilds the model it describes. Every stored
/// entry must match a freshly registered parameter by name and shape.
pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8).ok() != Some(&MAGIC[..]) {
        return Err(corrupt("not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(corrupt(format!("unsupported checkpoint version {version}")));
    }
    let iteration = r.u64()? as usize;
    let config = RunConfig::from_toml_str(&r.str()?)?;
    let (model, mut store) = ScdModel::new(&config.model)?;
    let count = r.len()?;
    if count != store.len() {
        return Err(corrupt(format!("{count} entries, model expects {}", store.len())));
    }
    let lookup = |store: &ParamStore, name: &str, t: &Tensor| {
        let id = store.id_of(name).ok_or_else(|| corrupt(format!("unknown entry `{name}`")))?;
        let want = store.get(id).shape().to_vec();
        if want != t.shape() {
            return Err(corrupt(format!("`{name}` has shape {:?}, model expects {want:?}", t.shape())));
        }
        Ok(id)
    };
    for _ in 0..count {
        let name = r.str()?;
        let trainable = r.u8()? != 0;
        let t = r.tensor()?;
        let id = lookup(&store, &name, &t)?;
        if store.entry(id).trainable != trainable {
            return Err(corrupt(format!("`{name}` trainable flag differs")));
        }
        store.set(id, t);
    }
    let mut optimizer = AdamW::new(config.optim.lr, config.optim.weight_decay);
    optimizer.grad_clip = config.optim.grad_clip;
    for _ in 0..r.len()? {
        let name = r.str()?;
        let step = r.u64()?;
        let m = r.tensor()?;
        let v = r.tensor()?;
        let id = lookup(&store, &name, &m)?;
        lookup(&store, &name, &v)?;
        optimizer.set_state(
            id,
            MomentState {
                step,
                m: m.into_data(),
                v: v.into_data(),
            },
        );
    }
    if r.pos != bytes.len() {
        return Err(corrupt("trailing bytes after checkpoint"));
    }
    Ok(Checkpoint {
        iteration,
        config,
        model,
        store,
        optimizer,
    })
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| ScdError::io(path, e))?;
    decode(&bytes)
}
