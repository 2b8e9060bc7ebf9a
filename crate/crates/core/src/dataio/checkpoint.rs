//! Versioned checkpoints.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic "SICN" | u32 version
//! sections: [u8; 4] tag | u64 payload length | payload
//!   CONF  network config as key = value text
//!   TENS  u32 count, then per tensor: u32 name length, name,
//!         u32 rank, rank x u32 dims, f32 values
//!   OPTM  u64 step, f32 lr, u64 len, len x f32 m, len x f32 v
//!   STAT  u64 seed, u64 epoch
//! ```
//!
//! Readers skip sections they do not know.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{Adam, Network, NetworkConfig, TrainState};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SICN";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub lr: f32,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: NetworkConfig,
    /// Trainable tensors followed by batch-norm running statistics.
    pub tensors: Vec<NamedTensor>,
    pub optimizer: Option<OptimizerState>,
    pub seed: u64,
    pub epoch: u64,
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

impl Checkpoint {
    pub fn from_network(net: &Network) -> Self {
        let tensors = net
            .tensors()
            .into_iter()
            .chain(net.buffers())
            .map(|t| NamedTensor {
                name: t.name,
                shape: t.shape,
                data: to_f32(t.data),
            })
            .collect();
        Checkpoint {
            config: net.config.clone(),
            tensors,
            optimizer: None,
            seed: 0,
            epoch: 0,
        }
    }

    pub fn from_state(state: &TrainState) -> Self {
        let mut c = Self::from_network(&state.net);
        c.optimizer = Some(OptimizerState {
            step: state.adam.step,
            lr: state.adam.lr as f32,
            m: to_f32(&state.adam.m),
            v: to_f32(&state.adam.v),
        });
        c.seed = state.seed;
        c.epoch = state.epoch as u64;
        c
    }

    /// Rebuild the network, filling every tensor by name.
    pub fn to_network(&self) -> Result<Network> {
        let mut net = Network::new(&self.config, self.seed)?;
        let fill = |name: &str, dst: &mut [f64]| -> Result<()> {
            let t = self
                .tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| Error::MissingTensor(name.to_string()))?;
            if t.data.len() != dst.len() {
                return Err(Error::Shape {
                    what: "checkpoint tensor",
                    expected: format!("{name} with {} values", dst.len()),
                    got: format!("{:?}", t.shape),
                });
            }
            for (d, &s) in dst.iter_mut().zip(&t.data) {
                *d = f64::from(s);
            }
            Ok(())
        };
        for t in net.tensors_mut() {
            fill(&t.name, t.data)?;
        }
        for t in net.buffers_mut() {
            fill(&t.name, t.data)?;
        }
        Ok(net)
    }

    pub fn to_state(&self) -> Result<TrainState> {
        let net = self.to_network()?;
        let adam = match &self.optimizer {
            Some(o) => {
                if o.m.len() != net.param_count() || o.v.len() != net.param_count() {
                    return Err(Error::shape("optimizer moments", net.param_count(), o.m.len()));
                }
                Adam {
                    lr: f64::from(o.lr),
                    step: o.step,
                    m: o.m.iter().map(|&x| f64::from(x)).collect(),
                    v: o.v.iter().map(|&x| f64::from(x)).collect(),
                }
            }
            None => Adam::new(self.config.learning_rate, net.param_count()),
        };
        Ok(TrainState {
            net,
            adam,
            seed: self.seed,
            epoch: self.epoch as usize,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        section(&mut out, b"CONF", self.config.to_text().as_bytes());

        let mut t = Vec::new();
        t.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for tensor in &self.tensors {
            t.extend_from_slice(&(tensor.name.len() as u32).to_le_bytes());
            t.extend_from_slice(tensor.name.as_bytes());
            t.extend_from_slice(&(tensor.shape.len() as u32).to_le_bytes());
            for &d in &tensor.shape {
                t.extend_from_slice(&(d as u32).to_le_bytes());
            }
            put_f32s(&mut t, &tensor.data);
        }
        section(&mut out, b"TENS", &t);

        if let Some(o) = &self.optimizer {
            let mut p = Vec::new();
            p.extend_from_slice(&o.step.to_le_bytes());
            p.extend_from_slice(&o.lr.to_le_bytes());
            p.extend_from_slice(&(o.m.len() as u64).to_le_bytes());
            put_f32s(&mut p, &o.m);
            put_f32s(&mut p, &o.v);
            section(&mut out, b"OPTM", &p);
        }

        let mut s = Vec::new();
        s.extend_from_slice(&self.seed.to_le_bytes());
        s.extend_from_slice(&self.epoch.to_le_bytes());
        section(&mut out, b"STAT", &s);
        out
    }

    /// Decode a checkpoint; `path` only labels errors.
    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Cursor { bytes, pos: 0, path };
        let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic {
                path: path.to_path_buf(),
                found: magic,
                expected: CHECKPOINT_MAGIC,
            });
        }
        let version = r.u32()?;
        if version > CHECKPOINT_VERSION || version == 0 {
            return Err(Error::UnsupportedVersion {
                path: path.to_path_buf(),
                version,
                supported: CHECKPOINT_VERSION,
            });
        }
        let mut config = None;
        let mut tensors = Vec::new();
        let mut optimizer = None;
        let (mut seed, mut epoch) = (0, 0);
        while r.pos < bytes.len() {
            let tag: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
            let len = r.u64()? as usize;
            let start = r.pos;
            r.take(len)?;
            let payload = &bytes[start..r.pos];
            // offsets in errors stay absolute; reads stop at the section end
            let mut p = Cursor {
                bytes: &bytes[..r.pos],
                pos: start,
                path,
            };
            match &tag {
                b"CONF" => {
                    let text = std::str::from_utf8(payload)
                        .map_err(|_| Error::Config("checkpoint config is not UTF-8".into()))?;
                    config = Some(NetworkConfig::from_text(text)?);
                }
                b"TENS" => {
                    let count = p.u32()?;
                    for _ in 0..count {
                        let name_len = p.u32()? as usize;
                        let name = String::from_utf8_lossy(p.take(name_len)?).into_owned();
                        let rank = p.u32()? as usize;
                        let shape = (0..rank).map(|_| p.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
                        let data = p.f32s(shape.iter().product())?;
                        tensors.push(NamedTensor { name, shape, data });
                    }
                }
                b"OPTM" => {
                    let step = p.u64()?;
                    let lr = f32::from_le_bytes(p.take(4)?.try_into().expect("4 bytes"));
                    let n = p.u64()? as usize;
                    let m = p.f32s(n)?;
                    let v = p.f32s(n)?;
                    optimizer = Some(OptimizerState { step, lr, m, v });
                }
                b"STAT" => {
                    seed = p.u64()?;
                    epoch = p.u64()?;
                }
                _ => {}
            }
        }
        Ok(Checkpoint {
            config: config.ok_or_else(|| Error::Config("checkpoint has no CONF section".into()))?,
            tensors,
            optimizer,
            seed,
            epoch,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(Error::file(path))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::decode(&fs::read(path).map_err(Error::file(path))?, path)
    }
}

fn section(out: &mut Vec<u8>, tag: &[u8; 4], payload: &[u8]) {
    out.extend_from_slice(tag);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
}

fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                offset: self.pos as u64,
                expected: (self.pos + n) as u64,
                available: self.bytes.len() as u64,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).unwrap_or(usize::MAX))?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}
