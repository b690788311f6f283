//! Versioned parameter container.
//!
//! Layout (little-endian): magic `RGCK`, `u32` version, `u64` run seed,
//! `u32` network count, then per network: `u32` + UTF-8 name, `u32` + UTF-8
//! config echo, `u32` tensor count, and per tensor `u32` rank, `u32` dims and
//! `f32` values.

use std::path::Path;

use crate::error::{NetError, Result};
use crate::network::{NetConfig, NetKind, Network};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"RGCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub kind: NetKind,
    pub config: NetConfig,
    pub tensors: Vec<StoredTensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub entries: Vec<CheckpointEntry>,
}

impl Checkpoint {
    pub fn new(seed: u64) -> Self {
        Self { seed, entries: Vec::new() }
    }

    /// Stores the parameters of `net` under `name`, replacing any entry with
    /// the same name.
    pub fn insert<T: Scalar>(&mut self, name: &str, net: &Network<T>) {
        let tensors = net
            .params()
            .iter()
            .map(|p| StoredTensor {
                shape: p.shape.clone(),
                values: p.value.iter().map(|v| v.as_f64() as f32).collect(),
            })
            .collect();
        let entry = CheckpointEntry { name: name.to_string(), kind: net.kind(), config: net.config().clone(), tensors };
        match self.entries.iter_mut().find(|e| e.name == name) {
            Some(e) => *e = entry,
            None => self.entries.push(entry),
        }
    }

    pub fn entry(&self, name: &str) -> Option<&CheckpointEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Rebuilds the network stored under `name`, which must have been saved
    /// with exactly this kind and config.
    pub fn restore<T: Scalar>(&self, name: &str, kind: NetKind, cfg: &NetConfig) -> Result<Network<T>> {
        let e = self
            .entry(name)
            .ok_or_else(|| NetError::Checkpoint(format!("no network named `{name}`")))?;
        if e.kind != kind || &e.config != cfg {
            return Err(NetError::ConfigMismatch {
                name: name.to_string(),
                stored: e.config.to_text(e.kind),
                expected: cfg.to_text(kind),
            });
        }
        self.network(name)
    }

    /// Rebuilds the network stored under `name` from its own config echo.
    pub fn network<T: Scalar>(&self, name: &str) -> Result<Network<T>> {
        let e = self
            .entry(name)
            .ok_or_else(|| NetError::Checkpoint(format!("no network named `{name}`")))?;
        let mut net = Network::<T>::build(e.kind, &e.config)?;
        let mut params = net.params_mut();
        if params.len() != e.tensors.len() {
            return Err(NetError::Checkpoint(format!(
                "`{name}` stores {} tensors, architecture has {}",
                e.tensors.len(),
                params.len()
            )));
        }
        for (p, t) in params.iter_mut().zip(&e.tensors) {
            if p.shape != t.shape {
                return Err(NetError::Checkpoint(format!(
                    "`{name}` tensor shape {:?}, architecture expects {:?}",
                    t.shape, p.shape
                )));
            }
            for (dst, &v) in p.value.iter_mut().zip(&t.values) {
                *dst = T::lit(v as f64);
            }
        }
        Ok(net)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        put_u32(&mut out, self.entries.len());
        for e in &self.entries {
            put_str(&mut out, &e.name);
            put_str(&mut out, &e.config.to_text(e.kind));
            put_u32(&mut out, e.tensors.len());
            for t in &e.tensors {
                put_u32(&mut out, t.shape.len());
                for &d in &t.shape {
                    put_u32(&mut out, d);
                }
                for v in &t.values {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(NetError::Checkpoint(format!("bad magic {magic:?}")));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(NetError::Checkpoint(format!("unsupported version {version}")));
        }
        let seed = u64::from_le_bytes(r.take(8, "seed")?.try_into().expect("8 bytes"));
        let count = r.u32("network count")?;
        let mut entries = Vec::new();
        for _ in 0..count {
            let name = r.string("name")?;
            let (kind, config) = NetConfig::from_text(&r.string("config")?)?;
            let n_tensors = r.u32("tensor count")?;
            let mut tensors = Vec::new();
            for _ in 0..n_tensors {
                let rank = r.u32("rank")? as usize;
                let mut shape = Vec::with_capacity(rank);
                for _ in 0..rank {
                    shape.push(r.u32("dim")? as usize);
                }
                let n: usize = shape.iter().product();
                let raw = r.take(n.checked_mul(4).ok_or_else(|| NetError::Checkpoint("tensor too large".into()))?, "values")?;
                let values = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
                tensors.push(StoredTensor { shape, values });
            }
            entries.push(CheckpointEntry { name, kind, config, tensors });
        }
        if r.at != bytes.len() {
            return Err(NetError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.at)));
        }
        Ok(Self { seed, entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(u32::try_from(v).expect("checkpoint field fits u32")).to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            NetError::Checkpoint(format!("truncated while reading {what}"))
        })?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        String::from_utf8(self.take(n, what)?.to_vec())
            .map_err(|_| NetError::Checkpoint(format!("{what} is not UTF-8")))
    }
}
