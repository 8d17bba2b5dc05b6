//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic          8 bytes  "BRXCKPT\0"
//! version        u32      currently 1
//! config_hash    u64
//! generation     u64
//! metadata_len   u32      followed by UTF-8 JSON {"network": .., "config": ".."}
//! has_optimizer  u8       0 or 1; if 1: step u64, lr f64, beta1 f64, beta2 f64, eps f64
//! array_count    u32
//! arrays         name_len u16, name, ndim u8, dims u32 × ndim, data f32 × prod(dims)
//! ```
//!
//! Arrays hold the network parameters in layout order, then (with an
//! optimizer) `adam.m/<name>` and `adam.v/<name>` for every parameter array.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Adam, Network, NetworkConfig};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"BRXCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub generation: u64,
    pub config_hash: u64,
    /// Run configuration text the checkpoint was produced under.
    pub config_text: String,
    pub network: Network,
    pub optimizer: Option<Adam>,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    network: NetworkConfig,
    config: String,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!(
                "truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn write_array(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.config_hash.to_le_bytes());
        out.extend_from_slice(&self.generation.to_le_bytes());
        let meta = serde_json::to_string(&Metadata {
            network: self.network.config().clone(),
            config: self.config_text.clone(),
        })
        .expect("metadata serializes");
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());

        let specs = self.network.param_specs();
        match &self.optimizer {
            Some(adam) => {
                out.push(1);
                out.extend_from_slice(&adam.step.to_le_bytes());
                for v in [adam.learning_rate, adam.beta1, adam.beta2, adam.epsilon] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            None => out.push(0),
        }
        let count = specs.len() * if self.optimizer.is_some() { 3 } else { 1 };
        out.extend_from_slice(&(count as u32).to_le_bytes());
        let params = self.network.params();
        for s in specs {
            write_array(&mut out, &s.name, &s.shape, &params[s.range()]);
        }
        if let Some(adam) = &self.optimizer {
            for (prefix, data) in [("adam.m/", &adam.m), ("adam.v/", &adam.v)] {
                for s in specs {
                    write_array(
                        &mut out,
                        &format!("{prefix}{}", s.name),
                        &s.shape,
                        &data[s.range()],
                    );
                }
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let config_hash = r.u64()?;
        let generation = r.u64()?;
        let meta_len = r.u32()? as usize;
        let meta: Metadata = serde_json::from_slice(r.take(meta_len)?)
            .map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
        let mut network = Network::new(meta.network, 0)?;
        let n = network.num_params();

        let mut optimizer = match r.u8()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                let mut adam = Adam::new(n, r.f64()?);
                adam.beta1 = r.f64()?;
                adam.beta2 = r.f64()?;
                adam.epsilon = r.f64()?;
                adam.step = step;
                Some(adam)
            }
            b => return Err(Error::Checkpoint(format!("bad optimizer flag {b}"))),
        };

        let specs = network.param_specs().to_vec();
        let sections = if optimizer.is_some() { 3 } else { 1 };
        let count = r.u32()? as usize;
        if count != specs.len() * sections {
            return Err(Error::Checkpoint(format!(
                "expected {} arrays, found {count}",
                specs.len() * sections
            )));
        }
        for section in 0..sections {
            let prefix = ["", "adam.m/", "adam.v/"][section];
            for spec in &specs {
                let name_len = r.u16()? as usize;
                let name = std::str::from_utf8(r.take(name_len)?)
                    .map_err(|_| Error::Checkpoint("array name is not UTF-8".into()))?;
                let want = format!("{prefix}{}", spec.name);
                if name != want {
                    return Err(Error::Checkpoint(format!(
                        "expected array {want}, found {name}"
                    )));
                }
                let ndim = r.u8()? as usize;
                let shape: Vec<usize> = (0..ndim)
                    .map(|_| r.u32().map(|d| d as usize))
                    .collect::<Result<_>>()?;
                if shape != spec.shape {
                    return Err(Error::ShapeMismatch(format!(
                        "{name}: checkpoint has {shape:?}, network expects {:?}",
                        spec.shape
                    )));
                }
                let bytes = r.take(spec.len() * 4)?;
                let dst: &mut [f64] = match section {
                    0 => &mut network.params_mut()[spec.range()],
                    1 => &mut optimizer.as_mut().unwrap().m[spec.range()],
                    _ => &mut optimizer.as_mut().unwrap().v[spec.range()],
                };
                for (d, chunk) in dst.iter_mut().zip(bytes.chunks_exact(4)) {
                    *d = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
                }
            }
        }
        if r.pos != buf.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Self {
            generation,
            config_hash,
            config_text: meta.config,
            network,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Loads a checkpoint and requires its network to have `expected` shape.
    pub fn load_matching(path: &Path, expected: &NetworkConfig) -> Result<Self> {
        let ck = Self::load(path)?;
        if ck.network.config() != expected {
            return Err(Error::ShapeMismatch(format!(
                "{}: checkpoint network {:?} differs from configured {:?}",
                path.display(),
                ck.network.config(),
                expected
            )));
        }
        Ok(ck)
    }
}
