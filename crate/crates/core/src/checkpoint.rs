//! Self-describing checkpoint container.
//!
//! Layout: the 8-byte magic `LRLMCKPT`, a little-endian `u32` format version,
//! a little-endian `u64` header length, a JSON header, then every tensor as
//! consecutive little-endian `f32` values in the order the header lists them.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::optim::Adam;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"LRLMCKPT";
pub const VERSION: u32 = 1;

/// Position of a ChaCha8 stream, enough to resume it exactly.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: hex::encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let bytes = hex::decode(&self.seed).map_err(|e| Error::Checkpoint(format!("rng seed: {e}")))?;
        let seed: [u8; 32] = bytes
            .try_into()
            .map_err(|_| Error::Checkpoint("rng seed must be 32 bytes".into()))?;
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|e| Error::Checkpoint(format!("rng word position: {e}")))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Param,
    Moment1,
    Moment2,
    Buffer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    net: String,
    name: String,
    role: Role,
    shape: Vec<usize>,
}

/// Parameters, buffers and optimizer state of one network.
#[derive(Clone, Debug, PartialEq)]
pub struct NetState {
    pub name: String,
    /// Architecture constants, as serialised by the network's spec type.
    pub spec: serde_json::Value,
    pub tensors: Vec<(String, Role, Tensor<f32>)>,
    pub adam_step: Option<u64>,
}

impl NetState {
    pub fn capture(name: &str, spec: serde_json::Value, store: &ParamStore<f32>, adam: Option<&Adam>) -> Self {
        let mut tensors = Vec::new();
        for p in store.params() {
            tensors.push((p.name.clone(), Role::Param, p.value.clone()));
            if adam.is_some() {
                tensors.push((p.name.clone(), Role::Moment1, p.m.clone()));
                tensors.push((p.name.clone(), Role::Moment2, p.v.clone()));
            }
        }
        for b in store.buffers() {
            tensors.push((b.name.clone(), Role::Buffer, b.value.clone()));
        }
        NetState {
            name: name.to_string(),
            spec,
            tensors,
            adam_step: adam.map(|a| a.step),
        }
    }

    /// Writes values, buffers and (when present) moments into a store of the same layout.
    pub fn restore(&self, store: &mut ParamStore<f32>, adam: Option<&mut Adam>) -> Result<()> {
        let find = |name: &str, role: Role| {
            self.tensors
                .iter()
                .find(|(n, r, _)| n == name && *r == role)
                .map(|(_, _, t)| t)
        };
        let missing = |name: &str| Error::Checkpoint(format!("network {:?} has no tensor {name:?}", self.name));
        let fit = |dst: &mut Tensor<f32>, src: &Tensor<f32>, name: &str| {
            if dst.shape() != src.shape() {
                return Err(Error::Checkpoint(format!(
                    "{}/{name}: stored shape {:?}, network expects {:?}",
                    self.name,
                    src.shape(),
                    dst.shape()
                )));
            }
            *dst = src.clone();
            Ok(())
        };
        let count = |role: Role| self.tensors.iter().filter(|(_, r, _)| *r == role).count();
        if count(Role::Param) != store.params().len() || count(Role::Buffer) != store.buffers().len() {
            return Err(Error::Checkpoint(format!(
                "network {:?}: stored layout does not match ({} params, {} buffers expected)",
                self.name,
                store.params().len(),
                store.buffers().len()
            )));
        }
        let with_moments = adam.is_some();
        for p in store.params_mut() {
            let name = p.name.clone();
            fit(&mut p.value, find(&name, Role::Param).ok_or_else(|| missing(&name))?, &name)?;
            if with_moments {
                if let (Some(m), Some(v)) = (find(&name, Role::Moment1), find(&name, Role::Moment2)) {
                    fit(&mut p.m, m, &name)?;
                    fit(&mut p.v, v, &name)?;
                } else {
                    return Err(Error::Checkpoint(format!("{}/{name}: optimizer moments not stored", self.name)));
                }
            }
            p.grad.fill(0.0);
        }
        for b in store.buffers_mut() {
            let name = b.name.clone();
            fit(&mut b.value, find(&name, Role::Buffer).ok_or_else(|| missing(&name))?, &name)?;
        }
        if let Some(adam) = adam {
            adam.step = self
                .adam_step
                .ok_or_else(|| Error::Checkpoint(format!("{}: optimizer step not stored", self.name)))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    metadata: serde_json::Value,
    specs: Vec<(String, serde_json::Value, Option<u64>)>,
    rng: Option<RngState>,
    tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Free-form run information: config, iteration, balance state, ….
    pub metadata: serde_json::Value,
    pub nets: Vec<NetState>,
    pub rng: Option<RngState>,
}

impl Checkpoint {
    pub fn new(metadata: serde_json::Value) -> Self {
        Checkpoint {
            metadata,
            nets: Vec::new(),
            rng: None,
        }
    }

    pub fn net(&self, name: &str) -> Result<&NetState> {
        self.nets
            .iter()
            .find(|n| n.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("checkpoint holds no network named {name:?}")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::new();
        let mut blob = Vec::new();
        for net in &self.nets {
            for (name, role, t) in &net.tensors {
                entries.push(TensorEntry {
                    net: net.name.clone(),
                    name: name.clone(),
                    role: *role,
                    shape: t.shape().to_vec(),
                });
                for v in t.data() {
                    blob.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let header = Header {
            metadata: self.metadata.clone(),
            specs: self.nets.iter().map(|n| (n.name.clone(), n.spec.clone(), n.adam_step)).collect(),
            rng: self.rng.clone(),
            tensors: entries,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + json.len() + blob.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&blob);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        let mut blob = &bytes[20 + hlen..];
        let mut nets: Vec<NetState> = header
            .specs
            .into_iter()
            .map(|(name, spec, adam_step)| NetState {
                name,
                spec,
                tensors: Vec::new(),
                adam_step,
            })
            .collect();
        for e in header.tensors {
            let n: usize = e.shape.iter().product();
            let raw = blob.get(..4 * n).ok_or_else(|| bad("truncated tensor data"))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            blob = &blob[4 * n..];
            let net = nets
                .iter_mut()
                .find(|s| s.name == e.net)
                .ok_or_else(|| Error::Checkpoint(format!("tensor for unknown network {:?}", e.net)))?;
            net.tensors.push((e.name, e.role, Tensor::from_vec(&e.shape, data)?));
        }
        if !blob.is_empty() {
            return Err(bad("trailing bytes after tensor data"));
        }
        Ok(Checkpoint {
            metadata: header.metadata,
            nets,
            rng: header.rng,
        })
    }

    /// Writes to a sibling temporary file, then renames over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Replaces `path` with `bytes` via a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
