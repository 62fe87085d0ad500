//! Single-file parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"AGCK"            magic
//! u32                format version (1)
//! u64                header length H
//! [u8; H]            UTF-8 JSON header
//! [f64; ...]         array data, row-major, concatenated
//! ```
//!
//! The header holds `{version, kind, config, config_hash, arrays}` where each
//! array entry is `{name, shape: [rows, cols], offset}` with `offset`
//! counted in f64 elements from the start of the data section, and
//! `config_hash` is the hex SHA-256 of the compact JSON of `config`.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tape::{Mat, ParamStore};

const MAGIC: &[u8; 4] = b"AGCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub config: serde_json::Value,
    pub arrays: Vec<(String, Mat)>,
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: [usize; 2],
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    kind: String,
    config: serde_json::Value,
    config_hash: String,
    arrays: Vec<ArrayEntry>,
}

pub fn config_hash(config: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(config.to_string().as_bytes()))
}

impl Checkpoint {
    /// Collects every array of each store under `prefix/name`.
    pub fn from_stores<C: Serialize>(kind: &str, config: &C, stores: &[(String, &ParamStore)]) -> Self {
        let arrays = stores
            .iter()
            .flat_map(|(prefix, store)| store.iter().map(move |(_, name, m)| (format!("{prefix}/{name}"), m.clone())))
            .collect();
        Self { kind: kind.to_string(), config: serde_json::to_value(config).expect("configs serialize"), arrays }
    }

    pub fn config_hash(&self) -> String {
        config_hash(&self.config)
    }

    /// Decodes the stored config, checking the checkpoint kind.
    pub fn config_as<C: DeserializeOwned>(&self, kind: &str) -> Result<C> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!("expected a {kind} checkpoint, found {}", self.kind)));
        }
        serde_json::from_value(self.config.clone()).map_err(|e| Error::Checkpoint(format!("bad config: {e}")))
    }

    /// Copies the arrays stored under `prefix/` into `store`; names and
    /// shapes must match exactly.
    pub fn restore_into(&self, prefix: &str, store: &mut ParamStore) -> Result<()> {
        let head = format!("{prefix}/");
        let mut found = 0;
        for (name, m) in &self.arrays {
            let Some(local) = name.strip_prefix(&head) else { continue };
            let id = store.id(local).ok_or_else(|| Error::Checkpoint(format!("unexpected array {name}")))?;
            if store.get(id).dim() != m.dim() {
                return Err(Error::Checkpoint(format!("array {name} has shape {:?}, model expects {:?}", m.dim(), store.get(id).dim())));
            }
            store.get_mut(id).assign(m);
            found += 1;
        }
        if found != store.len() {
            return Err(Error::Checkpoint(format!("{prefix}: checkpoint holds {found} of {} arrays", store.len())));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut entries = Vec::with_capacity(self.arrays.len());
        let mut offset = 0;
        for (name, m) in &self.arrays {
            entries.push(ArrayEntry { name: name.clone(), shape: [m.nrows(), m.ncols()], offset });
            offset += m.len();
        }
        let header = Header {
            version: FORMAT_VERSION,
            kind: self.kind.clone(),
            config: self.config.clone(),
            config_hash: self.config_hash(),
            arrays: entries,
        };
        let header = serde_json::to_vec(&header).expect("headers serialize");
        let mut out = Vec::with_capacity(16 + header.len() + offset * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, m) in &self.arrays {
            for v in m.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Checkpoint(msg.to_string());
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let data_start = 16usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
        let header: Header =
            serde_json::from_slice(&bytes[16..data_start]).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        if config_hash(&header.config) != header.config_hash {
            return Err(bad("config hash mismatch"));
        }
        let data = &bytes[data_start..];
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for e in header.arrays {
            let n = e.shape[0] * e.shape[1];
            let lo = e.offset * 8;
            let hi = lo + n * 8;
            if hi > data.len() {
                return Err(Error::Checkpoint(format!("array {} runs past the end of the file", e.name)));
            }
            let values: Vec<f64> = data[lo..hi].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            let m = Mat::from_shape_vec((e.shape[0], e.shape[1]), values).expect("length checked above");
            arrays.push((e.name, m));
        }
        Ok(Self { kind: header.kind, config: header.config, arrays })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
