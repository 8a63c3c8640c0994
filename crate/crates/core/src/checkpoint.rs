//! Versioned parameter container.
//!
//! Layout: magic, `u32` version, `u64` header length, JSON header, `f64`
//! little-endian payload, then a SHA-256 of everything before it.

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Float;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"OFSYNCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    config_hash: String,
    config: RunConfig,
    entries: Vec<Entry>,
    meta: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub config_hash: String,
    pub entries: Vec<Entry>,
    pub payload: Vec<f64>,
    pub meta: serde_json::Map<String, serde_json::Value>,
}

impl Checkpoint {
    pub fn new(config: &RunConfig) -> Self {
        Self { config: config.clone(), config_hash: config.hash(), entries: Vec::new(), payload: Vec::new(), meta: Default::default() }
    }

    /// Appends every tensor of `store` under `prefix/`.
    pub fn add_store<T: Float>(&mut self, prefix: &str, store: &ParamStore<T>) {
        for (name, t) in store.iter() {
            self.entries.push(Entry { name: format!("{prefix}/{name}"), shape: t.shape().to_vec(), offset: self.payload.len() });
            self.payload.extend(t.to_f64_vec());
        }
    }

    pub fn has_prefix(&self, prefix: &str) -> bool {
        let p = format!("{prefix}/");
        self.entries.iter().any(|e| e.name.starts_with(&p))
    }

    pub fn tensor(&self, name: &str) -> Option<(&[usize], &[f64])> {
        self.entries.iter().find(|e| e.name == name).map(|e| {
            let n: usize = e.shape.iter().product();
            (e.shape.as_slice(), &self.payload[e.offset..e.offset + n])
        })
    }

    /// Overwrites every parameter of `store` from `prefix/`; each must be
    /// present with a matching shape. Frozen stores stay frozen.
    pub fn restore<T: Float>(&self, prefix: &str, store: &mut ParamStore<T>) -> Result<()> {
        let frozen = store.is_frozen();
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = format!("{prefix}/{}", store.name(id));
            let (shape, data) = self.tensor(&name).ok_or_else(|| Error::Missing(format!("checkpoint has no tensor {name}")))?;
            if shape != store.get(id).shape() {
                return Err(Error::SizeMismatch(format!("{name}: checkpoint {shape:?}, model {:?}", store.get(id).shape())));
            }
            store.set(id, data.iter().map(|&v| T::of(v)).collect());
        }
        if frozen {
            store.freeze();
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header { config_hash: self.config_hash.clone(), config: self.config.clone(), entries: self.entries.clone(), meta: self.meta.clone() };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + json.len() + 8 * self.payload.len() + 32);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for v in &self.payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 52 || &bytes[..8] != MAGIC {
            return Err(Error::Integrity("not a checkpoint file".into()));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != trailer {
            return Err(Error::Integrity("checksum mismatch".into()));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Version(version));
        }
        let hlen = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
        let rest = &body[20..];
        if hlen > rest.len() || (rest.len() - hlen) % 8 != 0 {
            return Err(Error::Integrity("truncated header or payload".into()));
        }
        let header: Header = serde_json::from_slice(&rest[..hlen])?;
        let payload: Vec<f64> = rest[hlen..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        for e in &header.entries {
            if e.offset + e.shape.iter().product::<usize>() > payload.len() {
                return Err(Error::Integrity(format!("entry {} runs past the payload", e.name)));
            }
        }
        Ok(Self { config: header.config, config_hash: header.config_hash, entries: header.entries, payload, meta: header.meta })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes())?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    /// Reads a checkpoint; with `expected`, its config hash must match unless
    /// `force` is set.
    pub fn load(path: &Path, expected: Option<&RunConfig>, force: bool) -> Result<Self> {
        let ck = Self::from_bytes(&std::fs::read(path)?)?;
        if let Some(cfg) = expected {
            let want = cfg.hash();
            if want != ck.config_hash && !force {
                return Err(Error::HashMismatch { expected: want, found: ck.config_hash });
            }
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{seeded_rng, Builder};

    fn store() -> ParamStore<f32> {
        let mut ps = ParamStore::new();
        let mut rng = seeded_rng(3, "t");
        let mut b = Builder::new(&mut ps, &mut rng);
        b.normal("a.weight", &[2, 3], 1.0);
        b.uniform("a.bias", &[3], 0.1);
        ps
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = RunConfig::default();
        let ps = store();
        let mut ck = Checkpoint::new(&cfg);
        ck.add_store("g", &ps);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        let mut other = ParamStore::<f32>::new();
        let mut rng = seeded_rng(9, "t");
        let mut b = Builder::new(&mut other, &mut rng);
        b.zeros("a.weight", &[2, 3]);
        b.zeros("a.bias", &[3]);
        back.restore("g", &mut other).unwrap();
        assert_eq!(other.fingerprint(), ps.fingerprint());
    }

    #[test]
    fn tampering_and_version_are_rejected() {
        let mut ck = Checkpoint::new(&RunConfig::default());
        ck.add_store("g", &store());
        let mut bytes = ck.to_bytes();
        let n = bytes.len();
        bytes[n - 40] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Integrity(_))));
        let mut bytes = ck.to_bytes();
        bytes[8] = 7;
        let n = bytes.len();
        let digest = Sha256::digest(&bytes[..n - 32]);
        bytes[n - 32..].copy_from_slice(&digest);
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Version(7))));
    }

    #[test]
    fn hash_mismatch_needs_force() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let cfg = RunConfig::default();
        Checkpoint::new(&cfg).save(&path).unwrap();
        let mut big = cfg.clone();
        big.image_size = 128;
        assert!(matches!(Checkpoint::load(&path, Some(&big), false), Err(Error::HashMismatch { .. })));
        assert!(Checkpoint::load(&path, Some(&big), true).is_ok());
        assert!(Checkpoint::load(&path, Some(&cfg), false).is_ok());
    }
}
