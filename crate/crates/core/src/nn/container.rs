//! Binary parameter container.
//!
//! ```text
//! magic        4 bytes  "DBLM"
//! version      u32 LE
//! config hash  32 bytes SHA-256 of the architecture JSON
//! arch length  u32 LE
//! arch JSON    UTF-8
//! n_params     u64 LE
//! params       n_params x f32 LE
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CnnConfig, SmallCnn};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"DBLM";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub version: u32,
    pub config_hash: String,
    pub architecture: CnnConfig,
    pub n_params: u64,
}

fn config_hash(arch_json: &[u8]) -> [u8; 32] {
    Sha256::digest(arch_json).into()
}

pub fn save_model(model: &SmallCnn, path: &Path) -> Result<ModelHeader> {
    let arch = serde_json::to_vec(model.config())?;
    let hash = config_hash(&arch);
    let params = crate::nn::Classifier::params(model);
    let mut buf = Vec::with_capacity(48 + arch.len() + params.len() * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&hash);
    buf.extend_from_slice(&(arch.len() as u32).to_le_bytes());
    buf.extend_from_slice(&arch);
    buf.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, buf)?;
    Ok(ModelHeader {
        version: VERSION,
        config_hash: hex::encode(hash),
        architecture: model.config().clone(),
        n_params: params.len() as u64,
    })
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Container(format!("truncated while reading {what}")));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
}

pub fn load_model(path: &Path) -> Result<(SmallCnn, ModelHeader)> {
    let buf = fs::read(path)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Container("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(r.take(4, "version")?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Container(format!("unsupported version {version}")));
    }
    let hash: [u8; 32] = r.take(32, "config hash")?.try_into().expect("32 bytes");
    let arch_len = u32::from_le_bytes(r.take(4, "architecture length")?.try_into().expect("4 bytes")) as usize;
    let arch = r.take(arch_len, "architecture")?;
    if config_hash(arch) != hash {
        return Err(Error::Container("architecture hash mismatch".into()));
    }
    let config: CnnConfig = serde_json::from_slice(arch)?;
    let n_params = u64::from_le_bytes(r.take(8, "parameter count")?.try_into().expect("8 bytes"));
    let raw = r.take(n_params as usize * 4, "parameters")?;
    if r.pos != buf.len() {
        return Err(Error::Container("trailing bytes after parameters".into()));
    }
    let params: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let model = SmallCnn::from_params(config.clone(), params)
        .ok_or_else(|| Error::Container("parameter count does not match architecture".into()))?;
    Ok((
        model,
        ModelHeader {
            version,
            config_hash: hex::encode(hash),
            architecture: config,
            n_params,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Classifier;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let model = SmallCnn::new(CnnConfig::default(), 9);
        let header = save_model(&model, &path).unwrap();
        let (loaded, h2) = load_model(&path).unwrap();
        assert_eq!(header, h2);
        let a: Vec<u32> = model.params().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = loaded.params().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        save_model(&SmallCnn::new(CnnConfig::default(), 1), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_model(&path), Err(Error::Container(_))));
        fs::write(&path, b"XXXX").unwrap();
        assert!(matches!(load_model(&path), Err(Error::Container(_))));
    }
}
