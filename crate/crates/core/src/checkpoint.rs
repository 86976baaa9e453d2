//! Versioned single-file checkpoints.
//!
//! Layout: magic `WMCK`, little-endian `u32` format version, `u64` header
//! length, a JSON header, then all tensors in libtorch's multi-tensor format.
//! Each var store is stored under its own section prefix (`section.name`).

use std::collections::HashMap;
use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use tch::{nn, Tensor};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"WMCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    /// What the file holds, e.g. `channel` or `watermark`.
    pub kind: String,
    pub format_version: u32,
    pub step: u64,
    /// Model configuration, opaque to this module.
    pub config: serde_json::Value,
    /// Section names in write order.
    pub sections: Vec<String>,
}

pub struct Checkpoint {
    pub header: Header,
    tensors: HashMap<String, Tensor>,
}

pub fn save(
    path: impl AsRef<Path>,
    kind: &str,
    step: u64,
    config: serde_json::Value,
    sections: &[(&str, &nn::VarStore)],
) -> Result<()> {
    let path = path.as_ref();
    let header = Header {
        kind: kind.to_string(),
        format_version: FORMAT_VERSION,
        step,
        config,
        sections: sections.iter().map(|(n, _)| n.to_string()).collect(),
    };
    let mut named: Vec<(String, Tensor)> = Vec::new();
    for (section, vs) in sections {
        let mut vars: Vec<_> = vs.variables().into_iter().collect();
        vars.sort_by(|a, b| a.0.cmp(&b.0));
        for (name, t) in vars {
            named.push((format!("{section}.{name}"), t.detach()));
        }
    }
    let mut blob = Vec::new();
    Tensor::save_multi_to_stream(&named, &mut blob)?;
    let header_bytes = serde_json::to_vec(&header)?;

    let mut out = Vec::with_capacity(16 + header_bytes.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    out.extend_from_slice(&blob);
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))?;
    Ok(())
}

impl Checkpoint {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bad = |reason: &str| Error::Checkpoint { path: path.to_path_buf(), reason: reason.to_string() };
        let mut bytes = Vec::new();
        fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| Error::io(path, e))?;
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("missing WMCK magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported format version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes.get(16..16 + header_len).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| bad(&format!("bad header: {e}")))?;
        let tensors = Tensor::load_multi_from_stream(Cursor::new(&bytes[16 + header_len..]))
            .map_err(|e| bad(&format!("bad tensor payload: {e}")))?
            .into_iter()
            .collect();
        Ok(Self { header, tensors })
    }

    pub fn expect_kind(&self, kind: &str, path: &Path) -> Result<()> {
        if self.header.kind == kind {
            Ok(())
        } else {
            Err(Error::Checkpoint {
                path: path.to_path_buf(),
                reason: format!("expected a {kind} checkpoint, found {}", self.header.kind),
            })
        }
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.header.sections.iter().any(|s| s == section)
    }

    /// Copies every variable of `vs` from `section`. Fails if any variable is
    /// missing or has a different shape.
    pub fn restore(&self, section: &str, vs: &mut nn::VarStore) -> Result<()> {
        let mut vars: Vec<_> = vs.variables().into_iter().collect();
        vars.sort_by(|a, b| a.0.cmp(&b.0));
        tch::no_grad(|| {
            for (name, mut var) in vars {
                let key = format!("{section}.{name}");
                let src =
                    self.tensors.get(&key).ok_or_else(|| Error::Config(format!("checkpoint lacks tensor {key}")))?;
                if src.size() != var.size() {
                    return Err(Error::Config(format!(
                        "tensor {key} has shape {:?}, model expects {:?}",
                        src.size(),
                        var.size()
                    )));
                }
                var.copy_(src);
            }
            Ok(())
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_util;

    #[test]
    fn save_and_restore_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let vs = nn::VarStore::new(tch::Device::Cpu);
        let _w = vs.root().var_copy("w", &Tensor::from_slice(&[1.0f32, 2.0, 3.0]));
        let _b = vs.root().zeros_no_train("buf", &[2]);
        save(&path, "test", 7, serde_json::json!({"a": 1}), &[("net", &vs)]).unwrap();

        let mut other = nn::VarStore::new(tch::Device::Cpu);
        let _w = other.root().zeros("w", &[3]);
        let _b = other.root().ones_no_train("buf", &[2]);
        let ck = Checkpoint::load(&path).unwrap();
        assert_eq!(ck.header.step, 7);
        ck.expect_kind("test", &path).unwrap();
        assert!(ck.expect_kind("channel", &path).is_err());
        ck.restore("net", &mut other).unwrap();
        assert_eq!(tensor_util::fingerprint(&vs), tensor_util::fingerprint(&other));
    }

    #[test]
    fn rejects_garbage_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk");
        fs::write(&path, b"not a checkpoint at all").unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint { .. })));
        assert!(matches!(Checkpoint::load(dir.path().join("missing")), Err(Error::Io { .. })));
    }
}
