//! Checkpoint archive: one file holding named f64 parameter arrays plus a
//! JSON header with configs and a mandatory version field.
//!
//! Layout: 8-byte magic `VXCKPT01`, u64 LE header length, JSON header,
//! concatenated little-endian f64 array payloads in header order.

use crate::error::CoreError;
use crate::nn::Tensor;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const CKPT_MAGIC: [u8; 8] = *b"VXCKPT01";
pub const CKPT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    kind: String,
    meta: serde_json::Value,
    arrays: Vec<ArrayEntry>,
}

#[derive(Debug)]
pub struct CheckpointData {
    pub version: u32,
    pub kind: String,
    pub meta: serde_json::Value,
    pub arrays: Vec<(String, Tensor)>,
}

pub fn save_checkpoint(path: &Path, data: &CheckpointData) -> Result<(), CoreError> {
    let header = Header {
        version: data.version,
        kind: data.kind.clone(),
        meta: data.meta.clone(),
        arrays: data
            .arrays
            .iter()
            .map(|(n, t)| ArrayEntry {
                name: n.clone(),
                shape: t.shape.clone(),
            })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| CoreError::Data(format!("serialize checkpoint header: {e}")))?;
    let mut f = std::fs::File::create(path)
        .map_err(|e| CoreError::io(path.display().to_string(), e))?;
    f.write_all(&CKPT_MAGIC)
        .and_then(|_| f.write_all(&(header_bytes.len() as u64).to_le_bytes()))
        .and_then(|_| f.write_all(&header_bytes))
        .map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let mut payload = Vec::new();
    for (_, t) in &data.arrays {
        for &v in &t.data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    f.write_all(&payload)
        .map_err(|e| CoreError::io(path.display().to_string(), e))
}

pub fn load_checkpoint(path: &Path) -> Result<CheckpointData, CoreError> {
    let mut f = std::fs::File::open(path)
        .map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)
        .map_err(|e| CoreError::io(path.display().to_string(), e))?;
    if magic != CKPT_MAGIC {
        return Err(CoreError::Data(format!(
            "{}: not a checkpoint file",
            path.display()
        )));
    }
    let mut len_bytes = [0u8; 8];
    f.read_exact(&mut len_bytes)
        .map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let hlen = u64::from_le_bytes(len_bytes) as usize;
    let mut hbuf = vec![0u8; hlen];
    f.read_exact(&mut hbuf)
        .map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let header: Header = serde_json::from_slice(&hbuf)
        .map_err(|e| CoreError::Data(format!("{}: bad header: {e}", path.display())))?;
    if header.version != CKPT_VERSION {
        return Err(CoreError::Data(format!(
            "{}: unsupported checkpoint version {}",
            path.display(),
            header.version
        )));
    }
    let mut arrays = Vec::with_capacity(header.arrays.len());
    for entry in header.arrays {
        let n: usize = entry.shape.iter().product();
        let mut buf = vec![0u8; n * 8];
        f.read_exact(&mut buf)
            .map_err(|e| CoreError::io(path.display().to_string(), e))?;
        let data: Vec<f64> = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        arrays.push((entry.name, Tensor::from_vec(&entry.shape, data)));
    }
    Ok(CheckpointData {
        version: header.version,
        kind: header.kind,
        meta: header.meta,
        arrays,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let data = CheckpointData {
            version: CKPT_VERSION,
            kind: "test".into(),
            meta: serde_json::json!({"a": 1, "b": [2, 3]}),
            arrays: vec![
                ("w".into(), Tensor::from_vec(&[2, 2], vec![1.0, -2.5, 0.25, 1e-12])),
                ("b".into(), Tensor::from_vec(&[3], vec![0.0, 7.0, -1.0])),
            ],
        };
        save_checkpoint(&path, &data).unwrap();
        let r = load_checkpoint(&path).unwrap();
        assert_eq!(r.kind, "test");
        assert_eq!(r.meta, data.meta);
        assert_eq!(r.arrays.len(), 2);
        assert_eq!(r.arrays[0].1.data, data.arrays[0].1.data);
        assert_eq!(r.arrays[1].1.shape, vec![3]);
    }

    #[test]
    fn non_checkpoint_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk");
        std::fs::write(&path, b"hello world, not a checkpoint").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
