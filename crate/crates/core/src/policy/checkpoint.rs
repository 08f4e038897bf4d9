//! Parameter files: one line of JSON header, then every tensor's entries as
//! little-endian f64 in header order.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{ParamStore, Tensor};

pub const CHECKPOINT_VERSION: &str = "imagnav-ckpt-v1";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: String,
    tensors: Vec<TensorEntry>,
    config: serde_json::Value,
}

pub fn write_checkpoint(path: &Path, params: &ParamStore, config: &serde_json::Value) -> Result<()> {
    let header = Header {
        version: CHECKPOINT_VERSION.into(),
        tensors: params
            .names
            .iter()
            .zip(&params.tensors)
            .map(|(name, t)| TensorEntry { name: name.clone(), shape: [t.rows, t.cols] })
            .collect(),
        config: config.clone(),
    };
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for t in &params.tensors {
        for v in &t.data {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(ParamStore, serde_json::Value)> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line)?;
    let header: Header =
        serde_json::from_slice(&line).map_err(|e| Error::Checkpoint(format!("unreadable header: {e}")))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {:?}", header.version)));
    }
    let mut params = ParamStore::new();
    let mut buf = [0u8; 8];
    for e in header.tensors {
        let n = e.shape[0] * e.shape[1];
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut buf).map_err(|_| Error::Checkpoint(format!("truncated data in tensor {}", e.name)))?;
            data.push(f64::from_le_bytes(buf));
        }
        params.push(e.name, Tensor::from_vec(e.shape[0], e.shape[1], data));
    }
    if r.read(&mut buf)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after the last tensor".into()));
    }
    Ok((params, header.config))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        let mut p = ParamStore::new();
        p.push("a", Tensor::from_vec(2, 2, vec![1.0, -0.0, f64::MIN_POSITIVE, 1e300]));
        p.push("b", Tensor::scalar(std::f64::consts::PI));
        let cfg = serde_json::json!({"d": 4});
        write_checkpoint(&path, &p, &cfg).unwrap();
        let (q, c) = read_checkpoint(&path).unwrap();
        assert_eq!(p, q);
        assert_eq!(c, cfg);
        let text = std::fs::read(&path).unwrap();
        assert!(text.starts_with(b"{\"version\":\"imagnav-ckpt-v1\""));
    }

    #[test]
    fn truncation_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        let mut p = ParamStore::new();
        p.push("a", Tensor::zeros(3, 3));
        write_checkpoint(&path, &p, &serde_json::Value::Null).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Checkpoint(_))));
    }
}
