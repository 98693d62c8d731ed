//! Checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "UGACCKPT"
//! version      u32      1
//! header_len   u64
//! header       header_len bytes of UTF-8 JSON (CheckpointHeader)
//! then, for each entry of header.tensors, in order:
//!   name_len   u32
//!   name       name_len bytes UTF-8
//!   ndim       u32
//!   dims       ndim x u64
//!   values     prod(dims) x f64
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::NetConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"UGACCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub net: NetConfig,
    pub train_step: u64,
    /// Number of completed epochs.
    pub epoch: usize,
    /// Free-form producer metadata (training config, loss mode, seed).
    #[serde(default)]
    pub meta: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    values: Vec<Vec<f64>>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn fail<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Format {
            path: self.path.to_path_buf(),
            offset: self.pos,
            msg: msg.into(),
        })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return self.fail(format!("truncated: need {n} more bytes"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

impl Checkpoint {
    pub fn new<'t>(
        net: &NetConfig,
        train_step: u64,
        epoch: usize,
        meta: serde_json::Value,
        named: impl IntoIterator<Item = (String, &'t Tensor)>,
    ) -> Checkpoint {
        let mut tensors = Vec::new();
        let mut values = Vec::new();
        for (name, t) in named {
            tensors.push(TensorEntry {
                name,
                shape: t.shape().to_vec(),
            });
            values.push(t.to_vec());
        }
        Checkpoint {
            header: CheckpointHeader {
                net: net.clone(),
                train_step,
                epoch,
                meta,
                tensors,
            },
            values,
        }
    }

    pub fn get(&self, name: &str) -> Option<(&[usize], &[f64])> {
        self.header
            .tensors
            .iter()
            .position(|e| e.name == name)
            .map(|i| (self.header.tensors[i].shape.as_slice(), self.values[i].as_slice()))
    }

    /// Copies the stored values for `name` into `dst`.
    pub fn restore(&self, name: &str, dst: &Tensor) -> Result<()> {
        let (shape, values) = self
            .get(name)
            .ok_or_else(|| Error::Data(format!("checkpoint has no tensor `{name}`")))?;
        if shape != dst.shape() {
            return Err(Error::shape("checkpoint restore", shape, dst.shape()));
        }
        dst.data_mut().copy_from_slice(values);
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(header.len() + 8 * self.values.iter().map(Vec::len).sum::<usize>());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (entry, values) in self.header.tensors.iter().zip(&self.values) {
            out.extend_from_slice(&(entry.name.len() as u32).to_le_bytes());
            out.extend_from_slice(entry.name.as_bytes());
            out.extend_from_slice(&(entry.shape.len() as u32).to_le_bytes());
            for &d in &entry.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(8)? != CHECKPOINT_MAGIC {
            r.pos = 0;
            return r.fail("not a checkpoint (bad magic)");
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return r.fail(format!("unsupported checkpoint version {version}"));
        }
        let header_len = r.u64()? as usize;
        let header_start = r.pos;
        let header: CheckpointHeader = match serde_json::from_slice(r.take(header_len)?) {
            Ok(h) => h,
            Err(e) => {
                r.pos = header_start;
                return r.fail(format!("bad header: {e}"));
            }
        };
        let mut values = Vec::with_capacity(header.tensors.len());
        for entry in &header.tensors {
            let name_len = r.u32()? as usize;
            let name = r.take(name_len)?;
            if name != entry.name.as_bytes() {
                return r.fail(format!("expected tensor `{}`", entry.name));
            }
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            if shape != entry.shape {
                return r.fail(format!("shape of `{}` disagrees with header", entry.name));
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n.saturating_mul(8))?;
            values.push(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect());
        }
        if r.pos != bytes.len() {
            return r.fail("trailing bytes after last tensor");
        }
        Ok(Checkpoint { header, values })
    }

    /// Writes via a temporary file and rename so an interrupted write never
    /// clobbers an existing checkpoint.
    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut tmp = PathBuf::from(path);
        tmp.set_extension("ckpt.tmp");
        fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Checkpoint> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let w = Tensor::new(vec![1.5, -2.25, 3.0, f64::MIN_POSITIVE], &[2, 2]).unwrap();
        let b = Tensor::new(vec![0.125], &[1]).unwrap();
        Checkpoint::new(
            &NetConfig::default(),
            42,
            3,
            serde_json::json!({"seed": 7}),
            [("w".to_string(), &w), ("b".to_string(), &b)],
        )
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back.header.train_step, 42);
        assert_eq!(back.header.epoch, 3);
        assert_eq!(back.get("w").unwrap().1, ck.get("w").unwrap().1);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn layout_starts_with_magic_and_version() {
        let bytes = sample().to_bytes().unwrap();
        assert_eq!(&bytes[..8], b"UGACCKPT");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[20..20 + hlen]).unwrap();
        assert_eq!(header["tensors"][0]["name"], "w");
        // First tensor record: name_len, "w", ndim = 2, dims, then the values.
        let body = &bytes[20 + hlen..];
        assert_eq!(u32::from_le_bytes(body[..4].try_into().unwrap()), 1);
        assert_eq!(body[4], b'w');
        assert_eq!(f64::from_le_bytes(body[9 + 16..9 + 24].try_into().unwrap()), 1.5);
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = sample().to_bytes().unwrap();
        let cut = &bytes[..bytes.len() - 3];
        match Checkpoint::from_bytes(cut, Path::new("x.ckpt")) {
            Err(Error::Format { offset, .. }) => assert!(offset > 20),
            other => panic!("expected format error, got {other:?}"),
        }
        assert!(matches!(
            Checkpoint::from_bytes(b"NOTACKPT....", Path::new("x")),
            Err(Error::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn restore_checks_shape() {
        let ck = sample();
        let dst = Tensor::zeros(&[2, 2]);
        ck.restore("w", &dst).unwrap();
        assert_eq!(dst.to_vec()[1], -2.25);
        assert!(ck.restore("w", &Tensor::zeros(&[4])).is_err());
        assert!(ck.restore("missing", &dst).is_err());
    }
}
