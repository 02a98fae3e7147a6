//! Binary checkpoint format for named tensor sets.
//!
//! Layout (all integers little-endian):
//!   magic `OLR1` (4 bytes)
//!   u32 tensor count
//!   per tensor: u16 name length, UTF-8 name, u8 rank, rank x u32 dims,
//!   f32 data (little-endian, row-major)

use super::Tensor;
use crate::error::{OlrError, Result};
use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

const MAGIC: &[u8; 4] = b"OLR1";

pub fn save_checkpoint(tensors: &[(String, Tensor<f32>)], path: &Path) -> Result<()> {
    let mut seen = BTreeSet::new();
    for (name, _) in tensors {
        if name.is_empty() {
            return Err(OlrError::Config("checkpoint tensor names must be non-empty".into()));
        }
        if name.len() > u16::MAX as usize {
            return Err(OlrError::Config(format!("tensor name too long: {} bytes", name.len())));
        }
        if !seen.insert(name.as_str()) {
            return Err(OlrError::Config(format!("duplicate tensor name: {name}")));
        }
    }
    if tensors.len() > u32::MAX as usize {
        return Err(OlrError::Config("too many tensors for checkpoint format".into()));
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, tensor) in tensors {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        let rank = tensor.shape().len();
        if rank > u8::MAX as usize {
            return Err(OlrError::Config(format!("tensor {name} rank {rank} exceeds format limit")));
        }
        buf.push(rank as u8);
        for &d in tensor.shape() {
            if d > u32::MAX as usize {
                return Err(OlrError::Config(format!("tensor {name} dimension {d} exceeds u32")));
            }
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path).map_err(|e| OlrError::io(path, e))?;
    file.write_all(&buf).map_err(|e| OlrError::io(path, e))?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.offset + n > self.bytes.len() {
            return Err(OlrError::format(
                self.path,
                format!(
                    "truncated: need {n} bytes for {what} at offset {}, file has {}",
                    self.offset,
                    self.bytes.len()
                ),
            ));
        }
        let s = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    let bytes = std::fs::read(path).map_err(|e| OlrError::io(path, e))?;
    let mut r = Reader { bytes: &bytes, offset: 0, path };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(OlrError::format(
            path,
            format!("bad magic {magic:02x?} at offset 0, expected {MAGIC:02x?}"),
        ));
    }
    let count = r.u32("tensor count")?;
    let mut tensors = Vec::with_capacity(count as usize);
    let mut names = BTreeSet::new();
    for i in 0..count {
        let name_len = r.u16("name length")? as usize;
        let name_off = r.offset;
        let name_bytes = r.take(name_len, "tensor name")?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| {
                OlrError::format(path, format!("tensor {i}: name at offset {name_off} is not UTF-8"))
            })?
            .to_string();
        if name.is_empty() {
            return Err(OlrError::format(path, format!("tensor {i}: empty name at offset {name_off}")));
        }
        if !names.insert(name.clone()) {
            return Err(OlrError::format(path, format!("duplicate tensor name {name}")));
        }
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        let mut numel: u64 = 1;
        for _ in 0..rank {
            let d = r.u32("dimension")? as u64;
            numel = numel.saturating_mul(d);
            shape.push(d as usize);
        }
        if numel > (u32::MAX as u64) * 16 {
            return Err(OlrError::format(path, format!("tensor {name}: implausible size {numel}")));
        }
        let data_bytes = r.take(numel as usize * 4, "f32 data")?;
        let data: Vec<f32> = data_bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push((name, Tensor::new(shape, data).expect("shape/data agree by construction")));
    }
    if r.offset != bytes.len() {
        return Err(OlrError::format(
            path,
            format!("{} trailing bytes at offset {}", bytes.len() - r.offset, r.offset),
        ));
    }
    Ok(tensors)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roundtrip(tensors: Vec<(String, Tensor<f32>)>) -> Vec<(String, Tensor<f32>)> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ckpt");
        save_checkpoint(&tensors, &path).unwrap();
        load_checkpoint(&path).unwrap()
    }

    #[test]
    fn empty_set_roundtrips() {
        assert!(roundtrip(vec![]).is_empty());
    }

    #[test]
    fn known_tensor_roundtrips_bit_exactly() {
        let t = Tensor::new(vec![2, 3], vec![1.0, -0.5, 3.25, f32::MIN_POSITIVE, 0.0, -7.0]).unwrap();
        let out = roundtrip(vec![("w".into(), t.clone())]);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].0, "w");
        assert_eq!(out[0].1, t);
        // Bitwise, not just value-wise.
        for (a, b) in out[0].1.data().iter().zip(t.data().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn scalar_rank_zero_supported() {
        let out = roundtrip(vec![("s".into(), Tensor::scalar(4.5))]);
        assert!(out[0].1.shape().is_empty());
        assert_eq!(out[0].1.item().unwrap(), 4.5);
    }

    #[test]
    fn save_then_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let tensors =
            vec![("a".to_string(), Tensor::new(vec![3], vec![0.1, 0.2, 0.3]).unwrap())];
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        save_checkpoint(&tensors, &p1).unwrap();
        save_checkpoint(&load_checkpoint(&p1).unwrap(), &p2).unwrap();
        assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"NOPE\x00\x00\x00\x00").unwrap();
        let err = load_checkpoint(&path).unwrap_err().to_string();
        assert!(err.contains("offset 0"), "error should name the offset: {err}");
    }

    #[test]
    fn truncated_file_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.ckpt");
        let t = Tensor::new(vec![4], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        save_checkpoint(&[("x".into(), t)], &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        let err = load_checkpoint(&path).unwrap_err().to_string();
        assert!(err.contains("offset"), "error should name an offset: {err}");
    }

    #[test]
    fn duplicate_and_empty_names_rejected_on_save() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        let t = Tensor::<f32>::zeros(vec![1]);
        assert!(save_checkpoint(
            &[("a".into(), t.clone()), ("a".into(), t.clone())],
            &path
        )
        .is_err());
        assert!(save_checkpoint(&[("".into(), t)], &path).is_err());
    }
}
