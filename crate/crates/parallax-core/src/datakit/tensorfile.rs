//! A minimal self-describing container for named f32 tensors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"PXTF0001"
//! u32     header JSON length, then that many bytes of JSON (free-form metadata)
//! u32     tensor count
//! per tensor:
//!   u16   name length, then the name (UTF-8)
//!   u8    rank
//!   u64*  dims
//!   f32*  data, C order
//! ```
//!
//! Used for ground-truth disparity/occlusion artifacts and model checkpoints,
//! where bit-exact round-trips matter more than interchange.

use ndarray::ArrayD;
use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"PXTF0001";

#[derive(Debug, Default)]
pub struct TensorFile {
    pub meta: serde_json::Value,
    pub tensors: BTreeMap<String, ArrayD<f32>>,
}

impl TensorFile {
    pub fn new(meta: serde_json::Value) -> Self {
        Self {
            meta,
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: ArrayD<f32>) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<f32>> {
        self.tensors.get(name)
    }

    pub fn write_to(&self, mut w: impl Write) -> io::Result<()> {
        w.write_all(MAGIC)?;
        let meta = serde_json::to_vec(&self.meta)?;
        w.write_all(&(meta.len() as u32).to_le_bytes())?;
        w.write_all(&meta)?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, tensor) in &self.tensors {
            let tensor = tensor.as_standard_layout();
            w.write_all(&(name.len() as u16).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&[tensor.ndim() as u8])?;
            for d in tensor.shape() {
                w.write_all(&(*d as u64).to_le_bytes())?;
            }
            let data = tensor.as_slice().expect("standard layout");
            let mut buf = Vec::with_capacity(data.len() * 4);
            for v in data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> io::Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                "not a tensor file (bad magic)",
            ));
        }
        let meta_len = read_u32(&mut r)? as usize;
        let mut meta_buf = vec![0u8; meta_len];
        r.read_exact(&mut meta_buf)?;
        let meta = serde_json::from_slice(&meta_buf)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        let count = read_u32(&mut r)? as usize;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let name_len = read_u16(&mut r)? as usize;
            let mut name_buf = vec![0u8; name_len];
            r.read_exact(&mut name_buf)?;
            let name = String::from_utf8(name_buf)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
            let mut rank = [0u8; 1];
            r.read_exact(&mut rank)?;
            let mut dims = Vec::with_capacity(rank[0] as usize);
            for _ in 0..rank[0] {
                dims.push(read_u64(&mut r)? as usize);
            }
            let n: usize = dims.iter().product();
            let mut buf = vec![0u8; n * 4];
            r.read_exact(&mut buf)?;
            let data: Vec<f32> = buf
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let arr = ArrayD::from_shape_vec(dims, data)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
            tensors.insert(name, arr);
        }
        Ok(Self { meta, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> io::Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> io::Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(io::BufReader::new(f))
    }
}

fn read_u16(r: &mut impl Read) -> io::Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut tf = TensorFile::new(serde_json::json!({"kind": "test"}));
        tf.insert(
            "a",
            Array2::from_shape_fn((3, 4), |(i, j)| (i as f32) * 0.1 + j as f32).into_dyn(),
        );
        tf.insert("b", ndarray::arr1(&[-1.5f32, 2.25, f32::MIN_POSITIVE]).into_dyn());
        let mut buf = Vec::new();
        tf.write_to(&mut buf).unwrap();
        let back = TensorFile::read_from(buf.as_slice()).unwrap();
        assert_eq!(back.meta["kind"], "test");
        assert_eq!(back.tensors.len(), 2);
        assert_eq!(back.get("a").unwrap(), tf.get("a").unwrap());
        assert_eq!(back.get("b").unwrap(), tf.get("b").unwrap());
    }

    #[test]
    fn rejects_bad_magic() {
        let err = TensorFile::read_from(&b"NOT_A_TF_FILE___"[..]);
        assert!(err.is_err());
    }
}
