//! Versioned binary container for named `f64` tensors plus a JSON manifest.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"SDCK" | u32 version | u64 manifest_len | manifest JSON
//! u64 tensor_count
//! per tensor: u32 name_len | name | u32 ndim | ndim x u64 dims | dims.product() x f64
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SDCK";
pub const CONTAINER_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub manifest: Value,
    pub tensors: Vec<Tensor>,
}

impl Container {
    pub fn new(manifest: Value) -> Self {
        Self { manifest, tensors: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<()> {
        let name = name.into();
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!("tensor {name}: shape {shape:?} vs {} values", data.len())));
        }
        if self.tensors.iter().any(|t| t.name == name) {
            return Err(Error::Format(format!("duplicate tensor {name}")));
        }
        self.tensors.push(Tensor { name, shape, data });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Format(format!("missing tensor {name}")))
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let manifest = serde_json::to_vec(&self.manifest)?;
        w.write_all(MAGIC)?;
        w.write_all(&CONTAINER_VERSION.to_le_bytes())?;
        w.write_all(&(manifest.len() as u64).to_le_bytes())?;
        w.write_all(&manifest)?;
        w.write_all(&(self.tensors.len() as u64).to_le_bytes())?;
        for t in &self.tensors {
            w.write_all(&(t.name.len() as u32).to_le_bytes())?;
            w.write_all(t.name.as_bytes())?;
            w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
            for &d in &t.shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &x in &t.data {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a checkpoint container".into()));
        }
        let version = read_u32(&mut r)?;
        if version != CONTAINER_VERSION {
            return Err(Error::Format(format!("unsupported container version {version}")));
        }
        let len = read_u64(&mut r)? as usize;
        let mut manifest = vec![0u8; len];
        r.read_exact(&mut manifest)?;
        let manifest: Value = serde_json::from_slice(&manifest)?;
        let count = read_u64(&mut r)? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|e| Error::Format(e.to_string()))?;
            let ndim = read_u32(&mut r)? as usize;
            let shape = (0..ndim).map(|_| read_u64(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            let mut b8 = [0u8; 8];
            for _ in 0..n {
                r.read_exact(&mut b8)?;
                data.push(f64::from_le_bytes(b8));
            }
            tensors.push(Tensor { name, shape, data });
        }
        Ok(Self { manifest, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trips_bit_exactly(data in proptest::collection::vec(any::<f64>(), 0..40)) {
            let mut c = Container::new(serde_json::json!({"kind": "test", "n": data.len()}));
            c.push("a", vec![data.len()], data.clone()).unwrap();
            c.push("scalar", vec![], vec![1.5]).unwrap();
            let mut buf = Vec::new();
            c.write(&mut buf).unwrap();
            let back = Container::read(&buf[..]).unwrap();
            let got: Vec<u64> = back.get("a").unwrap().data.iter().map(|x| x.to_bits()).collect();
            let want: Vec<u64> = data.iter().map(|x| x.to_bits()).collect();
            prop_assert_eq!(got, want);
            prop_assert_eq!(&back.manifest, &c.manifest);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let mut c = Container::new(Value::Null);
        assert!(c.push("x", vec![2, 2], vec![0.0; 3]).is_err());
        c.push("x", vec![1], vec![0.0]).unwrap();
        assert!(c.push("x", vec![1], vec![0.0]).is_err());
        assert!(Container::read(&b"NOPE"[..]).is_err());
    }
}
