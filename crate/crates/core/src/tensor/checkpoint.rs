//! Flat binary container of named `f32` tensors.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic  b"DLXCKPT\0"
//! u32    version
//! u32    header length, then UTF-8 header text
//! u32    tensor count
//! per tensor:
//!   u32 name length, UTF-8 name
//!   u32 rank, rank × u64 extents
//!   product(extents) × f32 values
//! ```

use std::io::{self, Read, Write};

use super::{Scalar, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"DLXCKPT\0";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Free-form metadata, conventionally `key = value` lines.
    pub header: String,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

pub fn write_checkpoint<W: Write>(mut w: W, ckpt: &Checkpoint) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(ckpt.header.len() as u32).to_le_bytes())?;
    w.write_all(ckpt.header.as_bytes())?;
    w.write_all(&(ckpt.tensors.len() as u32).to_le_bytes())?;
    for (name, t) in &ckpt.tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &e in t.shape() {
            w.write_all(&(e as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.len() * 4);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_string<R: Read>(r: &mut R, len: usize) -> io::Result<String> {
    let mut b = vec![0u8; len];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|e| invalid(format!("non UTF-8 text: {e}")))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> io::Result<Checkpoint> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(invalid("not a checkpoint file"));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(invalid(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let hlen = read_u32(&mut r)? as usize;
    let header = read_string(&mut r, hlen)?;
    let count = read_u32(&mut r)? as usize;
    let mut tensors = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let nlen = read_u32(&mut r)? as usize;
        let name = read_string(&mut r, nlen)?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            shape.push(u64::from_le_bytes(b) as usize);
        }
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| invalid(e.to_string()))?;
        tensors.push((name, t));
    }
    Ok(Checkpoint { header, tensors })
}

impl<T: Scalar> super::ParamStore<T> {
    /// Copies every parameter into a checkpoint as `f32`.
    pub fn to_checkpoint(&self, header: String) -> Checkpoint {
        Checkpoint {
            header,
            tensors: self.iter().map(|(_, n, t)| (n.to_string(), t.cast())).collect(),
        }
    }

    /// Overwrites parameters from a checkpoint; names and shapes must match exactly.
    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> io::Result<()> {
        if ckpt.tensors.len() != self.len() {
            return Err(invalid(format!(
                "checkpoint has {} tensors, model expects {}",
                ckpt.tensors.len(),
                self.len()
            )));
        }
        for (name, t) in &ckpt.tensors {
            let id = self
                .id(name)
                .ok_or_else(|| invalid(format!("unexpected tensor {name}")))?;
            self.set(id, t.cast()).map_err(|e| invalid(e.to_string()))?;
        }
        Ok(())
    }
}
