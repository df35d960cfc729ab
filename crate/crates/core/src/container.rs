//! Little-endian binary containers shared by realization sets, simulator
//! snapshots and parameter checkpoints.
//!
//! Array container layout:
//!
//! ```text
//! magic   8 bytes  "CLRMARR1"
//! rank    u32
//! dims    rank x u64
//! count   u64
//! seed    u64
//! body    count * prod(dims) x f64
//! ```
//!
//! Tensor container layout (checkpoints):
//!
//! ```text
//! magic   8 bytes  "CLRMTEN1"
//! n       u32
//! n x { name_len u32, name utf8, rank u32, dims rank x u64, data prod(dims) x f64 }
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};

const ARRAY_MAGIC: &[u8; 8] = b"CLRMARR1";
const TENSOR_MAGIC: &[u8; 8] = b"CLRMTEN1";

/// A stack of `count` equally shaped f64 arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayStack {
    pub dims: Vec<usize>,
    pub seed: u64,
    pub items: Vec<Vec<f64>>,
}

impl ArrayStack {
    pub fn item_len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let len = self.item_len();
        if let Some(bad) = self.items.iter().find(|it| it.len() != len) {
            return Err(Error::Argument(format!(
                "array of length {} in stack of item length {len}",
                bad.len()
            )));
        }
        w.write_all(ARRAY_MAGIC)?;
        w.write_all(&(self.dims.len() as u32).to_le_bytes())?;
        for d in &self.dims {
            w.write_all(&(*d as u64).to_le_bytes())?;
        }
        w.write_all(&(self.items.len() as u64).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        for it in &self.items {
            write_f64s(&mut w, it)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != ARRAY_MAGIC {
            return Err(Error::Argument("not an array container".into()));
        }
        let rank = read_u32(&mut r)? as usize;
        let dims = (0..rank)
            .map(|_| read_u64(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let count = read_u64(&mut r)? as usize;
        let seed = read_u64(&mut r)?;
        let len: usize = dims.iter().product();
        let items = (0..count)
            .map(|_| read_f64s(&mut r, len))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dims, seed, items })
    }
}

/// Named tensors, kept in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorArchive {
    pub entries: Vec<(String, Vec<usize>, Vec<f64>)>,
}

impl TensorArchive {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(TENSOR_MAGIC)?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, dims, data) in &self.entries {
            let n: usize = dims.iter().product();
            if n != data.len() {
                return Err(Error::Argument(format!(
                    "tensor {name}: shape {dims:?} but {} values",
                    data.len()
                )));
            }
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(dims.len() as u32).to_le_bytes())?;
            for d in dims {
                w.write_all(&(*d as u64).to_le_bytes())?;
            }
            write_f64s(&mut w, data)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != TENSOR_MAGIC {
            return Err(Error::Argument("not a tensor container".into()));
        }
        let n = read_u32(&mut r)? as usize;
        let mut entries = Vec::with_capacity(n);
        for _ in 0..n {
            let name_len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|e| Error::Argument(format!("tensor name: {e}")))?;
            let rank = read_u32(&mut r)? as usize;
            let dims = (0..rank)
                .map(|_| read_u64(&mut r).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let data = read_f64s(&mut r, dims.iter().product())?;
            entries.push((name, dims, data));
        }
        Ok(Self { entries })
    }
}

fn write_f64s<W: Write>(w: &mut W, xs: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(xs.len() * 8);
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
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
