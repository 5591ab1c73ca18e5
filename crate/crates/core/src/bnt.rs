//! `BNT1` named-tensor container used for checkpoints and datasets.
//!
//! Layout: the four magic bytes `BNT1`, then zero or more records until end of
//! file. Each record is
//!
//! ```text
//! u16 name_len | name (UTF-8) | u8 dtype | u8 rank | rank x u32 dims | payload
//! ```
//!
//! with every integer and payload element little-endian and the payload in
//! row-major order. dtype 0 is `f32`, dtype 1 is `u32`.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"BNT1";

/// Upper bound on elements in one record; guards allocation on corrupt headers.
const MAX_ELEMENTS: u64 = 1 << 34;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U32(Vec<u32>),
}

impl TensorData {
    fn dtype(&self) -> u8 {
        match self {
            TensorData::F32(_) => 0,
            TensorData::U32(_) => 1,
        }
    }

    fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::U32(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: TensorData,
}

impl NamedTensor {
    pub fn f32(name: impl Into<String>, dims: &[usize], data: Vec<f32>) -> Self {
        Self {
            name: name.into(),
            dims: dims.iter().map(|&d| d as u32).collect(),
            data: TensorData::F32(data),
        }
    }

    pub fn u32(name: impl Into<String>, dims: &[usize], data: Vec<u32>) -> Self {
        Self {
            name: name.into(),
            dims: dims.iter().map(|&d| d as u32).collect(),
            data: TensorData::U32(data),
        }
    }

    pub fn dims_usize(&self) -> Vec<usize> {
        self.dims.iter().map(|&d| d as usize).collect()
    }

    pub fn as_f32(&self) -> Result<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Ok(v),
            _ => Err(Error::Format(format!("tensor {} is not f32", self.name))),
        }
    }

    pub fn as_u32(&self) -> Result<&[u32]> {
        match &self.data {
            TensorData::U32(v) => Ok(v),
            _ => Err(Error::Format(format!("tensor {} is not u32", self.name))),
        }
    }
}

pub fn write_to<W: Write>(mut w: W, tensors: &[NamedTensor]) -> Result<()> {
    w.write_all(MAGIC)?;
    for t in tensors {
        let name = t.name.as_bytes();
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::Format(format!("tensor name too long: {}", t.name)))?;
        if t.dims.is_empty() || t.dims.len() > u8::MAX as usize {
            return Err(Error::Format(format!(
                "tensor {} has unsupported rank",
                t.name
            )));
        }
        let count: u64 = t.dims.iter().map(|&d| d as u64).product();
        if count != t.data.len() as u64 {
            return Err(Error::Format(format!(
                "tensor {} dims {:?} disagree with {} values",
                t.name,
                t.dims,
                t.data.len()
            )));
        }
        w.write_all(&name_len.to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[t.data.dtype(), t.dims.len() as u8])?;
        for d in &t.dims {
            w.write_all(&d.to_le_bytes())?;
        }
        match &t.data {
            TensorData::F32(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
            TensorData::U32(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_from<R: Read>(mut r: R) -> Result<Vec<NamedTensor>> {
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let mut out = Vec::new();
    loop {
        let mut len = [0u8; 2];
        match r.read(&mut len[..1])? {
            0 => break,
            _ => read_exact(&mut r, &mut len[1..], "name length")?,
        }
        let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
        read_exact(&mut r, &mut name, "name")?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let mut hdr = [0u8; 2];
        read_exact(&mut r, &mut hdr, "dtype/rank")?;
        let (dtype, rank) = (hdr[0], hdr[1] as usize);
        if rank == 0 {
            return Err(Error::Format(format!("tensor {name} has rank 0")));
        }
        let mut dims = Vec::with_capacity(rank);
        let mut count: u64 = 1;
        for _ in 0..rank {
            let mut d = [0u8; 4];
            read_exact(&mut r, &mut d, "dims")?;
            let d = u32::from_le_bytes(d);
            count = count
                .checked_mul(d as u64)
                .filter(|&c| c <= MAX_ELEMENTS)
                .ok_or_else(|| Error::Format(format!("tensor {name} dims overflow")))?;
            dims.push(d);
        }
        let mut payload = vec![0u8; (count * 4) as usize];
        read_exact(&mut r, &mut payload, "payload")?;
        let words = payload.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]);
        let data = match dtype {
            0 => TensorData::F32(words.map(f32::from_le_bytes).collect()),
            1 => TensorData::U32(words.map(u32::from_le_bytes).collect()),
            other => return Err(Error::Format(format!("unknown dtype code {other}"))),
        };
        out.push(NamedTensor { name, dims, data });
    }
    Ok(out)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => {
            Error::Format(format!("truncated file while reading {what}"))
        }
        _ => Error::Io(e),
    })
}

/// Writes atomically: the file either appears complete or not at all.
pub fn save(path: &Path, tensors: &[NamedTensor]) -> Result<()> {
    crate::io::write_atomic(path, |w| write_to(BufWriter::new(w), tensors))
}

pub fn load(path: &Path) -> Result<Vec<NamedTensor>> {
    read_from(BufReader::new(File::open(path)?))
}

pub fn find<'a>(tensors: &'a [NamedTensor], name: &str) -> Result<&'a NamedTensor> {
    tensors
        .iter()
        .find(|t| t.name == name)
        .ok_or_else(|| Error::Format(format!("missing tensor {name}")))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn encode(tensors: &[NamedTensor]) -> Vec<u8> {
        let mut buf = Vec::new();
        write_to(&mut buf, tensors).unwrap();
        buf
    }

    #[test]
    fn header_layout_is_exact() {
        let buf = encode(&[NamedTensor::u32("ab", &[2], vec![1, 258])]);
        assert_eq!(
            buf,
            [b'B', b'N', b'T', b'1', 2, 0, b'a', b'b', 1, 1, 2, 0, 0, 0, 1, 0, 0, 0, 2, 1, 0, 0]
        );
    }

    #[test]
    fn rejects_bad_magic() {
        let mut buf = encode(&[]);
        buf[3] = b'2';
        assert!(matches!(read_from(&buf[..]), Err(Error::Format(_))));
    }

    #[test]
    fn rejects_truncation_and_rank_zero() {
        let buf = encode(&[NamedTensor::f32("w", &[3], vec![1.0, 2.0, 3.0])]);
        assert!(matches!(
            read_from(&buf[..buf.len() - 1]),
            Err(Error::Format(_))
        ));

        let mut rank0 = MAGIC.to_vec();
        rank0.extend_from_slice(&[1, 0, b'x', 0, 0]);
        assert!(matches!(read_from(&rank0[..]), Err(Error::Format(_))));
    }

    #[test]
    fn rejects_dim_overflow() {
        let mut buf = MAGIC.to_vec();
        buf.extend_from_slice(&[1, 0, b'x', 0, 3]);
        for _ in 0..3 {
            buf.extend_from_slice(&u32::MAX.to_le_bytes());
        }
        assert!(matches!(read_from(&buf[..]), Err(Error::Format(_))));
    }

    proptest! {
        #[test]
        fn round_trip_is_bitwise(
            vals in prop::collection::vec(any::<u32>(), 1..64),
            labels in prop::collection::vec(any::<u32>(), 1..16),
        ) {
            let floats: Vec<f32> = vals.iter().map(|&b| f32::from_bits(b)).collect();
            let tensors = vec![
                NamedTensor::f32("inputs", &[floats.len()], floats),
                NamedTensor::u32("labels", &[labels.len(), 1], labels),
            ];
            let back = read_from(&encode(&tensors)[..]).unwrap();
            prop_assert_eq!(back.len(), 2);
            let (a, b) = (tensors[0].as_f32().unwrap(), back[0].as_f32().unwrap());
            prop_assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
            prop_assert_eq!(&tensors[1], &back[1]);
        }
    }
}
