//! Packed on-disk form of named MXInt tensors.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "MXVA" | version u16 | tensor count u32
//! per tensor:
//!   name length u16 | name (UTF-8)
//!   rows u32 | cols u32 | axis u8 | class u8
//!   mantissa bits u8 | exponent bits u8 | block size u32
//!   exponents, one per block, ceil(e/8) bytes each, sign-extended
//!   mantissas, ceil(m/8) bytes each, sign-extended
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::config::TensorClass;
use crate::error::{Error, Result};
use crate::mxint::{BlockAxis, MxIntBlock, MxIntTensor};

pub const MAGIC: &[u8; 4] = b"MXVA";
pub const VERSION: u16 = 1;

fn word_bytes(bits: u32) -> usize {
    bits.div_ceil(8) as usize
}

fn put_signed(out: &mut Vec<u8>, v: i64, bytes: usize) {
    out.extend_from_slice(&v.to_le_bytes()[..bytes]);
}

/// Serializes named tensors in the given order.
pub fn encode(tensors: &[(String, MxIntTensor)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        let name_len = u16::try_from(name.len()).map_err(|_| {
            Error::format("archive", format!("tensor name of {} bytes", name.len()))
        })?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
        out.push(t.axis().index());
        out.push(match t.class() {
            TensorClass::Weight => 0,
            TensorClass::Activation => 1,
        });
        out.push(t.mantissa_bits() as u8);
        out.push(t.exponent_bits() as u8);
        out.extend_from_slice(&(t.block_size() as u32).to_le_bytes());
        let eb = word_bytes(t.exponent_bits());
        for b in t.blocks() {
            put_signed(&mut out, b.exponent() as i64, eb);
        }
        let mb = word_bytes(t.mantissa_bits());
        for b in t.blocks() {
            for &m in b.mantissas() {
                put_signed(&mut out, m as i64, mb);
            }
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::format("archive", format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn signed(&mut self, bytes: usize) -> Result<i64> {
        let raw = self.take(bytes)?;
        let mut word = [if raw[bytes - 1] & 0x80 != 0 { 0xff } else { 0 }; 8];
        word[..bytes].copy_from_slice(raw);
        Ok(i64::from_le_bytes(word))
    }
}

/// Parses an archive produced by [`encode`].
pub fn decode(buf: &[u8]) -> Result<Vec<(String, MxIntTensor)>> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::format("archive", "bad magic"));
    }
    let version = c.u16()?;
    if version != VERSION {
        return Err(Error::format(
            "archive",
            format!("unsupported version {version}"),
        ));
    }
    let count = c.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = c.u16()? as usize;
        let name = String::from_utf8(c.take(len)?.to_vec())
            .map_err(|_| Error::format("archive", "tensor name is not UTF-8"))?;
        let rows = c.u32()? as usize;
        let cols = c.u32()? as usize;
        let axis = match c.u8()? {
            0 => BlockAxis::Dim0,
            1 => BlockAxis::Dim1,
            a => return Err(Error::format("archive", format!("{name}: axis tag {a}"))),
        };
        let class = match c.u8()? {
            0 => TensorClass::Weight,
            1 => TensorClass::Activation,
            k => return Err(Error::format("archive", format!("{name}: class tag {k}"))),
        };
        let m = c.u8()? as u32;
        let e = c.u8()? as u32;
        let block_size = c.u32()? as usize;
        if !(2..=16).contains(&e) || block_size == 0 || rows == 0 || cols == 0 {
            return Err(Error::format("archive", format!("{name}: invalid header")));
        }
        let lane_len = if axis == BlockAxis::Dim1 { cols } else { rows };
        let lanes = rows * cols / lane_len;
        let n_blocks = lanes * lane_len.div_ceil(block_size);
        let eb = word_bytes(e);
        let exps = (0..n_blocks)
            .map(|_| c.signed(eb))
            .collect::<Result<Vec<_>>>()?;
        let mb = word_bytes(m);
        let mut blocks = Vec::with_capacity(n_blocks);
        for &exp in &exps {
            let mant = (0..block_size)
                .map(|_| c.signed(mb).map(|v| v as i32))
                .collect::<Result<Vec<_>>>()?;
            blocks.push(
                MxIntBlock::new(exp as i32, mant, m)
                    .map_err(|err| Error::format("archive", format!("{name}: {err}")))?,
            );
        }
        tensors.push((
            name,
            MxIntTensor::from_blocks(rows, cols, axis, block_size, e, class, blocks)?,
        ));
    }
    if c.pos != buf.len() {
        return Err(Error::format(
            "archive",
            format!("{} trailing bytes", buf.len() - c.pos),
        ));
    }
    Ok(tensors)
}

pub fn write_archive(path: &Path, tensors: &[(String, MxIntTensor)]) -> Result<()> {
    let bytes = encode(tensors)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_archive(path: &Path) -> Result<Vec<(String, MxIntTensor)>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    decode(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::QuantConfig;

    fn sample() -> Vec<(String, MxIntTensor)> {
        let cfg = QuantConfig::default();
        let w: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let a =
            MxIntTensor::quantize(&w, 4, 10, BlockAxis::Dim1, &cfg, TensorClass::Weight).unwrap();
        let b = MxIntTensor::quantize(&w, 8, 5, BlockAxis::Dim0, &cfg, TensorClass::Activation)
            .unwrap();
        vec![("a".into(), a), ("b.bias".into(), b)]
    }

    #[test]
    fn round_trip() {
        let t = sample();
        let bytes = encode(&t).unwrap();
        assert_eq!(decode(&bytes).unwrap(), t);
    }

    #[test]
    fn header_bytes() {
        let bytes = encode(&sample()).unwrap();
        assert_eq!(&bytes[..4], b"MXVA");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(&bytes[6..10], &[2, 0, 0, 0]);
    }

    #[test]
    fn sign_extension() {
        let cfg = QuantConfig::default();
        let t = MxIntTensor::quantize(
            &[-1.0, 0.5],
            1,
            2,
            BlockAxis::Dim1,
            &cfg,
            TensorClass::Activation,
        )
        .unwrap();
        let bytes = encode(&[("x".into(), t.clone())]).unwrap();
        // exponent byte, then 16 mantissa bytes.
        let tail = &bytes[bytes.len() - 17..];
        assert_eq!(tail[0] as i8 as i32, t.blocks()[0].exponent());
        assert_eq!(tail[1] as i8 as i32, t.blocks()[0].mantissas()[0]);
        assert!(tail[1] >= 0x80);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode(&sample()).unwrap();
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode(&extra).is_err());
    }
}
