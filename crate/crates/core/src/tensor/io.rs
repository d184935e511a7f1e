//! Binary encoding of named tensors, shared by checkpoints and tensor files.
//!
//! Entry layout: u32 name length, UTF-8 name, u8 dtype tag, u32 rank,
//! `rank` u32 extents, then the little-endian payload. All integers are
//! little-endian.

use crate::error::{format_err, Result};

use super::{DType, Scalar, Tensor};

/// Entries above this rank are treated as corrupt.
pub const MAX_RANK: usize = 8;

/// Cursor over an input buffer that reports absolute offsets in errors.
pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn is_at_end(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub fn bytes(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return format_err(
                self.offset(),
                format!("truncated {what}: need {n} bytes, {} left", self.remaining()),
            );
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.bytes(1, what)?[0])
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.bytes(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    pub fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let at = self.offset();
        let got = self.bytes(4, "magic")?;
        if got != magic {
            return format_err(
                at,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(magic)
                ),
            );
        }
        Ok(())
    }

    pub fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let at = self.offset();
        let raw = self.bytes(len, what)?;
        match std::str::from_utf8(raw) {
            Ok(s) => Ok(s.to_string()),
            Err(e) => format_err(at, format!("{what} is not UTF-8: {e}")),
        }
    }
}

pub fn write_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn write_string(out: &mut Vec<u8>, s: &str) {
    write_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

pub fn write_entry<T: Scalar>(out: &mut Vec<u8>, name: &str, t: &Tensor<T>) {
    write_string(out, name);
    out.push(T::DTYPE.tag());
    write_u32(out, t.rank() as u32);
    for &d in t.shape() {
        write_u32(out, d as u32);
    }
    for &v in t.data() {
        v.write_le(out);
    }
}

/// Reads one entry, which must hold `T`'s dtype.
pub fn read_entry<T: Scalar>(r: &mut ByteReader<'_>) -> Result<(String, Tensor<T>)> {
    let name = r.string("entry name")?;
    let at = r.offset();
    let tag = r.u8("dtype tag")?;
    let dtype = match tag {
        0 => DType::F32,
        1 => DType::F64,
        _ => return format_err(at, format!("entry {name:?}: unknown dtype tag {tag}")),
    };
    if dtype != T::DTYPE {
        return format_err(
            at,
            format!("entry {name:?}: stored as {dtype:?}, expected {:?}", T::DTYPE),
        );
    }
    let at = r.offset();
    let rank = r.u32("rank")? as usize;
    if rank > MAX_RANK {
        return format_err(at, format!("entry {name:?}: rank {rank} exceeds {MAX_RANK}"));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut numel = 1usize;
    for _ in 0..rank {
        let at = r.offset();
        let d = r.u32("extent")? as usize;
        if d == 0 {
            return format_err(at, format!("entry {name:?}: zero extent"));
        }
        numel = match numel.checked_mul(d) {
            Some(n) => n,
            None => return format_err(at, format!("entry {name:?}: element count overflows")),
        };
        shape.push(d);
    }
    let at = r.offset();
    let nbytes = match numel.checked_mul(dtype.size()) {
        Some(n) => n,
        None => return format_err(at, format!("entry {name:?}: payload size overflows")),
    };
    let payload = r.bytes(nbytes, "tensor payload")?;
    let data: Vec<T> = payload.chunks_exact(dtype.size()).map(T::read_le).collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return format_err(
            at + (i * dtype.size()) as u64,
            format!("entry {name:?}: non-finite value at element {i}"),
        );
    }
    Ok((name, Tensor::new(&shape, data)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entry_round_trip() {
        let t = Tensor::<f32>::uniform(&[2, 3], -1.0, 1.0, 1).unwrap();
        let mut buf = Vec::new();
        write_entry(&mut buf, "w", &t);
        assert_eq!(buf.len(), 4 + 1 + 1 + 4 + 8 + 24);
        let mut r = ByteReader::new(&buf);
        let (name, back) = read_entry::<f32>(&mut r).unwrap();
        assert_eq!((name.as_str(), back), ("w", t));
        assert!(r.is_at_end());
    }

    #[test]
    fn truncation_reports_offset() {
        let mut buf = Vec::new();
        write_entry(&mut buf, "w", &Tensor::<f64>::zeros(&[4]));
        buf.truncate(buf.len() - 1);
        match read_entry::<f64>(&mut ByteReader::new(&buf)) {
            Err(crate::Error::Format { offset, .. }) => assert_eq!(offset, 14),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dtype_mismatch_rejected() {
        let mut buf = Vec::new();
        write_entry(&mut buf, "w", &Tensor::<f64>::zeros(&[1]));
        assert!(read_entry::<f32>(&mut ByteReader::new(&buf)).is_err());
    }
}
