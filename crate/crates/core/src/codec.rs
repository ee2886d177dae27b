//! Big-endian, length-prefixed byte codec shared by every wire and file format.

use thiserror::Error;

/// A decode failure pinned to the byte offset where parsing stopped.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed encoding at byte {offset}: {reason}")]
pub struct MalformedEncoding {
    pub offset: usize,
    pub reason: String,
}

impl MalformedEncoding {
    pub fn new(offset: usize, reason: impl Into<String>) -> Self {
        Self {
            offset,
            reason: reason.into(),
        }
    }
}

/// Cursor over an input buffer. Every read is bounds-checked and reports its offset.
#[derive(Debug, Clone)]
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn is_empty(&self) -> bool {
        self.remaining() == 0
    }

    pub fn error(&self, reason: impl Into<String>) -> MalformedEncoding {
        MalformedEncoding::new(self.pos, reason)
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], MalformedEncoding> {
        if self.remaining() < n {
            return Err(self.error(format!(
                "truncated {what}: need {n} bytes, have {}",
                self.remaining()
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N], MalformedEncoding> {
        let mut out = [0u8; N];
        out.copy_from_slice(self.take(N, what)?);
        Ok(out)
    }

    pub fn u8(&mut self, what: &str) -> Result<u8, MalformedEncoding> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u16(&mut self, what: &str) -> Result<u16, MalformedEncoding> {
        Ok(u16::from_be_bytes(self.array(what)?))
    }

    pub fn u24(&mut self, what: &str) -> Result<u32, MalformedEncoding> {
        let b = self.take(3, what)?;
        Ok(u32::from_be_bytes([0, b[0], b[1], b[2]]))
    }

    pub fn u32(&mut self, what: &str) -> Result<u32, MalformedEncoding> {
        Ok(u32::from_be_bytes(self.array(what)?))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64, MalformedEncoding> {
        Ok(u64::from_be_bytes(self.array(what)?))
    }

    pub fn vec_u8(&mut self, what: &str) -> Result<&'a [u8], MalformedEncoding> {
        let n = self.u8(what)? as usize;
        self.take(n, what)
    }

    pub fn vec_u16(&mut self, what: &str) -> Result<&'a [u8], MalformedEncoding> {
        let n = self.u16(what)? as usize;
        self.take(n, what)
    }

    pub fn vec_u24(&mut self, what: &str) -> Result<&'a [u8], MalformedEncoding> {
        let n = self.u24(what)? as usize;
        self.take(n, what)
    }

    pub fn vec_u32(&mut self, what: &str) -> Result<&'a [u8], MalformedEncoding> {
        let n = self.u32(what)? as usize;
        self.take(n, what)
    }

    pub fn string_u8(&mut self, what: &str) -> Result<String, MalformedEncoding> {
        let start = self.pos;
        let raw = self.vec_u8(what)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| MalformedEncoding::new(start, format!("{what} is not UTF-8")))
    }

    pub fn string_u16(&mut self, what: &str) -> Result<String, MalformedEncoding> {
        let start = self.pos;
        let raw = self.vec_u16(what)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| MalformedEncoding::new(start, format!("{what} is not UTF-8")))
    }

    /// Fails unless the whole input has been consumed.
    pub fn finish(&self) -> Result<(), MalformedEncoding> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(self.error(format!("{} trailing bytes", self.remaining())))
        }
    }
}

pub fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_be_bytes());
}

pub fn put_u24(out: &mut Vec<u8>, v: u32) {
    debug_assert!(v < 1 << 24);
    out.extend_from_slice(&v.to_be_bytes()[1..]);
}

pub fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_be_bytes());
}

pub fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_be_bytes());
}

pub fn put_vec_u8(out: &mut Vec<u8>, data: &[u8]) {
    assert!(data.len() <= u8::MAX as usize, "u8-prefixed vector too long");
    out.push(data.len() as u8);
    out.extend_from_slice(data);
}

pub fn put_vec_u16(out: &mut Vec<u8>, data: &[u8]) {
    assert!(data.len() <= u16::MAX as usize, "u16-prefixed vector too long");
    put_u16(out, data.len() as u16);
    out.extend_from_slice(data);
}

pub fn put_vec_u24(out: &mut Vec<u8>, data: &[u8]) {
    assert!(data.len() < 1 << 24, "u24-prefixed vector too long");
    put_u24(out, data.len() as u32);
    out.extend_from_slice(data);
}

pub fn put_vec_u32(out: &mut Vec<u8>, data: &[u8]) {
    assert!(data.len() <= u32::MAX as usize, "u32-prefixed vector too long");
    put_u32(out, data.len() as u32);
    out.extend_from_slice(data);
}
