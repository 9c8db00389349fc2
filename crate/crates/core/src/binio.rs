//! Little-endian binary container helpers shared by the cohort and
//! checkpoint file formats. Every container starts with an 8-byte magic
//! and a u16 version; payload integers are little-endian.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub struct BinWriter<W: Write> {
    inner: W,
}

impl<W: Write> BinWriter<W> {
    pub fn new(inner: W) -> Self {
        BinWriter { inner }
    }

    pub fn magic(&mut self, magic: &[u8; 8], version: u16) -> Result<()> {
        self.inner.write_all(magic)?;
        self.u16(version)
    }

    pub fn u16(&mut self, v: u16) -> Result<()> {
        self.inner.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    pub fn u32(&mut self, v: u32) -> Result<()> {
        self.inner.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    pub fn u64(&mut self, v: u64) -> Result<()> {
        self.inner.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    pub fn i32(&mut self, v: i32) -> Result<()> {
        self.inner.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    pub fn f64(&mut self, v: f64) -> Result<()> {
        self.inner.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    pub fn f64_slice(&mut self, vs: &[f64]) -> Result<()> {
        for v in vs {
            self.f64(*v)?;
        }
        Ok(())
    }

    /// Length-prefixed UTF-8 string (u32 length).
    pub fn str(&mut self, s: &str) -> Result<()> {
        self.u32(s.len() as u32)?;
        self.inner.write_all(s.as_bytes())?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

/// Tracks the byte offset so truncation errors can name where the payload
/// ran out.
pub struct BinReader<R: Read> {
    inner: R,
    offset: u64,
}

impl<R: Read> BinReader<R> {
    pub fn new(inner: R) -> Self {
        BinReader { inner, offset: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.offset
    }

    fn fill(&mut self, buf: &mut [u8], context: &'static str) -> Result<()> {
        let mut read = 0;
        while read < buf.len() {
            let n = self.inner.read(&mut buf[read..])?;
            if n == 0 {
                return Err(Error::Truncated {
                    offset: self.offset + read as u64,
                    context,
                });
            }
            read += n;
        }
        self.offset += buf.len() as u64;
        Ok(())
    }

    /// Read and check the magic, then the version against `supported`.
    pub fn expect_magic(&mut self, expected: &[u8; 8], supported: u16) -> Result<()> {
        let mut got = [0u8; 8];
        self.fill(&mut got, "magic")?;
        if &got != expected {
            return Err(Error::BadMagic {
                expected: *expected,
                got,
            });
        }
        let version = self.u16("version")?;
        if version != supported {
            return Err(Error::BadVersion {
                got: version,
                supported,
            });
        }
        Ok(())
    }

    pub fn u16(&mut self, context: &'static str) -> Result<u16> {
        let mut b = [0u8; 2];
        self.fill(&mut b, context)?;
        Ok(u16::from_le_bytes(b))
    }

    pub fn u32(&mut self, context: &'static str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.fill(&mut b, context)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn u64(&mut self, context: &'static str) -> Result<u64> {
        let mut b = [0u8; 8];
        self.fill(&mut b, context)?;
        Ok(u64::from_le_bytes(b))
    }

    pub fn i32(&mut self, context: &'static str) -> Result<i32> {
        let mut b = [0u8; 4];
        self.fill(&mut b, context)?;
        Ok(i32::from_le_bytes(b))
    }

    pub fn f64(&mut self, context: &'static str) -> Result<f64> {
        let mut b = [0u8; 8];
        self.fill(&mut b, context)?;
        Ok(f64::from_le_bytes(b))
    }

    pub fn f64_vec(&mut self, n: usize, context: &'static str) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.f64(context)?);
        }
        Ok(out)
    }

    pub fn str(&mut self, context: &'static str) -> Result<String> {
        let len = self.u32(context)? as usize;
        let mut buf = vec![0u8; len];
        self.fill(&mut buf, context)?;
        String::from_utf8(buf).map_err(|_| Error::MalformedHeader(format!("{context}: not UTF-8")))
    }
}
