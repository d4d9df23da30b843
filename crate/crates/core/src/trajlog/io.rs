use std::io::{self, Read, Write};

use crate::error::{Error, Result};

/// Sink wrapper that counts bytes and hashes everything after the 4-byte magic.
pub(crate) struct CrcWriter<W> {
    inner: W,
    hasher: crc32fast::Hasher,
    written: u64,
}

impl<W: Write> CrcWriter<W> {
    pub fn new(mut inner: W, magic: &[u8; 4]) -> Result<Self> {
        inner.write_all(magic)?;
        Ok(CrcWriter {
            inner,
            hasher: crc32fast::Hasher::new(),
            written: 4,
        })
    }

    pub fn put(&mut self, bytes: &[u8]) -> Result<()> {
        self.inner.write_all(bytes)?;
        self.hasher.update(bytes);
        self.written += bytes.len() as u64;
        Ok(())
    }

    pub fn put_u8(&mut self, v: u8) -> Result<()> {
        self.put(&[v])
    }
    pub fn put_u16(&mut self, v: u16) -> Result<()> {
        self.put(&v.to_le_bytes())
    }
    pub fn put_u32(&mut self, v: u32) -> Result<()> {
        self.put(&v.to_le_bytes())
    }
    pub fn put_u64(&mut self, v: u64) -> Result<()> {
        self.put(&v.to_le_bytes())
    }
    pub fn put_f32(&mut self, v: f32) -> Result<()> {
        self.put(&v.to_le_bytes())
    }
    pub fn put_f64(&mut self, v: f64) -> Result<()> {
        self.put(&v.to_le_bytes())
    }

    pub fn put_f32_slice(&mut self, vs: &[f32]) -> Result<()> {
        let mut buf = Vec::with_capacity(vs.len() * 4);
        for v in vs {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.put(&buf)
    }

    /// Appends the CRC trailer and flushes. Returns the total byte count.
    pub fn finish(mut self) -> Result<(W, u64)> {
        let crc = self.hasher.clone().finalize();
        self.inner.write_all(&crc.to_le_bytes())?;
        self.inner.flush()?;
        Ok((self.inner, self.written + 4))
    }
}

/// Sequential reader mirroring [`CrcWriter`]. Truncation surfaces as a format error.
pub(crate) struct CrcReader<R> {
    inner: R,
    hasher: crc32fast::Hasher,
}

impl<R: Read> CrcReader<R> {
    pub fn new(mut inner: R, magic: &[u8; 4]) -> Result<Self> {
        let mut m = [0u8; 4];
        read_exact(&mut inner, &mut m)?;
        if &m != magic {
            return Err(Error::format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&m),
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(CrcReader {
            inner,
            hasher: crc32fast::Hasher::new(),
        })
    }

    pub fn take(&mut self, buf: &mut [u8]) -> Result<()> {
        read_exact(&mut self.inner, buf)?;
        self.hasher.update(buf);
        Ok(())
    }

    pub fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.take(&mut b)?;
        Ok(b[0])
    }
    pub fn u16(&mut self) -> Result<u16> {
        let mut b = [0u8; 2];
        self.take(&mut b)?;
        Ok(u16::from_le_bytes(b))
    }
    pub fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.take(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
    pub fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.take(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }
    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_bits(self.u32()?))
    }
    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    /// Reads the trailer and compares it with the running checksum. Trailing
    /// bytes after the CRC are rejected.
    pub fn finish(mut self) -> Result<()> {
        let expected = self.hasher.clone().finalize();
        let mut b = [0u8; 4];
        read_exact(&mut self.inner, &mut b)?;
        let stored = u32::from_le_bytes(b);
        if stored != expected {
            return Err(Error::format(format!(
                "crc mismatch: stored {stored:#010x}, computed {expected:#010x}"
            )));
        }
        let mut extra = [0u8; 1];
        match self.inner.read(&mut extra)? {
            0 => Ok(()),
            _ => Err(Error::format("trailing bytes after crc")),
        }
    }
}

pub(crate) fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::format("truncated file"),
        _ => Error::Io(e),
    })
}

pub(crate) fn check_version(found: u32, what: &str) -> Result<()> {
    if found != 1 {
        return Err(Error::format(format!("unsupported {what} version {found}")));
    }
    Ok(())
}

/// Guards allocations driven by header counts against corrupted headers.
pub(crate) fn checked_len(count: u64, what: &str) -> Result<usize> {
    const LIMIT: u64 = 1 << 40;
    if count > LIMIT {
        return Err(Error::format(format!("{what} count {count} is implausible")));
    }
    usize::try_from(count).map_err(|_| Error::format(format!("{what} count {count} overflows")))
}
