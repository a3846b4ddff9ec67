//! Little-endian reader that tracks its offset for positional errors.

use std::io::{ErrorKind, Read};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt};

use crate::error::{Error, Result};

pub(crate) struct CountingReader<R> {
    inner: R,
    path: PathBuf,
    offset: u64,
}

impl<R: Read> CountingReader<R> {
    pub fn new(inner: R, path: &Path) -> Self {
        Self {
            inner,
            path: path.to_path_buf(),
            offset: 0,
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn fail(&self, e: std::io::Error) -> Error {
        if e.kind() == ErrorKind::UnexpectedEof {
            Error::Truncated {
                path: self.path.clone(),
                offset: self.offset,
            }
        } else {
            Error::io(&self.path, e)
        }
    }

    pub fn format_error(&self, reason: &str) -> Error {
        Error::Format {
            path: self.path.clone(),
            reason: format!("at byte {}: {reason}", self.offset),
        }
    }

    pub fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf).map_err(|e| self.fail(e))?;
        self.offset += n as u64;
        Ok(buf)
    }

    pub fn u8(&mut self) -> Result<u8> {
        let v = self.inner.read_u8().map_err(|e| self.fail(e))?;
        self.offset += 1;
        Ok(v)
    }

    pub fn u16(&mut self) -> Result<u16> {
        let v = self
            .inner
            .read_u16::<LittleEndian>()
            .map_err(|e| self.fail(e))?;
        self.offset += 2;
        Ok(v)
    }

    pub fn u32(&mut self) -> Result<u32> {
        let v = self
            .inner
            .read_u32::<LittleEndian>()
            .map_err(|e| self.fail(e))?;
        self.offset += 4;
        Ok(v)
    }

    pub fn u64(&mut self) -> Result<u64> {
        let v = self
            .inner
            .read_u64::<LittleEndian>()
            .map_err(|e| self.fail(e))?;
        self.offset += 8;
        Ok(v)
    }

    pub fn f32_finite(&mut self, row: usize, col: usize) -> Result<f32> {
        let v = self
            .inner
            .read_f32::<LittleEndian>()
            .map_err(|e| self.fail(e))?;
        self.offset += 4;
        if !v.is_finite() {
            return Err(Error::NonFiniteValue {
                path: self.path.clone(),
                row,
                col,
            });
        }
        Ok(v)
    }

    pub fn f64_finite(&mut self, row: usize, col: usize) -> Result<f64> {
        let v = self
            .inner
            .read_f64::<LittleEndian>()
            .map_err(|e| self.fail(e))?;
        self.offset += 8;
        if !v.is_finite() {
            return Err(Error::NonFiniteValue {
                path: self.path.clone(),
                row,
                col,
            });
        }
        Ok(v)
    }

    pub fn expect_magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let found = self.bytes(4)?;
        let found = [found[0], found[1], found[2], found[3]];
        if found != expected {
            return Err(Error::BadMagic {
                path: self.path.clone(),
                expected,
                found,
            });
        }
        Ok(())
    }

    pub fn expect_version(&mut self, version: u16) -> Result<()> {
        let found = self.u16()?;
        if found != version {
            return Err(Error::BadVersion {
                path: self.path.clone(),
                found,
            });
        }
        Ok(())
    }

    /// Consumes the rest of the input, failing if anything is left.
    pub fn expect_eof(&mut self) -> Result<()> {
        let mut rest = Vec::new();
        self.inner
            .read_to_end(&mut rest)
            .map_err(|e| Error::io(&self.path, e))?;
        if !rest.is_empty() {
            return Err(Error::TrailingBytes {
                path: self.path.clone(),
                offset: self.offset,
                count: rest.len() as u64,
            });
        }
        Ok(())
    }
}
