//! Little-endian binary encoding helpers shared by the file formats.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Default)]
pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn f32s(&mut self, v: &[f32]) {
        self.buf.reserve(v.len() * 4);
        for x in v {
            self.buf.extend_from_slice(&x.to_le_bytes());
        }
    }

    /// Length-prefixed UTF-8.
    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes(s.as_bytes());
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    what: &'static str,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(what: &'static str, buf: &'a [u8]) -> Self {
        Self { what, buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    /// Checks that `n` more bytes exist, naming `part` on failure.
    pub fn require(&self, part: &str, n: usize) -> Result<()> {
        if self.remaining() < n {
            return Err(Error::Truncated {
                what: format!("{} {part}", self.what),
                expected: n,
                actual: self.remaining(),
            });
        }
        Ok(())
    }

    pub fn take(&mut self, part: &str, n: usize) -> Result<&'a [u8]> {
        self.require(part, n)?;
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    /// Verifies a magic string whose last byte is a format version digit.
    pub fn magic(&mut self, magic: &[u8]) -> Result<()> {
        let found = self.take("magic", magic.len())?;
        let (stem, version) = magic.split_at(magic.len() - 1);
        if &found[..stem.len()] != stem {
            return Err(Error::BadMagic {
                what: self.what,
                expected: String::from_utf8_lossy(magic).into_owned(),
                found: String::from_utf8_lossy(found).into_owned(),
            });
        }
        if found[stem.len()] != version[0] {
            let digit = |b: u8| if b.is_ascii_digit() { b - b'0' } else { b };
            return Err(Error::Version {
                what: self.what,
                expected: digit(version[0]),
                found: digit(found[stem.len()]),
            });
        }
        Ok(())
    }

    pub fn u32(&mut self, part: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(part, 4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self, part: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(part, 8)?.try_into().unwrap()))
    }

    pub fn f32s(&mut self, part: &str, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(part, n * 4)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn str(&mut self, part: &str) -> Result<String> {
        let n = self.u32(part)? as usize;
        let raw = self.take(part, n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Corrupt(format!("{} {part}: invalid utf-8", self.what)))
    }

    pub fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::Corrupt(format!(
                "{}: {} unexpected trailing bytes",
                self.what,
                self.remaining()
            )));
        }
        Ok(())
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes through a temporary sibling so readers never see a partial file.
pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
