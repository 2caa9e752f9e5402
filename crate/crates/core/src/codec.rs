//! Little-endian binary container shared by the model, dataset and test-vector files.
//!
//! Every file is `magic[4] | body | crc32(magic ‖ body)`. The checksum is
//! verified before the body is parsed, so a truncated or bit-rotted file is
//! reported as an integrity error. A wrong magic is reported as a parse error
//! at offset 0 before anything else is looked at.

use std::path::Path;

use crate::error::{Error, Result};

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::contract(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".{}.tmp", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path).inspect_err(|_| {
        let _ = std::fs::remove_file(&tmp);
    })?;
    Ok(())
}

pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 4]) -> Self {
        Writer {
            buf: magic.to_vec(),
        }
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u16(&mut self, v: u16) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn i8s(&mut self, v: &[i8]) -> &mut Self {
        self.buf.extend(v.iter().map(|&x| x as u8));
        self
    }

    pub fn f32(&mut self, v: f32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn f64s(&mut self, v: &[f64]) -> &mut Self {
        for x in v {
            self.f64(*x);
        }
        self
    }

    pub fn bytes(&mut self, v: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(v);
        self
    }

    /// Length-prefixed (u32) byte string.
    pub fn blob(&mut self, v: &[u8]) -> Result<&mut Self> {
        let len = u32::try_from(v.len())
            .map_err(|_| Error::contract("header larger than 4 GiB"))?;
        self.u32(len);
        Ok(self.bytes(v))
    }

    pub fn dims(&mut self, dims: &[usize]) -> Result<&mut Self> {
        self.u32(to_u32(dims.len())?);
        for &d in dims {
            self.u32(to_u32(d)?);
        }
        Ok(self)
    }

    pub fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.buf.extend_from_slice(&crc.to_le_bytes());
        self.buf
    }
}

pub(crate) fn to_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::contract(format!("{v} does not fit in u32")))
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Checks magic and checksum and returns a reader positioned after the magic.
    pub fn open(bytes: &'a [u8], magic: &[u8; 4]) -> Result<Self> {
        let head = &bytes[..bytes.len().min(4)];
        if head != &magic[..head.len()] {
            return Err(Error::parse(
                0,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(head),
                    String::from_utf8_lossy(magic)
                ),
            ));
        }
        if bytes.len() < 8 {
            return Err(Error::Integrity(format!(
                "file of {} bytes is too short to hold a checksum",
                bytes.len()
            )));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let actual = crc32fast::hash(body);
        if stored != actual {
            return Err(Error::Integrity(format!(
                "checksum mismatch: stored {stored:#010x}, computed {actual:#010x}"
            )));
        }
        Ok(Reader { buf: body, pos: 4 })
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::parse(
                self.pos,
                format!("unexpected end of data reading {what}"),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| self.overflow(what))?, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| self.overflow(what))?, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn i8s(&mut self, n: usize, what: &str) -> Result<Vec<i8>> {
        Ok(self.take(n, what)?.iter().map(|&b| b as i8).collect())
    }

    pub fn blob(&mut self, what: &str) -> Result<&'a [u8]> {
        let n = self.u32(what)? as usize;
        self.take(n, what)
    }

    pub fn version(&mut self, supported: u32) -> Result<u32> {
        let at = self.pos;
        let v = self.u32("format version")?;
        if v != supported {
            return Err(Error::parse(at, format!("unsupported format version {v}")));
        }
        Ok(v)
    }

    pub fn dims(&mut self, what: &str) -> Result<Vec<usize>> {
        let at = self.pos;
        let n = self.u32(what)? as usize;
        if n == 0 || n > 8 {
            return Err(Error::parse(at, format!("implausible rank {n} for {what}")));
        }
        let mut dims = Vec::with_capacity(n);
        for _ in 0..n {
            let at = self.pos;
            let d = self.u32(what)? as usize;
            if d == 0 {
                return Err(Error::parse(at, format!("zero extent in {what}")));
            }
            dims.push(d);
        }
        Ok(dims)
    }

    fn overflow(&self, what: &str) -> Error {
        Error::parse(self.pos, format!("length overflow reading {what}"))
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::parse(
                self.pos,
                format!("{} trailing bytes", self.buf.len() - self.pos),
            ));
        }
        Ok(())
    }
}
