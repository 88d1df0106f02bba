//! `CKP1` checkpoint container, little-endian:
//!
//! ```text
//! magic "CKP1" | u32 tensor count
//! per tensor: u16 name length | UTF-8 name | u8 rank | rank x u32 dims
//!             | product(dims) x f32 data
//! ```

use std::path::Path;

use super::{Checkpoint, Tensor};
use crate::error::{Error, Location, Result};
use crate::io::write_atomic;

pub const MAGIC: &[u8; 4] = b"CKP1";

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        let count = u32::try_from(self.len()).map_err(|_| Error::InvalidArgument("too many tensors".into()))?;
        out.extend_from_slice(&count.to_le_bytes());
        for (name, t) in self.iter() {
            let len = u16::try_from(name.len())
                .map_err(|_| Error::InvalidArgument(format!("tensor name of {} bytes exceeds 65535", name.len())))?;
            let rank = u8::try_from(t.dims.len())
                .map_err(|_| Error::Shape { tensor: name.clone(), detail: format!("rank {} exceeds 255", t.dims.len()) })?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(rank);
            for d in &t.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(4)? != MAGIC {
            return Err(Error::format(path, Location::Byte(0), "bad magic (expected CKP1)"));
        }
        let count = r.u32()?;
        let mut ckpt = Checkpoint::new();
        for _ in 0..count {
            let at = r.pos as u64;
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::format(path, Location::Byte(at + 2), "tensor name is not UTF-8"))?
                .to_owned();
            let rank = r.take(1)?[0] as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u32()?);
            }
            let n = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
                .filter(|n| n.checked_mul(4).is_some_and(|b| b <= bytes.len()))
                .ok_or_else(|| Error::format(path, Location::Byte(r.pos as u64), format!("tensor `{name}` is larger than the file")))?;
            let raw = r.take(n * 4)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            if ckpt.contains(&name) {
                return Err(Error::format(path, Location::Byte(at), format!("duplicate tensor `{name}`")));
            }
            ckpt.insert(name, Tensor { dims, data })?;
        }
        if r.pos != bytes.len() {
            return Err(Error::format(path, Location::Byte(r.pos as u64), "trailing bytes after last tensor"));
        }
        Ok(ckpt)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.path,
                Location::Byte(self.pos as u64),
                format!("unexpected end of file: need {n} bytes, {} left", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
