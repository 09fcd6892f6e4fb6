//! FCNW1: a flat little-endian container of named f32 tensors.
//!
//! ```text
//! "FCNW1\0"  u32 count
//! per entry: u32 name_len, name, u8 rank, rank × u32 dims, values
//! ```
//!
//! Tensor values are `prod(dims)` f32s. Entries named `__like_this__` carry
//! UTF-8 text instead: rank 1, the dim is the byte length, and the payload is
//! the raw bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const FCNW_MAGIC: &[u8; 6] = b"FCNW1\0";

#[derive(Clone, Debug, PartialEq)]
pub enum FcnwEntry {
    Tensor(String, Tensor),
    Text(String, String),
}

impl FcnwEntry {
    pub fn name(&self) -> &str {
        match self {
            FcnwEntry::Tensor(n, _) | FcnwEntry::Text(n, _) => n,
        }
    }
}

pub fn is_text_name(name: &str) -> bool {
    name.len() > 4 && name.starts_with("__") && name.ends_with("__")
}

/// Rank with trailing unit axes dropped; a `[C,1,1,1]` bias is stored as rank 1.
fn stored_dims(shape: Shape) -> Vec<u32> {
    let mut dims: Vec<u32> = shape.dims().iter().map(|&d| d as u32).collect();
    while dims.len() > 1 && dims[dims.len() - 1] == 1 {
        dims.pop();
    }
    dims
}

pub fn write_fcnw_bytes(entries: &[FcnwEntry]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(FCNW_MAGIC);
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        let name = e.name().as_bytes();
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        match e {
            FcnwEntry::Tensor(n, t) => {
                if is_text_name(n) {
                    return Err(Error::config(n.clone(), "tensor entries may not use a reserved __name__"));
                }
                let dims = stored_dims(t.shape());
                out.push(dims.len() as u8);
                for d in dims {
                    out.extend_from_slice(&d.to_le_bytes());
                }
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            FcnwEntry::Text(n, s) => {
                if !is_text_name(n) {
                    return Err(Error::config(n.clone(), "text entries must be named __like_this__"));
                }
                out.push(1);
                out.extend_from_slice(&(s.len() as u32).to_le_bytes());
                out.extend_from_slice(s.as_bytes());
            }
        }
    }
    Ok(out)
}

pub fn write_fcnw(path: &Path, entries: &[FcnwEntry]) -> Result<()> {
    let bytes = write_fcnw_bytes(entries)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    f.sync_all().map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated {what}: need {n} bytes, {} left", self.buf.len() - self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn read_fcnw_bytes(buf: &[u8]) -> Result<Vec<FcnwEntry>> {
    if buf.len() < FCNW_MAGIC.len() || &buf[..4] != b"FCNW" {
        return Err(Error::format(0, "bad magic, not an FCNW container"));
    }
    if &buf[..6] != FCNW_MAGIC {
        let tag = String::from_utf8_lossy(&buf[..6]).trim_end_matches('\0').to_string();
        return Err(Error::Version(tag));
    }
    let mut c = Cursor { buf, pos: 6 };
    let count = c.u32("entry count")?;
    let mut out = Vec::new();
    for _ in 0..count {
        let at = c.pos as u64;
        let len = c.u32("name length")? as usize;
        let name = std::str::from_utf8(c.take(len, "name")?)
            .map_err(|_| Error::format(at + 4, "entry name is not UTF-8"))?
            .to_string();
        let rank_at = c.pos as u64;
        let rank = c.take(1, "rank")?[0] as usize;
        if rank > 4 {
            return Err(Error::format(rank_at, format!("rank {rank} of `{name}` exceeds 4")));
        }
        let mut dims = [1usize; 4];
        for d in dims.iter_mut().take(rank) {
            *d = c.u32("dims")? as usize;
        }
        if is_text_name(&name) {
            if rank != 1 {
                return Err(Error::format(rank_at, format!("text entry `{name}` must have rank 1")));
            }
            let body_at = c.pos as u64;
            let text = std::str::from_utf8(c.take(dims[0], "text")?)
                .map_err(|_| Error::format(body_at, format!("`{name}` is not UTF-8")))?;
            out.push(FcnwEntry::Text(name, text.to_string()));
            continue;
        }
        let n: usize = dims.iter().product();
        if n == 0 {
            return Err(Error::format(rank_at, format!("`{name}` has a zero extent")));
        }
        let raw = c.take(n.checked_mul(4).ok_or_else(|| Error::format(rank_at, "size overflow"))?, "values")?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        out.push(FcnwEntry::Tensor(name, Tensor::new(dims, data)?));
    }
    if c.pos != buf.len() {
        return Err(Error::format(c.pos as u64, "trailing bytes after last entry"));
    }
    Ok(out)
}

pub fn read_fcnw(path: &Path) -> Result<Vec<FcnwEntry>> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_fcnw_bytes(&buf)
}
