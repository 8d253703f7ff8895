//! Binary parameter checkpoints.
//!
//! Layout (little-endian): magic `EVCK`, `u32` version, `u32` entry count,
//! then per entry a `u16` name length, the UTF-8 name, a `u8` rank, `rank`
//! `u32` extents and the `f64` values.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EVCK";
pub const VERSION: u32 = 1;

/// One named array.
pub type Entry = (String, Vec<usize>, Vec<f64>);

pub fn encode(entries: &[Entry]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(entries.len()).map_err(|_| Error::Format("too many entries".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, shape, data) in entries {
        let len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("name too long: {name}")))?;
        let rank = u8::try_from(shape.len()).map_err(|_| Error::Format(format!("rank too large: {name}")))?;
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Format(format!("`{name}`: shape {shape:?} does not match {} values", data.len())));
        }
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(rank);
        for &d in shape {
            let d = u32::try_from(d).map_err(|_| Error::Format(format!("extent too large: {name}")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
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
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode(buf: &[u8]) -> Result<Vec<Entry>> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = c.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = u16::from_le_bytes(c.take(2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| Error::Format("entry name is not UTF-8".into()))?
            .to_owned();
        let rank = c.take(1)?[0] as usize;
        let shape = (0..rank).map(|_| c.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let bytes = c.take(n.checked_mul(8).ok_or_else(|| Error::Format("entry too large".into()))?)?;
        let data = bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        entries.push((name, shape, data));
    }
    if c.pos != buf.len() {
        return Err(Error::Format(format!("{} trailing bytes", buf.len() - c.pos)));
    }
    Ok(entries)
}

pub fn save(path: &Path, entries: &[Entry]) -> Result<()> {
    let bytes = encode(entries)?;
    fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<Entry>> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    decode(&buf)
}
