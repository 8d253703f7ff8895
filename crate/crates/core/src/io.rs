//! File formats: binary event streams, 16-bit disparity PGM and 8-bit
//! preview PGM.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::events::{Event, EventStream};
use crate::losses::GroundTruth;
use crate::tensor::Tensor;

pub const EVENT_MAGIC: &[u8; 4] = b"EVST";
pub const EVENT_VERSION: u32 = 1;
pub const EVENT_HEADER_BYTES: usize = 24;
pub const EVENT_RECORD_BYTES: usize = 14;
/// Largest disparity the 16-bit encoding can hold.
pub const DISPARITY_LIMIT: f64 = 255.99;

pub fn encode_events(stream: &EventStream) -> Vec<u8> {
    let mut out = Vec::with_capacity(EVENT_HEADER_BYTES + stream.len() * EVENT_RECORD_BYTES);
    out.extend_from_slice(EVENT_MAGIC);
    out.extend_from_slice(&EVENT_VERSION.to_le_bytes());
    out.extend_from_slice(&(stream.width() as u32).to_le_bytes());
    out.extend_from_slice(&(stream.height() as u32).to_le_bytes());
    out.extend_from_slice(&(stream.len() as u64).to_le_bytes());
    for e in stream.events() {
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.push(e.p as u8);
        out.push(0);
        out.extend_from_slice(&e.t.to_le_bytes());
    }
    out
}

pub fn decode_events(buf: &[u8]) -> Result<EventStream> {
    if buf.len() < EVENT_HEADER_BYTES {
        return Err(Error::Format(format!("event file truncated: {} header bytes", buf.len())));
    }
    if &buf[..4] != EVENT_MAGIC {
        return Err(Error::Format("not an event file (bad magic)".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != EVENT_VERSION {
        return Err(Error::Format(format!("unsupported event file version {version}")));
    }
    let (w, h) = (u32_at(8) as usize, u32_at(12) as usize);
    let count = u64::from_le_bytes(buf[16..24].try_into().unwrap());
    let body = &buf[EVENT_HEADER_BYTES..];
    let expected = usize::try_from(count)
        .ok()
        .and_then(|c| c.checked_mul(EVENT_RECORD_BYTES))
        .ok_or_else(|| Error::Format(format!("event count {count} too large")))?;
    if body.len() < expected {
        return Err(Error::Format(format!("event file truncated: {count} events need {expected} bytes, found {}", body.len())));
    }
    if body.len() > expected {
        return Err(Error::Format(format!("{} trailing bytes after {count} events", body.len() - expected)));
    }
    let events = body
        .chunks_exact(EVENT_RECORD_BYTES)
        .map(|r| Event {
            x: u16::from_le_bytes([r[0], r[1]]),
            y: u16::from_le_bytes([r[2], r[3]]),
            p: r[4] as i8,
            t: u64::from_le_bytes(r[6..14].try_into().unwrap()),
        })
        .collect();
    EventStream::new(w, h, events)
}

pub fn write_events(path: &Path, stream: &EventStream) -> Result<()> {
    fs::write(path, encode_events(stream))?;
    Ok(())
}

pub fn read_events(path: &Path) -> Result<EventStream> {
    decode_events(&fs::read(path)?)
}

/// A single-view disparity map with per-pixel validity.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DisparityImage {
    pub fn dense(width: usize, height: usize, values: Vec<f64>) -> Self {
        let valid = vec![true; values.len()];
        Self { width, height, values, valid }
    }

    pub fn to_ground_truth(&self) -> Result<GroundTruth> {
        let shape = [1, 1, self.height, self.width];
        GroundTruth::new(
            Tensor::new(self.values.clone(), &shape)?,
            Tensor::new(self.valid.iter().map(|&v| f64::from(u8::from(v))).collect(), &shape)?,
        )
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match t.shape() {
            &[1, 1, h, w] => Ok(Self::dense(w, h, t.to_vec())),
            s => Err(Error::Format(format!("expected a [1, 1, H, W] disparity map, got {s:?}"))),
        }
    }
}

/// 16-bit binary PGM, big-endian samples, `round(d·256)`; 0 marks an
/// invalid pixel. Valid disparities below 1/512 therefore read back as
/// invalid.
pub fn encode_disparity(map: &DisparityImage) -> Result<Vec<u8>> {
    if map.values.len() != map.width * map.height || map.valid.len() != map.values.len() {
        return Err(Error::Format("disparity map size does not match its extent".into()));
    }
    let mut out = format!("P5\n{} {}\n65535\n", map.width, map.height).into_bytes();
    for (&d, &v) in map.values.iter().zip(&map.valid) {
        let s: u16 = if v {
            if !(0.0..=DISPARITY_LIMIT).contains(&d) {
                return Err(Error::Format(format!("disparity {d} outside [0, {DISPARITY_LIMIT}]")));
            }
            (d * 256.0).round() as u16
        } else {
            0
        };
        out.extend_from_slice(&s.to_be_bytes());
    }
    Ok(out)
}

struct PgmHeader {
    width: usize,
    height: usize,
    maxval: usize,
    data_start: usize,
}

fn parse_pgm_header(buf: &[u8]) -> Result<PgmHeader> {
    if buf.len() < 2 || &buf[..2] != b"P5" {
        return Err(Error::Format("not a binary PGM (missing P5)".into()));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for f in fields.iter_mut() {
        loop {
            match buf.get(pos) {
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while buf.get(pos).is_some_and(|&c| c != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while buf.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format(format!("malformed PGM header at byte {start}")));
        }
        *f = std::str::from_utf8(&buf[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::Format("PGM header value out of range".into()))?;
    }
    if !buf.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Format("malformed PGM header: no separator before data".into()));
    }
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("invalid PGM maxval {maxval}")));
    }
    Ok(PgmHeader {
        width,
        height,
        maxval,
        data_start: pos + 1,
    })
}

pub fn decode_disparity(buf: &[u8]) -> Result<DisparityImage> {
    let h = parse_pgm_header(buf)?;
    if h.maxval != 65535 {
        return Err(Error::Format(format!("disparity PGM must have maxval 65535, found {}", h.maxval)));
    }
    let n = h.width * h.height;
    let data = &buf[h.data_start..];
    if data.len() != 2 * n {
        return Err(Error::Format(format!("disparity PGM holds {} bytes, expected {}", data.len(), 2 * n)));
    }
    let raw: Vec<u16> = data.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
    Ok(DisparityImage {
        width: h.width,
        height: h.height,
        values: raw.iter().map(|&s| f64::from(s) / 256.0).collect(),
        valid: raw.iter().map(|&s| s != 0).collect(),
    })
}

pub fn write_disparity(path: &Path, map: &DisparityImage) -> Result<()> {
    fs::write(path, encode_disparity(map)?)?;
    Ok(())
}

pub fn read_disparity(path: &Path) -> Result<DisparityImage> {
    decode_disparity(&fs::read(path)?)
}

/// 8-bit PGM of `values` after min-max normalization.
pub fn encode_preview(values: &[f64], width: usize, height: usize) -> Result<Vec<u8>> {
    if values.len() != width * height {
        return Err(Error::Format(format!("{} values for a {width}x{height} preview", values.len())));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s = if hi > lo { 255.0 / (hi - lo) } else { 0.0 };
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| ((v - lo) * s).round().clamp(0.0, 255.0) as u8));
    Ok(out)
}

pub fn write_preview(path: &Path, values: &[f64], width: usize, height: usize) -> Result<()> {
    fs::write(path, encode_preview(values, width, height)?)?;
    Ok(())
}
