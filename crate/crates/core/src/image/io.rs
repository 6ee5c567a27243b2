//! Raw tensor (`.dst`) and binary PGM files.
//!
//! Raw tensor layout, all little-endian:
//!
//! ```text
//! "DSTN" | u32 version = 1 | u32 ndim | ndim × u64 dims | f32 payload (row-major)
//! ```

use std::fs;
use std::path::Path;

use super::Image;
use crate::{Error, Result};

const DST_MAGIC: &[u8; 4] = b"DSTN";
const DST_VERSION: u32 = 1;

/// Shape plus flat payload as stored in a `.dst` file.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTensor {
    pub dims: Vec<u64>,
    pub data: Vec<f32>,
}

pub fn encode_tensor(t: &RawTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * t.dims.len() + 4 * t.data.len());
    out.extend_from_slice(DST_MAGIC);
    out.extend_from_slice(&DST_VERSION.to_le_bytes());
    out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
    for d in &t.dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Little-endian cursor that reports the byte offset on failure.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(
                self.offset(),
                format!(
                    "truncated {what}: expected {n} bytes, found {}",
                    self.remaining()
                ),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    /// Reads `n` floats, rejecting NaN with the offending byte offset.
    pub(crate) fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let start = self.pos;
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| {
            Error::format(start as u64, format!("{what}: element count overflows"))
        })?, what)?;
        let mut out = Vec::with_capacity(n);
        for (i, c) in bytes.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(c.try_into().unwrap());
            if v.is_nan() {
                return Err(Error::format((start + 4 * i) as u64, format!("NaN in {what}")));
            }
            out.push(v);
        }
        Ok(out)
    }
}

pub fn decode_tensor(buf: &[u8]) -> Result<RawTensor> {
    let mut r = Reader::new(buf);
    let magic = r.take(4, "magic")?;
    if magic != DST_MAGIC {
        return Err(Error::format(0, format!("bad magic {magic:?}, expected \"DSTN\"")));
    }
    let at = r.offset();
    let version = r.u32("version")?;
    if version != DST_VERSION {
        return Err(Error::format(at, format!("unsupported version {version}")));
    }
    let ndim = r.u32("ndim")? as usize;
    let mut dims = Vec::with_capacity(ndim.min(16));
    for _ in 0..ndim {
        dims.push(r.u64("dims")?);
    }
    let count = dims
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d))
        .and_then(|c| usize::try_from(c).ok())
        .ok_or_else(|| Error::format(r.offset(), "dimension product overflows"))?;
    let data = r.f32s(count, "payload")?;
    if r.remaining() != 0 {
        return Err(Error::format(
            r.offset(),
            format!("{} trailing bytes after payload", r.remaining()),
        ));
    }
    Ok(RawTensor { dims, data })
}

pub fn write_tensor_file(path: impl AsRef<Path>, t: &RawTensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_tensor(t)).map_err(|e| Error::io(path, e))
}

pub fn read_tensor_file(path: impl AsRef<Path>) -> Result<RawTensor> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&buf)
}

fn image_from_tensor(t: RawTensor) -> Result<Image> {
    // accept [H, W] or leading singleton axes such as [1, H, W]
    let lead = t.dims.len().saturating_sub(2);
    if t.dims.len() < 2 || t.dims[..lead].iter().any(|&d| d != 1) {
        return Err(Error::format(
            12,
            format!("tensor of shape {:?} is not a single 2-D image", t.dims),
        ));
    }
    let (h, w) = (t.dims[lead] as usize, t.dims[lead + 1] as usize);
    Image::new(h, w, t.data)
}

fn is_space(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c)
}

/// Binary (P5) PGM with 8- or 16-bit samples, scaled by the max value.
pub fn decode_pgm(buf: &[u8]) -> Result<Image> {
    if buf.len() < 2 || &buf[..2] != b"P5" {
        return Err(Error::format(0, "bad magic, expected \"P5\""));
    }
    let mut pos = 2;
    let mut fields = [0u64; 3];
    for field in fields.iter_mut() {
        // skip whitespace and comments
        loop {
            match buf.get(pos) {
                Some(&b) if is_space(b) => pos += 1,
                Some(b'#') => {
                    while buf.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while buf.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(pos as u64, "expected a decimal header field"));
        }
        *field = std::str::from_utf8(&buf[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::format(start as u64, "header field out of range"))?;
    }
    if !buf.get(pos).copied().is_some_and(is_space) {
        return Err(Error::format(pos as u64, "missing whitespace after maxval"));
    }
    pos += 1;
    let [w, h, maxval] = fields;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format(pos as u64, format!("maxval {maxval} not in 1..=65535")));
    }
    let bytes_per = if maxval < 256 { 1 } else { 2 };
    let n = (w * h) as usize;
    let need = n * bytes_per;
    if buf.len() - pos < need {
        return Err(Error::format(
            pos as u64,
            format!("truncated pixel data: expected {need} bytes, found {}", buf.len() - pos),
        ));
    }
    let data = &buf[pos..pos + need];
    let scale = maxval as f32;
    let pixels = if bytes_per == 1 {
        data.iter().map(|&b| (b as f32 / scale).min(1.0)).collect()
    } else {
        data.chunks_exact(2)
            .map(|c| (u16::from_be_bytes([c[0], c[1]]) as f32 / scale).min(1.0))
            .collect()
    };
    Image::new(h as usize, w as usize, pixels)
}

/// Loads a `.dst` tensor or a binary PGM, chosen by the file's magic bytes.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    if buf.starts_with(b"P5") {
        decode_pgm(&buf)
    } else {
        image_from_tensor(decode_tensor(&buf)?)
    }
}

/// Saves as a 2-D `.dst` tensor.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    write_tensor_file(
        path,
        &RawTensor {
            dims: vec![img.height() as u64, img.width() as u64],
            data: img.pixels().to_vec(),
        },
    )
}
