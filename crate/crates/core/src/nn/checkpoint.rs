//! ORLM checkpoint format.
//!
//! ```text
//! "ORLM" | version: u16 LE | frame*
//! frame := name_len: u16 LE | name: utf-8 | ndims: u8 | dims: u32 LE * ndims | data: f64 LE * prod(dims)
//! ```
//!
//! Frames run to the end of the file, in parameter order.

use std::path::Path;

use super::array::{NetParams, RealArray};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ORLM";
pub const VERSION: u16 = 1;

pub fn encode(params: &NetParams) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(6 + params.num_scalars() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for (name, value) in params.iter() {
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::invalid(format!("parameter name too long: {name}")))?;
        let ndims = u8::try_from(value.shape().len())
            .map_err(|_| Error::invalid(format!("too many dimensions in {name}")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(ndims);
        for &d in value.shape() {
            let d = u32::try_from(d)
                .map_err(|_| Error::invalid(format!("dimension too large in {name}")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::parse(self.pos, format!("truncated {what}")));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2, what)?.try_into().expect("2 bytes"),
        ))
    }
}

pub fn decode(bytes: &[u8]) -> Result<NetParams> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::parse(0, "bad magic, expected ORLM"));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::Unsupported(format!("ORLM version {version}")));
    }
    let mut params = NetParams::new();
    while r.pos < bytes.len() {
        let frame_start = r.pos;
        let name_len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::parse(frame_start + 2, "name is not utf-8"))?
            .to_string();
        let ndims = r.take(1, "ndims")?[0] as usize;
        let mut shape = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            let d = u32::from_le_bytes(r.take(4, "dimension")?.try_into().expect("4 bytes"));
            shape.push(d as usize);
        }
        let count: usize = shape.iter().product();
        let raw = r.take(count * 8, "data")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let value = RealArray::new(shape, data)
            .map_err(|e| Error::parse(frame_start, format!("frame {name}: {e}")))?;
        params
            .push(name, value)
            .map_err(|e| Error::parse(frame_start, e.to_string()))?;
    }
    Ok(params)
}

pub fn save(params: &NetParams, path: &Path) -> Result<()> {
    std::fs::write(path, encode(params)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<NetParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
