//! Binary file formats for the synthetic dataset. All integers and floats are
//! little-endian.
//!
//! `.lxrw` raw mosaic:
//!
//! | bytes | field |
//! |-------|-------|
//! | 4 | magic `LXRW` |
//! | 4 | u32 version (1) |
//! | 4 | u32 width |
//! | 4 | u32 height |
//! | 4 | f32 black level |
//! | 4·w·h | f32 mosaic, row-major |
//!
//! `.lxpm` float map holding one or more RGB frames:
//!
//! | bytes | field |
//! |-------|-------|
//! | 4 | magic `LXPM` |
//! | 4 | u32 version (1) |
//! | 4 | u32 width |
//! | 4 | u32 height |
//! | 4 | u32 channels (3) |
//! | 4 | u32 frame count |
//! | per frame: 4 + 4·c·w·h | f32 exposure seconds, then f32 planar data |

use std::path::Path;

use contexp_tensor::Tensor;

use crate::error::{Error, Result};
use crate::image::SrgbImage;
use crate::raw::RawImage;

pub const RAW_MAGIC: &[u8; 4] = b"LXRW";
pub const MAP_MAGIC: &[u8; 4] = b"LXPM";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode_raw(raw: &RawImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + 4 * raw.data().len());
    out.extend_from_slice(RAW_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(raw.width() as u32).to_le_bytes());
    out.extend_from_slice(&(raw.height() as u32).to_le_bytes());
    out.extend_from_slice(&raw.black_level().to_le_bytes());
    for v in raw.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format(self.path, format!("truncated at byte {} (needed {n} more)", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::format(self.path, "size overflow"))?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(Error::format(self.path, format!("bad magic, expected {}", String::from_utf8_lossy(magic))));
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::format(
                self.path,
                format!("unsupported version {version} (this build reads {FORMAT_VERSION})"),
            ));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(self.path, format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

pub fn decode_raw(bytes: &[u8], path: &Path) -> Result<RawImage> {
    let mut r = Reader { bytes, pos: 0, path };
    r.header(RAW_MAGIC)?;
    let width = r.u32()? as usize;
    let height = r.u32()? as usize;
    let black = r.f32()?;
    let data = r.f32s(width * height)?;
    r.finish()?;
    RawImage::new(width, height, data, black).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_raw(path: &Path, raw: &RawImage) -> Result<()> {
    std::fs::write(path, encode_raw(raw)).map_err(|e| Error::io(path, e))
}

pub fn read_raw(path: &Path) -> Result<RawImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_raw(&bytes, path)
}

/// One frame of a float map: an image tagged with its exposure time.
#[derive(Clone, Debug, PartialEq)]
pub struct MapFrame {
    pub exposure: f32,
    pub image: SrgbImage,
}

pub fn encode_map(frames: &[MapFrame]) -> Result<Vec<u8>> {
    let first = frames.first().ok_or_else(|| Error::Config("float map needs at least one frame".into()))?;
    let (w, h) = (first.image.width(), first.image.height());
    let mut out = Vec::new();
    out.extend_from_slice(MAP_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&3u32.to_le_bytes());
    out.extend_from_slice(&(frames.len() as u32).to_le_bytes());
    for f in frames {
        if (f.image.width(), f.image.height()) != (w, h) {
            return Err(Error::Config("float map frames must share dimensions".into()));
        }
        out.extend_from_slice(&f.exposure.to_le_bytes());
        for v in f.image.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_map(bytes: &[u8], path: &Path) -> Result<Vec<MapFrame>> {
    let mut r = Reader { bytes, pos: 0, path };
    r.header(MAP_MAGIC)?;
    let width = r.u32()? as usize;
    let height = r.u32()? as usize;
    let channels = r.u32()? as usize;
    if channels != 3 {
        return Err(Error::format(path, format!("expected 3 channels, found {channels}")));
    }
    let count = r.u32()? as usize;
    let mut frames = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let exposure = r.f32()?;
        let data = r.f32s(3 * width * height)?;
        let image =
            SrgbImage::new(Tensor::new([3, height, width], data)?).map_err(|e| Error::format(path, e.to_string()))?;
        frames.push(MapFrame { exposure, image });
    }
    r.finish()?;
    Ok(frames)
}

pub fn write_map(path: &Path, frames: &[MapFrame]) -> Result<()> {
    std::fs::write(path, encode_map(frames)?).map_err(|e| Error::io(path, e))
}

pub fn read_map(path: &Path) -> Result<Vec<MapFrame>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_map(&bytes, path)
}
