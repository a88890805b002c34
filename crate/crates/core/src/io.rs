//! `MCIMG` image files: `"MCIMG"`, version `u8`, height `u32`, width `u32`,
//! then `height·width` little-endian `f32` pixels, row-major.

use std::path::Path;

use crate::error::{Error, Result};
use crate::kspace::ImagePlane;

pub const IMAGE_MAGIC: &[u8; 5] = b"MCIMG";
pub const IMAGE_VERSION: u8 = 1;
const HEADER_LEN: usize = 5 + 1 + 4 + 4;

pub fn encode_image(img: &ImagePlane) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * img.data.len());
    buf.extend_from_slice(IMAGE_MAGIC);
    buf.push(IMAGE_VERSION);
    buf.extend_from_slice(&(img.height as u32).to_le_bytes());
    buf.extend_from_slice(&(img.width as u32).to_le_bytes());
    for &v in &img.data {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    buf
}

pub fn decode_image(bytes: &[u8]) -> Result<ImagePlane> {
    let corrupt = |offset: usize, reason: &str| Error::Corrupt { offset: offset as u64, reason: reason.into() };
    if bytes.len() < HEADER_LEN {
        return Err(corrupt(bytes.len(), "truncated image header"));
    }
    if &bytes[..5] != IMAGE_MAGIC {
        return Err(corrupt(0, "bad magic, expected MCIMG"));
    }
    if bytes[5] != IMAGE_VERSION {
        return Err(corrupt(5, "unsupported image version"));
    }
    let height = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let width = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    let n = height
        .checked_mul(width)
        .ok_or_else(|| corrupt(6, "image dimensions overflow"))?;
    let expected = n
        .checked_mul(4)
        .and_then(|p| p.checked_add(HEADER_LEN))
        .ok_or_else(|| corrupt(6, "image dimensions overflow"))?;
    if bytes.len() < expected {
        return Err(corrupt(bytes.len(), "truncated pixel payload"));
    }
    if bytes.len() > expected {
        return Err(corrupt(expected, "trailing bytes after pixel payload"));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    ImagePlane::new(height, width, data)
}

pub fn read_image(path: impl AsRef<Path>) -> Result<ImagePlane> {
    decode_image(&std::fs::read(path)?)
}

pub fn write_image(path: impl AsRef<Path>, img: &ImagePlane) -> Result<()> {
    std::fs::write(path, encode_image(img))?;
    Ok(())
}
