//! SGVOL container: 8-byte magic `SGVOL\0\0\x01`, three little-endian `u32`
//! axis sizes, then `f32` little-endian voxels in row-major order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{Shape3, Volume};

pub const MAGIC: [u8; 8] = *b"SGVOL\0\0\x01";
const HEADER_LEN: usize = 8 + 12;

pub fn encode_volume(v: &Volume) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * v.voxels().len());
    out.extend_from_slice(&MAGIC);
    for axis in v.shape().0 {
        out.extend_from_slice(&(axis as u32).to_le_bytes());
    }
    for voxel in v.voxels() {
        out.extend_from_slice(&voxel.to_le_bytes());
    }
    out
}

pub fn decode_volume(bytes: &[u8]) -> Result<Volume> {
    if bytes.len() < MAGIC.len() || bytes[..8] != MAGIC {
        return Err(Error::NotSgvol);
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::CorruptVolume("truncated header".into()));
    }
    let axis = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
    let shape = Shape3::new(axis(0), axis(1), axis(2));
    if shape.0.contains(&0) {
        return Err(Error::CorruptVolume(format!("empty axis in shape {shape}")));
    }
    let expected = shape
        .0
        .iter()
        .try_fold(4usize, |acc, &a| acc.checked_mul(a))
        .ok_or_else(|| Error::CorruptVolume(format!("shape {shape} overflows")))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::CorruptVolume(format!(
            "payload is {} bytes, shape {shape} needs {expected}",
            payload.len()
        )));
    }
    let voxels = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Volume::new(shape, voxels)
}

pub fn save_volume(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_volume(v)).map_err(|e| Error::io(path, e))
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_volume(&bytes)
}
