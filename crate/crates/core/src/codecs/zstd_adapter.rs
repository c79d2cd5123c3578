//! Zstandard frames via the `zstd` crate (libzstd). The block holds a CRC-32
//! of the frame followed by one standard frame; the frame CRC makes header
//! fields that libzstd tolerates (window size, reserved bits) tamper-evident.

use crate::{Error, Result};

pub(crate) const HEADER_LEN: usize = 4;
pub(crate) const AVAILABLE: bool = cfg!(feature = "zstd");

#[cfg(feature = "zstd")]
pub(crate) fn encode(data: &[u8], level: i32) -> Result<Vec<u8>> {
    let range = zstd::compression_level_range();
    if !range.contains(&level) {
        return Err(Error::Validation(format!(
            "zstd level {level} outside [{}, {}]",
            range.start(),
            range.end()
        )));
    }
    let frame = zstd::bulk::compress(data, level)
        .map_err(|e| Error::Unsupported(format!("zstd compression failed: {e}")))?;
    let mut out = Vec::with_capacity(HEADER_LEN + frame.len());
    out.extend_from_slice(&crc32fast::hash(&frame).to_le_bytes());
    out.extend_from_slice(&frame);
    Ok(out)
}

#[cfg(feature = "zstd")]
pub(crate) fn decode(block: &[u8], expected_len: usize) -> Result<Vec<u8>> {
    let frame = checked_frame(block)?;
    let out = zstd::stream::decode_all(frame)
        .map_err(|e| Error::Integrity(format!("zstd frame rejected: {e}")))?;
    if out.len() != expected_len {
        return Err(Error::Integrity(format!(
            "zstd frame decoded to {} bytes, expected {expected_len}",
            out.len()
        )));
    }
    Ok(out)
}

#[cfg(not(feature = "zstd"))]
pub(crate) fn encode(_data: &[u8], _level: i32) -> Result<Vec<u8>> {
    Err(Error::Capability("built without the `zstd` feature".into()))
}

#[cfg(not(feature = "zstd"))]
pub(crate) fn decode(block: &[u8], _expected_len: usize) -> Result<Vec<u8>> {
    checked_frame(block)?;
    Err(Error::Capability("built without the `zstd` feature".into()))
}

/// The frame inside a zstd block, after checking its CRC.
pub fn checked_frame(block: &[u8]) -> Result<&[u8]> {
    if block.len() < HEADER_LEN {
        return Err(Error::Integrity("zstd block truncated".into()));
    }
    let (crc, frame) = block.split_at(HEADER_LEN);
    if crc32fast::hash(frame) != u32::from_le_bytes(crc.try_into().unwrap()) {
        return Err(Error::Integrity("zstd frame CRC mismatch".into()));
    }
    Ok(frame)
}
