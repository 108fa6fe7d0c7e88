//! IDX file ingestion (the MNIST container format).
//!
//! Big-endian layout: magic `0x00000803` for image files (count, rows, cols,
//! then unsigned pixel bytes) and `0x00000801` for label files (count, then
//! label bytes). Pixel bytes are rescaled linearly from `[0, 255]` to
//! `[-1, +1]`.

use std::path::Path;

use super::BenchError;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Parsed IDX payload.
#[derive(Debug, Clone, PartialEq)]
pub enum IdxData {
    Images {
        count: usize,
        rows: usize,
        cols: usize,
        /// One row per image, `rows * cols` pixels in `[-1, +1]`.
        pixels: Vec<Vec<f64>>,
    },
    Labels(Vec<u8>),
}

/// Reads and parses an IDX file.
pub fn load_idx(path: &Path) -> Result<IdxData, BenchError> {
    parse_idx(&std::fs::read(path)?)
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32, BenchError> {
    let slice = bytes.get(offset..offset + 4).ok_or(BenchError::Truncated {
        expected: 4,
        got: bytes.len().saturating_sub(offset),
        offset,
    })?;
    Ok(u32::from_be_bytes(slice.try_into().expect("4 bytes")))
}

/// Parses an in-memory IDX payload.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxData, BenchError> {
    let magic = read_u32(bytes, 0)?;
    match magic {
        IMAGES_MAGIC => {
            let count = read_u32(bytes, 4)? as usize;
            let rows = read_u32(bytes, 8)? as usize;
            let cols = read_u32(bytes, 12)? as usize;
            let need = count * rows * cols;
            let payload = bytes.get(16..16 + need).ok_or(BenchError::Truncated {
                expected: need,
                got: bytes.len().saturating_sub(16),
                offset: 16,
            })?;
            let pixels = payload
                .chunks(rows * cols)
                .map(|img| img.iter().map(|&b| b as f64 / 255.0 * 2.0 - 1.0).collect())
                .collect();
            Ok(IdxData::Images {
                count,
                rows,
                cols,
                pixels,
            })
        }
        LABELS_MAGIC => {
            let count = read_u32(bytes, 4)? as usize;
            let payload = bytes.get(8..8 + count).ok_or(BenchError::Truncated {
                expected: count,
                got: bytes.len().saturating_sub(8),
                offset: 8,
            })?;
            Ok(IdxData::Labels(payload.to_vec()))
        }
        value => Err(BenchError::BadMagic { value, offset: 0 }),
    }
}
