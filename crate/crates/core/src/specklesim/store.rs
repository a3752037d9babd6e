//! Binary patch and frame containers.
//!
//! Layout (all little-endian): 4-byte magic (`QUSP` for patches, `QUSF` for
//! full frames), u32 record count, u32 rows, u32 cols, then `count * rows *
//! cols` f32 samples stored row-major record after record, then one label
//! byte per record (0 = LDS, 1 = FDS, 255 = unknown).

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::Label;
use crate::error::{QusError, Result};

pub const PATCH_MAGIC: [u8; 4] = *b"QUSP";
pub const FRAME_MAGIC: [u8; 4] = *b"QUSF";
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub values: Array2<f64>,
    pub label: Label,
}

pub fn encode(magic: [u8; 4], records: &[Record]) -> Result<Vec<u8>> {
    let (rows, cols) = records
        .first()
        .map(|r| r.values.dim())
        .unwrap_or((0, 0));
    if records.iter().any(|r| r.values.dim() != (rows, cols)) {
        return Err(QusError::invalid("all records in a store must share one shape"));
    }
    let to_u32 = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| QusError::invalid(format!("{what} {v} exceeds u32")))
    };
    let mut out = Vec::with_capacity(HEADER_LEN + records.len() * (rows * cols * 4 + 1));
    out.extend_from_slice(&magic);
    out.extend_from_slice(&to_u32(records.len(), "record count")?.to_le_bytes());
    out.extend_from_slice(&to_u32(rows, "rows")?.to_le_bytes());
    out.extend_from_slice(&to_u32(cols, "cols")?.to_le_bytes());
    for r in records {
        for v in r.values.iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out.extend(records.iter().map(|r| r.label.to_byte()));
    Ok(out)
}

pub fn decode(magic: [u8; 4], bytes: &[u8], path: &Path) -> Result<Vec<Record>> {
    let bad = |m: &str| QusError::format(path, m);
    if bytes.len() < HEADER_LEN {
        return Err(bad("truncated header"));
    }
    if bytes[..4] != magic {
        return Err(bad(&format!(
            "expected magic {:?}, found {:?}",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(&bytes[..4])
        )));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (count, rows, cols) = (word(4), word(8), word(12));
    let per = rows
        .checked_mul(cols)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| bad("shape overflow"))?;
    let expected = count
        .checked_mul(per + 1)
        .and_then(|v| v.checked_add(HEADER_LEN))
        .ok_or_else(|| bad("size overflow"))?;
    if bytes.len() != expected {
        return Err(bad(&format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let data = &bytes[HEADER_LEN..HEADER_LEN + count * per];
    let labels = &bytes[HEADER_LEN + count * per..];
    data.chunks_exact(per.max(1))
        .take(count)
        .zip(labels)
        .map(|(chunk, &lb)| {
            let vals: Vec<f64> = chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect();
            let label = Label::from_byte(lb).ok_or_else(|| bad(&format!("bad label byte {lb}")))?;
            let values = Array2::from_shape_vec((rows, cols), vals).map_err(|e| bad(&e.to_string()))?;
            Ok(Record { values, label })
        })
        .collect()
}

pub fn write(path: &Path, magic: [u8; 4], records: &[Record]) -> Result<()> {
    let bytes = encode(magic, records)?;
    fs::write(path, bytes).map_err(|e| QusError::io(path, e))
}

pub fn read(path: &Path, magic: [u8; 4]) -> Result<Vec<Record>> {
    let bytes = fs::read(path).map_err(|e| QusError::io(path, e))?;
    decode(magic, &bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_fixed() {
        let rec = Record {
            values: Array2::from_shape_vec((2, 3), vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap(),
            label: Label::Fds,
        };
        let bytes = encode(PATCH_MAGIC, &[rec]).unwrap();
        assert_eq!(&bytes[..4], b"QUSP");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &3u32.to_le_bytes());
        assert_eq!(&bytes[16 + 4..16 + 8], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 16 + 24 + 1);
        assert_eq!(*bytes.last().unwrap(), 1);
    }

    #[test]
    fn wrong_magic_and_truncation_are_rejected() {
        let rec = Record { values: Array2::ones((2, 2)), label: Label::Lds };
        let bytes = encode(FRAME_MAGIC, &[rec]).unwrap();
        let p = Path::new("mem");
        assert!(decode(PATCH_MAGIC, &bytes, p).is_err());
        assert!(decode(FRAME_MAGIC, &bytes[..bytes.len() - 1], p).is_err());
        assert!(decode(FRAME_MAGIC, &bytes, p).is_ok());
    }

    proptest! {
        #[test]
        fn f32_valued_records_round_trip(
            rows in 1usize..6, cols in 1usize..6, n in 0usize..4, seed in any::<u32>()
        ) {
            let records: Vec<Record> = (0..n).map(|k| Record {
                values: Array2::from_shape_fn((rows, cols), |(r, c)| {
                    (((r * 31 + c * 7 + k) as u32 ^ seed) % 1000) as f32 as f64 / 8.0
                }),
                label: if k % 2 == 0 { Label::Fds } else { Label::Lds },
            }).collect();
            let bytes = encode(PATCH_MAGIC, &records).unwrap();
            let back = decode(PATCH_MAGIC, &bytes, Path::new("mem")).unwrap();
            prop_assert_eq!(back, records);
        }
    }
}
