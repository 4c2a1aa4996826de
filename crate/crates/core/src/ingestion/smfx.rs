//! SMFX v1 feature files.
//!
//! Layout, all little-endian:
//!
//! | offset        | content                                   |
//! |---------------|-------------------------------------------|
//! | 0             | magic `SMFX`                              |
//! | 4             | `u32` version (1)                         |
//! | 8             | `u32` n                                   |
//! | 12            | `u32` d                                   |
//! | 16            | `n x 4` `f32` boxes `(x1, y1, x2, y2)`    |
//! | 16 + 16n      | `n x d` `f32` feature rows                |

use std::path::Path;

use crate::domain::{BoundingBox, DetectedObject, FeatureMatrix};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"SMFX";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

pub fn encode_smfx(features: &FeatureMatrix, boxes: &[BoundingBox]) -> Result<Vec<u8>> {
    if boxes.len() != features.n() {
        return Err(Error::DimensionMismatch {
            expected: features.n(),
            found: boxes.len(),
        });
    }
    let n = u32::try_from(features.n())
        .map_err(|_| Error::InvalidArgument("too many rows for SMFX".into()))?;
    let d = u32::try_from(features.d())
        .map_err(|_| Error::InvalidArgument("feature dimension too large for SMFX".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 16 * boxes.len() + 4 * features.as_slice().len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&d.to_le_bytes());
    for b in boxes {
        for c in [b.x1, b.y1, b.x2, b.y2] {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
    }
    for v in features.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_smfx(bytes: &[u8]) -> Result<(FeatureMatrix, Vec<DetectedObject>)> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && bytes[..4] != MAGIC {
            return Err(Error::BadMagic(bytes[..4].try_into().unwrap()));
        }
        return Err(Error::TruncatedFile {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let version = word(4);
    if version != VERSION {
        return Err(Error::VersionUnsupported(version));
    }
    let n = word(8) as usize;
    let d = word(12) as usize;
    let expected = n
        .checked_mul(d)
        .and_then(|nd| nd.checked_add(4 * n))
        .and_then(|floats| floats.checked_mul(4))
        .and_then(|b| b.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::MalformedInput(format!("SMFX header overflows: n={n}, d={d}")))?;
    if bytes.len() < expected {
        return Err(Error::TruncatedFile {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::MalformedInput(format!(
            "{} trailing bytes after SMFX payload",
            bytes.len() - expected
        )));
    }
    let mut floats = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()));

    let mut detections = Vec::with_capacity(n);
    for i in 0..n {
        let mut c = [0f64; 4];
        for slot in &mut c {
            *slot = f64::from(floats.next().unwrap());
        }
        let bbox = BoundingBox::new(c[0], c[1], c[2], c[3]).map_err(|e| match e {
            Error::InvariantViolation(v) => {
                Error::InvariantViolation(v.into_iter().map(|m| format!("row {i}: {m}")).collect())
            }
            other => other,
        })?;
        detections.push(DetectedObject {
            detection_index: i,
            bbox,
            predicted_class: None,
        });
    }
    let features = FeatureMatrix::new(n, d, floats.collect())?;
    Ok((features, detections))
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<(FeatureMatrix, Vec<DetectedObject>)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_smfx(&bytes)
}

pub fn write_feature_file(
    path: impl AsRef<Path>,
    features: &FeatureMatrix,
    boxes: &[BoundingBox],
) -> Result<()> {
    let bytes = encode_smfx(features, boxes)?;
    super::write_atomic(path.as_ref(), &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(n: usize, d: usize) -> (FeatureMatrix, Vec<BoundingBox>) {
        let data = (0..n * d).map(|i| i as f32 * 0.25 - 1.0).collect();
        let boxes = (0..n)
            .map(|i| BoundingBox::new(i as f64, 0.0, i as f64 + 2.5, 3.0).unwrap())
            .collect();
        (FeatureMatrix::new(n, d, data).unwrap(), boxes)
    }

    #[test]
    fn write_read_3x8_is_byte_identical() {
        let (m, boxes) = sample(3, 8);
        let bytes = encode_smfx(&m, &boxes).unwrap();
        assert_eq!(bytes.len(), 16 + 3 * 16 + 3 * 8 * 4);
        let (m2, dets) = decode_smfx(&bytes).unwrap();
        assert_eq!(m, m2);
        let boxes2: Vec<_> = dets.iter().map(|d| d.bbox).collect();
        assert_eq!(encode_smfx(&m2, &boxes2).unwrap(), bytes);
    }

    #[test]
    fn header_layout() {
        let (m, boxes) = sample(1, 2);
        let bytes = encode_smfx(&m, &boxes).unwrap();
        assert_eq!(&bytes[..4], b"SMFX");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &[1, 0, 0, 0]);
        assert_eq!(&bytes[12..16], &[2, 0, 0, 0]);
        assert_eq!(&bytes[16..20], &0.0f32.to_le_bytes());
    }

    #[test]
    fn bad_magic() {
        let (m, boxes) = sample(2, 2);
        let mut bytes = encode_smfx(&m, &boxes).unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_smfx(&bytes), Err(Error::BadMagic(m)) if &m == b"XXXX"));
    }

    #[test]
    fn declared_five_rows_but_four_present() {
        let (m, boxes) = sample(5, 3);
        let bytes = encode_smfx(&m, &boxes).unwrap();
        let truncated = &bytes[..bytes.len() - 3 * 4];
        assert!(matches!(
            decode_smfx(truncated),
            Err(Error::TruncatedFile { .. })
        ));
    }

    #[test]
    fn unknown_version() {
        let (m, boxes) = sample(1, 1);
        let mut bytes = encode_smfx(&m, &boxes).unwrap();
        bytes[4] = 2;
        assert!(matches!(
            decode_smfx(&bytes),
            Err(Error::VersionUnsupported(2))
        ));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let (m, boxes) = sample(1, 1);
        let mut bytes = encode_smfx(&m, &boxes).unwrap();
        bytes.push(0);
        assert!(matches!(decode_smfx(&bytes), Err(Error::MalformedInput(_))));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            n in 1usize..6,
            d in 1usize..9,
            seed in proptest::collection::vec(-1.0e6f32..1.0e6, 54),
        ) {
            let data: Vec<f32> = (0..n * d).map(|i| seed[i % seed.len()] / (i as f32 + 1.0)).collect();
            let m = FeatureMatrix::new(n, d, data).unwrap();
            let boxes: Vec<_> = (0..n)
                .map(|i| BoundingBox::new(0.5 * i as f64, 1.0, 0.5 * i as f64 + 1.25, 9.0).unwrap())
                .collect();
            let bytes = encode_smfx(&m, &boxes).unwrap();
            let (m2, dets) = decode_smfx(&bytes).unwrap();
            prop_assert_eq!(m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            m2.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            let boxes2: Vec<_> = dets.iter().map(|d| d.bbox).collect();
            prop_assert_eq!(encode_smfx(&m2, &boxes2).unwrap(), bytes);
        }
    }
}
