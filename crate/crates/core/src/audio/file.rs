//! Binary feature and normalizer files.
//!
//! Feature file ("MDLF"): magic, u32 version = 1, u32 frame_count,
//! u32 dim = 438, f64 frame_rate = 60.0, then frame_count × dim f32
//! row-major. Little-endian throughout.
//!
//! Normalizer file ("MDLN"): magic, u32 dim, dim × f64 mins, dim × f64 maxs.

use std::path::Path;

use super::features::{FeatureFrame, FEATURE_DIM};
use super::normalize::Normalizer;
use super::FRAME_RATE;
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};

const FEATURE_MAGIC: &[u8; 4] = b"MDLF";
const FEATURE_VERSION: u32 = 1;
const NORMALIZER_MAGIC: &[u8; 4] = b"MDLN";

pub fn write_feature_file(path: &Path, frames: &[FeatureFrame]) -> Result<()> {
    let mut w = Writer::new();
    w.raw(FEATURE_MAGIC);
    w.u32(FEATURE_VERSION);
    w.u32(frames.len() as u32);
    w.u32(FEATURE_DIM as u32);
    w.f64(FRAME_RATE);
    for f in frames {
        assert_eq!(f.values.len(), FEATURE_DIM);
        for &v in &f.values {
            w.f32(v);
        }
    }
    w.save(path)
}

pub fn read_feature_file(path: &Path) -> Result<Vec<FeatureFrame>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader::new(&bytes, path);
    r.magic(FEATURE_MAGIC)?;
    let version = r.u32()?;
    if version != FEATURE_VERSION {
        return Err(r.fail(format!("unsupported feature file version {version}")));
    }
    let count = r.u32()? as usize;
    let dim = r.u32()? as usize;
    if dim != FEATURE_DIM {
        return Err(r.fail(format!("feature dim {dim}, expected {FEATURE_DIM}")));
    }
    let rate = r.f64()?;
    if rate != FRAME_RATE {
        return Err(r.fail(format!("frame rate {rate}, expected {FRAME_RATE}")));
    }
    let mut frames = Vec::with_capacity(count);
    for i in 0..count {
        let values = r.f32_vec(dim)?;
        frames.push(FeatureFrame {
            values,
            t: i as f64 / FRAME_RATE,
        });
    }
    r.expect_eof()?;
    Ok(frames)
}

pub fn write_normalizer_file(path: &Path, n: &Normalizer) -> Result<()> {
    let mut w = Writer::new();
    w.raw(NORMALIZER_MAGIC);
    w.u32(n.dim() as u32);
    for &v in n.min() {
        w.f64(v);
    }
    for &v in n.max() {
        w.f64(v);
    }
    w.save(path)
}

pub fn read_normalizer_file(path: &Path) -> Result<Normalizer> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader::new(&bytes, path);
    r.magic(NORMALIZER_MAGIC)?;
    let dim = r.u32()? as usize;
    let min = r.f64_vec(dim)?;
    let max = r.f64_vec(dim)?;
    r.expect_eof()?;
    Normalizer::from_bounds(min, max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_file_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.mdlf");
        let mut rng = crate::tensor::gradcheck::test_rng(4);
        let frames: Vec<FeatureFrame> = (0..7)
            .map(|i| FeatureFrame {
                values: (0..FEATURE_DIM)
                    .map(|_| rand::Rng::random_range(&mut rng, -10.0f32..10.0))
                    .collect(),
                t: i as f64 / FRAME_RATE,
            })
            .collect();
        write_feature_file(&path, &frames).unwrap();
        let back = read_feature_file(&path).unwrap();
        assert_eq!(frames, back);
        // And the bytes themselves are stable across rewrites.
        let b1 = std::fs::read(&path).unwrap();
        write_feature_file(&path, &frames).unwrap();
        assert_eq!(b1, std::fs::read(&path).unwrap());
    }

    #[test]
    fn truncated_file_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.mdlf");
        std::fs::write(&path, b"MDLF\x01\x00\x00\x00").unwrap();
        let err = read_feature_file(&path).unwrap_err();
        assert!(matches!(err, Error::Decode { offset: 8, .. }), "{err}");
    }

    #[test]
    fn normalizer_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("n.mdln");
        let frames = [
            FeatureFrame {
                values: vec![1.0; FEATURE_DIM],
                t: 0.0,
            },
            FeatureFrame {
                values: vec![3.5; FEATURE_DIM],
                t: 1.0 / 60.0,
            },
        ];
        let n = Normalizer::fit(frames.iter()).unwrap();
        write_normalizer_file(&path, &n).unwrap();
        let back = read_normalizer_file(&path).unwrap();
        assert_eq!(n, back);
    }
}
