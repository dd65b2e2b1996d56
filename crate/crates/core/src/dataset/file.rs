//! Paired feature/pose file ("MDLA"): magic, u32 version = 1, u32 count,
//! u32 dim = 438, then per frame: f64 feature t, dim × f32 features,
//! f64 pose t, 4 × f32 angles. Little-endian.

use std::path::Path;

use super::PairSequence;
use crate::audio::{FeatureFrame, FEATURE_DIM};
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::pose::JointPose;

const MAGIC: &[u8; 4] = b"MDLA";
const VERSION: u32 = 1;

pub fn write_pair_file(path: &Path, pairs: &PairSequence) -> Result<()> {
    let mut w = Writer::new();
    w.raw(MAGIC);
    w.u32(VERSION);
    w.u32(pairs.frames.len() as u32);
    w.u32(FEATURE_DIM as u32);
    for (f, p) in &pairs.frames {
        w.f64(f.t);
        for &v in &f.values {
            w.f32(v);
        }
        w.f64(p.t);
        for &a in &p.angles {
            w.f32(a);
        }
    }
    w.save(path)
}

/// Reads the frames; song id and genre come from the manifest, not the file.
pub fn read_pair_file(path: &Path) -> Result<Vec<(FeatureFrame, JointPose)>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader::new(&bytes, path);
    r.magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.fail(format!("unsupported pair file version {version}")));
    }
    let count = r.u32()? as usize;
    let dim = r.u32()? as usize;
    if dim != FEATURE_DIM {
        return Err(r.fail(format!("pair file dim {dim}, expected {FEATURE_DIM}")));
    }
    let mut frames = Vec::with_capacity(count);
    for _ in 0..count {
        let ft = r.f64()?;
        let values = r.f32_vec(dim)?;
        let pt = r.f64()?;
        let mut angles = [0.0f32; 4];
        for a in &mut angles {
            *a = r.f32()?;
        }
        frames.push((
            FeatureFrame { values, t: ft },
            JointPose { angles, t: pt },
        ));
    }
    r.expect_eof()?;
    Ok(frames)
}
