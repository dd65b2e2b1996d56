//! Keypoint and pose files.
//!
//! Keypoints are JSON-lines, one object per frame:
//! `{"t": seconds, "pts": {"ls": [x,y,z], "rs": [...], "el": [...],
//! "wr": [...], "ix": [...], "pv": [...]}}`.
//!
//! Poses are binary ("MDLP"): magic, u32 version = 1, u32 count, then count
//! × (f64 t, 4 × f32 angles), little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{JointPose, Keypoints, Vec3};
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};

const POSE_MAGIC: &[u8; 4] = b"MDLP";
const POSE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct KeypointRecord {
    t: f64,
    pts: PointSet,
}

#[derive(Serialize, Deserialize)]
struct PointSet {
    ls: [f64; 3],
    rs: [f64; 3],
    el: [f64; 3],
    wr: [f64; 3],
    ix: [f64; 3],
    pv: [f64; 3],
}

pub fn read_keypoints_jsonl(path: &Path) -> Result<Vec<Keypoints>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut offset = 0u64;
    for (lineno, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if !trimmed.is_empty() {
            let rec: KeypointRecord = serde_json::from_str(trimmed).map_err(|e| {
                Error::decode(path, offset, format!("line {}: {e}", lineno + 1))
            })?;
            let k = Keypoints {
                left_shoulder: Vec3::from_array(rec.pts.ls),
                right_shoulder: Vec3::from_array(rec.pts.rs),
                elbow: Vec3::from_array(rec.pts.el),
                wrist: Vec3::from_array(rec.pts.wr),
                index_tip: Vec3::from_array(rec.pts.ix),
                pelvis: Vec3::from_array(rec.pts.pv),
                t: rec.t,
            };
            k.validate()?;
            out.push(k);
        }
        offset += line.len() as u64 + 1;
    }
    Ok(out)
}

pub fn write_keypoints_jsonl(path: &Path, frames: &[Keypoints]) -> Result<()> {
    let mut text = String::new();
    for k in frames {
        let rec = KeypointRecord {
            t: k.t,
            pts: PointSet {
                ls: k.left_shoulder.to_array(),
                rs: k.right_shoulder.to_array(),
                el: k.elbow.to_array(),
                wr: k.wrist.to_array(),
                ix: k.index_tip.to_array(),
                pv: k.pelvis.to_array(),
            },
        };
        text.push_str(&serde_json::to_string(&rec).expect("keypoint record serializes"));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_pose_file(path: &Path, poses: &[JointPose]) -> Result<()> {
    let mut w = Writer::new();
    w.raw(POSE_MAGIC);
    w.u32(POSE_VERSION);
    w.u32(poses.len() as u32);
    for p in poses {
        w.f64(p.t);
        for &a in &p.angles {
            w.f32(a);
        }
    }
    w.save(path)
}

pub fn read_pose_file(path: &Path) -> Result<Vec<JointPose>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader::new(&bytes, path);
    r.magic(POSE_MAGIC)?;
    let version = r.u32()?;
    if version != POSE_VERSION {
        return Err(r.fail(format!("unsupported pose file version {version}")));
    }
    let count = r.u32()? as usize;
    let mut poses = Vec::with_capacity(count);
    for _ in 0..count {
        let t = r.f64()?;
        let mut angles = [0.0f32; 4];
        for a in &mut angles {
            *a = r.f32()?;
        }
        poses.push(JointPose { angles, t });
    }
    r.expect_eof()?;
    Ok(poses)
}
