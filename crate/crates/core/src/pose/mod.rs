//! Skeleton keypoints to robot joint angles.
//!
//! Poses are canonicalized before measuring: the shoulder line is rotated
//! level with the floor (about the pelvis), the spine is rotated vertical
//! (about the shoulder midpoint), and a final shoulder pass absorbs any tilt
//! the spine rotation reintroduced. Angles are then read off the arm chain
//! as unsigned rotations in [0, π]. Vertical is +y, the outward axis from
//! the chest is +z.

mod file;
mod vec3;

pub use file::{read_keypoints_jsonl, read_pose_file, write_keypoints_jsonl, write_pose_file};
pub use vec3::{Mat3, Vec3};

use crate::error::{Error, Result};

pub const VERTICAL: Vec3 = Vec3::new(0.0, 1.0, 0.0);
pub const OUTWARD: Vec3 = Vec3::new(0.0, 0.0, 1.0);

/// The six keypoints the retargeting consumes, in meters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Keypoints {
    pub left_shoulder: Vec3,
    pub right_shoulder: Vec3,
    pub elbow: Vec3,
    pub wrist: Vec3,
    pub index_tip: Vec3,
    pub pelvis: Vec3,
    pub t: f64,
}

/// Four joint angles in radians, each in [−π, π].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointPose {
    pub angles: [f32; 4],
    pub t: f64,
}

impl Keypoints {
    pub fn validate(&self) -> Result<()> {
        let pts = [
            self.left_shoulder,
            self.right_shoulder,
            self.elbow,
            self.wrist,
            self.index_tip,
            self.pelvis,
        ];
        if pts.iter().any(|p| !p.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite keypoint coordinate at t = {}",
                self.t
            )));
        }
        let chain = [
            (self.left_shoulder, self.right_shoulder, "shoulders"),
            (self.right_shoulder, self.elbow, "shoulder/elbow"),
            (self.elbow, self.wrist, "elbow/wrist"),
            (self.wrist, self.index_tip, "wrist/index"),
        ];
        for (a, b, name) in chain {
            if (a - b).norm() == 0.0 {
                return Err(Error::Data(format!(
                    "degenerate keypoints ({name} coincide) at t = {}",
                    self.t
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn map_points(&self, f: impl Fn(Vec3) -> Vec3) -> Keypoints {
        Keypoints {
            left_shoulder: f(self.left_shoulder),
            right_shoulder: f(self.right_shoulder),
            elbow: f(self.elbow),
            wrist: f(self.wrist),
            index_tip: f(self.index_tip),
            pelvis: f(self.pelvis),
            t: self.t,
        }
    }

    fn rotate_about(&self, center: Vec3, r: &Mat3) -> Keypoints {
        self.map_points(|p| center + r.mul_vec(p - center))
    }

    pub fn shoulder_vector(&self) -> Vec3 {
        self.left_shoulder - self.right_shoulder
    }

    pub fn shoulder_midpoint(&self) -> Vec3 {
        (self.left_shoulder + self.right_shoulder).scale(0.5)
    }

    pub fn spine_vector(&self) -> Vec3 {
        self.pelvis - self.shoulder_midpoint()
    }
}

/// Rotation taking unit vector `a` onto unit vector `b` (axis-angle form).
/// For antipodal inputs the rotation is π about a deterministic axis: the
/// normalized cross product of `a` with the basis vector of smallest
/// |component in a|.
pub fn rotation_between(a: Vec3, b: Vec3) -> Mat3 {
    debug_assert!((a.norm() - 1.0).abs() < 1e-9, "a must be a unit vector");
    debug_assert!((b.norm() - 1.0).abs() < 1e-9, "b must be a unit vector");
    let v = a.cross(b);
    let s2 = v.dot(v);
    let c = a.dot(b);
    if s2 < 1e-24 {
        if c > 0.0 {
            return Mat3::identity();
        }
        let basis = [
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
        ];
        let comps = [a.x.abs(), a.y.abs(), a.z.abs()];
        let mut k = 0;
        for i in 1..3 {
            if comps[i] < comps[k] {
                k = i;
            }
        }
        let axis = a.cross(basis[k]).normalize();
        return Mat3::rotation_pi_about(axis);
    }
    // Rodrigues: R = I + [v]x + [v]x² (1−c)/s²
    let vx = Mat3::cross_matrix(v);
    let vx2 = vx.mul_mat(&vx);
    Mat3::identity().add(&vx).add(&vx2.scale((1.0 - c) / s2))
}

/// Rotate the whole pose about the pelvis so the right→left shoulder vector
/// has no vertical component.
pub fn align_shoulders(k: &Keypoints) -> Result<Keypoints> {
    let sv = k.shoulder_vector();
    let n = sv.norm();
    if n == 0.0 {
        return Err(Error::Data(format!(
            "degenerate shoulder vector at t = {}",
            k.t
        )));
    }
    let u = sv.scale(1.0 / n);
    let horiz = Vec3::new(u.x, 0.0, u.z);
    let hn = horiz.norm();
    let target = if hn < 1e-12 {
        // Shoulder line is purely vertical; any horizontal target satisfies
        // the postcondition, picked deterministically.
        Vec3::new(1.0, 0.0, 0.0)
    } else {
        horiz.scale(1.0 / hn)
    };
    let r = rotation_between(u, target);
    Ok(k.rotate_about(k.pelvis, &r))
}

/// Rotate the pose about the shoulder midpoint so the midpoint→pelvis unit
/// vector points straight down. The rotation axis is perpendicular to the
/// plane of the spine vector and the vertical, which keeps level shoulders
/// level whenever the two constraints are compatible.
pub fn align_spine(k: &Keypoints) -> Result<Keypoints> {
    let mid = k.shoulder_midpoint();
    let sv = k.pelvis - mid;
    let n = sv.norm();
    if n == 0.0 {
        return Err(Error::Data(format!(
            "pelvis coincides with the shoulder midpoint at t = {}",
            k.t
        )));
    }
    let u = sv.scale(1.0 / n);
    let down = VERTICAL.scale(-1.0);
    let r = rotation_between(u, down);
    Ok(k.rotate_about(mid, &r))
}

/// Full canonicalization: shoulders, spine, then one corrective shoulder
/// pass for any tilt the spine rotation reintroduced.
pub fn align(k: &Keypoints) -> Result<Keypoints> {
    k.validate()?;
    let k = align_shoulders(k)?;
    let k = align_spine(&k)?;
    align_shoulders(&k)
}

fn angle_between(a: Vec3, b: Vec3) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

/// Joint angles of an aligned pose. With `u1 = shoulder→elbow`,
/// `u2 = elbow→wrist`, `u3 = wrist→index` (all unit):
/// `q1 = ∠(u1, vertical)`, `q2 = ∠(u1, outward)`, `q3 = ∠(u1, u2)`,
/// `q4 = ∠(u2, u3)` — all unsigned, in [0, π].
pub fn joint_angles(k: &Keypoints) -> Result<JointPose> {
    let segs = [
        (k.elbow - k.right_shoulder, "shoulder→elbow"),
        (k.wrist - k.elbow, "elbow→wrist"),
        (k.index_tip - k.wrist, "wrist→index"),
    ];
    let mut units = [Vec3::ZERO; 3];
    for (i, (v, name)) in segs.iter().enumerate() {
        let n = v.norm();
        if n == 0.0 {
            return Err(Error::Data(format!(
                "zero-length {name} segment at t = {}",
                k.t
            )));
        }
        units[i] = v.scale(1.0 / n);
    }
    let [u1, u2, u3] = units;
    let q = [
        angle_between(u1, VERTICAL),
        angle_between(u1, OUTWARD),
        angle_between(u1, u2),
        angle_between(u2, u3),
    ];
    Ok(JointPose {
        angles: [q[0] as f32, q[1] as f32, q[2] as f32, q[3] as f32],
        t: k.t,
    })
}

/// Align and measure in one step.
pub fn extract_pose(k: &Keypoints) -> Result<JointPose> {
    joint_angles(&align(k)?)
}
