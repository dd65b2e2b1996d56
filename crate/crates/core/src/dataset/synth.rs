//! Synthetic music-dance pairs.
//!
//! The audio is a tempo-structured mixture of genre-specific tones and
//! percussive noise bursts. The choreography is a fixed smooth function of
//! the extracted audio features: a frozen random projection of the
//! (group-scaled) 438-dim frames, band-passed by a pair of causal EMAs and
//! squashed into safe joint ranges with tanh. The same mapping drives every
//! song, so an exact audio→pose function exists for a model to learn. Poses
//! are emitted as keypoints built in the canonical (aligned) frame, so the
//! retargeting pipeline recovers the intended angles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{extract_features, quantize_for_pcm16, FeatureFrame, Waveform, SAMPLE_RATE};
use crate::error::Result;
use crate::pose::{JointPose, Keypoints, Mat3, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthGenre {
    Pulse,
    Sway,
}

impl SynthGenre {
    pub fn name(self) -> &'static str {
        match self {
            SynthGenre::Pulse => "pulse",
            SynthGenre::Sway => "sway",
        }
    }

    /// Genres cycle by song index: even → pulse, odd → sway.
    pub fn cycling(index: usize) -> Self {
        if index % 2 == 0 {
            SynthGenre::Pulse
        } else {
            SynthGenre::Sway
        }
    }

    fn beat_period_s(self) -> f64 {
        match self {
            SynthGenre::Pulse => 0.5,    // 120 BPM
            SynthGenre::Sway => 2.0 / 3.0, // 90 BPM
        }
    }

    fn tone_set(self) -> [f64; 4] {
        match self {
            SynthGenre::Pulse => [220.0, 277.18, 329.63, 440.0],
            SynthGenre::Sway => [196.0, 246.94, 293.66, 392.0],
        }
    }
}

pub struct SynthSong {
    pub waveform: Waveform,
    pub features: Vec<FeatureFrame>,
    pub poses: Vec<JointPose>,
    pub keypoints: Vec<Keypoints>,
}

/// Deterministic in `seed`. `difficulty` in [0, 1] scales the percussive
/// noise level and the sharpness of the audio→pose mapping.
pub fn synth_pair(
    seed: u64,
    duration_s: f64,
    difficulty: f64,
    genre: SynthGenre,
) -> Result<SynthSong> {
    assert!(duration_s > 0.0, "duration must be positive");
    let difficulty = difficulty.clamp(0.0, 1.0);
    let waveform = synth_audio(seed, duration_s, difficulty, genre)?;
    let features = extract_features(&waveform)?;
    let poses = poses_from_features(&features, difficulty);
    let keypoints = poses.iter().map(keypoints_from_pose).collect();
    Ok(SynthSong {
        waveform,
        features,
        poses,
        keypoints,
    })
}

fn synth_audio(
    seed: u64,
    duration_s: f64,
    difficulty: f64,
    genre: SynthGenre,
) -> Result<Waveform> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (duration_s * SAMPLE_RATE as f64).round() as usize;
    let rate = SAMPLE_RATE as f64;
    let beat_len = (genre.beat_period_s() * rate) as usize;
    let tones = genre.tone_set();
    let burst_len = (0.04 * rate) as usize;
    let burst_amp = 0.2 + 0.2 * difficulty;

    let mut samples = vec![0.0f64; n];
    let mut start = 0usize;
    while start < n {
        let freq = tones[rng.random_range(0..tones.len())];
        let overtone = freq * 2.0;
        let tone_amp = rng.random_range(0.35..0.55);
        let decay = rng.random_range(2.0..4.0);
        let end = (start + beat_len).min(n);
        for i in start..end {
            let t = (i - start) as f64 / rate;
            let env = (-decay * t).exp();
            let phase = 2.0 * std::f64::consts::PI * (i as f64 / rate);
            samples[i] += tone_amp * env * (phase * freq).sin()
                + 0.25 * tone_amp * env * (phase * overtone).sin();
        }
        let burst_end = (start + burst_len).min(n);
        for s in samples[start..burst_end].iter_mut() {
            *s += burst_amp * rng.random_range(-1.0..1.0);
        }
        start += beat_len;
    }
    // A quiet hiss keeps every mel band above the log floor.
    for s in samples.iter_mut() {
        *s += 0.004 * rng.random_range(-1.0..1.0);
    }
    let peak = samples.iter().fold(0.0f64, |m, &v| m.max(v.abs())).max(1e-9);
    let scale = 0.7 / peak;
    // Snap to the 16-bit grid the WAV writer uses, so features computed here
    // match features computed from the file bit for bit.
    let samples: Vec<f32> = samples
        .iter()
        .map(|&v| quantize_for_pcm16((v * scale) as f32))
        .collect();
    Waveform::new(samples, SAMPLE_RATE)
}

/// Per-group scale factors flattening the raw feature ranges before the
/// random projection: mfcc, delta, chroma, tempogram, onset, beat.
fn group_scale(d: usize) -> f64 {
    match d {
        0..=19 => 1.0 / 20.0,
        20..=39 => 1.0 / 2.0,
        40..=51 => 1.0,
        52..=435 => 1.0,
        436 => 1.0 / 2.0,
        _ => 1.0,
    }
}

/// Joint ranges: q1/q2 stay in [π/4, 3π/4] (keeps the keypoint construction
/// feasible), q3/q4 swing wider inside (0, π).
const CENTERS: [f64; 4] = {
    let h = std::f64::consts::FRAC_PI_2;
    [h, h, h, h]
};
const AMPLITUDES: [f64; 4] = [
    std::f64::consts::FRAC_PI_4,
    std::f64::consts::FRAC_PI_4,
    1.2,
    1.2,
];

const EMA_FAST: f64 = 0.5;
const EMA_SLOW: f64 = 0.15;
/// Seed of the frozen projection shared by every song.
const MAPPING_SEED: u64 = 0x4D_44_4C_54;

fn projection_matrix() -> Vec<[f64; 4]> {
    let mut rng = ChaCha8Rng::seed_from_u64(MAPPING_SEED);
    let dim = crate::audio::FEATURE_DIM;
    (0..dim)
        .map(|_| {
            let mut row = [0.0f64; 4];
            for v in row.iter_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
            row
        })
        .collect()
}

/// The frozen audio→pose mapping. Two EMAs of a fixed projection form a
/// band-passed drive signal per joint; tanh squashes it into the joint range.
pub(crate) fn poses_from_features(features: &[FeatureFrame], difficulty: f64) -> Vec<JointPose> {
    let proj = projection_matrix();
    let gain = 12.0 * (0.75 + 0.5 * difficulty);
    let mut fast = [0.0f64; 4];
    let mut slow = [0.0f64; 4];
    let norm = 1.0 / (crate::audio::FEATURE_DIM as f64).sqrt();
    features
        .iter()
        .map(|f| {
            let mut z = [0.0f64; 4];
            for (d, &v) in f.values.iter().enumerate() {
                let s = v as f64 * group_scale(d) * norm;
                let row = &proj[d];
                for j in 0..4 {
                    z[j] += row[j] * s;
                }
            }
            let mut angles = [0.0f32; 4];
            for j in 0..4 {
                fast[j] = EMA_FAST * z[j] + (1.0 - EMA_FAST) * fast[j];
                slow[j] = EMA_SLOW * z[j] + (1.0 - EMA_SLOW) * slow[j];
                let drive = gain * (fast[j] - slow[j]);
                angles[j] = (CENTERS[j] + AMPLITUDES[j] * drive.tanh()) as f32;
            }
            JointPose {
                angles,
                t: f.t,
            }
        })
        .collect()
}

const SHOULDER_HALF_WIDTH: f64 = 0.18;
const SHOULDER_HEIGHT: f64 = 1.05;
const UPPER_ARM: f64 = 0.30;
const FOREARM: f64 = 0.28;
const HAND: f64 = 0.10;

/// Keypoints realizing the given angles, built directly in the canonical
/// frame (level shoulders, vertical spine), so alignment is the identity and
/// `extract_pose` recovers the angles exactly.
pub(crate) fn keypoints_from_pose(pose: &JointPose) -> Keypoints {
    let [q1, q2, q3, q4] = pose.angles.map(|a| a as f64);
    let pelvis = Vec3::ZERO;
    let left = Vec3::new(-SHOULDER_HALF_WIDTH, SHOULDER_HEIGHT, 0.0);
    let right = Vec3::new(SHOULDER_HALF_WIDTH, SHOULDER_HEIGHT, 0.0);
    // u1 pinned by both axis angles; q1, q2 in [π/4, 3π/4] keeps x real.
    let y = q1.cos();
    let z = q2.cos();
    let x = (1.0 - y * y - z * z).max(0.0).sqrt();
    let u1 = Vec3::new(x, y, z).normalize();
    let elbow = right + u1.scale(UPPER_ARM);
    let u2 = rotate_by_angle(u1, q3);
    let wrist = elbow + u2.scale(FOREARM);
    let u3 = rotate_by_angle(u2, q4);
    let index_tip = wrist + u3.scale(HAND);
    Keypoints {
        left_shoulder: left,
        right_shoulder: right,
        elbow,
        wrist,
        index_tip,
        pelvis,
        t: pose.t,
    }
}

/// Rotate `u` by `angle` about a deterministic axis perpendicular to it, so
/// the angle between input and output is exactly `angle`.
fn rotate_by_angle(u: Vec3, angle: f64) -> Vec3 {
    let reference = if u.y.abs() < 0.9 {
        Vec3::new(0.0, 1.0, 0.0)
    } else {
        Vec3::new(1.0, 0.0, 0.0)
    };
    let axis = u.cross(reference).normalize();
    Mat3::rotation_about(axis, angle).mul_vec(u)
}
