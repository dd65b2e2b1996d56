//! Autoregressive song translation and choreography evaluation.
//!
//! Translation slides the training window over the feature stream: for each
//! frame the model sees the last K audio features and its own previously
//! generated poses (right-shifted, zero start pose), and the prediction at
//! the final valid slot becomes the next pose. Evaluation reports the
//! average joint error per song plus a Fréchet distance between Gaussians
//! fitted to pooled pose+velocity vectors.

mod gaussian;

pub use gaussian::{frechet_distance, sqrt_psd, GaussianSummary};

use std::collections::BTreeMap;

use serde::Serialize;

use crate::audio::{FeatureFrame, Normalizer};
use crate::dataset::PairSequence;
use crate::error::{Error, Result};
use crate::model::{Model, WindowInput, POSE_DIM};
use crate::pose::JointPose;
use crate::tensor::{Graph, Tensor};

#[derive(Clone, Debug)]
pub struct GeneratedChoreography {
    pub song_id: String,
    pub poses: Vec<JointPose>,
}

/// Translate a full feature stream into poses, one frame at a time.
/// Dropout is disabled; the result is a deterministic function of the model
/// parameters and the features.
pub fn translate(
    model: &Model<f32>,
    normalizer: &Normalizer,
    song_id: &str,
    features: &[FeatureFrame],
) -> Result<GeneratedChoreography> {
    let k = model.window();
    let fdim = model.feature_dim();
    for f in features {
        if f.values.len() != fdim {
            return Err(Error::Data(format!(
                "feature dimension {} does not match the model's {fdim}",
                f.values.len()
            )));
        }
    }
    let normalized: Vec<Vec<f32>> = features
        .iter()
        .map(|f| normalizer.normalize_frame(f).values)
        .collect();

    let mut rng = crate::tensor::gradcheck::test_rng(0); // unused: dropout off
    let mut poses: Vec<JointPose> = Vec::with_capacity(features.len());
    let mut angles_so_far: Vec<[f32; 4]> = Vec::with_capacity(features.len());
    for t in 0..features.len() {
        let start = t.saturating_sub(k - 1);
        let valid = t - start + 1;
        let mut audio = vec![0.0f32; k * fdim];
        for i in 0..valid {
            audio[i * fdim..(i + 1) * fdim].copy_from_slice(&normalized[start + i]);
        }
        let mut shifted = vec![0.0f32; k * POSE_DIM];
        for i in 1..valid {
            shifted[i * POSE_DIM..(i + 1) * POSE_DIM]
                .copy_from_slice(&angles_so_far[start + i - 1]);
        }
        let audio_t = Tensor::new(vec![1, k, fdim], audio);
        let shifted_t = Tensor::new(vec![1, k, POSE_DIM], shifted);
        let mut g: Graph<f32> = Graph::new();
        let bound = model.bind(&mut g);
        let out = model.forward(
            &mut g,
            &bound,
            &WindowInput {
                audio: &audio_t,
                shifted_poses: &shifted_t,
                valid_lens: &[valid],
                start_positions: &[start],
            },
            false,
            &mut rng,
        );
        let data = g.value(out).data();
        let slot = valid - 1;
        let mut angles = [0.0f32; 4];
        angles.copy_from_slice(&data[slot * POSE_DIM..(slot + 1) * POSE_DIM]);
        angles_so_far.push(angles);
        poses.push(JointPose {
            angles,
            t: features[t].t,
        });
    }
    Ok(GeneratedChoreography {
        song_id: song_id.to_string(),
        poses,
    })
}

/// Average joint error: mean over frames and joints of the plain absolute
/// angle difference, in radians.
pub fn aje(generated: &[JointPose], ground_truth: &[JointPose]) -> Result<f64> {
    if generated.len() != ground_truth.len() {
        return Err(Error::Data(format!(
            "sequence lengths disagree: {} vs {}",
            generated.len(),
            ground_truth.len()
        )));
    }
    if generated.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0f64;
    for (g, t) in generated.iter().zip(ground_truth) {
        for j in 0..4 {
            total += (g.angles[j] as f64 - t.angles[j] as f64).abs();
        }
    }
    Ok(total / (generated.len() as f64 * 4.0))
}

/// 8-dim evaluation vectors: the 4 angles plus their frame differences
/// (velocity 0 at the first frame).
pub fn pose_velocity_vectors(poses: &[JointPose]) -> Vec<Vec<f64>> {
    poses
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut v = Vec::with_capacity(8);
            for j in 0..4 {
                v.push(p.angles[j] as f64);
            }
            for j in 0..4 {
                let vel = if i == 0 {
                    0.0
                } else {
                    p.angles[j] as f64 - poses[i - 1].angles[j] as f64
                };
                v.push(vel);
            }
            v
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct SongReport {
    pub aje: f64,
    pub frames: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct AggregateReport {
    pub aje_mean: f64,
    pub aje_std: f64,
    pub fid: f64,
}

#[derive(Clone, Debug)]
pub struct EvaluationReport {
    pub songs: BTreeMap<String, SongReport>,
    pub aggregate: AggregateReport,
}

impl EvaluationReport {
    /// Spec report shape: one key per song id plus an `aggregate` key.
    pub fn to_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        map.insert(
            "aggregate".to_string(),
            serde_json::to_value(&self.aggregate).unwrap(),
        );
        for (id, song) in &self.songs {
            map.insert(id.clone(), serde_json::to_value(song).unwrap());
        }
        serde_json::Value::Object(map)
    }
}

/// Translate every validation song and aggregate: AJE averaged per song then
/// across songs (population std), FID over the pooled pose+velocity vectors
/// of all songs.
pub fn evaluate_split(
    model: &Model<f32>,
    normalizer: &Normalizer,
    validation: &[PairSequence],
) -> Result<EvaluationReport> {
    if validation.is_empty() {
        return Err(Error::Data("no validation songs to evaluate".into()));
    }
    let mut songs = BTreeMap::new();
    let mut gen_pool: Vec<Vec<f64>> = Vec::new();
    let mut gt_pool: Vec<Vec<f64>> = Vec::new();
    let mut ajes = Vec::with_capacity(validation.len());
    for pair in validation {
        let features: Vec<FeatureFrame> = pair.frames.iter().map(|(f, _)| f.clone()).collect();
        let ground_truth: Vec<JointPose> = pair.frames.iter().map(|(_, p)| *p).collect();
        let generated = translate(model, normalizer, &pair.song_id, &features)?;
        let song_aje = aje(&generated.poses, &ground_truth)?;
        ajes.push(song_aje);
        gen_pool.extend(pose_velocity_vectors(&generated.poses));
        gt_pool.extend(pose_velocity_vectors(&ground_truth));
        songs.insert(
            pair.song_id.clone(),
            SongReport {
                aje: song_aje,
                frames: pair.frames.len(),
            },
        );
    }
    let aje_mean = ajes.iter().sum::<f64>() / ajes.len() as f64;
    let aje_std = (ajes
        .iter()
        .map(|a| (a - aje_mean).powi(2))
        .sum::<f64>()
        / ajes.len() as f64)
        .sqrt();
    let fid = frechet_distance(&gen_pool, &gt_pool)?;
    Ok(EvaluationReport {
        songs,
        aggregate: AggregateReport {
            aje_mean,
            aje_std,
            fid,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pose(vals: [f32; 4], t: f64) -> JointPose {
        JointPose { angles: vals, t }
    }

    #[test]
    fn aje_identical_is_zero() {
        let a = vec![pose([0.1, 0.2, 0.3, 0.4], 0.0); 10];
        assert_eq!(aje(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn aje_constant_offset() {
        let half_pi = std::f32::consts::FRAC_PI_2;
        let gen = vec![pose([0.0; 4], 0.0); 25];
        let gt = vec![pose([half_pi; 4], 0.0); 25];
        let e = aje(&gen, &gt).unwrap();
        assert!((e - std::f64::consts::FRAC_PI_2).abs() < 1e-6);
    }

    #[test]
    fn aje_length_mismatch_errors() {
        let a = vec![pose([0.0; 4], 0.0); 3];
        let b = vec![pose([0.0; 4], 0.0); 4];
        assert!(aje(&a, &b).is_err());
    }

    #[test]
    fn aje_uniform_random_approaches_two_thirds_pi() {
        // Monte Carlo oracle: E|X−Y| for X, Y ~ U(−π, π) is 2π/3.
        use rand::Rng;
        let mut rng = crate::tensor::gradcheck::test_rng(77);
        let pi = std::f32::consts::PI;
        let n = 250_000; // 10^6 samples across 4 joints
        let gen: Vec<JointPose> = (0..n)
            .map(|i| {
                pose(
                    [
                        rng.random_range(-pi..pi),
                        rng.random_range(-pi..pi),
                        rng.random_range(-pi..pi),
                        rng.random_range(-pi..pi),
                    ],
                    i as f64,
                )
            })
            .collect();
        let gt: Vec<JointPose> = (0..n)
            .map(|i| {
                pose(
                    [
                        rng.random_range(-pi..pi),
                        rng.random_range(-pi..pi),
                        rng.random_range(-pi..pi),
                        rng.random_range(-pi..pi),
                    ],
                    i as f64,
                )
            })
            .collect();
        let e = aje(&gen, &gt).unwrap();
        let expected = 2.0 * std::f64::consts::PI / 3.0;
        assert!(
            (e - expected).abs() < 0.01,
            "AJE {e} not within ±0.01 of {expected}"
        );
    }

    #[test]
    fn aje_triangle_inequality() {
        use rand::Rng;
        let mut rng = crate::tensor::gradcheck::test_rng(79);
        let pi = std::f32::consts::PI;
        for _ in 0..100 {
            let len = rng.random_range(1..20);
            let seq = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<JointPose> {
                (0..len)
                    .map(|i| {
                        pose(
                            [
                                rng.random_range(-pi..pi),
                                rng.random_range(-pi..pi),
                                rng.random_range(-pi..pi),
                                rng.random_range(-pi..pi),
                            ],
                            i as f64,
                        )
                    })
                    .collect()
            };
            let a = seq(&mut rng);
            let b = seq(&mut rng);
            let c = seq(&mut rng);
            let ab = aje(&a, &b).unwrap();
            let bc = aje(&b, &c).unwrap();
            let ac = aje(&a, &c).unwrap();
            assert!(ac <= ab + bc + 1e-12, "triangle inequality violated");
        }
    }

    #[test]
    fn velocity_vectors_start_at_rest() {
        let poses = vec![pose([1.0, 2.0, 3.0, 4.0], 0.0), pose([1.5, 1.0, 3.0, 0.0], 0.1)];
        let v = pose_velocity_vectors(&poses);
        assert_eq!(v[0], vec![1.0, 2.0, 3.0, 4.0, 0.0, 0.0, 0.0, 0.0]);
        let expected_vel = [0.5, -1.0, 0.0, -4.0];
        for j in 0..4 {
            assert!((v[1][4 + j] - expected_vel[j]).abs() < 1e-6);
        }
    }
}
