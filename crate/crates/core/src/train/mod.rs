//! Teacher-forced training: uniform window sampling, the masked L2
//! objective over valid slots, Adam updates, periodic validation with
//! AJE/FID logging, and best/latest checkpointing.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::Normalizer;
use crate::dataset::{PairSequence, SplitMode, SplitSpec};
use crate::error::{Error, Result};
use crate::metrics::evaluate_split;
use crate::model::{
    load_checkpoint, save_checkpoint, MambaConfig, MambaModel, Model, TransformerConfig,
    TransformerModel, WindowInput, POSE_DIM,
};
use crate::tensor::{AdamParams, AdamState, Graph, NodeId, Tensor};

fn default_updates() -> u64 {
    250_000
}
fn default_batch() -> usize {
    16
}
fn default_lr() -> f64 {
    1e-4
}
fn default_validate_every() -> u64 {
    1_000
}
fn default_split() -> SplitMode {
    SplitMode::AllGenre
}

/// Training run description; JSON-serializable so a config file can drive
/// the CLI. Architecture fields default to the published sizes per variant.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    /// "transformer" or "mamba".
    pub variant: String,
    pub manifest: PathBuf,
    #[serde(default = "default_split")]
    pub split: SplitMode,
    #[serde(default)]
    pub fold: usize,
    #[serde(default = "default_updates")]
    pub updates: u64,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_validate_every")]
    pub validate_every: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embed_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ff_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropout: Option<f64>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.variant != "transformer" && self.variant != "mamba" {
            return Err(Error::Config(format!(
                "unknown variant {:?} (expected \"transformer\" or \"mamba\")",
                self.variant
            )));
        }
        if self.updates == 0 || self.batch == 0 || self.validate_every == 0 {
            return Err(Error::Config(
                "updates, batch and validate_every must be positive".into(),
            ));
        }
        if self.lr <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<TrainConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: TrainConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Build a freshly initialized model; `position_vocab` is the longest
    /// song in the corpus plus one.
    pub fn build_model(&self, position_vocab: usize, rng: &mut ChaCha8Rng) -> Result<Model<f32>> {
        match self.variant.as_str() {
            "transformer" => {
                let mut c = TransformerConfig::paper(position_vocab);
                if let Some(v) = self.window {
                    c.window = v;
                }
                if let Some(v) = self.layers {
                    c.layers = v;
                }
                if let Some(v) = self.embed_dim {
                    c.embed_dim = v;
                }
                if let Some(v) = self.ff_dim {
                    c.ff_dim = v;
                }
                if let Some(v) = self.heads {
                    c.heads = v;
                }
                if let Some(v) = self.dropout {
                    c.dropout = v;
                }
                Ok(Model::Transformer(TransformerModel::new(c, rng)?))
            }
            "mamba" => {
                let mut c = MambaConfig::paper();
                if let Some(v) = self.window {
                    c.window = v;
                }
                if let Some(v) = self.layers {
                    c.blocks = v;
                }
                if let Some(v) = self.embed_dim {
                    c.embed_dim = v;
                }
                if let Some(v) = self.ff_dim {
                    c.ff_dim = v;
                }
                if let Some(v) = self.state_size {
                    c.state_size = v;
                }
                if let Some(v) = self.dropout {
                    c.dropout = v;
                }
                Ok(Model::Mamba(MambaModel::new(c, rng)?))
            }
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

/// One training window: K normalized audio frames, the matching pose
/// targets, and the shifted decoder input (zero start pose, zero padding).
#[derive(Clone, Debug)]
pub struct TrainingWindow {
    pub audio: Vec<f32>,         // K × feature_dim
    pub shifted_poses: Vec<f32>, // K × 4
    pub target_poses: Vec<f32>,  // K × 4
    pub valid_len: usize,
    pub song_position: usize,
    pub song_id: String,
}

/// Uniform song, uniform trajectory index `t ∈ [0, T−1]`; the window covers
/// frames `max(0, t−K+1) ..= t`, right-padded with zeros.
pub fn sample_window(
    corpus: &[PairSequence],
    normalizer: &Normalizer,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> TrainingWindow {
    assert!(!corpus.is_empty(), "cannot sample from an empty corpus");
    let song = &corpus[rng.random_range(0..corpus.len())];
    let t = rng.random_range(0..song.frames.len());
    window_at(song, normalizer, k, t)
}

/// The deterministic window ending at frame `t` of one song.
pub fn window_at(
    song: &PairSequence,
    normalizer: &Normalizer,
    k: usize,
    t: usize,
) -> TrainingWindow {
    let fdim = song.frames[0].0.values.len();
    let start = t.saturating_sub(k - 1);
    let valid = t - start + 1;
    let mut audio = vec![0.0f32; k * fdim];
    let mut targets = vec![0.0f32; k * POSE_DIM];
    let mut shifted = vec![0.0f32; k * POSE_DIM];
    for i in 0..valid {
        let (feat, pose) = &song.frames[start + i];
        let normed = normalizer.normalize_frame(feat);
        audio[i * fdim..(i + 1) * fdim].copy_from_slice(&normed.values);
        targets[i * POSE_DIM..(i + 1) * POSE_DIM].copy_from_slice(&pose.angles);
    }
    // Right-shift with a zero start pose: shifted[i+1] = target[i].
    for i in 1..valid {
        let (src, dst) = ((i - 1) * POSE_DIM, i * POSE_DIM);
        let (a, b) = shifted.split_at_mut(dst);
        b[..POSE_DIM].copy_from_slice(&targets[src..src + POSE_DIM]);
        let _ = a;
    }
    TrainingWindow {
        audio,
        shifted_poses: shifted,
        target_poses: targets,
        valid_len: valid,
        song_position: start,
        song_id: song.song_id.clone(),
    }
}

pub struct WindowBatch {
    pub audio: Tensor<f32>,
    pub shifted: Tensor<f32>,
    pub targets: Tensor<f32>,
    pub valid_lens: Vec<usize>,
    pub start_positions: Vec<usize>,
    pub song_ids: Vec<String>,
}

pub fn stack_windows(windows: &[TrainingWindow], k: usize, fdim: usize) -> WindowBatch {
    let b = windows.len();
    let mut audio = Vec::with_capacity(b * k * fdim);
    let mut shifted = Vec::with_capacity(b * k * POSE_DIM);
    let mut targets = Vec::with_capacity(b * k * POSE_DIM);
    for w in windows {
        audio.extend_from_slice(&w.audio);
        shifted.extend_from_slice(&w.shifted_poses);
        targets.extend_from_slice(&w.target_poses);
    }
    WindowBatch {
        audio: Tensor::new(vec![b, k, fdim], audio),
        shifted: Tensor::new(vec![b, k, POSE_DIM], shifted),
        targets: Tensor::new(vec![b, k, POSE_DIM], targets),
        valid_lens: windows.iter().map(|w| w.valid_len).collect(),
        start_positions: windows.iter().map(|w| w.song_position).collect(),
        song_ids: windows.iter().map(|w| w.song_id.clone()).collect(),
    }
}

/// Mean squared error over valid slots and the 4 joints; padded slots are
/// excluded entirely, so their contents cannot influence the loss.
pub fn l2_loss(
    g: &mut Graph<f32>,
    predicted: NodeId,
    targets: &Tensor<f32>,
    valid_lens: &[usize],
) -> Result<NodeId> {
    let shape = g.value(predicted).shape().to_vec();
    if shape != targets.shape() {
        return Err(Error::Data(format!(
            "loss shape mismatch: {shape:?} vs {:?}",
            targets.shape()
        )));
    }
    let (b, k) = (shape[0], shape[1]);
    if valid_lens.iter().any(|&v| v == 0) {
        return Err(Error::Data("l2 loss needs valid_len >= 1".into()));
    }
    let mut mask = vec![0.0f32; b * k * POSE_DIM];
    let mut count = 0usize;
    for (bi, &v) in valid_lens.iter().enumerate() {
        for i in 0..v.min(k) {
            for j in 0..POSE_DIM {
                mask[(bi * k + i) * POSE_DIM + j] = 1.0;
            }
            count += POSE_DIM;
        }
    }
    let tgt = g.constant(targets.clone());
    let mask = g.constant(Tensor::new(shape, mask));
    let diff = g.sub(predicted, tgt);
    let sq = g.mul(diff, diff);
    let masked = g.mul(sq, mask);
    let total = g.sum(masked);
    Ok(g.scale(total, 1.0 / count as f32))
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub final_step: u64,
    pub best_aje: f64,
    pub best_step: u64,
    pub latest_path: PathBuf,
    pub best_path: PathBuf,
    pub metrics_path: PathBuf,
}

/// RNG streams carved out of the master seed.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub const INIT_STREAM: u64 = 0;
pub const SAMPLE_STREAM: u64 = 1;
pub const DROPOUT_STREAM: u64 = 2;

/// Run the update loop. `corpus` holds every song; the split picks training
/// and validation subsets by id. Checkpoints (`latest.mdlc`, `best.mdlc`)
/// and `metrics.csv` land in `out_dir`.
pub fn train(
    corpus: &[PairSequence],
    split: &SplitSpec,
    cfg: &TrainConfig,
    out_dir: &Path,
    resume: bool,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let pick = |ids: &[String]| -> Result<Vec<PairSequence>> {
        ids.iter()
            .map(|id| {
                corpus
                    .iter()
                    .find(|s| &s.song_id == id)
                    .cloned()
                    .ok_or_else(|| Error::Data(format!("split references unknown song {id}")))
            })
            .collect()
    };
    let train_songs = pick(&split.train_ids)?;
    let val_songs = pick(&split.validation_ids)?;
    if train_songs.is_empty() {
        return Err(Error::Data("split has no training songs".into()));
    }

    // Normalizer statistics come from the training split only.
    let normalizer = Normalizer::fit(
        train_songs
            .iter()
            .flat_map(|s| s.frames.iter().map(|(f, _)| f)),
    )?;
    let position_vocab = corpus.iter().map(|s| s.len()).max().unwrap_or(0) + 1;

    let latest_path = out_dir.join("latest.mdlc");
    let best_path = out_dir.join("best.mdlc");
    let metrics_path = out_dir.join("metrics.csv");

    let mut start_step = 0u64;
    let mut model = if resume && latest_path.exists() {
        let (model, _, step) = load_checkpoint(&latest_path)?;
        start_step = step;
        model
    } else {
        cfg.build_model(position_vocab, &mut stream(cfg.seed, INIT_STREAM))?
    };
    let k = model.window();
    let fdim = model.feature_dim();

    let mut adam = AdamState::new(&model.store().tensors());
    let adam_cfg = AdamParams::with_lr(cfg.lr);

    let mut sample_rng = stream(cfg.seed, SAMPLE_STREAM);
    let mut dropout_rng = stream(cfg.seed, DROPOUT_STREAM);

    let mut csv = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&metrics_path)
        .map_err(|e| Error::io(&metrics_path, e))?;
    if start_step == 0 {
        writeln!(csv, "step,train_loss,val_aje,val_fid").map_err(|e| Error::io(&metrics_path, e))?;
    }

    let mut best_aje = f64::INFINITY;
    let mut best_step = start_step;
    let mut loss_accum = 0.0f64;
    let mut loss_count = 0u64;

    for step in start_step..cfg.updates {
        let windows: Vec<TrainingWindow> = (0..cfg.batch)
            .map(|_| sample_window(&train_songs, &normalizer, k, &mut sample_rng))
            .collect();
        let batch = stack_windows(&windows, k, fdim);

        let mut g: Graph<f32> = Graph::new();
        let bound = model.bind(&mut g);
        let out = model.forward(
            &mut g,
            &bound,
            &WindowInput {
                audio: &batch.audio,
                shifted_poses: &batch.shifted,
                valid_lens: &batch.valid_lens,
                start_positions: &batch.start_positions,
            },
            true,
            &mut dropout_rng,
        );
        let loss = l2_loss(&mut g, out, &batch.targets, &batch.valid_lens)?;
        let loss_val = g.value(loss).data()[0] as f64;
        if !loss_val.is_finite() {
            return Err(Error::Diverged {
                step: step + 1,
                loss: loss_val,
                songs: batch.song_ids,
            });
        }
        g.backward(loss)?;
        let grads: Vec<Option<&[f32]>> = bound.iter().map(|&id| g.grad(id)).collect();
        let mut tensors = model.store_mut().tensors_mut();
        adam_step_in_place(&mut adam, &adam_cfg, &mut tensors, &grads);

        loss_accum += loss_val;
        loss_count += 1;

        let done = step + 1 == cfg.updates;
        if (step + 1) % cfg.validate_every == 0 || done {
            let train_loss = loss_accum / loss_count.max(1) as f64;
            loss_accum = 0.0;
            loss_count = 0;
            let (val_aje, val_fid) = if val_songs.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                let report = evaluate_split(&model, &normalizer, &val_songs)?;
                (report.aggregate.aje_mean, report.aggregate.fid)
            };
            writeln!(
                csv,
                "{},{:.6},{:.6},{:.6}",
                step + 1,
                train_loss,
                val_aje,
                val_fid
            )
            .map_err(|e| Error::io(&metrics_path, e))?;
            save_checkpoint(&latest_path, &model, &normalizer, step + 1)?;
            if val_aje.is_finite() && val_aje < best_aje {
                best_aje = val_aje;
                best_step = step + 1;
                save_checkpoint(&best_path, &model, &normalizer, step + 1)?;
            }
        }
    }

    Ok(TrainOutcome {
        final_step: cfg.updates,
        best_aje,
        best_step,
        latest_path,
        best_path,
        metrics_path,
    })
}

/// Apply one Adam step to parameters held by mutable reference.
fn adam_step_in_place(
    adam: &mut AdamState<f32>,
    cfg: &AdamParams,
    tensors: &mut [&mut Tensor<f32>],
    grads: &[Option<&[f32]>],
) {
    // AdamState operates on owned tensors; swap data in and out to avoid a
    // copy of every parameter per step.
    let mut owned: Vec<Tensor<f32>> = tensors
        .iter_mut()
        .map(|t| std::mem::replace(*t, Tensor::zeros(vec![1])))
        .collect();
    adam.step(cfg, &mut owned, grads);
    for (slot, new) in tensors.iter_mut().zip(owned) {
        **slot = new;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{FeatureFrame, FEATURE_DIM};
    use crate::pose::JointPose;

    fn tiny_corpus(frames: usize) -> Vec<PairSequence> {
        let mut rng = crate::tensor::gradcheck::test_rng(90);
        (0..2)
            .map(|s| PairSequence {
                song_id: format!("song-{s}"),
                genre: "g".into(),
                frames: (0..frames)
                    .map(|i| {
                        (
                            FeatureFrame {
                                values: (0..FEATURE_DIM)
                                    .map(|_| rng.random_range(-1.0f32..1.0))
                                    .collect(),
                                t: i as f64 / 60.0,
                            },
                            JointPose {
                                angles: [
                                    rng.random_range(-1.0f32..1.0),
                                    rng.random_range(-1.0f32..1.0),
                                    rng.random_range(-1.0f32..1.0),
                                    rng.random_range(-1.0f32..1.0),
                                ],
                                t: i as f64 / 60.0,
                            },
                        )
                    })
                    .collect(),
            })
            .collect()
    }

    fn normalizer_for(corpus: &[PairSequence]) -> Normalizer {
        Normalizer::fit(corpus.iter().flat_map(|s| s.frames.iter().map(|(f, _)| f))).unwrap()
    }

    #[test]
    fn window_at_t0_has_one_valid_frame() {
        let corpus = tiny_corpus(40);
        let n = normalizer_for(&corpus);
        let w = window_at(&corpus[0], &n, 8, 0);
        assert_eq!(w.valid_len, 1);
        assert_eq!(w.song_position, 0);
        // Padding slots are zero.
        assert!(w.audio[FEATURE_DIM..].iter().all(|&v| v == 0.0));
        assert!(w.shifted_poses.iter().all(|&v| v == 0.0)); // start pose only
    }

    #[test]
    fn window_past_k_is_full() {
        let corpus = tiny_corpus(40);
        let n = normalizer_for(&corpus);
        let w = window_at(&corpus[0], &n, 8, 20);
        assert_eq!(w.valid_len, 8);
        assert_eq!(w.song_position, 13);
    }

    #[test]
    fn shift_identity_holds() {
        let corpus = tiny_corpus(40);
        let n = normalizer_for(&corpus);
        for t in [0usize, 3, 7, 20, 39] {
            let w = window_at(&corpus[1], &n, 8, t);
            assert!(w.shifted_poses[..POSE_DIM].iter().all(|&v| v == 0.0));
            for i in 0..w.valid_len - 1 {
                let shifted = &w.shifted_poses[(i + 1) * POSE_DIM..(i + 2) * POSE_DIM];
                let target = &w.target_poses[i * POSE_DIM..(i + 1) * POSE_DIM];
                assert_eq!(shifted, target, "shift broken at slot {i}");
            }
        }
    }

    #[test]
    fn window_targets_match_song_frames() {
        // Cross-check against the pair sequence by direct indexing.
        let corpus = tiny_corpus(40);
        let n = normalizer_for(&corpus);
        let (k, t) = (8usize, 25usize);
        let w = window_at(&corpus[0], &n, k, t);
        for i in 0..w.valid_len {
            let frame_idx = t - w.valid_len + 1 + i;
            let expected = corpus[0].frames[frame_idx].1.angles;
            let got = &w.target_poses[i * POSE_DIM..(i + 1) * POSE_DIM];
            assert_eq!(got, &expected, "target at slot {i}");
        }
    }

    #[test]
    fn l2_loss_examples() {
        let mut g: Graph<f32> = Graph::new();
        let k = 5;
        let pred_data: Vec<f32> = (0..k * POSE_DIM).map(|i| i as f32 * 0.1).collect();
        let pred_t = Tensor::new(vec![1, k, POSE_DIM], pred_data.clone());
        let pred = g.constant(pred_t.clone());
        // Identical → 0.
        let loss = l2_loss(&mut g, pred, &pred_t, &[k]).unwrap();
        assert_eq!(g.value(loss).data()[0], 0.0);
        // Constant offset 0.1 → 0.01.
        let offset = Tensor::new(
            vec![1, k, POSE_DIM],
            pred_data.iter().map(|v| v + 0.1).collect(),
        );
        let loss = l2_loss(&mut g, pred, &offset, &[k]).unwrap();
        assert!((g.value(loss).data()[0] - 0.01).abs() < 1e-6);
    }

    #[test]
    fn l2_loss_ignores_padded_slots() {
        let mut g: Graph<f32> = Graph::new();
        let k = 20;
        let pred = g.constant(Tensor::zeros(vec![1, k, POSE_DIM]));
        let mut targets = Tensor::zeros(vec![1, k, POSE_DIM]);
        let base = l2_loss(&mut g, pred, &targets, &[1]).unwrap();
        let base_val = g.value(base).data()[0];
        // Garbage in the 19 padded slots changes nothing.
        for i in POSE_DIM..k * POSE_DIM {
            targets.data_mut()[i] = 1000.0;
        }
        let loss = l2_loss(&mut g, pred, &targets, &[1]).unwrap();
        assert_eq!(g.value(loss).data()[0], base_val);
    }

    #[test]
    fn l2_loss_rejects_zero_valid() {
        let mut g: Graph<f32> = Graph::new();
        let pred = g.constant(Tensor::zeros(vec![1, 3, POSE_DIM]));
        let t = Tensor::zeros(vec![1, 3, POSE_DIM]);
        assert!(l2_loss(&mut g, pred, &t, &[0]).is_err());
    }

    fn mini_cfg(variant: &str, manifest: PathBuf) -> TrainConfig {
        TrainConfig {
            variant: variant.into(),
            manifest,
            split: SplitMode::PerGenre,
            fold: 0,
            updates: 50,
            batch: 4,
            lr: 1e-3,
            validate_every: 50,
            seed: 0,
            window: Some(8),
            layers: Some(1),
            embed_dim: Some(16),
            ff_dim: Some(32),
            heads: Some(2),
            state_size: Some(4),
            dropout: Some(0.0),
        }
    }

    #[test]
    fn loss_decreases_over_first_steps() {
        // A failing decrease indicates a gradient bug; run a fixed batch of
        // the synthetic task on a miniature transformer.
        let corpus = tiny_corpus(60);
        let n = normalizer_for(&corpus);
        let cfg = mini_cfg("transformer", PathBuf::from("unused"));
        let mut model = cfg
            .build_model(61, &mut stream(0, INIT_STREAM))
            .unwrap();
        let mut sample_rng = stream(0, SAMPLE_STREAM);
        let windows: Vec<TrainingWindow> = (0..4)
            .map(|_| sample_window(&corpus, &n, 8, &mut sample_rng))
            .collect();
        let batch = stack_windows(&windows, 8, FEATURE_DIM);
        let mut adam = AdamState::new(&model.store().tensors());
        let adam_cfg = AdamParams::with_lr(1e-3);
        let mut dropout_rng = stream(0, DROPOUT_STREAM);
        let mut losses = Vec::new();
        for _ in 0..50 {
            let mut g: Graph<f32> = Graph::new();
            let bound = model.bind(&mut g);
            let out = model.forward(
                &mut g,
                &bound,
                &WindowInput {
                    audio: &batch.audio,
                    shifted_poses: &batch.shifted,
                    valid_lens: &batch.valid_lens,
                    start_positions: &batch.start_positions,
                },
                true,
                &mut dropout_rng,
            );
            let loss = l2_loss(&mut g, out, &batch.targets, &batch.valid_lens).unwrap();
            losses.push(g.value(loss).data()[0] as f64);
            g.backward(loss).unwrap();
            let grads: Vec<Option<&[f32]>> = bound.iter().map(|&id| g.grad(id)).collect();
            let mut tensors = model.store_mut().tensors_mut();
            adam_step_in_place(&mut adam, &adam_cfg, &mut tensors, &grads);
        }
        assert!(
            losses[49] < losses[0] * 0.8,
            "no learning on a fixed batch: {} -> {}",
            losses[0],
            losses[49]
        );
    }

    #[test]
    fn equal_seeds_give_identical_loss_curves() {
        let corpus = tiny_corpus(50);
        let dir = tempfile::tempdir().unwrap();
        let split = SplitSpec {
            train_ids: vec!["song-0".into()],
            validation_ids: vec!["song-1".into()],
        };
        let mut cfg = mini_cfg("transformer", PathBuf::from("unused"));
        cfg.updates = 10;
        cfg.validate_every = 5;
        let out1 = dir.path().join("run1");
        let out2 = dir.path().join("run2");
        train(&corpus, &split, &cfg, &out1, false).unwrap();
        train(&corpus, &split, &cfg, &out2, false).unwrap();
        let c1 = std::fs::read_to_string(out1.join("metrics.csv")).unwrap();
        let c2 = std::fs::read_to_string(out2.join("metrics.csv")).unwrap();
        assert_eq!(c1, c2, "training trajectories diverged across runs");
        let b1 = std::fs::read(out1.join("latest.mdlc")).unwrap();
        let b2 = std::fs::read(out2.join("latest.mdlc")).unwrap();
        assert_eq!(b1, b2, "checkpoints differ across identical runs");
    }

    #[test]
    fn checkpoint_roundtrip_preserves_validation_aje() {
        let corpus = tiny_corpus(50);
        let dir = tempfile::tempdir().unwrap();
        let split = SplitSpec {
            train_ids: vec!["song-0".into()],
            validation_ids: vec!["song-1".into()],
        };
        let mut cfg = mini_cfg("mamba", PathBuf::from("unused"));
        cfg.updates = 5;
        cfg.validate_every = 5;
        train(&corpus, &split, &cfg, dir.path(), false).unwrap();
        let (model, normalizer, _) = load_checkpoint(&dir.path().join("latest.mdlc")).unwrap();
        let val: Vec<PairSequence> = vec![corpus[1].clone()];
        let r1 = evaluate_split(&model, &normalizer, &val).unwrap();
        let (model2, normalizer2, _) = load_checkpoint(&dir.path().join("latest.mdlc")).unwrap();
        let r2 = evaluate_split(&model2, &normalizer2, &val).unwrap();
        assert_eq!(r1.aggregate.aje_mean, r2.aggregate.aje_mean);
    }
}
