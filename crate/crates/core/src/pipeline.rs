//! End-to-end operations behind the CLI subcommands: feature extraction to
//! file, pose extraction, synchronization, synthetic corpus generation,
//! corpus loading, training and evaluation.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::audio::{
    extract_features, load_wav, read_feature_file, read_normalizer_file, write_feature_file,
    write_wav_mono16, FeatureFrame,
};
use crate::dataset::{
    cross_validation_splits, pair_sequences, read_manifest, read_pair_file, resolve_path,
    synth_pair, write_manifest, write_pair_file, Manifest, ManifestSong, PairSequence, SplitSpec,
    SynthGenre,
};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_split, translate, EvaluationReport};
use crate::model::load_checkpoint;
use crate::pose::{
    extract_pose, read_keypoints_jsonl, read_pose_file, write_keypoints_jsonl, write_pose_file,
    JointPose,
};
use crate::train::{train, TrainConfig, TrainOutcome};

/// Extract features from a WAV into an MDLF file. When a normalizer file is
/// given the frames are normalized before writing; otherwise they are raw.
pub fn extract_features_file(
    audio: &Path,
    out: &Path,
    normalizer: Option<&Path>,
) -> Result<usize> {
    let w = load_wav(audio)?;
    let mut frames = extract_features(&w)?;
    if let Some(npath) = normalizer {
        let n = read_normalizer_file(npath)?;
        frames = frames.iter().map(|f| n.normalize_frame(f)).collect();
    }
    write_feature_file(out, &frames)?;
    Ok(frames.len())
}

/// Convert a keypoints JSONL into an MDLP pose file (align + measure).
pub fn extract_poses_file(keypoints: &Path, out: &Path) -> Result<usize> {
    let frames = read_keypoints_jsonl(keypoints)?;
    let poses: Vec<JointPose> = frames
        .iter()
        .map(extract_pose)
        .collect::<Result<Vec<_>>>()?;
    write_pose_file(out, &poses)?;
    Ok(poses.len())
}

/// Pair a feature file with a pose file into an MDLA file.
pub fn sync_files(features: &Path, poses: &Path, out: &Path) -> Result<usize> {
    let f = read_feature_file(features)?;
    let p = read_pose_file(poses)?;
    let id = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "song".into());
    let pairs = pair_sequences(&id, "", &f, &p)?;
    write_pair_file(out, &pairs)?;
    Ok(pairs.len())
}

#[derive(Clone, Debug)]
pub struct SynthOptions {
    pub songs: usize,
    pub duration_s: f64,
    pub seed: u64,
    pub difficulty: f64,
}

/// Generate a corpus of synthetic songs: per song a WAV, a keypoints JSONL,
/// and a manifest tying them together with genres cycling over the two
/// synthetic genres. Returns the manifest path.
pub fn synth_corpus(out_dir: &Path, opts: &SynthOptions) -> Result<PathBuf> {
    if opts.songs == 0 {
        return Err(Error::Config("synth needs at least one song".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let entries: Vec<Result<ManifestSong>> = (0..opts.songs)
        .into_par_iter()
        .map(|i| {
            let genre = SynthGenre::cycling(i);
            let id = format!("synth-{i:03}");
            let song_seed = opts
                .seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(i as u64);
            let song = synth_pair(song_seed, opts.duration_s, opts.difficulty, genre)?;
            let wav_name = format!("{id}.wav");
            let kp_name = format!("{id}.jsonl");
            write_wav_mono16(&out_dir.join(&wav_name), &song.waveform)?;
            write_keypoints_jsonl(&out_dir.join(&kp_name), &song.keypoints)?;
            Ok(ManifestSong {
                id,
                genre: genre.name().to_string(),
                audio: Some(PathBuf::from(wav_name)),
                keypoints: Some(PathBuf::from(kp_name)),
                features: None,
                poses: None,
                pairs: None,
            })
        })
        .collect();
    let songs: Vec<ManifestSong> = entries.into_iter().collect::<Result<Vec<_>>>()?;
    let manifest_path = out_dir.join("manifest.json");
    write_manifest(&manifest_path, &Manifest { songs })?;
    Ok(manifest_path)
}

/// Load one song's paired stream, preferring precomputed artifacts:
/// pairs file, else features (file or WAV) matched with poses (file or
/// keypoints JSONL).
fn load_song(manifest_path: &Path, song: &ManifestSong) -> Result<PairSequence> {
    if let Some(pairs) = &song.pairs {
        let frames = read_pair_file(&resolve_path(manifest_path, pairs))?;
        return Ok(PairSequence {
            song_id: song.id.clone(),
            genre: song.genre.clone(),
            frames,
        });
    }
    let features: Vec<FeatureFrame> = if let Some(f) = &song.features {
        read_feature_file(&resolve_path(manifest_path, f))?
    } else if let Some(a) = &song.audio {
        let w = load_wav(&resolve_path(manifest_path, a))?;
        extract_features(&w)?
    } else {
        return Err(Error::Data(format!(
            "song {}: no pairs, features or audio in the manifest",
            song.id
        )));
    };
    let poses: Vec<JointPose> = if let Some(p) = &song.poses {
        read_pose_file(&resolve_path(manifest_path, p))?
    } else if let Some(k) = &song.keypoints {
        let kps = read_keypoints_jsonl(&resolve_path(manifest_path, k))?;
        kps.iter().map(extract_pose).collect::<Result<Vec<_>>>()?
    } else {
        return Err(Error::Data(format!(
            "song {}: no pairs, poses or keypoints in the manifest",
            song.id
        )));
    };
    pair_sequences(&song.id, &song.genre, &features, &poses)
}

/// Load every song in the manifest (parallel across songs).
pub fn load_corpus(manifest_path: &Path) -> Result<Vec<PairSequence>> {
    let manifest = read_manifest(manifest_path)?;
    manifest
        .songs
        .par_iter()
        .map(|song| load_song(manifest_path, song))
        .collect()
}

/// Resolve the split list for a config and run training.
pub fn run_training(cfg: &TrainConfig, out_dir: &Path, resume: bool) -> Result<TrainOutcome> {
    cfg.validate()?;
    let corpus = load_corpus(&cfg.manifest)?;
    let metas: Vec<crate::dataset::SongMeta> = corpus
        .iter()
        .map(|s| crate::dataset::SongMeta {
            id: s.song_id.clone(),
            genre: s.genre.clone(),
        })
        .collect();
    let splits = cross_validation_splits(&metas, cfg.split)?;
    let split = splits.get(cfg.fold).ok_or_else(|| {
        Error::Config(format!(
            "fold {} out of range: {} splits available",
            cfg.fold,
            splits.len()
        ))
    })?;
    train(&corpus, split, cfg, out_dir, resume)
}

/// Translate a WAV with a trained checkpoint into an MDLP pose file.
pub fn translate_wav(checkpoint: &Path, audio: &Path, out: &Path) -> Result<usize> {
    let (model, normalizer, _) = load_checkpoint(checkpoint)?;
    let w = load_wav(audio)?;
    let frames = extract_features(&w)?;
    let song_id = audio
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "song".into());
    let gen = translate(&model, &normalizer, &song_id, &frames)?;
    write_pose_file(out, &gen.poses)?;
    Ok(gen.poses.len())
}

pub fn read_split_file(path: &Path) -> Result<SplitSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::decode(path, 0, format!("bad split JSON: {e}")))
}

/// Evaluate a checkpoint on the validation songs of a split. When
/// `expect_config` is given, its architecture fields are cross-checked
/// against the checkpoint before any work happens.
pub fn evaluate_to_report(
    checkpoint: &Path,
    manifest_path: &Path,
    split: &SplitSpec,
    out: Option<&Path>,
    expect_config: Option<&TrainConfig>,
) -> Result<EvaluationReport> {
    let (model, normalizer, _) = load_checkpoint(checkpoint)?;
    if let Some(cfg) = expect_config {
        if cfg.variant != model.variant_name() {
            return Err(Error::Config(format!(
                "config variant {:?} does not match checkpoint variant {:?}",
                cfg.variant,
                model.variant_name()
            )));
        }
        if let Some(k) = cfg.window {
            if k != model.window() {
                return Err(Error::Config(format!(
                    "config window K = {k} does not match checkpoint window K = {}",
                    model.window()
                )));
            }
        }
    }
    let manifest = read_manifest(manifest_path)?;
    let validation: Vec<PairSequence> = split
        .validation_ids
        .par_iter()
        .map(|id| {
            let song = manifest
                .song(id)
                .ok_or_else(|| Error::Data(format!("split song {id} not in manifest")))?;
            load_song(manifest_path, song)
        })
        .collect::<Result<Vec<_>>>()?;
    let report = evaluate_split(&model, &normalizer, &validation)?;
    if let Some(out) = out {
        let json = serde_json::to_string_pretty(&report.to_json()).expect("report serializes");
        std::fs::write(out, json).map_err(|e| Error::io(out, e))?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synth_corpus_writes_manifest_with_cycling_genres() {
        let dir = tempfile::tempdir().unwrap();
        let manifest_path = synth_corpus(
            dir.path(),
            &SynthOptions {
                songs: 4,
                duration_s: 1.0,
                seed: 5,
                difficulty: 0.5,
            },
        )
        .unwrap();
        let m = read_manifest(&manifest_path).unwrap();
        assert_eq!(m.songs.len(), 4);
        let genres: Vec<&str> = m.songs.iter().map(|s| s.genre.as_str()).collect();
        assert_eq!(genres, vec!["pulse", "sway", "pulse", "sway"]);
        for s in &m.songs {
            assert!(resolve_path(&manifest_path, s.audio.as_ref().unwrap()).exists());
            assert!(resolve_path(&manifest_path, s.keypoints.as_ref().unwrap()).exists());
        }
    }

    #[test]
    fn corpus_loads_from_raw_audio_and_keypoints() {
        let dir = tempfile::tempdir().unwrap();
        let manifest_path = synth_corpus(
            dir.path(),
            &SynthOptions {
                songs: 2,
                duration_s: 1.0,
                seed: 9,
                difficulty: 0.5,
            },
        )
        .unwrap();
        let corpus = load_corpus(&manifest_path).unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(corpus[0].len(), 60);
        // Pairing at exactly 60 Hz is index-identical.
        for (f, p) in &corpus[0].frames {
            assert_eq!(f.t, p.t);
        }
    }

    #[test]
    fn extract_sync_roundtrip_matches_direct_load() {
        let dir = tempfile::tempdir().unwrap();
        let manifest_path = synth_corpus(
            dir.path(),
            &SynthOptions {
                songs: 1,
                duration_s: 1.0,
                seed: 11,
                difficulty: 0.5,
            },
        )
        .unwrap();
        let manifest = read_manifest(&manifest_path).unwrap();
        let song = &manifest.songs[0];
        let wav = resolve_path(&manifest_path, song.audio.as_ref().unwrap());
        let kp = resolve_path(&manifest_path, song.keypoints.as_ref().unwrap());
        let f_out = dir.path().join("s.mdlf");
        let p_out = dir.path().join("s.mdlp");
        let pair_out = dir.path().join("s.mdla");
        let nf = extract_features_file(&wav, &f_out, None).unwrap();
        let np = extract_poses_file(&kp, &p_out).unwrap();
        assert_eq!(nf, 60);
        assert_eq!(np, 60);
        let n = sync_files(&f_out, &p_out, &pair_out).unwrap();
        assert_eq!(n, 60);
        let frames = read_pair_file(&pair_out).unwrap();
        let direct = load_corpus(&manifest_path).unwrap();
        assert_eq!(frames.len(), direct[0].frames.len());
        for (a, b) in frames.iter().zip(&direct[0].frames) {
            assert_eq!(a.0.values, b.0.values);
            assert_eq!(a.1.angles, b.1.angles);
        }
    }

    #[test]
    fn extraction_is_bit_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let manifest_path = synth_corpus(
            dir.path(),
            &SynthOptions {
                songs: 1,
                duration_s: 1.0,
                seed: 13,
                difficulty: 0.5,
            },
        )
        .unwrap();
        let manifest = read_manifest(&manifest_path).unwrap();
        let wav = resolve_path(&manifest_path, manifest.songs[0].audio.as_ref().unwrap());
        let out1 = dir.path().join("a.mdlf");
        let out2 = dir.path().join("b.mdlf");
        extract_features_file(&wav, &out1, None).unwrap();
        extract_features_file(&wav, &out2, None).unwrap();
        assert_eq!(
            std::fs::read(&out1).unwrap(),
            std::fs::read(&out2).unwrap(),
            "feature files differ across runs"
        );
    }
}
