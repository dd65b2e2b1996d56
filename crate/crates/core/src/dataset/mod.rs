//! Corpus handling: timestamp pairing, train/validation splits, the song
//! manifest, and a synthetic music-dance generator for desk-scale runs.

mod file;
mod synth;

pub use file::{read_pair_file, write_pair_file};
pub use synth::{synth_pair, SynthGenre, SynthSong};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::FeatureFrame;
use crate::error::{Error, Result};
use crate::pose::JointPose;

/// Synchronized feature/pose stream for one song. Each pose is the
/// annotation nearest in time to its feature frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PairSequence {
    pub song_id: String,
    pub genre: String,
    pub frames: Vec<(FeatureFrame, JointPose)>,
}

impl PairSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Pair every feature frame with the pose minimizing |t_pose − t_feature|,
/// ties broken toward the earlier pose. Pose timestamps must be sorted.
pub fn pair_sequences(
    song_id: &str,
    genre: &str,
    features: &[FeatureFrame],
    poses: &[JointPose],
) -> Result<PairSequence> {
    if features.is_empty() {
        return Err(Error::Data(format!("song {song_id}: no feature frames")));
    }
    if poses.is_empty() {
        return Err(Error::Data(format!("song {song_id}: no poses to pair")));
    }
    if poses.windows(2).any(|w| w[0].t > w[1].t) {
        return Err(Error::Data(format!(
            "song {song_id}: pose timestamps are not sorted"
        )));
    }
    let mut frames = Vec::with_capacity(features.len());
    let mut j = 0usize;
    for f in features {
        // The nearest index is non-decreasing in t, so resume from j; strict
        // improvement keeps ties on the earlier pose.
        while j + 1 < poses.len() && (poses[j + 1].t - f.t).abs() < (poses[j].t - f.t).abs() {
            j += 1;
        }
        frames.push((f.clone(), poses[j]));
    }
    Ok(PairSequence {
        song_id: song_id.to_string(),
        genre: genre.to_string(),
        frames,
    })
}

/// Disjoint train/validation song-id sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_ids: Vec<String>,
    pub validation_ids: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// Leave-one-out within each genre (train on the genre's other songs).
    PerGenre,
    /// One validation song per genre per fold; folds = smallest genre size.
    AllGenre,
    /// 10 folds, round-robin assignment over songs sorted by id.
    KFold,
}

pub const K_FOLDS: usize = 10;

/// Minimal per-song identity used for splitting.
#[derive(Clone, Debug)]
pub struct SongMeta {
    pub id: String,
    pub genre: String,
}

pub fn cross_validation_splits(corpus: &[SongMeta], mode: SplitMode) -> Result<Vec<SplitSpec>> {
    if corpus.is_empty() {
        return Err(Error::Data("cannot split an empty corpus".into()));
    }
    let mut by_genre: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for song in corpus {
        by_genre.entry(&song.genre).or_default().push(&song.id);
    }
    for ids in by_genre.values_mut() {
        ids.sort_unstable();
    }
    match mode {
        SplitMode::PerGenre => {
            let mut splits = Vec::new();
            for (genre, ids) in &by_genre {
                if ids.len() < 2 {
                    return Err(Error::Data(format!(
                        "per-genre splits need >= 2 songs in genre {genre}, found {}",
                        ids.len()
                    )));
                }
                for held_out in ids {
                    splits.push(SplitSpec {
                        train_ids: ids
                            .iter()
                            .filter(|s| s != &held_out)
                            .map(|s| s.to_string())
                            .collect(),
                        validation_ids: vec![held_out.to_string()],
                    });
                }
            }
            Ok(splits)
        }
        SplitMode::AllGenre => {
            let folds = by_genre.values().map(|v| v.len()).min().unwrap();
            if folds < 2 {
                return Err(Error::Data(
                    "all-genre splits need >= 2 songs in every genre".into(),
                ));
            }
            let mut splits = Vec::with_capacity(folds);
            for fold in 0..folds {
                let validation: Vec<String> = by_genre
                    .values()
                    .map(|ids| ids[fold].to_string())
                    .collect();
                let train: Vec<String> = by_genre
                    .values()
                    .flat_map(|ids| ids.iter())
                    .filter(|id| !validation.iter().any(|v| v == **id))
                    .map(|s| s.to_string())
                    .collect();
                splits.push(SplitSpec {
                    train_ids: train,
                    validation_ids: validation,
                });
            }
            Ok(splits)
        }
        SplitMode::KFold => {
            let mut ids: Vec<&str> = corpus.iter().map(|s| s.id.as_str()).collect();
            ids.sort_unstable();
            if ids.len() < K_FOLDS {
                return Err(Error::Data(format!(
                    "k-fold needs >= {K_FOLDS} songs, found {}",
                    ids.len()
                )));
            }
            let mut splits = Vec::with_capacity(K_FOLDS);
            for fold in 0..K_FOLDS {
                let validation: Vec<String> = ids
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| i % K_FOLDS == fold)
                    .map(|(_, s)| s.to_string())
                    .collect();
                let train: Vec<String> = ids
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| i % K_FOLDS != fold)
                    .map(|(_, s)| s.to_string())
                    .collect();
                splits.push(SplitSpec {
                    train_ids: train,
                    validation_ids: validation,
                });
            }
            Ok(splits)
        }
    }
}

/// One manifest entry. Raw inputs (`audio`, `keypoints`) or precomputed
/// artifacts (`features`, `poses`, `pairs`) may be present; relative paths
/// resolve against the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestSong {
    pub id: String,
    #[serde(default)]
    pub genre: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keypoints: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poses: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub songs: Vec<ManifestSong>,
}

impl Manifest {
    pub fn metas(&self) -> Vec<SongMeta> {
        self.songs
            .iter()
            .map(|s| SongMeta {
                id: s.id.clone(),
                genre: s.genre.clone(),
            })
            .collect()
    }

    pub fn song(&self, id: &str) -> Option<&ManifestSong> {
        self.songs.iter().find(|s| s.id == id)
    }
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::decode(path, 0, format!("bad manifest JSON: {e}")))?;
    if manifest.songs.is_empty() {
        return Err(Error::Data(format!("{}: manifest lists no songs", path.display())));
    }
    let mut seen = std::collections::BTreeSet::new();
    for song in &manifest.songs {
        if !seen.insert(&song.id) {
            return Err(Error::Data(format!(
                "{}: duplicate song id {}",
                path.display(),
                song.id
            )));
        }
    }
    Ok(manifest)
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Resolve a manifest-relative path.
pub fn resolve_path(manifest_path: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::FEATURE_DIM;

    fn feature_at(t: f64) -> FeatureFrame {
        FeatureFrame {
            values: vec![0.5; FEATURE_DIM],
            t,
        }
    }

    fn pose_at(t: f64) -> JointPose {
        JointPose {
            angles: [t as f32, 0.0, 0.0, 0.0],
            t,
        }
    }

    #[test]
    fn pairing_picks_nearest() {
        let features = vec![feature_at(0.5)];
        let poses = vec![pose_at(0.49), pose_at(0.52)];
        let p = pair_sequences("s", "g", &features, &poses).unwrap();
        assert_eq!(p.frames[0].1.t, 0.49);
    }

    #[test]
    fn pairing_tie_goes_to_earlier() {
        let features = vec![feature_at(0.5)];
        let poses = vec![pose_at(0.48), pose_at(0.52)];
        let p = pair_sequences("s", "g", &features, &poses).unwrap();
        assert_eq!(p.frames[0].1.t, 0.48);
    }

    #[test]
    fn pairing_at_exact_rate_is_index_identical() {
        let features: Vec<FeatureFrame> = (0..30).map(|i| feature_at(i as f64 / 60.0)).collect();
        let poses: Vec<JointPose> = (0..30).map(|i| pose_at(i as f64 / 60.0)).collect();
        let p = pair_sequences("s", "g", &features, &poses).unwrap();
        for (i, (f, q)) in p.frames.iter().enumerate() {
            assert_eq!(f.t, q.t, "frame {i}");
        }
    }

    #[test]
    fn pairing_is_monotone() {
        let mut rng = crate::tensor::gradcheck::test_rng(71);
        use rand::Rng;
        let features: Vec<FeatureFrame> = (0..120).map(|i| feature_at(i as f64 / 60.0)).collect();
        let mut t = 0.0f64;
        let poses: Vec<JointPose> = (0..50)
            .map(|_| {
                t += rng.random_range(0.001..0.09);
                pose_at(t)
            })
            .collect();
        let p = pair_sequences("s", "g", &features, &poses).unwrap();
        let mut last = f64::NEG_INFINITY;
        for (_, q) in &p.frames {
            assert!(q.t >= last, "pose assignment went backwards");
            last = q.t;
        }
    }

    #[test]
    fn pairing_after_last_pose_uses_final_pose() {
        let features: Vec<FeatureFrame> = (0..10).map(|i| feature_at(i as f64 / 60.0)).collect();
        let poses = vec![pose_at(0.0), pose_at(0.05)];
        let p = pair_sequences("s", "g", &features, &poses).unwrap();
        assert_eq!(p.frames.last().unwrap().1.t, 0.05);
    }

    #[test]
    fn empty_pose_list_errors() {
        assert!(pair_sequences("s", "g", &[feature_at(0.0)], &[]).is_err());
    }

    fn corpus(genres: &[(&str, usize)]) -> Vec<SongMeta> {
        let mut out = Vec::new();
        for (genre, count) in genres {
            for i in 0..*count {
                out.push(SongMeta {
                    id: format!("{genre}-{i:03}"),
                    genre: genre.to_string(),
                });
            }
        }
        out
    }

    #[test]
    fn per_genre_leave_one_out() {
        let c = corpus(&[("mBR", 6)]);
        let splits = cross_validation_splits(&c, SplitMode::PerGenre).unwrap();
        assert_eq!(splits.len(), 6);
        for s in &splits {
            assert_eq!(s.train_ids.len(), 5);
            assert_eq!(s.validation_ids.len(), 1);
            assert!(s.train_ids.iter().all(|t| !s.validation_ids.contains(t)));
        }
    }

    #[test]
    fn per_genre_two_songs() {
        let c = corpus(&[("g", 2)]);
        let splits = cross_validation_splits(&c, SplitMode::PerGenre).unwrap();
        assert_eq!(splits.len(), 2);
        assert_eq!(splits[0].train_ids, vec!["g-001"]);
        assert_eq!(splits[0].validation_ids, vec!["g-000"]);
        assert_eq!(splits[1].train_ids, vec!["g-000"]);
    }

    #[test]
    fn all_genre_one_validation_song_per_genre() {
        let c = corpus(&[("a", 6), ("b", 6), ("c", 6)]);
        let splits = cross_validation_splits(&c, SplitMode::AllGenre).unwrap();
        assert_eq!(splits.len(), 6);
        for s in &splits {
            assert_eq!(s.validation_ids.len(), 3);
            assert_eq!(s.train_ids.len(), 15);
            let genres: std::collections::BTreeSet<&str> = s
                .validation_ids
                .iter()
                .map(|id| id.split('-').next().unwrap())
                .collect();
            assert_eq!(genres.len(), 3, "one validation song per genre");
        }
    }

    #[test]
    fn k_fold_balances_260_songs() {
        let c = corpus(&[("x", 260)]);
        let splits = cross_validation_splits(&c, SplitMode::KFold).unwrap();
        assert_eq!(splits.len(), 10);
        for s in &splits {
            assert_eq!(s.validation_ids.len(), 26);
            assert_eq!(s.train_ids.len(), 234);
        }
        // Every song validates exactly once across folds.
        let mut seen = std::collections::BTreeSet::new();
        for s in &splits {
            for id in &s.validation_ids {
                assert!(seen.insert(id.clone()));
            }
        }
        assert_eq!(seen.len(), 260);
    }

    #[test]
    fn insufficient_songs_error() {
        let c = corpus(&[("solo", 1)]);
        assert!(cross_validation_splits(&c, SplitMode::PerGenre).is_err());
        assert!(cross_validation_splits(&c, SplitMode::KFold).is_err());
    }

    #[test]
    fn manifest_roundtrip_and_duplicate_detection() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let m = Manifest {
            songs: vec![ManifestSong {
                id: "a".into(),
                genre: "g".into(),
                audio: Some(PathBuf::from("a.wav")),
                keypoints: Some(PathBuf::from("a.jsonl")),
                features: None,
                poses: None,
                pairs: None,
            }],
        };
        write_manifest(&path, &m).unwrap();
        assert_eq!(read_manifest(&path).unwrap(), m);

        let dup = Manifest {
            songs: vec![m.songs[0].clone(), m.songs[0].clone()],
        };
        write_manifest(&path, &dup).unwrap();
        assert!(read_manifest(&path).is_err());
    }
}
