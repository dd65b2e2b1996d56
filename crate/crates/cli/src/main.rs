//! `mdlt` — one binary wiring the music-to-dance pipeline end to end.
//!
//! Exit codes: 0 success, 1 internal error, 2 usage or input error.
//! Config precedence for training: command-line flag > config file >
//! built-in default. All randomness funnels through `--seed` (default 0).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mdlt_core::dataset::{cross_validation_splits, read_manifest, SplitMode};
use mdlt_core::pipeline::{
    evaluate_to_report, extract_features_file, extract_poses_file, read_split_file, run_training,
    sync_files, synth_corpus, translate_wav, SynthOptions,
};
use mdlt_core::train::TrainConfig;
use mdlt_core::Error;

#[derive(Parser)]
#[command(
    name = "mdlt",
    about = "Music-to-dance translation: feature extraction, pose retargeting, training, inference and evaluation",
    version
)]
struct Cli {
    /// Worker threads for per-song parallelism (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    /// Master random seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract 438-dim features from a WAV into an MDLF file.
    ExtractFeatures(ExtractFeaturesArgs),
    /// Convert a keypoints JSONL into an MDLP joint-angle file.
    ExtractPoses(ExtractPosesArgs),
    /// Pair a feature file with a pose file by timestamp into an MDLA file.
    Sync(SyncArgs),
    /// Generate a synthetic music-dance corpus with a manifest.
    Synth(SynthArgs),
    /// Train a model from a JSON config.
    Train(TrainArgs),
    /// Translate a WAV into poses with a trained checkpoint.
    Translate(TranslateArgs),
    /// Evaluate a checkpoint on a validation split (AJE and FID).
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct ExtractFeaturesArgs {
    /// Input WAV (16-bit PCM or 32-bit float, mono or stereo).
    #[arg(long)]
    audio: PathBuf,
    /// Output feature file (MDLF).
    #[arg(long)]
    out: PathBuf,
    /// Optional normalizer file (MDLN); output is normalized when given.
    #[arg(long)]
    normalizer: Option<PathBuf>,
}

#[derive(Args)]
struct ExtractPosesArgs {
    /// Input keypoints (JSON-lines).
    #[arg(long)]
    keypoints: PathBuf,
    /// Output pose file (MDLP).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SyncArgs {
    /// Feature file (MDLF).
    #[arg(long)]
    features: PathBuf,
    /// Pose file (MDLP).
    #[arg(long)]
    poses: PathBuf,
    /// Output paired file (MDLA).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Number of songs (genres cycle over the two synthetic genres).
    #[arg(long, default_value_t = 12)]
    songs: usize,
    /// Duration of each song in seconds.
    #[arg(long, default_value_t = 30.0)]
    duration: f64,
    /// Mapping/noise difficulty in [0, 1].
    #[arg(long, default_value_t = 0.5)]
    difficulty: f64,
    /// Output directory for WAVs, keypoints and the manifest.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Training config (JSON; see README for the schema).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for checkpoints and metrics.csv.
    #[arg(long)]
    out: PathBuf,
    /// Resume from `latest.mdlc` in the output directory if present.
    #[arg(long, default_value_t = false)]
    resume: bool,
    /// Override the config's fold index.
    #[arg(long)]
    fold: Option<usize>,
    /// Override the config's update count.
    #[arg(long)]
    updates: Option<u64>,
}

#[derive(Args)]
struct TranslateArgs {
    /// Trained checkpoint (MDLC).
    #[arg(long)]
    checkpoint: PathBuf,
    /// Input WAV to translate.
    #[arg(long)]
    audio: PathBuf,
    /// Output pose file (MDLP).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Trained checkpoint (MDLC).
    #[arg(long)]
    checkpoint: PathBuf,
    /// Corpus manifest (JSON).
    #[arg(long)]
    manifest: PathBuf,
    /// Split file (JSON with train_ids/validation_ids). When omitted,
    /// `--split-mode`/`--fold` derive the split from the manifest.
    #[arg(long)]
    split: Option<PathBuf>,
    /// Split mode when no --split file is given.
    #[arg(long, value_parser = parse_split_mode)]
    split_mode: Option<SplitMode>,
    /// Fold index when deriving the split.
    #[arg(long, default_value_t = 0)]
    fold: usize,
    /// Output report (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Optional training config to cross-check against the checkpoint.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn parse_split_mode(s: &str) -> Result<SplitMode, String> {
    match s {
        "per-genre" => Ok(SplitMode::PerGenre),
        "all-genre" => Ok(SplitMode::AllGenre),
        "k-fold" => Ok(SplitMode::KFold),
        other => Err(format!(
            "unknown split mode {other:?} (expected per-genre, all-genre or k-fold)"
        )),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.jobs > 0 {
        // One global pool serves both per-song fan-out and the kernels.
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global()
        {
            eprintln!("mdlt: failed to size the thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mdlt: {e}");
            if e.is_input_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::ExtractFeatures(a) => {
            let frames = extract_features_file(&a.audio, &a.out, a.normalizer.as_deref())?;
            println!("wrote {} frames to {}", frames, a.out.display());
        }
        Command::ExtractPoses(a) => {
            let poses = extract_poses_file(&a.keypoints, &a.out)?;
            println!("wrote {} poses to {}", poses, a.out.display());
        }
        Command::Sync(a) => {
            let pairs = sync_files(&a.features, &a.poses, &a.out)?;
            println!("wrote {} pairs to {}", pairs, a.out.display());
        }
        Command::Synth(a) => {
            let manifest = synth_corpus(
                &a.out,
                &SynthOptions {
                    songs: a.songs,
                    duration_s: a.duration,
                    seed: cli.seed,
                    difficulty: a.difficulty,
                },
            )?;
            println!("wrote corpus manifest {}", manifest.display());
        }
        Command::Train(a) => {
            let mut cfg = TrainConfig::read(&a.config)?;
            if let Some(fold) = a.fold {
                cfg.fold = fold;
            }
            if let Some(updates) = a.updates {
                cfg.updates = updates;
            }
            let outcome = run_training(&cfg, &a.out, a.resume)?;
            println!(
                "trained {} steps; best validation AJE {:.4} rad at step {} ({})",
                outcome.final_step,
                outcome.best_aje,
                outcome.best_step,
                outcome.best_path.display()
            );
        }
        Command::Translate(a) => {
            let poses = translate_wav(&a.checkpoint, &a.audio, &a.out)?;
            println!("wrote {} poses to {}", poses, a.out.display());
        }
        Command::Evaluate(a) => {
            let split = match (&a.split, a.split_mode) {
                (Some(path), _) => read_split_file(path)?,
                (None, Some(mode)) => {
                    let manifest = read_manifest(&a.manifest)?;
                    let splits = cross_validation_splits(&manifest.metas(), mode)?;
                    splits.get(a.fold).cloned().ok_or_else(|| {
                        Error::Config(format!(
                            "fold {} out of range: {} splits available",
                            a.fold,
                            splits.len()
                        ))
                    })?
                }
                (None, None) => {
                    return Err(Error::Config(
                        "evaluate needs either --split or --split-mode".into(),
                    ))
                }
            };
            let expect = match &a.config {
                Some(path) => Some(TrainConfig::read(path)?),
                None => None,
            };
            let report = evaluate_to_report(
                &a.checkpoint,
                &a.manifest,
                &split,
                Some(&a.out),
                expect.as_ref(),
            )?;
            println!(
                "evaluated {} songs: AJE {:.4} ± {:.4} rad, FID {:.4} ({})",
                report.songs.len(),
                report.aggregate.aje_mean,
                report.aggregate.aje_std,
                report.aggregate.fid,
                a.out.display()
            );
        }
    }
    Ok(())
}
