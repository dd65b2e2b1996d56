//! Audio ingestion and the 60 Hz feature pipeline.
//!
//! A waveform is resampled to 24 kHz and analyzed with a 2048-point STFT at
//! hop 400, which lands exactly 60 frames per second. Per frame the pipeline
//! produces 20 MFCCs, 20 MFCC deltas, a 12-bin chromagram, a 384-lag
//! tempogram, onset strength and a beat flag — 438 dimensions total.

mod features;
mod file;
mod normalize;
mod stft;
mod wav;

pub use features::{
    assemble_features, beat_flag, chromagram, extract_features, mfcc, mfcc_delta, onset_strength,
    tempogram, FeatureFrame, FEATURE_DIM,
};
pub use file::{read_feature_file, read_normalizer_file, write_feature_file, write_normalizer_file};
pub use normalize::Normalizer;
pub use stft::{stft, Spectrogram};
pub use wav::{load_wav, quantize_for_pcm16, write_wav_mono16};

use crate::error::{Error, Result};

/// Analysis sample rate; together with [`HOP`] it realizes exactly 60
/// frames per second.
pub const SAMPLE_RATE: u32 = 24_000;
pub const FFT_SIZE: usize = 2048;
pub const HOP: usize = 400;
pub const FRAME_RATE: f64 = 60.0;

/// Mono waveform with samples in [−1, 1].
#[derive(Clone, Debug)]
pub struct Waveform {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Data("waveform sample rate must be > 0".into()));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite sample at index {i}")));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Linear-interpolation resampling. Identity when the rates already match.
pub fn resample(w: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(Error::Data("target sample rate must be > 0".into()));
    }
    if target_rate == w.sample_rate {
        return Ok(w.clone());
    }
    if w.samples.is_empty() {
        return Waveform::new(Vec::new(), target_rate);
    }
    let src = w.sample_rate as u64;
    let dst = target_rate as u64;
    let out_len = ((w.samples.len() as u64 * dst) / src) as usize;
    let mut out = Vec::with_capacity(out_len);
    let last = w.samples.len() - 1;
    for i in 0..out_len {
        // Source position of output sample i, in exact integer arithmetic.
        let num = i as u64 * src;
        let idx = (num / dst) as usize;
        let frac = (num % dst) as f64 / dst as f64;
        let s = if idx >= last {
            w.samples[last]
        } else {
            let a = w.samples[idx] as f64;
            let b = w.samples[idx + 1] as f64;
            (a + (b - a) * frac) as f32
        };
        out.push(s);
    }
    Waveform::new(out, target_rate)
}
