use super::stft::{stft, Spectrogram};
use super::{resample, Waveform, FFT_SIZE, FRAME_RATE, HOP, SAMPLE_RATE};
use crate::error::{Error, Result};

pub const N_MFCC: usize = 20;
pub const N_CHROMA: usize = 12;
pub const TEMPO_LAGS: usize = 384;
/// mfcc(20) ‖ mfcc_delta(20) ‖ chroma(12) ‖ tempogram(384) ‖ onset(1) ‖ beat(1)
pub const FEATURE_DIM: usize = N_MFCC + N_MFCC + N_CHROMA + TEMPO_LAGS + 1 + 1;

const N_MELS: usize = 128;
const LOG_FLOOR: f64 = 1e-10;
/// Centered window for the beat flag's running median, about two seconds.
const MEDIAN_WINDOW: usize = 121;

/// One 438-dimensional feature vector with its timestamp. Values are raw
/// after [`assemble_features`] and land in [0.1, 0.9] once a fitted
/// [`super::Normalizer`] has been applied.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureFrame {
    pub values: Vec<f32>,
    pub t: f64,
}

/// Triangular mel filterbank on HTK-style mel spacing; each filter stored as
/// (first bin, weights).
struct MelBank {
    filters: Vec<(usize, Vec<f64>)>,
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

impl MelBank {
    fn new(sample_rate: u32, fft_size: usize) -> Self {
        let nyquist = sample_rate as f64 / 2.0;
        let mel_max = hz_to_mel(nyquist);
        let points: Vec<f64> = (0..N_MELS + 2)
            .map(|i| mel_to_hz(mel_max * i as f64 / (N_MELS + 1) as f64))
            .collect();
        let bins = fft_size / 2 + 1;
        let bin_hz = sample_rate as f64 / fft_size as f64;
        let mut filters = Vec::with_capacity(N_MELS);
        for b in 0..N_MELS {
            let (lo, center, hi) = (points[b], points[b + 1], points[b + 2]);
            let mut first = None;
            let mut weights = Vec::new();
            for k in 0..bins {
                let f = k as f64 * bin_hz;
                let w = if f <= lo || f >= hi {
                    0.0
                } else if f <= center {
                    (f - lo) / (center - lo)
                } else {
                    (hi - f) / (hi - center)
                };
                if w > 0.0 {
                    if first.is_none() {
                        first = Some(k);
                    }
                    weights.push(w);
                } else if first.is_some() {
                    break;
                }
            }
            filters.push((first.unwrap_or(0), weights));
        }
        MelBank { filters }
    }

    /// Log mel energies of one power frame, floored at `LOG_FLOOR`.
    fn log_energies(&self, power: &[f64]) -> Vec<f64> {
        self.filters
            .iter()
            .map(|(first, weights)| {
                let e: f64 = weights
                    .iter()
                    .enumerate()
                    .map(|(i, w)| w * power[first + i])
                    .sum();
                e.max(LOG_FLOOR).ln()
            })
            .collect()
    }
}

fn log_mel_frames(spec: &Spectrogram) -> Vec<Vec<f64>> {
    let bank = MelBank::new(spec.sample_rate, spec.fft_size);
    (0..spec.frames.len())
        .map(|t| bank.log_energies(&spec.power_frame(t)))
        .collect()
}

/// Orthonormal DCT-II of the log mel energies; first 20 coefficients.
pub fn mfcc(spec: &Spectrogram) -> Vec<Vec<f32>> {
    let logmel = log_mel_frames(spec);
    logmel.iter().map(|row| dct20(row)).collect()
}

fn dct20(row: &[f64]) -> Vec<f32> {
    let m = row.len();
    let mut out = Vec::with_capacity(N_MFCC);
    for k in 0..N_MFCC {
        let mut acc = 0.0f64;
        for (i, &v) in row.iter().enumerate() {
            acc += v * (std::f64::consts::PI * k as f64 * (2.0 * i as f64 + 1.0)
                / (2.0 * m as f64))
                .cos();
        }
        let scale = if k == 0 {
            (1.0 / m as f64).sqrt()
        } else {
            (2.0 / m as f64).sqrt()
        };
        out.push((acc * scale) as f32);
    }
    out
}

/// Centered first difference `(c[t+1] − c[t−1]) / 2` with replicated edges.
/// A single frame yields zeros.
pub fn mfcc_delta(mfcc: &[Vec<f32>]) -> Vec<Vec<f32>> {
    let n = mfcc.len();
    if n == 0 {
        return Vec::new();
    }
    (0..n)
        .map(|t| {
            let prev = &mfcc[t.saturating_sub(1)];
            let next = &mfcc[(t + 1).min(n - 1)];
            prev.iter()
                .zip(next)
                .map(|(&p, &nx)| (nx - p) / 2.0)
                .collect()
        })
        .collect()
}

/// Pitch-class energy folded over octaves. Each bin's power lands on
/// `(round(12·log2(f/440)) + 69) mod 12` weighted by a triangle in
/// log-frequency distance from the semitone center; frames are
/// max-normalized to [0, 1] (an all-zero frame stays zero).
pub fn chromagram(spec: &Spectrogram) -> Vec<Vec<f32>> {
    let mut out = Vec::with_capacity(spec.frames.len());
    for t in 0..spec.frames.len() {
        let power = spec.power_frame(t);
        let mut chroma = [0.0f64; N_CHROMA];
        for (k, &p) in power.iter().enumerate().skip(1) {
            if p == 0.0 {
                continue;
            }
            let f = spec.bin_freq(k);
            let semis = 12.0 * (f / 440.0).log2();
            let nearest = semis.round();
            let weight = 1.0 - 2.0 * (semis - nearest).abs();
            if weight <= 0.0 {
                continue;
            }
            let pc = (nearest as i64 + 69).rem_euclid(12) as usize;
            chroma[pc] += p * weight;
        }
        let max = chroma.iter().cloned().fold(0.0f64, f64::max);
        let row: Vec<f32> = if max > 0.0 {
            chroma.iter().map(|&v| (v / max) as f32).collect()
        } else {
            vec![0.0; N_CHROMA]
        };
        out.push(row);
    }
    out
}

/// Rectified spectral flux: mean over mel bands of the half-wave-rectified
/// first difference of log mel energy. The first frame is 0.
pub fn onset_strength(spec: &Spectrogram) -> Vec<f32> {
    let logmel = log_mel_frames(spec);
    let mut out = vec![0.0f32; logmel.len()];
    for t in 1..logmel.len() {
        let mut acc = 0.0f64;
        for (cur, prev) in logmel[t].iter().zip(&logmel[t - 1]) {
            let d = cur - prev;
            if d > 0.0 {
                acc += d;
            }
        }
        out[t] = (acc / N_MELS as f64) as f32;
    }
    out
}

/// Per-frame local autocorrelation of the onset envelope: a 384-frame window
/// centered on the frame (edges replicated), mean-subtracted, Hann-weighted,
/// autocorrelated over lags 0..383 and normalized by the lag-0 value. A
/// window with no energy after centering gives zeros.
pub fn tempogram(onsets: &[f32]) -> Vec<Vec<f32>> {
    let n = onsets.len();
    let win = TEMPO_LAGS;
    let hann = super::stft::hann_window(win);
    let mut out = Vec::with_capacity(n);
    let clamp = |i: isize| -> f32 {
        if n == 0 {
            0.0
        } else {
            onsets[i.clamp(0, n as isize - 1) as usize]
        }
    };
    for t in 0..n {
        let start = t as isize - (win / 2) as isize;
        let raw: Vec<f64> = (0..win).map(|i| clamp(start + i as isize) as f64).collect();
        let mean = raw.iter().sum::<f64>() / win as f64;
        let v: Vec<f64> = raw
            .iter()
            .zip(&hann)
            .map(|(&x, &h)| (x - mean) * h as f64)
            .collect();
        let mut row = vec![0.0f32; win];
        let zero_lag: f64 = v.iter().map(|&x| x * x).sum();
        if zero_lag > 0.0 {
            for (lag, r) in row.iter_mut().enumerate() {
                let mut acc = 0.0f64;
                for i in 0..win - lag {
                    acc += v[i] * v[i + lag];
                }
                *r = (acc / zero_lag) as f32;
            }
        }
        out.push(row);
    }
    out
}

/// 1 where the onset strength is a local maximum above its running median.
pub fn beat_flag(onsets: &[f32]) -> Vec<f32> {
    let n = onsets.len();
    let mut out = vec![0.0f32; n];
    let half = MEDIAN_WINDOW / 2;
    let mut window = Vec::with_capacity(MEDIAN_WINDOW);
    for t in 0..n {
        let left = if t > 0 { onsets[t - 1] } else { f32::NEG_INFINITY };
        let right = if t + 1 < n {
            onsets[t + 1]
        } else {
            f32::NEG_INFINITY
        };
        if !(onsets[t] > left && onsets[t] >= right) {
            continue;
        }
        window.clear();
        let lo = t.saturating_sub(half);
        let hi = (t + half + 1).min(n);
        window.extend_from_slice(&onsets[lo..hi]);
        window.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = window[window.len() / 2];
        if onsets[t] > median {
            out[t] = 1.0;
        }
    }
    out
}

/// Concatenate the per-frame features in the fixed order
/// mfcc ‖ delta ‖ chroma ‖ tempogram ‖ onset ‖ beat, stamping `index / 60`.
pub fn assemble_features(
    mfcc: &[Vec<f32>],
    delta: &[Vec<f32>],
    chroma: &[Vec<f32>],
    tempo: &[Vec<f32>],
    onset: &[f32],
    beat: &[f32],
) -> Result<Vec<FeatureFrame>> {
    let n = mfcc.len();
    if [delta.len(), chroma.len(), tempo.len(), onset.len(), beat.len()]
        .iter()
        .any(|&l| l != n)
    {
        return Err(Error::Data(format!(
            "feature stream lengths disagree: mfcc {} delta {} chroma {} tempo {} onset {} beat {}",
            n,
            delta.len(),
            chroma.len(),
            tempo.len(),
            onset.len(),
            beat.len()
        )));
    }
    let mut frames = Vec::with_capacity(n);
    for i in 0..n {
        let mut values = Vec::with_capacity(FEATURE_DIM);
        values.extend_from_slice(&mfcc[i]);
        values.extend_from_slice(&delta[i]);
        values.extend_from_slice(&chroma[i]);
        values.extend_from_slice(&tempo[i]);
        values.push(onset[i]);
        values.push(beat[i]);
        debug_assert_eq!(values.len(), FEATURE_DIM);
        frames.push(FeatureFrame {
            values,
            t: i as f64 / FRAME_RATE,
        });
    }
    Ok(frames)
}

/// Full pipeline: resample to 24 kHz, STFT, all feature streams, assemble.
pub fn extract_features(w: &Waveform) -> Result<Vec<FeatureFrame>> {
    let w = resample(w, SAMPLE_RATE)?;
    let spec = stft(&w, FFT_SIZE, HOP);
    let m = mfcc(&spec);
    let d = mfcc_delta(&m);
    let c = chromagram(&spec);
    let o = onset_strength(&spec);
    let tg = tempogram(&o);
    let b = beat_flag(&o);
    assemble_features(&m, &d, &c, &tg, &o, &b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::Waveform;

    fn sine(freq: f64, rate: u32, n: usize, amp: f32) -> Waveform {
        let samples: Vec<f32> = (0..n)
            .map(|i| {
                amp * (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin() as f32
            })
            .collect();
        Waveform::new(samples, rate).unwrap()
    }

    fn noise(n: usize, amp: f32, seed: u64) -> Waveform {
        let mut rng = crate::tensor::gradcheck::test_rng(seed);
        let samples: Vec<f32> = (0..n)
            .map(|_| rand::Rng::random_range(&mut rng, -amp..amp))
            .collect();
        Waveform::new(samples, 24_000).unwrap()
    }

    #[test]
    fn mfcc_of_silence_has_zero_ac_terms() {
        let w = Waveform::new(vec![0.0; 4000], 24_000).unwrap();
        let spec = stft(&w, 2048, 400);
        let m = mfcc(&spec);
        let expected_c0 = (LOG_FLOOR.ln() * (N_MELS as f64).sqrt()) as f32;
        for frame in &m {
            assert!((frame[0] - expected_c0).abs() < 1e-3);
            for &c in &frame[1..] {
                assert!(c.abs() < 1e-4, "AC coefficient {c} not ~0");
            }
        }
    }

    #[test]
    fn scaling_waveform_shifts_only_c0() {
        let w1 = noise(6000, 0.4, 3);
        let w2 = Waveform::new(w1.samples().iter().map(|&s| s * 2.0).collect(), 24_000).unwrap();
        let m1 = mfcc(&stft(&w1, 2048, 400));
        let m2 = mfcc(&stft(&w2, 2048, 400));
        for (f1, f2) in m1.iter().zip(&m2) {
            assert!((f2[0] - f1[0]).abs() > 1e-3, "c0 should shift");
            for k in 1..N_MFCC {
                assert!(
                    (f2[k] - f1[k]).abs() < 1e-3,
                    "c{k} moved by {}",
                    (f2[k] - f1[k]).abs()
                );
            }
        }
    }

    #[test]
    fn white_noise_mfcc_magnitudes_trend_down() {
        // Monte Carlo over 100 noise frames: low-order AC coefficients carry
        // more energy than high-order ones.
        let w = noise(400 * 100 + 2048, 0.5, 7);
        let m = mfcc(&stft(&w, 2048, 400));
        let frames = &m[..100];
        let mean_abs = |k: usize| -> f64 {
            frames.iter().map(|f| f[k].abs() as f64).sum::<f64>() / frames.len() as f64
        };
        let low: f64 = (1..6).map(mean_abs).sum::<f64>() / 5.0;
        let high: f64 = (15..20).map(mean_abs).sum::<f64>() / 5.0;
        assert!(
            low > high,
            "expected decreasing trend, low {low} vs high {high}"
        );
        assert!(frames.iter().all(|f| f.iter().all(|c| c.is_finite())));
    }

    #[test]
    fn delta_of_constant_stream_is_zero() {
        let stream = vec![vec![1.0f32; N_MFCC]; 10];
        let d = mfcc_delta(&stream);
        assert!(d.iter().all(|f| f.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn delta_of_linear_ramp_is_slope() {
        let v = 0.25f32;
        let stream: Vec<Vec<f32>> = (0..10).map(|t| vec![t as f32 * v; N_MFCC]).collect();
        let d = mfcc_delta(&stream);
        for f in &d[1..9] {
            assert!(f.iter().all(|&x| (x - v).abs() < 1e-6));
        }
        // Replicated edges halve the difference.
        assert!((d[0][0] - v / 2.0).abs() < 1e-6);
        assert!((d[9][0] - v / 2.0).abs() < 1e-6);
    }

    #[test]
    fn delta_of_single_frame_is_zero() {
        let d = mfcc_delta(&[vec![3.0f32; N_MFCC]]);
        assert_eq!(d.len(), 1);
        assert!(d[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn chroma_of_a440_peaks_at_index_9() {
        let w = sine(440.0, 24_000, 24_000, 0.8);
        let c = chromagram(&stft(&w, 2048, 400));
        let frame = &c[30];
        let max_idx = frame
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(max_idx, 9);
    }

    #[test]
    fn chroma_of_silence_is_zero() {
        let w = Waveform::new(vec![0.0; 4000], 24_000).unwrap();
        let c = chromagram(&stft(&w, 2048, 400));
        assert!(c.iter().all(|f| f.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn chroma_octave_equivalence() {
        let rate = 24_000u32;
        let samples: Vec<f32> = (0..rate as usize)
            .map(|i| {
                let t = i as f64 / rate as f64;
                (0.5 * (2.0 * std::f64::consts::PI * 440.0 * t).sin()
                    + 0.5 * (2.0 * std::f64::consts::PI * 880.0 * t).sin()) as f32
            })
            .collect();
        let w = Waveform::new(samples, rate).unwrap();
        let c = chromagram(&stft(&w, 2048, 400));
        let frame = &c[30];
        let max_idx = frame
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(max_idx, 9, "octave pair should still fold onto A");
    }

    fn synthetic_spectrogram(mags: Vec<Vec<f32>>) -> Spectrogram {
        use rustfft::num_complex::Complex;
        let frames: Vec<Vec<Complex<f32>>> = mags
            .into_iter()
            .map(|row| row.into_iter().map(|m| Complex::new(m, 0.0)).collect())
            .collect();
        Spectrogram {
            frames,
            fft_size: 2048,
            hop: 400,
            sample_rate: 24_000,
        }
    }

    #[test]
    fn onset_zero_for_constant_spectrum() {
        let row: Vec<f32> = (0..1025).map(|k| ((k % 17) as f32) * 0.01 + 0.1).collect();
        let spec = synthetic_spectrogram(vec![row; 20]);
        let o = onset_strength(&spec);
        assert_eq!(o[0], 0.0);
        assert!(o[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn onset_spikes_at_a_loud_step() {
        // Half silence, half loud noise; oracle is the hand-computed rectified
        // log-difference location: the spike must sit at the step frame.
        let rate = 24_000u32;
        let step_at = 8000usize;
        let mut samples = vec![0.0f32; 16_000];
        let mut rng = crate::tensor::gradcheck::test_rng(5);
        for s in samples[step_at..].iter_mut() {
            *s = rand::Rng::random_range(&mut rng, -0.8f32..0.8);
        }
        let w = Waveform::new(samples, rate).unwrap();
        let o = onset_strength(&stft(&w, 2048, 400));
        let step_frame = step_at / 400;
        let peak = o
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert!(
            (peak as isize - step_frame as isize).abs() <= 3,
            "peak at {peak}, expected near {step_frame}"
        );
    }

    #[test]
    fn onset_ignores_decaying_amplitude() {
        // Magnitudes shrink every frame; negative log differences rectify to 0.
        let mags: Vec<Vec<f32>> = (0..20)
            .map(|t| {
                let scale = 0.9f32.powi(t);
                (0..1025).map(|k| scale * (0.2 + (k % 11) as f32 * 0.02)).collect()
            })
            .collect();
        let o = onset_strength(&synthetic_spectrogram(mags));
        assert!(o.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tempogram_peaks_at_multiples_of_the_period() {
        let mut onsets = vec![0.0f32; 600];
        for t in (0..600).step_by(30) {
            onsets[t] = 1.0;
        }
        let tg = tempogram(&onsets);
        let row = &tg[300];
        for &lag in &[30usize, 60, 90] {
            let v = row[lag];
            for d in 5..15 {
                assert!(
                    v > row[lag - d] && v > row[lag + d],
                    "lag {lag} not a local maximum"
                );
            }
        }
    }

    #[test]
    fn tempogram_of_constant_envelope_is_zero() {
        let onsets = vec![0.7f32; 500];
        let tg = tempogram(&onsets);
        assert!(tg.iter().all(|row| row.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn tempogram_lag_zero_is_one_for_active_windows() {
        let mut onsets = vec![0.0f32; 500];
        for t in (0..500).step_by(25) {
            onsets[t] = 0.5;
        }
        let tg = tempogram(&onsets);
        for row in &tg {
            assert!((row[0] - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn beat_flag_examples() {
        assert!(beat_flag(&vec![0.0; 100]).iter().all(|&v| v == 0.0));

        let mut single = vec![0.0f32; 100];
        single[40] = 1.0;
        let flags = beat_flag(&single);
        for (t, &f) in flags.iter().enumerate() {
            assert_eq!(f, if t == 40 { 1.0 } else { 0.0 });
        }

        let mut train = vec![0.0f32; 300];
        for t in (0..300).step_by(30) {
            train[t] = 1.0;
        }
        let flags = beat_flag(&train);
        for (t, &f) in flags.iter().enumerate() {
            let expected = if t % 30 == 0 { 1.0 } else { 0.0 };
            assert_eq!(f, expected, "frame {t}");
        }
    }

    #[test]
    fn assemble_dimension_and_timestamps() {
        let w = noise(4000, 0.3, 9);
        let frames = extract_features(&w).unwrap();
        assert_eq!(frames.len(), 10);
        for f in &frames {
            assert_eq!(f.values.len(), FEATURE_DIM);
        }
        assert!((frames[0].t - 0.0).abs() < 1e-12);
        // Frame index 30 maps to 0.5 s.
        let long = noise(24_000, 0.3, 9);
        let frames = extract_features(&long).unwrap();
        assert!((frames[30].t - 0.5).abs() < 1e-12);
    }

    #[test]
    fn assemble_rejects_mismatched_lengths() {
        let err = assemble_features(
            &[vec![0.0; N_MFCC]],
            &[],
            &[vec![0.0; N_CHROMA]],
            &[vec![0.0; TEMPO_LAGS]],
            &[0.0],
            &[0.0],
        );
        assert!(err.is_err());
    }

    #[test]
    fn silence_composes_from_per_feature_outputs() {
        let w = Waveform::new(vec![0.0; 4000], 24_000).unwrap();
        let frames = extract_features(&w).unwrap();
        let expected_c0 = (LOG_FLOOR.ln() * (N_MELS as f64).sqrt()) as f32;
        for f in &frames {
            assert!((f.values[0] - expected_c0).abs() < 1e-3); // mfcc c0
            assert!(f.values[1..40].iter().all(|&v| v.abs() < 1e-4)); // ac + delta
            assert!(f.values[40..52].iter().all(|&v| v == 0.0)); // chroma
            assert!(f.values[52..436].iter().all(|&v| v == 0.0)); // tempogram
            assert_eq!(f.values[436], 0.0); // onset
            assert_eq!(f.values[437], 0.0); // beat
        }
    }

    #[test]
    fn pipeline_is_deterministic() {
        let w = noise(24_000, 0.5, 13);
        let a = extract_features(&w).unwrap();
        let b = extract_features(&w).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ten_seconds_gives_600_frames() {
        let w = noise(240_000, 0.2, 21);
        let frames = extract_features(&w).unwrap();
        assert_eq!(frames.len(), 600);
    }
}
