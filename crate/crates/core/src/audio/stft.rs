use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::Waveform;

/// One-sided complex spectrogram: `fft_size/2 + 1` bins per frame.
#[derive(Clone, Debug)]
pub struct Spectrogram {
    pub frames: Vec<Vec<Complex<f32>>>,
    pub fft_size: usize,
    pub hop: usize,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn bin_freq(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate as f64 / self.fft_size as f64
    }

    /// Power (|X|²) of one frame.
    pub fn power_frame(&self, t: usize) -> Vec<f64> {
        self.frames[t]
            .iter()
            .map(|c| (c.re as f64).powi(2) + (c.im as f64).powi(2))
            .collect()
    }
}

pub(crate) fn hann_window(n: usize) -> Vec<f32> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .map(|v| v as f32)
        .collect()
}

/// Index into `[0, len)` after reflecting at both edges (without repeating
/// the edge sample).
pub(crate) fn reflect_index(mut i: isize, len: usize) -> usize {
    assert!(len > 0);
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    i = i.rem_euclid(period);
    if i >= len as isize {
        i = period - i;
    }
    i as usize
}

/// Hann-windowed, centered STFT with reflect padding. Frame `t` is centered
/// on sample `t*hop`; frame count is `ceil(len/hop)`. An empty waveform gives
/// an empty spectrogram.
pub fn stft(w: &Waveform, fft_size: usize, hop: usize) -> Spectrogram {
    assert!(fft_size.is_power_of_two(), "fft_size must be a power of two");
    assert!(hop > 0 && hop <= fft_size, "hop must be in (0, fft_size]");
    let len = w.len();
    let frame_count = len.div_ceil(hop);
    let window = hann_window(fft_size);
    let mut planner = FftPlanner::<f32>::new();
    let fft = planner.plan_fft_forward(fft_size);
    let half = (fft_size / 2) as isize;
    let bins = fft_size / 2 + 1;

    let mut frames = Vec::with_capacity(frame_count);
    let mut buf = vec![Complex::new(0.0f32, 0.0); fft_size];
    for t in 0..frame_count {
        let center = (t * hop) as isize;
        for (n, b) in buf.iter_mut().enumerate() {
            let src = center - half + n as isize;
            let s = w.samples()[reflect_index(src, len)];
            *b = Complex::new(s * window[n], 0.0);
        }
        fft.process(&mut buf);
        frames.push(buf[..bins].to_vec());
    }
    Spectrogram {
        frames,
        fft_size,
        hop,
        sample_rate: w.sample_rate(),
    }
}
