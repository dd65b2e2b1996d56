use std::io::Write;
use std::path::Path;

use super::Waveform;
use crate::error::{Error, Result};

/// Load a PCM WAV file (16-bit integer or 32-bit float). Stereo and other
/// multi-channel layouts are averaged down to mono; the original sample rate
/// is preserved.
pub fn load_wav(path: &Path) -> Result<Waveform> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes, path)
}

fn decode_wav(bytes: &[u8], path: &Path) -> Result<Waveform> {
    let fail = |offset: usize, reason: &str| Error::decode(path, offset as u64, reason);
    if bytes.len() < 12 {
        return Err(fail(0, "file shorter than a RIFF header"));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(fail(0, "missing RIFF magic"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(fail(8, "missing WAVE form type"));
    }

    let mut pos = 12usize;
    let mut fmt: Option<(u16, u16, u32, u16)> = None; // format, channels, rate, bits
    let mut data: Option<(usize, usize)> = None; // offset, len
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body = pos + 8;
        if body + size > bytes.len() {
            return Err(fail(pos, "chunk extends past end of file"));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(fail(pos, "fmt chunk too short"));
                }
                let format = u16::from_le_bytes(bytes[body..body + 2].try_into().unwrap());
                let channels = u16::from_le_bytes(bytes[body + 2..body + 4].try_into().unwrap());
                let rate = u32::from_le_bytes(bytes[body + 4..body + 8].try_into().unwrap());
                let bits = u16::from_le_bytes(bytes[body + 14..body + 16].try_into().unwrap());
                fmt = Some((format, channels, rate, bits));
            }
            b"data" => {
                data = Some((body, size));
            }
            _ => {}
        }
        // Chunks are word-aligned.
        pos = body + size + (size & 1);
    }

    let (format, channels, rate, bits) =
        fmt.ok_or_else(|| fail(12, "no fmt chunk found"))?;
    let (dpos, dlen) = data.ok_or_else(|| fail(12, "no data chunk found"))?;
    if channels == 0 {
        return Err(fail(dpos, "zero channels"));
    }
    if rate == 0 {
        return Err(fail(dpos, "zero sample rate"));
    }

    let payload = &bytes[dpos..dpos + dlen];
    let ch = channels as usize;
    let samples: Vec<f32> = match (format, bits) {
        (1, 16) => {
            if dlen % (2 * ch) != 0 {
                return Err(fail(dpos, "data size not a multiple of the frame size"));
            }
            payload
                .chunks_exact(2 * ch)
                .map(|frame| {
                    let mut acc = 0.0f32;
                    for c in 0..ch {
                        let v = i16::from_le_bytes([frame[2 * c], frame[2 * c + 1]]);
                        acc += v as f32 / 32768.0;
                    }
                    acc / ch as f32
                })
                .collect()
        }
        (3, 32) => {
            if dlen % (4 * ch) != 0 {
                return Err(fail(dpos, "data size not a multiple of the frame size"));
            }
            let mut out = Vec::with_capacity(dlen / (4 * ch));
            for (fi, frame) in payload.chunks_exact(4 * ch).enumerate() {
                let mut acc = 0.0f32;
                for c in 0..ch {
                    let v = f32::from_le_bytes(
                        frame[4 * c..4 * c + 4].try_into().unwrap(),
                    );
                    if !v.is_finite() {
                        return Err(fail(dpos + fi * 4 * ch + 4 * c, "non-finite float sample"));
                    }
                    acc += v.clamp(-1.0, 1.0);
                }
                out.push(acc / ch as f32);
            }
            out
        }
        (f, b) => {
            return Err(fail(
                dpos,
                &format!("unsupported encoding: format {f}, {b} bits per sample"),
            ));
        }
    };
    Waveform::new(samples, rate)
}

fn quantize_i16(v: f32) -> i16 {
    (v.clamp(-1.0, 1.0) * 32767.0).round() as i16
}

/// Snap a sample to the value it will have after a 16-bit PCM write/read
/// cycle, so in-memory signals can match file contents exactly.
pub fn quantize_for_pcm16(v: f32) -> f32 {
    quantize_i16(v) as f32 / 32768.0
}

/// Write a mono 16-bit PCM WAV file.
pub fn write_wav_mono16(path: &Path, w: &Waveform) -> Result<()> {
    let data_len = w.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&w.sample_rate().to_le_bytes());
    out.extend_from_slice(&(w.sample_rate() * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in w.samples() {
        out.extend_from_slice(&quantize_i16(s).to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}
