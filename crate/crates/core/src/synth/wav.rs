//! Canonical RIFF/WAVE reader and writer: mono, 16-bit little-endian PCM.

use std::io::Read;
use std::path::Path;

use crate::cqt::AudioClip;
use crate::error::{Error, Result};

/// Writes a clip as mono 16-bit PCM. Samples must already be within [-1, 1];
/// they are quantized as round(x * 32767).
pub fn write_wav(clip: &AudioClip, path: &Path) -> Result<()> {
    if clip.samples.iter().any(|s| !(-1.0..=1.0).contains(s)) {
        return Err(Error::InvalidConfig(
            "write_wav: samples must lie within [-1, 1]".into(),
        ));
    }
    let data_len = (clip.samples.len() * 2) as u32;
    let mut bytes = Vec::with_capacity(44 + data_len as usize);
    bytes.extend_from_slice(b"RIFF");
    bytes.extend_from_slice(&(36 + data_len).to_le_bytes());
    bytes.extend_from_slice(b"WAVE");
    bytes.extend_from_slice(b"fmt ");
    bytes.extend_from_slice(&16u32.to_le_bytes());
    bytes.extend_from_slice(&1u16.to_le_bytes()); // PCM
    bytes.extend_from_slice(&1u16.to_le_bytes()); // mono
    bytes.extend_from_slice(&clip.sample_rate.to_le_bytes());
    bytes.extend_from_slice(&(clip.sample_rate * 2).to_le_bytes()); // byte rate
    bytes.extend_from_slice(&2u16.to_le_bytes()); // block align
    bytes.extend_from_slice(&16u16.to_le_bytes()); // bits per sample
    bytes.extend_from_slice(b"data");
    bytes.extend_from_slice(&data_len.to_le_bytes());
    for &s in &clip.samples {
        let q = (s * 32767.0).round() as i16;
        bytes.extend_from_slice(&q.to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn take<'a>(buf: &'a [u8], at: usize, n: usize) -> Result<&'a [u8]> {
    buf.get(at..at + n)
        .ok_or_else(|| Error::MalformedWav(format!("truncated at byte {at}")))
}

fn u32_at(buf: &[u8], at: usize) -> Result<u32> {
    Ok(u32::from_le_bytes(take(buf, at, 4)?.try_into().unwrap()))
}

fn u16_at(buf: &[u8], at: usize) -> Result<u16> {
    Ok(u16::from_le_bytes(take(buf, at, 2)?.try_into().unwrap()))
}

/// Reads a mono 16-bit PCM WAV file; samples decode as s / 32768.
/// Unknown chunks between `fmt ` and `data` are skipped.
pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;

    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::MalformedWav("missing RIFF/WAVE header".into()));
    }
    let mut pos = 12usize;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    loop {
        let id = take(&bytes, pos, 4)?;
        let size = u32_at(&bytes, pos + 4)? as usize;
        let body = pos + 8;
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::MalformedWav("fmt chunk too small".into()));
                }
                let format = u16_at(&bytes, body)?;
                let channels = u16_at(&bytes, body + 2)?;
                let sample_rate = u32_at(&bytes, body + 4)?;
                let bits = u16_at(&bytes, body + 14)?;
                fmt = Some((format, channels, sample_rate, bits));
            }
            b"data" => {
                let (format, channels, sample_rate, bits) = fmt.ok_or_else(|| {
                    Error::MalformedWav("data chunk appears before fmt".into())
                })?;
                if format != 1 {
                    return Err(Error::UnsupportedWav(format!(
                        "format tag {format}, only PCM (1) is supported"
                    )));
                }
                if channels != 1 {
                    return Err(Error::UnsupportedWav(format!(
                        "{channels} channels, only mono is supported"
                    )));
                }
                if bits != 16 {
                    return Err(Error::UnsupportedWav(format!(
                        "{bits}-bit samples, only 16-bit is supported"
                    )));
                }
                let data = take(&bytes, body, size)?;
                if size % 2 != 0 {
                    return Err(Error::MalformedWav("odd data chunk length".into()));
                }
                let samples: Vec<f64> = data
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
                    .collect();
                return AudioClip::new(samples, sample_rate);
            }
            _ => {}
        }
        // Chunks are word-aligned.
        pos = body + size + (size & 1);
        if pos >= bytes.len() {
            return Err(Error::MalformedWav("no data chunk found".into()));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine_clip(freq: f64, seconds: f64, fs: u32) -> AudioClip {
        let n = (seconds * fs as f64) as usize;
        let w = 2.0 * std::f64::consts::PI * freq / fs as f64;
        AudioClip::new(
            (0..n).map(|i| 0.8 * (w * i as f64).sin()).collect(),
            fs,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_error_within_quantization_bound() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sine.wav");
        let clip = sine_clip(1000.0, 0.25, 16_000);
        write_wav(&clip, &path).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 16_000);
        assert_eq!(back.samples.len(), clip.samples.len());
        let max_err = clip
            .samples
            .iter()
            .zip(&back.samples)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err <= 1.0 / 32768.0, "max error {max_err}");
    }

    #[test]
    fn full_scale_values_round_trip_within_bound() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("edge.wav");
        let clip = AudioClip::new(vec![1.0, -1.0, 0.0, 0.5, -0.5], 8_000).unwrap();
        write_wav(&clip, &path).unwrap();
        let back = read_wav(&path).unwrap();
        for (a, b) in clip.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }

    #[test]
    fn header_fields_and_data_length_are_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("len.wav");
        // 48 kHz, 7 s -> data chunk of 48000*7*2 bytes.
        let clip = AudioClip::new(vec![0.0; 48_000 * 7], 48_000).unwrap();
        write_wav(&clip, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 44 + 48_000 * 7 * 2);
        assert_eq!(&bytes[0..4], b"RIFF");
        assert_eq!(u32::from_le_bytes(bytes[24..28].try_into().unwrap()), 48_000);
        assert_eq!(u16::from_le_bytes(bytes[22..24].try_into().unwrap()), 1);
        assert_eq!(u16::from_le_bytes(bytes[34..36].try_into().unwrap()), 16);
        assert_eq!(
            u32::from_le_bytes(bytes[40..44].try_into().unwrap()),
            48_000 * 7 * 2
        );
    }

    #[test]
    fn truncated_file_is_a_malformed_header_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.wav");
        let clip = sine_clip(440.0, 0.1, 8_000);
        write_wav(&clip, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..50]).unwrap();
        assert!(matches!(read_wav(&path), Err(Error::MalformedWav(_))));
        std::fs::write(&path, &bytes[..10]).unwrap();
        assert!(matches!(read_wav(&path), Err(Error::MalformedWav(_))));
    }

    #[test]
    fn unsupported_encodings_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stereo.wav");
        let clip = sine_clip(440.0, 0.05, 8_000);
        write_wav(&clip, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[22] = 2; // channel count
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_wav(&path), Err(Error::UnsupportedWav(_))));
    }

    #[test]
    fn out_of_range_samples_are_rejected_on_write() {
        let dir = tempfile::tempdir().unwrap();
        let clip = AudioClip::new(vec![0.0, 1.5], 8_000).unwrap();
        assert!(write_wav(&clip, &dir.path().join("bad.wav")).is_err());
    }

    #[test]
    fn writer_is_byte_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let clip = sine_clip(523.25, 0.2, 16_000);
        let (p1, p2) = (dir.path().join("a.wav"), dir.path().join("b.wav"));
        write_wav(&clip, &p1).unwrap();
        write_wav(&clip, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }
}
