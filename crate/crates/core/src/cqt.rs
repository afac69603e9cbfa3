//! Constant-Q spectrogram front-end.
//!
//! Each branch of the network consumes a fixed-size 3-channel image produced
//! here: constant-Q magnitudes -> dB compression -> bilinear resize ->
//! channel replication -> per-image standardization.
//!
//! The transform evaluates one time-domain kernel per (bin, frame) pair:
//! bin k has center frequency `f_min * 2^(k/B)`, window length
//! `N_k = ceil(Q * fs / f_k)` with `Q = 1/(2^(1/B) - 1)`, and a Hann window.
//! Frames are centered at `t * hop` over a reflection-padded signal. This is
//! O(K * T * N_k) but straightforward to verify; an FFT-accelerated kernel
//! bank could replace it behind the same contract.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mono audio with its sample rate. Samples must be finite.
#[derive(Debug, Clone)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("audio clip"));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidConfig("sample rate must be positive".into()));
        }
        if !samples.iter().all(|s| s.is_finite()) {
            return Err(Error::InvalidConfig("audio samples must be finite".into()));
        }
        Ok(AudioClip {
            samples,
            sample_rate,
        })
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Constant-Q analysis settings. The window is always Hann.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct CqtConfig {
    /// Center frequency of bin 0, Hz.
    pub f_min: f64,
    /// Bins per octave (B).
    pub bins_per_octave: usize,
    /// Total bins (K).
    pub n_bins: usize,
    /// Hop between frame centers, in samples.
    pub hop: usize,
    /// Floor for dB compression.
    pub magnitude_floor_db: f64,
}

impl Default for CqtConfig {
    /// C1 through 7 octaves at 24 bins/octave: covers the piano exercise
    /// range and yields >= 168 frequency rows before resizing.
    fn default() -> Self {
        CqtConfig {
            f_min: 32.70,
            bins_per_octave: 24,
            n_bins: 168,
            hop: 512,
            magnitude_floor_db: -80.0,
        }
    }
}

impl CqtConfig {
    /// Q factor: ratio of center frequency to bandwidth.
    pub fn q(&self) -> f64 {
        1.0 / (2f64.powf(1.0 / self.bins_per_octave as f64) - 1.0)
    }

    /// Center frequency of bin `k`.
    pub fn bin_frequency(&self, k: usize) -> f64 {
        self.f_min * 2f64.powf(k as f64 / self.bins_per_octave as f64)
    }

    /// Bin index whose center frequency is nearest to `f`.
    pub fn frequency_to_bin(&self, f: f64) -> f64 {
        self.bins_per_octave as f64 * (f / self.f_min).log2()
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        if self.f_min <= 0.0 || self.bins_per_octave == 0 || self.n_bins == 0 || self.hop == 0 {
            return Err(Error::InvalidConfig(
                "cqt: f_min, bins_per_octave, n_bins and hop must be positive".into(),
            ));
        }
        let top = self.bin_frequency(self.n_bins - 1);
        if top >= sample_rate as f64 / 2.0 {
            return Err(Error::InvalidConfig(format!(
                "cqt: highest bin {top:.1} Hz exceeds Nyquist {} Hz",
                sample_rate as f64 / 2.0
            )));
        }
        Ok(())
    }
}

/// Everything needed to turn a clip into a network input: CQT settings plus
/// the output image size. Stored in checkpoints so trained models can
/// preprocess new audio consistently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub cqt: CqtConfig,
    pub image_height: usize,
    pub image_width: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            cqt: CqtConfig::default(),
            image_height: 64,
            image_width: 64,
        }
    }
}

/// Constant-Q magnitudes `[n_bins, n_frames]`, rows ordered by ascending
/// center frequency, plus the frame-center times in seconds.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub magnitudes: Tensor<f64>,
    pub frame_times: Vec<f64>,
}

impl Spectrogram {
    pub fn n_bins(&self) -> usize {
        self.magnitudes.shape()[0]
    }

    pub fn n_frames(&self) -> usize {
        self.magnitudes.shape()[1]
    }
}

struct BinKernel {
    len: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

/// Precomputed complex kernels for one (config, sample-rate) pair.
/// Building them costs a few ms; reuse across clips when batching.
pub struct CqtKernels {
    cfg: CqtConfig,
    sample_rate: u32,
    bins: Vec<BinKernel>,
    max_len: usize,
}

fn hann(n: usize, len: usize) -> f64 {
    if len <= 1 {
        return 1.0;
    }
    0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / (len - 1) as f64).cos())
}

impl CqtKernels {
    pub fn new(cfg: &CqtConfig, sample_rate: u32) -> Result<Self> {
        cfg.validate(sample_rate)?;
        let q = cfg.q();
        let mut bins = Vec::with_capacity(cfg.n_bins);
        let mut max_len = 0;
        for k in 0..cfg.n_bins {
            let f_k = cfg.bin_frequency(k);
            let len = (q * sample_rate as f64 / f_k).ceil() as usize;
            max_len = max_len.max(len);
            let mut re = Vec::with_capacity(len);
            let mut im = Vec::with_capacity(len);
            let norm = 1.0 / len as f64;
            for n in 0..len {
                let phase = 2.0 * std::f64::consts::PI * q * n as f64 / len as f64;
                let w = hann(n, len) * norm;
                re.push(w * phase.cos());
                im.push(-(w * phase.sin()));
            }
            bins.push(BinKernel { len, re, im });
        }
        Ok(CqtKernels {
            cfg: cfg.clone(),
            sample_rate,
            bins,
            max_len,
        })
    }

    pub fn config(&self) -> &CqtConfig {
        &self.cfg
    }

    /// Longest kernel (the lowest bin); clips must be at least this long.
    pub fn min_clip_len(&self) -> usize {
        self.max_len
    }

    pub fn transform(&self, clip: &AudioClip) -> Result<Spectrogram> {
        if clip.sample_rate != self.sample_rate {
            return Err(Error::InvalidConfig(format!(
                "cqt kernels built for {} Hz, clip is {} Hz",
                self.sample_rate, clip.sample_rate
            )));
        }
        let len = clip.samples.len();
        if len < self.max_len {
            return Err(Error::ClipTooShort {
                needed: self.max_len,
                got: len,
            });
        }

        // Reflection-pad once so every frame window is a contiguous slice.
        let pad = self.max_len / 2 + 1;
        let mut padded = Vec::with_capacity(len + 2 * pad);
        for i in (1..=pad).rev() {
            padded.push(clip.samples[i.min(len - 1)]);
        }
        padded.extend_from_slice(&clip.samples);
        for i in 0..pad {
            let idx = len as isize - 2 - i as isize;
            padded.push(clip.samples[idx.max(0) as usize]);
        }

        let hop = self.cfg.hop;
        let n_frames = len.div_ceil(hop);
        let k_bins = self.cfg.n_bins;
        let mut mags = Tensor::zeros(&[k_bins, n_frames]);
        let md = mags.data_mut();
        for (k, kernel) in self.bins.iter().enumerate() {
            let half = kernel.len / 2;
            for t in 0..n_frames {
                let center = t * hop;
                let start = pad + center - half;
                let seg = &padded[start..start + kernel.len];
                let mut acc_re = 0.0;
                let mut acc_im = 0.0;
                for ((&x, &kr), &ki) in seg.iter().zip(&kernel.re).zip(&kernel.im) {
                    acc_re += x * kr;
                    acc_im += x * ki;
                }
                md[k * n_frames + t] = (acc_re * acc_re + acc_im * acc_im).sqrt();
            }
        }
        let frame_times = (0..n_frames)
            .map(|t| (t * hop) as f64 / self.sample_rate as f64)
            .collect();
        Ok(Spectrogram {
            magnitudes: mags,
            frame_times,
        })
    }
}

/// One-shot constant-Q transform. Builds kernels ad hoc; use [`CqtKernels`]
/// directly when processing many clips.
pub fn cqt(clip: &AudioClip, cfg: &CqtConfig) -> Result<Spectrogram> {
    CqtKernels::new(cfg, clip.sample_rate)?.transform(clip)
}

/// dB compression relative to the peak, floored at `floor_db`, rescaled to
/// [0, 1]. An all-zero spectrogram maps to all zeros.
pub fn log_compress(spec: &Spectrogram, floor_db: f64) -> Spectrogram {
    let max_mag = spec
        .magnitudes
        .data()
        .iter()
        .fold(0.0f64, |a, &b| a.max(b));
    let mut out = spec.clone();
    if max_mag <= 0.0 || floor_db >= 0.0 {
        out.magnitudes.fill(0.0);
        return out;
    }
    for v in out.magnitudes.data_mut().iter_mut() {
        let db = if *v > 0.0 {
            (20.0 * (*v / max_mag).log10()).max(floor_db)
        } else {
            floor_db
        };
        *v = (db - floor_db) / -floor_db;
    }
    out
}

/// Bilinear-resizes the bin x frame plane to `height x width`, replicates it
/// into 3 identical channels, and standardizes the image to zero mean and
/// unit variance (constant images map to all zeros).
pub fn to_image(spec: &Spectrogram, height: usize, width: usize) -> Result<Tensor<f32>> {
    let plane = resize_bilinear(spec, height, width)?;
    let n = height * width;
    let mean: f64 = plane.iter().sum::<f64>() / n as f64;
    let var: f64 = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let scale = if var < 1e-12 { 0.0 } else { 1.0 / var.sqrt() };
    let mut out = Tensor::zeros(&[3, height, width]);
    let od = out.data_mut();
    for (i, &v) in plane.iter().enumerate() {
        let std = (((v - mean) * scale) as f32).clamp(f32::MIN, f32::MAX);
        od[i] = std;
        od[n + i] = std;
        od[2 * n + i] = std;
    }
    Ok(out)
}

fn resize_bilinear(spec: &Spectrogram, height: usize, width: usize) -> Result<Vec<f64>> {
    let (k, t) = (spec.n_bins(), spec.n_frames());
    if height == 0 || width == 0 {
        return Err(Error::InvalidConfig("image size must be positive".into()));
    }
    let src = spec.magnitudes.data();
    let mut out = vec![0.0f64; height * width];
    for oy in 0..height {
        // Half-pixel-center mapping: identical sizes resolve to the identity.
        let sy = ((oy as f64 + 0.5) * k as f64 / height as f64 - 0.5).clamp(0.0, (k - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(k - 1);
        let wy = sy - y0 as f64;
        for ox in 0..width {
            let sx =
                ((ox as f64 + 0.5) * t as f64 / width as f64 - 0.5).clamp(0.0, (t - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(t - 1);
            let wx = sx - x0 as f64;
            let a = src[y0 * t + x0];
            let b = src[y0 * t + x1];
            let c = src[y1 * t + x0];
            let d = src[y1 * t + x1];
            out[oy * width + ox] =
                a * (1.0 - wy) * (1.0 - wx) + b * (1.0 - wy) * wx + c * wy * (1.0 - wx) + d * wy * wx;
        }
    }
    Ok(out)
}

/// Full preprocessing used by the model: CQT -> dB compression -> image.
pub fn preprocess_clip(
    clip: &AudioClip,
    kernels: &CqtKernels,
    height: usize,
    width: usize,
) -> Result<Tensor<f32>> {
    let spec = kernels.transform(clip)?;
    let compressed = log_compress(&spec, kernels.config().magnitude_floor_db);
    to_image(&compressed, height, width)
}

/// Dumps the [0, 1] plane of a (compressed) spectrogram as a binary PGM,
/// low bins at the bottom row.
pub fn write_pgm(spec: &Spectrogram, path: &std::path::Path) -> Result<()> {
    let (k, t) = (spec.n_bins(), spec.n_frames());
    let mut bytes = format!("P5\n{t} {k}\n255\n").into_bytes();
    for row in (0..k).rev() {
        for col in 0..t {
            let v = spec.magnitudes.data()[row * t + col].clamp(0.0, 1.0);
            bytes.push((v * 255.0).round() as u8);
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
