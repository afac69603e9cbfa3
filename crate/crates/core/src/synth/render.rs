//! Additive-synthesis rendering of a score under shape curves.
//!
//! Each note is six harmonics with 1/h rolloff under an ADSR envelope
//! (5 ms / 50 ms / 0.6 sustain / 150 ms release, 30 ms for staccato), plus a
//! short seeded noise burst at the onset standing in for the hammer strike —
//! without it, note density would be invisible to broadband features like
//! ZCR and the spectral centroid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cqt::AudioClip;
use crate::error::{Error, Result};
use crate::synth::score::Score;
use crate::synth::shape::ShapeCurves;

/// Global per-note amplitude before the gain curve; keeps duads with forte
/// gain under the limiter threshold.
pub const DYNAMICS_BASE: f64 = 0.25;

const ATTACK_S: f64 = 0.005;
const DECAY_S: f64 = 0.050;
const SUSTAIN: f64 = 0.6;
const RELEASE_S: f64 = 0.150;
const RELEASE_STACCATO_S: f64 = 0.030;
const N_HARMONICS: usize = 6;
const HAMMER_S: f64 = 0.008;
const HAMMER_AMP: f64 = 0.12;
const HAMMER_TAU_S: f64 = 0.0025;

#[inline]
fn midi_to_hz(pitch: u8) -> f64 {
    440.0 * 2f64.powf((pitch as f64 - 69.0) / 12.0)
}

#[inline]
fn adsr(t: f64, held: f64, release: f64) -> f64 {
    if t < 0.0 {
        0.0
    } else if t < held {
        if t < ATTACK_S {
            t / ATTACK_S
        } else if t < ATTACK_S + DECAY_S {
            1.0 + (SUSTAIN - 1.0) * (t - ATTACK_S) / DECAY_S
        } else {
            SUSTAIN
        }
    } else {
        let level_at_release = if held < ATTACK_S {
            held / ATTACK_S
        } else if held < ATTACK_S + DECAY_S {
            1.0 + (SUSTAIN - 1.0) * (held - ATTACK_S) / DECAY_S
        } else {
            SUSTAIN
        };
        let r = (t - held) / release;
        if r >= 1.0 {
            0.0
        } else {
            level_at_release * (1.0 - r)
        }
    }
}

/// Renders a score into a clip of exactly `duration_s * sample_rate` samples,
/// peak-limited to |x| <= 0.99. Deterministic for identical inputs.
pub fn render(
    score: &Score,
    curves: &ShapeCurves,
    sample_rate: u32,
    duration_s: f64,
) -> Result<AudioClip> {
    if duration_s <= 0.0 {
        return Err(Error::InvalidConfig("render duration must be positive".into()));
    }
    let fs = sample_rate as f64;
    let n = (duration_s * fs).round() as usize;
    let mut buf = vec![0.0f64; n];
    let staccato = score
        .notes
        .first()
        .map(|nt| nt.duration_beats <= 0.25)
        .unwrap_or(false);
    let release = if staccato { RELEASE_STACCATO_S } else { RELEASE_S };
    let harm_norm: f64 = 1.0 / (1..=N_HARMONICS).map(|h| 1.0 / h as f64).sum::<f64>();

    for (idx, note) in score.notes.iter().enumerate() {
        let onset_s = curves.onset_seconds(idx, note.onset_beats);
        if onset_s >= duration_s || onset_s < 0.0 {
            continue;
        }
        let held_s = curves.held_seconds(note.onset_beats, note.duration_beats);
        let amp = DYNAMICS_BASE * curves.gain_at(onset_s / duration_s);
        let f0 = midi_to_hz(note.midi_pitch);
        let start = (onset_s * fs).round() as usize;
        let len = (((held_s + release) * fs).ceil() as usize).min(n - start);

        // Complex-rotation oscillators, one per harmonic.
        let mut osc_re = [0.0f64; N_HARMONICS];
        let mut osc_im = [0.0f64; N_HARMONICS];
        let mut rot_re = [0.0f64; N_HARMONICS];
        let mut rot_im = [0.0f64; N_HARMONICS];
        let mut h_amp = [0.0f64; N_HARMONICS];
        for h in 0..N_HARMONICS {
            let f = f0 * (h + 1) as f64;
            if f < 0.475 * fs {
                let w = 2.0 * std::f64::consts::PI * f / fs;
                osc_re[h] = 1.0;
                osc_im[h] = 0.0;
                rot_re[h] = w.cos();
                rot_im[h] = w.sin();
                h_amp[h] = amp * harm_norm / (h + 1) as f64;
            }
        }
        for i in 0..len {
            let t = i as f64 / fs;
            let env = adsr(t, held_s, release);
            let mut s = 0.0;
            for h in 0..N_HARMONICS {
                if h_amp[h] != 0.0 {
                    s += h_amp[h] * osc_im[h];
                    let re = osc_re[h] * rot_re[h] - osc_im[h] * rot_im[h];
                    let im = osc_re[h] * rot_im[h] + osc_im[h] * rot_re[h];
                    osc_re[h] = re;
                    osc_im[h] = im;
                }
            }
            buf[start + i] += env * s;
        }

        // Hammer transient: short decaying noise, seeded per note.
        let mut hammer_rng =
            ChaCha8Rng::seed_from_u64((idx as u64) << 32 | note.midi_pitch as u64);
        let hammer_len = ((HAMMER_S * fs) as usize).min(n - start);
        for i in 0..hammer_len {
            let t = i as f64 / fs;
            let noise: f64 = hammer_rng.gen_range(-1.0..1.0);
            buf[start + i] += amp * HAMMER_AMP * noise * (-t / HAMMER_TAU_S).exp();
        }
    }

    let peak = buf.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    if peak > 0.99 {
        let scale = 0.99 / peak;
        buf.iter_mut().for_each(|v| *v *= scale);
    }
    AudioClip::new(buf, sample_rate)
}

/// Root-mean-square level of a sample buffer.
pub fn rms(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    (samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64).sqrt()
}
