//! The 28-class musical-shape taxonomy and its tempo/dynamics/timing curves.
//!
//! 1 normal + 8 basic shapes + 16 dynamics x tempo combinations + 3
//! supplementary timing shapes (Swing, Give, Take). Normal is 60 bpm at
//! medium dynamics; every other class changes at least one of mean tempo,
//! tempo slope, mean gain, gain slope, or timing modifier.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Total number of shape classes.
pub const N_LABELS: usize = 28;

/// Forte amplitude multiplier.
pub const GAIN_F: f64 = 1.0;
/// Piano amplitude multiplier (~12 dB below forte).
pub const GAIN_P: f64 = 0.25;
/// Normal-dynamics multiplier.
pub const GAIN_NORMAL: f64 = 0.5;
/// Give/Take onset shift in seconds (Give early, Take late).
pub const GIVE_TAKE_SHIFT_S: f64 = 0.060;
/// Swing: the off-beat eighth of each pair moves to 2/3 of the beat (2:1).
const SWING_OFFBEAT_POS: f64 = 2.0 / 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TempoSpec {
    Constant(f64),
    /// Linear ramp in the beat domain, scaled to span the whole clip.
    Ramp { from: f64, to: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DynamicsSpec {
    Constant(f64),
    /// Linear gain ramp over the whole clip.
    Ramp { from: f64, to: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimingSpec {
    None,
    Swing,
    Give,
    Take,
}

/// One of the 28 shape classes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShapeLabel {
    pub id: usize,
    pub name: &'static str,
    pub tempo: TempoSpec,
    pub dynamics: DynamicsSpec,
    pub timing: TimingSpec,
}

const C60: TempoSpec = TempoSpec::Constant(60.0);
const ADAGIO: TempoSpec = TempoSpec::Constant(72.0);
const LARGO: TempoSpec = TempoSpec::Constant(50.0);
const RIT: TempoSpec = TempoSpec::Ramp { from: 60.0, to: 50.0 };
const ACCEL: TempoSpec = TempoSpec::Ramp { from: 60.0, to: 72.0 };

const DYN_NORMAL: DynamicsSpec = DynamicsSpec::Constant(GAIN_NORMAL);
const DYN_F: DynamicsSpec = DynamicsSpec::Constant(GAIN_F);
const DYN_P: DynamicsSpec = DynamicsSpec::Constant(GAIN_P);
const CRESC: DynamicsSpec = DynamicsSpec::Ramp { from: GAIN_P, to: GAIN_F };
const DECRESC: DynamicsSpec = DynamicsSpec::Ramp { from: GAIN_F, to: GAIN_P };

macro_rules! lbl {
    ($id:expr, $name:expr, $tempo:expr, $dyn:expr, $timing:expr) => {
        ShapeLabel {
            id: $id,
            name: $name,
            tempo: $tempo,
            dynamics: $dyn,
            timing: $timing,
        }
    };
}

static LABELS: [ShapeLabel; N_LABELS] = [
    // Normal reference: 60 bpm, medium dynamics.
    lbl!(0, "Normal", C60, DYN_NORMAL, TimingSpec::None),
    // 8 basic shapes.
    lbl!(1, "Forte", C60, DYN_F, TimingSpec::None),
    lbl!(2, "Piano", C60, DYN_P, TimingSpec::None),
    lbl!(3, "Cresc", C60, CRESC, TimingSpec::None),
    lbl!(4, "Decresc", C60, DECRESC, TimingSpec::None),
    lbl!(5, "Adagio", ADAGIO, DYN_NORMAL, TimingSpec::None),
    lbl!(6, "Largo", LARGO, DYN_NORMAL, TimingSpec::None),
    lbl!(7, "Rit", RIT, DYN_NORMAL, TimingSpec::None),
    lbl!(8, "Accel", ACCEL, DYN_NORMAL, TimingSpec::None),
    // 16 combinations: dynamics pattern x tempo pattern.
    lbl!(9, "f+72bpm", ADAGIO, DYN_F, TimingSpec::None),
    lbl!(10, "f+50bpm", LARGO, DYN_F, TimingSpec::None),
    lbl!(11, "f+rit", RIT, DYN_F, TimingSpec::None),
    lbl!(12, "f+accel", ACCEL, DYN_F, TimingSpec::None),
    lbl!(13, "p+72bpm", ADAGIO, DYN_P, TimingSpec::None),
    lbl!(14, "p+50bpm", LARGO, DYN_P, TimingSpec::None),
    lbl!(15, "p+rit", RIT, DYN_P, TimingSpec::None),
    lbl!(16, "p+accel", ACCEL, DYN_P, TimingSpec::None),
    lbl!(17, "cresc+72bpm", ADAGIO, CRESC, TimingSpec::None),
    lbl!(18, "cresc+50bpm", LARGO, CRESC, TimingSpec::None),
    lbl!(19, "cresc+rit", RIT, CRESC, TimingSpec::None),
    lbl!(20, "cresc+accel", ACCEL, CRESC, TimingSpec::None),
    lbl!(21, "decresc+72bpm", ADAGIO, DECRESC, TimingSpec::None),
    lbl!(22, "decresc+50bpm", LARGO, DECRESC, TimingSpec::None),
    lbl!(23, "decresc+rit", RIT, DECRESC, TimingSpec::None),
    lbl!(24, "decresc+accel", ACCEL, DECRESC, TimingSpec::None),
    // 3 supplementary timing shapes.
    lbl!(25, "Swing", C60, DYN_NORMAL, TimingSpec::Swing),
    lbl!(26, "Give", C60, DYN_NORMAL, TimingSpec::Give),
    lbl!(27, "Take", C60, DYN_NORMAL, TimingSpec::Take),
];

pub fn label_table() -> &'static [ShapeLabel; N_LABELS] {
    &LABELS
}

pub fn label(id: usize) -> Result<&'static ShapeLabel> {
    LABELS.get(id).ok_or(Error::UnknownLabel(id))
}

/// All 28 class ids.
pub fn label_ids_full() -> Vec<usize> {
    (0..N_LABELS).collect()
}

/// Normal plus the 8 basic shapes.
pub fn label_ids_basic() -> Vec<usize> {
    (0..9).collect()
}

/// The 25 classes shared with the generalization corpus
/// (everything except Swing, Give and Take).
pub fn label_ids_no_supplementary() -> Vec<usize> {
    (0..25).collect()
}

/// Beat -> seconds map induced by a tempo specification over one clip.
///
/// Ramps are linear in the beat domain and scaled so the ramp spans exactly
/// the clip: with tempo T(beta) = from + k*beta, elapsed time is
/// t(b) = (60/k) * ln(1 + k*b/from), and the total beat count solves
/// t(B_total) = clip_seconds. Beyond the clip the final tempo holds.
#[derive(Debug, Clone, Copy)]
pub struct TempoCurve {
    spec: TempoSpec,
    clip_seconds: f64,
    total_beats: f64,
}

impl TempoCurve {
    pub fn new(spec: TempoSpec, clip_seconds: f64) -> Self {
        let total_beats = match spec {
            TempoSpec::Constant(bpm) => clip_seconds * bpm / 60.0,
            TempoSpec::Ramp { from, to } => clip_seconds * (to - from) / (60.0 * (to / from).ln()),
        };
        TempoCurve {
            spec,
            clip_seconds,
            total_beats,
        }
    }

    /// Beats elapsed when the clip ends.
    pub fn total_beats(&self) -> f64 {
        self.total_beats
    }

    /// Instantaneous tempo at a beat position.
    pub fn bpm_at_beat(&self, beat: f64) -> f64 {
        match self.spec {
            TempoSpec::Constant(bpm) => bpm,
            TempoSpec::Ramp { from, to } => {
                let frac = (beat / self.total_beats).clamp(0.0, 1.0);
                from + (to - from) * frac
            }
        }
    }

    /// Seconds elapsed at a beat position (closed form).
    pub fn time_at_beat(&self, beat: f64) -> f64 {
        match self.spec {
            TempoSpec::Constant(bpm) => 60.0 * beat / bpm,
            TempoSpec::Ramp { from, to } => {
                if beat <= self.total_beats {
                    let k = (to - from) / self.total_beats;
                    (60.0 / k) * (1.0 + k * beat / from).ln()
                } else {
                    self.clip_seconds + 60.0 * (beat - self.total_beats) / to
                }
            }
        }
    }
}

/// Rendered curves for one (label, clip length) pair.
#[derive(Debug, Clone)]
pub struct ShapeCurves {
    pub label_id: usize,
    pub tempo: TempoCurve,
    pub dynamics: DynamicsSpec,
    pub timing: TimingSpec,
    pub clip_seconds: f64,
}

impl ShapeCurves {
    /// Amplitude multiplier at clip-relative time `u` in [0, 1].
    pub fn gain_at(&self, u: f64) -> f64 {
        match self.dynamics {
            DynamicsSpec::Constant(g) => g,
            DynamicsSpec::Ramp { from, to } => from + (to - from) * u.clamp(0.0, 1.0),
        }
    }

    /// Swing remap in the beat domain: off-beat eighths move to 2/3.
    fn remap_beat(&self, beat: f64) -> f64 {
        if self.timing != TimingSpec::Swing {
            return beat;
        }
        let frac = beat - beat.floor();
        if (frac - 0.5).abs() < 1e-9 {
            beat.floor() + SWING_OFFBEAT_POS
        } else {
            beat
        }
    }

    /// Scheduled onset time in seconds for the note at `note_index` whose
    /// score position is `onset_beats`. Give/Take shift every onset except
    /// the first, which anchors the clip start.
    pub fn onset_seconds(&self, note_index: usize, onset_beats: f64) -> f64 {
        let t = self.tempo.time_at_beat(self.remap_beat(onset_beats));
        match self.timing {
            TimingSpec::Give if note_index > 0 => t - GIVE_TAKE_SHIFT_S,
            TimingSpec::Take if note_index > 0 => t + GIVE_TAKE_SHIFT_S,
            _ => t,
        }
    }

    /// Sounding length in seconds of a note starting at `onset_beats` and
    /// lasting `duration_beats`.
    pub fn held_seconds(&self, onset_beats: f64, duration_beats: f64) -> f64 {
        let start = self.tempo.time_at_beat(self.remap_beat(onset_beats));
        let end = self.tempo.time_at_beat(
            self.remap_beat(onset_beats + duration_beats)
                .max(self.remap_beat(onset_beats) + 0.05),
        );
        (end - start).max(0.01)
    }
}

/// Renders a label's tempo/dynamics/timing specification as concrete curves
/// over a clip of the given length.
pub fn apply_shape(label_id: usize, clip_seconds: f64) -> Result<ShapeCurves> {
    let l = label(label_id)?;
    Ok(ShapeCurves {
        label_id,
        tempo: TempoCurve::new(l.tempo, clip_seconds),
        dynamics: l.dynamics,
        timing: l.timing,
        clip_seconds,
    })
}
