//! Deterministic pseudo-random finger exercises.
//!
//! Patterns sit on an eighth-note grid (two onsets per beat) so the realized
//! note rate stays inside 100..288 notes per minute for all in-scope tempos,
//! and so swing always has off-beats to act on.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExerciseKind {
    Polyphony,
    Scale,
    Arpeggio,
    Staccato,
}

impl ExerciseKind {
    pub const ALL: [ExerciseKind; 4] = [
        ExerciseKind::Polyphony,
        ExerciseKind::Scale,
        ExerciseKind::Arpeggio,
        ExerciseKind::Staccato,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Note {
    pub midi_pitch: u8,
    pub onset_beats: f64,
    pub duration_beats: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Score {
    pub kind: ExerciseKind,
    pub notes: Vec<Note>,
}

impl Score {
    /// Number of distinct onset positions.
    pub fn n_onsets(&self) -> usize {
        let mut n = 0;
        let mut last = f64::NEG_INFINITY;
        for note in &self.notes {
            if note.onset_beats > last {
                n += 1;
                last = note.onset_beats;
            }
        }
        n
    }
}

/// Major-scale degrees over two octaves; adjacent steps are 1 or 2 semitones.
const SCALE_DEGREES: [i32; 15] = [0, 2, 4, 5, 7, 9, 11, 12, 14, 16, 17, 19, 21, 23, 24];
/// Five-finger position degrees.
const FIVE_FINGER: [i32; 5] = [0, 2, 4, 5, 7];
/// Broken-chord degrees.
const ARPEGGIO: [i32; 4] = [0, 4, 7, 12];

/// Generates a deterministic exercise of at least `n_beats` beats.
///
/// Staccato scores use 0.25-beat note lengths; all other kinds are legato
/// eighths. Polyphony adds a lower voice on some onsets.
pub fn generate_exercise(seed: u64, kind: ExerciseKind, n_beats: f64) -> Score {
    let n_beats = n_beats.max(4.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let root: i32 = rng.gen_range(48..=72);
    let mut notes = Vec::new();
    let n_onsets = (n_beats * 2.0).ceil() as usize + 1;

    match kind {
        ExerciseKind::Scale => {
            let mut idx: i32 = rng.gen_range(0..4);
            let mut dir: i32 = 1;
            for i in 0..n_onsets {
                notes.push(Note {
                    midi_pitch: (root + SCALE_DEGREES[idx as usize]) as u8,
                    onset_beats: i as f64 * 0.5,
                    duration_beats: 0.5,
                });
                if idx + dir < 0 || idx + dir >= SCALE_DEGREES.len() as i32 {
                    dir = -dir;
                }
                idx += dir;
                // Occasionally turn around mid-range, still stepwise.
                if rng.gen_bool(0.15) {
                    dir = -dir;
                }
            }
        }
        ExerciseKind::Arpeggio => {
            for i in 0..n_onsets {
                let phase = i % (2 * ARPEGGIO.len() - 2);
                let deg = if phase < ARPEGGIO.len() {
                    ARPEGGIO[phase]
                } else {
                    ARPEGGIO[2 * ARPEGGIO.len() - 2 - phase]
                };
                notes.push(Note {
                    midi_pitch: (root + deg) as u8,
                    onset_beats: i as f64 * 0.5,
                    duration_beats: 0.5,
                });
            }
        }
        ExerciseKind::Polyphony | ExerciseKind::Staccato => {
            let staccato = kind == ExerciseKind::Staccato;
            let duration = if staccato { 0.25 } else { 0.5 };
            let mut finger: usize = rng.gen_range(0..FIVE_FINGER.len());
            for i in 0..n_onsets {
                let onset = i as f64 * 0.5;
                notes.push(Note {
                    midi_pitch: (root + FIVE_FINGER[finger]) as u8,
                    onset_beats: onset,
                    duration_beats: duration,
                });
                if !staccato && rng.gen_bool(0.25) {
                    // Lower voice a fifth down on the same onset.
                    notes.push(Note {
                        midi_pitch: (root + FIVE_FINGER[finger] - 7) as u8,
                        onset_beats: onset,
                        duration_beats: duration,
                    });
                }
                let step: i32 = rng.gen_range(-2..=2);
                finger = (finger as i32 + step).rem_euclid(FIVE_FINGER.len() as i32) as usize;
            }
        }
    }
    Score { kind, notes }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_gives_identical_scores() {
        for kind in ExerciseKind::ALL {
            let a = generate_exercise(42, kind, 10.0);
            let b = generate_exercise(42, kind, 10.0);
            assert_eq!(a, b);
            let c = generate_exercise(43, kind, 10.0);
            assert_ne!(a, c, "different seeds should differ for {kind:?}");
        }
    }

    #[test]
    fn scales_move_stepwise() {
        for seed in 0..30 {
            let s = generate_exercise(seed, ExerciseKind::Scale, 10.0);
            for w in s.notes.windows(2) {
                let delta = (w[1].midi_pitch as i32 - w[0].midi_pitch as i32).abs();
                assert!(
                    delta == 1 || delta == 2,
                    "seed {seed}: non-stepwise delta {delta}"
                );
            }
        }
    }

    #[test]
    fn staccato_durations_are_quarter_beat() {
        let s = generate_exercise(7, ExerciseKind::Staccato, 10.0);
        assert!(s.notes.iter().all(|n| n.duration_beats == 0.25));
    }

    #[test]
    fn onsets_non_decreasing_durations_positive_pitches_in_range() {
        for seed in 0..20 {
            for kind in ExerciseKind::ALL {
                let s = generate_exercise(seed, kind, 12.0);
                let mut last = -1.0f64;
                for n in &s.notes {
                    assert!(n.onset_beats >= last);
                    last = n.onset_beats;
                    assert!(n.duration_beats > 0.0);
                    assert!((21..=108).contains(&n.midi_pitch), "pitch {}", n.midi_pitch);
                }
            }
        }
    }

    #[test]
    fn pattern_fills_requested_beats() {
        for kind in ExerciseKind::ALL {
            let s = generate_exercise(1, kind, 9.5);
            let last = s.notes.last().unwrap().onset_beats;
            assert!(last >= 9.5, "{kind:?} ends at beat {last}");
        }
    }

    #[test]
    fn onset_grid_is_eighths() {
        for kind in ExerciseKind::ALL {
            let s = generate_exercise(3, kind, 8.0);
            for n in &s.notes {
                let frac = n.onset_beats - n.onset_beats.floor();
                assert!(frac == 0.0 || frac == 0.5);
            }
        }
    }
}
