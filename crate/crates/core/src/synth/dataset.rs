//! Dataset construction: one normal-shape reference plus one clip per
//! requested label for every generated piece, indexed by a CSV manifest.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::render::render;
use crate::synth::score::{generate_exercise, ExerciseKind};
use crate::synth::shape::{apply_shape, label};
use crate::synth::wav::write_wav;

/// One manifest row: a query clip paired with its normal-shape reference.
/// Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub clip_path: String,
    pub reference_path: String,
    pub label_id: usize,
    pub label_name: String,
    pub piece_id: usize,
    pub corpus: String,
    pub duration_s: f64,
    pub sample_rate: u32,
}

/// Dataset index. `base_dir` is where the manifest lives; relative paths
/// resolve against it.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
    pub base_dir: PathBuf,
}

const HEADER: &str = "clip_path,reference_path,label_id,label_name,piece_id,corpus,duration_s,sample_rate";

impl Manifest {
    pub fn clip_abs(&self, row: &ManifestRow) -> PathBuf {
        self.base_dir.join(&row.clip_path)
    }

    pub fn reference_abs(&self, row: &ManifestRow) -> PathBuf {
        self.base_dir.join(&row.reference_path)
    }

    pub fn label_ids(&self) -> BTreeSet<usize> {
        self.rows.iter().map(|r| r.label_id).collect()
    }

    /// Serializes as CSV with a fixed header, UTF-8, LF line endings.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::from(HEADER);
        out.push('\n');
        for r in &self.rows {
            for field in [&r.clip_path, &r.reference_path, &r.label_name, &r.corpus] {
                if field.contains([',', '"', '\n']) {
                    return Err(Error::InvalidConfig(format!(
                        "manifest field contains a reserved character: {field}"
                    )));
                }
            }
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.clip_path,
                r.reference_path,
                r.label_id,
                r.label_name,
                r.piece_id,
                r.corpus,
                r.duration_s,
                r.sample_rate
            ));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base_dir = path
            .parent()
            .map(|p| p.to_path_buf())
            .unwrap_or_else(|| PathBuf::from("."));
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == HEADER => {}
            _ => {
                return Err(Error::MalformedManifest {
                    line: 1,
                    reason: "missing or unexpected header".into(),
                })
            }
        }
        let mut rows = Vec::new();
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(Error::MalformedManifest {
                    line: i + 1,
                    reason: format!("expected 8 fields, got {}", f.len()),
                });
            }
            let parse_err = |what: &str| Error::MalformedManifest {
                line: i + 1,
                reason: format!("bad {what}"),
            };
            rows.push(ManifestRow {
                clip_path: f[0].to_string(),
                reference_path: f[1].to_string(),
                label_id: f[2].parse().map_err(|_| parse_err("label_id"))?,
                label_name: f[3].to_string(),
                piece_id: f[4].parse().map_err(|_| parse_err("piece_id"))?,
                corpus: f[5].to_string(),
                duration_s: f[6].parse().map_err(|_| parse_err("duration_s"))?,
                sample_rate: f[7].parse().map_err(|_| parse_err("sample_rate"))?,
            });
        }
        Ok(Manifest { rows, base_dir })
    }
}

/// Settings for [`build_dataset`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub n_pieces: usize,
    pub label_ids: Vec<usize>,
    pub seed: u64,
    pub sample_rate: u32,
    pub duration_s: f64,
    pub corpus: String,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_pieces: 10,
            label_ids: crate::synth::shape::label_ids_full(),
            seed: 0,
            sample_rate: 16_000,
            duration_s: 7.0,
            corpus: "main".into(),
        }
    }
}

/// Piece-kind mix follows the exercise-book proportions
/// (83 polyphony : 20 scales : 12 arpeggios : 32 staccato).
fn pick_kind(rng: &mut ChaCha8Rng) -> ExerciseKind {
    let roll = rng.gen_range(0u32..147);
    if roll < 83 {
        ExerciseKind::Polyphony
    } else if roll < 103 {
        ExerciseKind::Scale
    } else if roll < 115 {
        ExerciseKind::Arpeggio
    } else {
        ExerciseKind::Staccato
    }
}

/// Renders `n_pieces x |label_ids|` clips plus one normal reference per
/// piece, writes them under `out_dir`, and saves `manifest.csv` there.
/// Deterministic: identical configs produce byte-identical outputs.
pub fn build_dataset(cfg: &DatasetConfig, out_dir: &Path) -> Result<Manifest> {
    if cfg.n_pieces == 0 {
        return Err(Error::InvalidConfig("n_pieces must be >= 1".into()));
    }
    if cfg.label_ids.is_empty() {
        return Err(Error::InvalidConfig("label set must not be empty".into()));
    }
    for &id in &cfg.label_ids {
        label(id)?;
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    // Enough beats to fill the clip at the fastest in-scope tempo.
    let n_beats = cfg.duration_s * 72.0 / 60.0 + 2.0;
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pieces: Vec<(usize, u64, ExerciseKind)> = (0..cfg.n_pieces)
        .map(|piece_id| {
            let piece_seed: u64 = master.gen();
            let kind = pick_kind(&mut master);
            (piece_id, piece_seed, kind)
        })
        .collect();

    // Render jobs: the normal reference once per piece plus every requested
    // non-normal label. All independent, so they parallelize cleanly.
    struct Job {
        piece_id: usize,
        piece_seed: u64,
        kind: ExerciseKind,
        label_id: usize,
    }
    let mut jobs = Vec::new();
    for &(piece_id, piece_seed, kind) in &pieces {
        jobs.push(Job {
            piece_id,
            piece_seed,
            kind,
            label_id: 0,
        });
        for &label_id in &cfg.label_ids {
            if label_id != 0 {
                jobs.push(Job {
                    piece_id,
                    piece_seed,
                    kind,
                    label_id,
                });
            }
        }
    }

    let rel_path = |piece_id: usize, label_id: usize| -> String {
        format!(
            "pieces/piece{piece_id:04}/{label_id:02}_{}.wav",
            label(label_id).unwrap().name
        )
    };

    jobs.par_iter().try_for_each(|job| -> Result<()> {
        let score = generate_exercise(job.piece_seed, job.kind, n_beats);
        let curves = apply_shape(job.label_id, cfg.duration_s)?;
        let clip = render(&score, &curves, cfg.sample_rate, cfg.duration_s)?;
        let path = out_dir.join(rel_path(job.piece_id, job.label_id));
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        write_wav(&clip, &path)
    })?;

    let mut rows = Vec::new();
    for &(piece_id, _, _) in &pieces {
        let reference = rel_path(piece_id, 0);
        for &label_id in &cfg.label_ids {
            rows.push(ManifestRow {
                clip_path: rel_path(piece_id, label_id),
                reference_path: reference.clone(),
                label_id,
                label_name: label(label_id)?.name.to_string(),
                piece_id,
                corpus: cfg.corpus.clone(),
                duration_s: cfg.duration_s,
                sample_rate: cfg.sample_rate,
            });
        }
    }
    let manifest = Manifest {
        rows,
        base_dir: out_dir.to_path_buf(),
    };
    manifest.save(&out_dir.join("manifest.csv"))?;
    Ok(manifest)
}
