//! Synthetic shaped-performance dataset: exercise scores, the 28-class shape
//! taxonomy, additive-synthesis rendering, WAV I/O and manifest construction.

mod dataset;
mod render;
mod score;
mod shape;
mod wav;

pub use dataset::{build_dataset, DatasetConfig, Manifest, ManifestRow};
pub use render::{render, rms, DYNAMICS_BASE};
pub use score::{generate_exercise, ExerciseKind, Note, Score};
pub use shape::{
    apply_shape, label, label_ids_basic, label_ids_full, label_ids_no_supplementary, label_table,
    DynamicsSpec, ShapeCurves, ShapeLabel, TempoCurve, TempoSpec, TimingSpec, GAIN_F, GAIN_NORMAL,
    GAIN_P, GIVE_TAKE_SHIFT_S, N_LABELS,
};
pub use wav::{read_wav, write_wav};
