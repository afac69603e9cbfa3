//! Shapeline: musical-shape classification for piano exercises.
//!
//! The pipeline, end to end:
//!
//! 1. [`synth`] renders labeled pairs of exercise clips — a normal-shape
//!    reference and a shaped query — across 28 tempo/dynamics/timing classes,
//!    and writes them as WAV files with a CSV manifest.
//! 2. [`cqt`] turns each clip into a fixed-size 3-channel constant-Q
//!    spectrogram image.
//! 3. [`model`] is a Siamese residual network over image pairs, built on the
//!    from-scratch layers in [`nn`].
//! 4. [`aca`] provides classic audio-feature baselines (ZCR, MFCC, spectral
//!    statistics) with a multinomial logistic classifier.
//! 5. [`eval`] reproduces the evaluation protocol: stratified training-rate
//!    splits, repeated runs, precision/recall/F1, and cross-corpus
//!    generalization.

pub mod aca;
pub mod cqt;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Parameter, Scalar, Tensor};
