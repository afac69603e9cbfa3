//! The Siamese residual network: configuration, assembly, training,
//! serialization and parameter/FLOP accounting.

mod checkpoint;
mod config;
mod counting;
mod sresnn;
mod train;

pub use checkpoint::{load, save, CheckpointMeta, FORMAT_VERSION};
pub use config::{LayerSpec, SResnnConfig, StageConfig};
pub use counting::{count_flops, count_params, FlopCount};
pub use sresnn::{ResidualBlock, SResnn};
pub use train::{fit, predict_pairs, EpochStats, FitConfig, PairSample, TrainReport};
