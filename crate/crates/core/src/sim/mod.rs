//! Synthetic scene and OFDM radar observation generator.

pub mod array;
pub mod scene;
pub mod synth;

pub use array::{combined_pattern, ArrayConfig, Constellation, PatternModel, WaveformConfig};
pub use scene::{enumerate_paths, DiffusePoint, PathKind, PropagationPath, Scene, Wall};
pub use synth::{beam_sweep, circular_sweep, synthesize, ObservationGrid, TruthPoint};
