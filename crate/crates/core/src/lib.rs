pub mod assignment;
pub mod chart;
pub mod error;
pub mod geometry;
pub mod gospa;
pub mod io;
pub mod linalg;
pub mod map;
pub mod pipeline;
pub mod selection;
pub mod sim;
pub mod smoothing;
pub mod tracking;

pub use chart::{ChartMethod, Detection, RangeAngleChart};
pub use error::{Error, Result};
pub use geometry::{PathGeometry, Point, Pose, C0};
pub use gospa::{gospa, GospaConfig, GospaResult};
pub use map::{extract_map, EnvironmentMap, MapPoint};
pub use pipeline::{run_pipeline, RunManifest, RunOptions, ScenarioConfig, Stage};
pub use selection::{LabeledDetection, MeasurementSelector};
pub use sim::{ObservationGrid, Scene, TruthPoint};
pub use smoothing::{imm_smooth, SmoothedTrack};
pub use tracking::{Track, Tracker, TrackerConfig};
