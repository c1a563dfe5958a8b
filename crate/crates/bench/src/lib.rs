//! Shared fixtures for the benchmarks.

use std::sync::Arc;

use scattermap::chart::{ChartGrid, ChartGridConfig};
use scattermap::pipeline::ScenarioConfig;
use scattermap::sim::{synthesize, ObservationGrid};
use scattermap::Pose;

/// First-pose observation of the corridor-desk preset and its chart grid.
pub fn desk_observation() -> (ObservationGrid, Arc<ChartGrid>, ScenarioConfig) {
    let cfg = ScenarioConfig::preset("corridor-desk").expect("preset exists");
    let scene = cfg.load_scene().expect("inline scene");
    let pose: Pose = cfg.trajectory.poses().expect("valid trajectory")[0];
    let beams = cfg.beams.angles();
    let (obs, _) = synthesize(&scene, &pose, &cfg.waveform, &cfg.arrays, &beams, 1).expect("synthesis");
    let grid = chart_grid(&cfg.chart.grid, &obs, &cfg);
    (obs, grid, cfg)
}

pub fn chart_grid(grid: &ChartGridConfig, obs: &ObservationGrid, cfg: &ScenarioConfig) -> Arc<ChartGrid> {
    Arc::new(
        ChartGrid::from_config(grid, &obs.beam_angles, &obs.waveform, &cfg.arrays, obs.pose.d_ant())
            .expect("well-conditioned grid"),
    )
}
