//! Environment maps assembled from smoothed (or filtered) track estimates.

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::geometry::Point;
use crate::linalg::max_eigenvalue_2x2;
use crate::smoothing::SmoothedTrack;

/// Default reliability threshold on the largest eigenvalue of a point's
/// position covariance, m² (0.5 m standard deviation).
pub const DEFAULT_COV_THRESHOLD: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapPoint {
    pub x: f64,
    pub y: f64,
    pub cov_xx: f64,
    pub cov_xy: f64,
    pub cov_yy: f64,
    pub track_id: u64,
    pub step: usize,
}

impl MapPoint {
    pub fn position(&self) -> Point {
        Point::new(self.x, self.y)
    }

    pub fn covariance(&self) -> Matrix2<f64> {
        Matrix2::new(self.cov_xx, self.cov_xy, self.cov_xy, self.cov_yy)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentMap {
    pub points: Vec<MapPoint>,
}

impl EnvironmentMap {
    pub fn at_step(&self, step: usize) -> Vec<Point> {
        self.points
            .iter()
            .filter(|p| p.step == step)
            .map(MapPoint::position)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Keeps every per-step estimate whose position covariance has its largest
/// eigenvalue at most `cov_threshold`. Output is ordered by (step, track).
pub fn extract_map(tracks: &[SmoothedTrack], cov_threshold: f64) -> EnvironmentMap {
    let mut points: Vec<MapPoint> = tracks
        .iter()
        .flat_map(|t| {
            t.steps.iter().filter_map(move |s| {
                (max_eigenvalue_2x2(&s.position_cov) <= cov_threshold).then(|| MapPoint {
                    x: s.position.x,
                    y: s.position.y,
                    cov_xx: s.position_cov[(0, 0)],
                    cov_xy: s.position_cov[(0, 1)],
                    cov_yy: s.position_cov[(1, 1)],
                    track_id: t.track_id,
                    step: s.step,
                })
            })
        })
        .collect();
    points.sort_by_key(|p| (p.step, p.track_id));
    EnvironmentMap { points }
}
