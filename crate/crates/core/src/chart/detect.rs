use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::solve::RangeAngleChart;
use crate::geometry::{wrap_angle, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionParams {
    /// Meters of half-path length.
    pub min_sep_range: f64,
    /// Degrees.
    pub min_sep_angle_deg: f64,
    pub max_targets: usize,
    /// Peaks more than this far below the strongest one are discarded, dB.
    pub dyn_range_db: f64,
}

impl Default for DetectionParams {
    fn default() -> Self {
        DetectionParams {
            min_sep_range: 2.3,
            min_sep_angle_deg: 20.0,
            max_targets: 10,
            dyn_range_db: 60.0,
        }
    }
}

/// One chart peak.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub pose_index: usize,
    /// Azimuth in the UE's local frame, radians.
    pub angle: f64,
    /// Distance from the UE center, meters.
    pub range: f64,
    /// `20 log10 |b|`, dB.
    pub rss: f64,
    pub amplitude: Complex64,
    pub cell: (usize, usize),
}

/// `20 log10 |b|`; zero amplitude maps to negative infinity.
pub fn rss_db(amplitude: Complex64) -> f64 {
    let m = amplitude.norm();
    if m > 0.0 {
        20.0 * m.log10()
    } else {
        f64::NEG_INFINITY
    }
}

/// RSS of chart cell `(p, q)`.
pub fn rss_of_cell(chart: &RangeAngleChart, cell: (usize, usize)) -> f64 {
    rss_db(chart.values[cell])
}

/// Greedy strongest-first peak picking.
///
/// Candidates are cells at least as strong as their 8 neighbours (the angle
/// axis wraps on circular grids). Equal magnitudes are ordered by the lower
/// row-major cell index `p * C_phi + q`. A candidate is rejected when an
/// accepted peak lies closer than `min_sep_range` in half-path length and
/// `min_sep_angle` in angle at the same time.
pub fn detect_targets(chart: &RangeAngleChart, params: &DetectionParams, pose: &Pose) -> Vec<Detection> {
    let grid = &chart.grid;
    let (nr, na) = (grid.n_delays(), grid.n_angles());
    let mag = chart.values.map(|z| z.norm());
    let peak = mag.iter().copied().fold(0.0, f64::max);
    if !(peak > 0.0) || params.max_targets == 0 {
        return Vec::new();
    }
    let floor = peak * 10f64.powf(-params.dyn_range_db / 20.0);
    let mut candidates = Vec::new();
    for p in 0..nr {
        for q in 0..na {
            let v = mag[(p, q)];
            if v <= 0.0 || v < floor {
                continue;
            }
            let mut is_max = true;
            'nb: for dp in -1i64..=1 {
                for dq in -1i64..=1 {
                    if dp == 0 && dq == 0 {
                        continue;
                    }
                    let pp = p as i64 + dp;
                    if pp < 0 || pp >= nr as i64 {
                        continue;
                    }
                    let mut qq = q as i64 + dq;
                    if grid.circular {
                        qq = qq.rem_euclid(na as i64);
                    } else if qq < 0 || qq >= na as i64 {
                        continue;
                    }
                    if mag[(pp as usize, qq as usize)] > v {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                candidates.push((p, q));
            }
        }
    }
    candidates.sort_by(|a, b| {
        mag[*b]
            .total_cmp(&mag[*a])
            .then((a.0 * na + a.1).cmp(&(b.0 * na + b.1)))
    });

    let min_angle = params.min_sep_angle_deg.to_radians();
    let mut accepted: Vec<(usize, usize)> = Vec::new();
    let mut out = Vec::new();
    for (p, q) in candidates {
        if out.len() >= params.max_targets {
            break;
        }
        let too_close = accepted.iter().any(|&(ap, aq)| {
            let dr = (grid.half_path(p) - grid.half_path(ap)).abs();
            let da = if grid.circular {
                wrap_angle(grid.angles[q] - grid.angles[aq]).abs()
            } else {
                (grid.angles[q] - grid.angles[aq]).abs()
            };
            dr < params.min_sep_range && da < min_angle
        });
        if too_close {
            continue;
        }
        let local = grid.angles[q];
        let Ok(range) = pose.range_at(grid.delays[p], local + pose.orientation) else {
            continue;
        };
        accepted.push((p, q));
        let amplitude = chart.values[(p, q)];
        out.push(Detection {
            pose_index: pose.index,
            angle: local,
            range,
            rss: rss_db(amplitude),
            amplitude,
            cell: (p, q),
        });
    }
    out
}
