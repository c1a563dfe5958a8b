use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::C0;
use crate::linalg::{hermitian_condition, power_iteration, CMatrix};
use crate::sim::{combined_pattern, ArrayConfig, WaveformConfig};

/// Gram matrices with a condition number above this are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Angular axis of the chart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AngleAxis {
    /// Reuse the sensing directions as grid angles.
    Beams,
    /// `count` cells covering the full circle starting at -180 deg.
    Circular { count: usize },
    /// `count` cells evenly spaced from `start_deg` to `stop_deg` inclusive.
    Sector {
        start_deg: f64,
        stop_deg: f64,
        count: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartGridConfig {
    /// Largest UE-to-target range covered by the delay axis, meters.
    pub max_range: f64,
    /// Delay cells per resolution cell 1/(N df). Values above 1 make C^H C
    /// singular; use the matched filter on such grids.
    #[serde(default = "one")]
    pub delay_oversampling: usize,
    pub angles: AngleAxis,
}

fn one() -> usize {
    1
}

impl Default for ChartGridConfig {
    fn default() -> Self {
        ChartGridConfig {
            max_range: 30.0,
            delay_oversampling: 1,
            angles: AngleAxis::Beams,
        }
    }
}

/// Delay/angle grid with its dictionary matrices and cached Gram factors.
#[derive(Debug, Clone)]
pub struct ChartGrid {
    /// Cell delays, seconds.
    pub delays: Vec<f64>,
    /// Cell angles in the UE's local frame, radians.
    pub angles: Vec<f64>,
    /// Sensing directions the pattern matrix was built for.
    pub beam_angles: Vec<f64>,
    pub circular: bool,
    pub subcarrier_spacing: f64,
    /// N x C_R range steering matrix C.
    pub steering: CMatrix,
    /// C_phi x I pattern matrix G.
    pub pattern: CMatrix,
    pub c_gram: CMatrix,
    pub g_gram: CMatrix,
    pub c_condition: f64,
    pub g_condition: f64,
    pub lambda_max_c: f64,
    pub lambda_max_g: f64,
    range_op: Option<CMatrix>,
    pattern_op: Option<CMatrix>,
}

fn spans_circle(angles: &[f64]) -> bool {
    if angles.len() < 2 {
        return false;
    }
    let step = angles[1] - angles[0];
    let span = angles[angles.len() - 1] - angles[0] + step;
    (span - 2.0 * PI).abs() < 1e-9
}

impl ChartGrid {
    pub fn new(
        delays: Vec<f64>,
        angles: Vec<f64>,
        beam_angles: &[f64],
        waveform: &WaveformConfig,
        arrays: &ArrayConfig,
    ) -> Result<Self> {
        waveform.validate()?;
        if delays.is_empty() || angles.is_empty() || beam_angles.is_empty() {
            return Err(Error::config("chart grid needs at least one delay, angle and beam"));
        }
        let n = waveform.n_subcarriers;
        let df = waveform.subcarrier_spacing;
        let steering = CMatrix::from_fn(n, delays.len(), |nn, p| {
            Complex64::from_polar(1.0, -2.0 * PI * nn as f64 * df * delays[p])
        });
        let pattern = CMatrix::from_fn(angles.len(), beam_angles.len(), |q, i| {
            combined_pattern(arrays, beam_angles[i], angles[q])
        });
        let c_gram = steering.adjoint() * &steering;
        let g_gram = &pattern * pattern.adjoint();
        let c_condition = hermitian_condition(&c_gram);
        let g_condition = hermitian_condition(&g_gram);
        let lambda_max_c = power_iteration(&c_gram, 1e-6, 10_000);
        let lambda_max_g = power_iteration(&g_gram, 1e-6, 10_000);

        let range_op = (c_condition <= MAX_CONDITION)
            .then(|| c_gram.clone().try_inverse().map(|inv| inv * steering.adjoint()))
            .flatten();
        let pattern_op = (g_condition <= MAX_CONDITION)
            .then(|| g_gram.clone().try_inverse().map(|inv| pattern.adjoint() * inv))
            .flatten();
        let circular = spans_circle(&angles);
        Ok(ChartGrid {
            delays,
            angles,
            beam_angles: beam_angles.to_vec(),
            circular,
            subcarrier_spacing: df,
            steering,
            pattern,
            c_gram,
            g_gram,
            c_condition,
            g_condition,
            lambda_max_c,
            lambda_max_g,
            range_op,
            pattern_op,
        })
    }

    /// Builds the grid described by `cfg` for an array separation `d_ant`.
    ///
    /// Delay cells are spaced by `1/(N df)/oversampling` and start half a cell
    /// above the shortest feasible delay `d_ant / c0`.
    pub fn from_config(
        cfg: &ChartGridConfig,
        beam_angles: &[f64],
        waveform: &WaveformConfig,
        arrays: &ArrayConfig,
        d_ant: f64,
    ) -> Result<Self> {
        if !(cfg.max_range > 0.0) || cfg.delay_oversampling == 0 {
            return Err(Error::config("chart max range and oversampling must be positive"));
        }
        let step = waveform.delay_resolution() / cfg.delay_oversampling as f64;
        let start = d_ant / C0 + step / 2.0;
        let stop = (2.0 * (cfg.max_range * cfg.max_range + d_ant * d_ant / 4.0).sqrt()) / C0;
        let count = ((stop - start) / step).floor() as usize + 1;
        if count > waveform.n_subcarriers * cfg.delay_oversampling {
            return Err(Error::config(format!(
                "max range {} m needs {count} delay cells, more than the unambiguous range allows",
                cfg.max_range
            )));
        }
        let delays = (0..count).map(|p| start + p as f64 * step).collect();
        let angles = match &cfg.angles {
            AngleAxis::Beams => beam_angles.to_vec(),
            AngleAxis::Circular { count } => crate::sim::circular_sweep(*count),
            AngleAxis::Sector {
                start_deg,
                stop_deg,
                count,
            } => crate::sim::beam_sweep(start_deg.to_radians(), stop_deg.to_radians(), *count),
        };
        Self::new(delays, angles, beam_angles, waveform, arrays)
    }

    pub fn n_delays(&self) -> usize {
        self.delays.len()
    }

    pub fn n_angles(&self) -> usize {
        self.angles.len()
    }

    /// Half the bistatic path length of delay cell `p`, meters.
    pub fn half_path(&self, p: usize) -> f64 {
        C0 * self.delays[p] / 2.0
    }

    /// `(C^H C)^-1 C^H`, or an error carrying the condition number.
    pub fn range_operator(&self) -> Result<&CMatrix> {
        self.range_op.as_ref().ok_or(Error::IllConditionedGrid {
            which: "C^H C",
            condition: self.c_condition,
        })
    }

    /// `G^H (G G^H)^-1`, or an error carrying the condition number.
    pub fn pattern_operator(&self) -> Result<&CMatrix> {
        self.pattern_op.as_ref().ok_or(Error::IllConditionedGrid {
            which: "G G^H",
            condition: self.g_condition,
        })
    }
}
