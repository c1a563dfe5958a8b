use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

use super::grid::ChartGrid;
use crate::error::{Error, Result};
use crate::linalg::{counted_mul, frobenius_sq, inner_re, CMatrix};
use crate::sim::ObservationGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Window {
    #[default]
    None,
    Hamming,
}

impl Window {
    pub fn weights(&self, n: usize) -> Vec<f64> {
        match self {
            Window::None => vec![1.0; n],
            Window::Hamming if n > 1 => (0..n)
                .map(|k| 0.54 - 0.46 * (2.0 * PI * k as f64 / (n - 1) as f64).cos())
                .collect(),
            Window::Hamming => vec![1.0; n],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChartMethod {
    Ls,
    Ista,
    MatchedFilter,
}

impl ChartMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            ChartMethod::Ls => "ls",
            ChartMethod::Ista => "ista",
            ChartMethod::MatchedFilter => "matched-filter",
        }
    }
}

/// Scalar complex multiplications spent computing a chart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OpCount {
    /// Coherent integration plus the LS (or matched-filter) products.
    pub init: u64,
    /// Sum over ISTA iterations of the Gram products.
    pub iterations: u64,
    /// Products spent only on evaluating the final objective.
    pub objective: u64,
}

/// Complex range-angle chart `B` (C_R x C_phi) over a [`ChartGrid`].
#[derive(Debug, Clone)]
pub struct RangeAngleChart {
    pub values: CMatrix,
    pub grid: Arc<ChartGrid>,
    pub method: ChartMethod,
    pub iterations: usize,
    pub converged: bool,
    /// ISTA objective before the first and after every iteration.
    pub objective: Vec<f64>,
    pub ops: OpCount,
}

impl RangeAngleChart {
    pub fn nonzero_count(&self) -> usize {
        self.values.iter().filter(|z| z.norm() > 0.0).count()
    }

    pub fn magnitude_db(&self) -> nalgebra::DMatrix<f64> {
        self.values.map(|z| 20.0 * z.norm().log10())
    }

    fn finish(values: CMatrix, grid: &Arc<ChartGrid>, method: ChartMethod, ops: OpCount) -> Result<Self> {
        if values.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::DegenerateGeometry("chart contains non-finite entries".into()));
        }
        Ok(RangeAngleChart {
            values,
            grid: grid.clone(),
            method,
            iterations: 0,
            converged: true,
            objective: Vec::new(),
            ops,
        })
    }
}

/// `(1/M) sum_m conj(X_m) .* Y_m` with optional per-subcarrier window.
pub fn coherent_integration(obs: &ObservationGrid, window: Window, ops: &mut u64) -> CMatrix {
    let n = obs.waveform.n_subcarriers;
    let i = obs.n_beams();
    *ops += (obs.received.len() * n * i) as u64;
    let mut z = obs.coherent_integration();
    if window != Window::None {
        let w = window.weights(n);
        for (nn, mut row) in z.row_iter_mut().enumerate() {
            row *= Complex64::from(w[nn]);
        }
    }
    z
}

fn check_dims(obs: &ObservationGrid, grid: &ChartGrid) -> Result<()> {
    obs.validate()?;
    if grid.steering.nrows() != obs.waveform.n_subcarriers {
        return Err(Error::config(format!(
            "chart grid built for {} subcarriers, observation has {}",
            grid.steering.nrows(),
            obs.waveform.n_subcarriers
        )));
    }
    if grid.pattern.ncols() != obs.n_beams() {
        return Err(Error::config(format!(
            "chart grid built for {} beams, observation has {}",
            grid.pattern.ncols(),
            obs.n_beams()
        )));
    }
    if (grid.subcarrier_spacing - obs.waveform.subcarrier_spacing).abs() > 1e-9 * grid.subcarrier_spacing {
        return Err(Error::config(
            "chart grid subcarrier spacing differs from the observation",
        ));
    }
    Ok(())
}

/// LS chart from an already integrated `Z`.
pub fn ls_from_integrated(z: &CMatrix, grid: &Arc<ChartGrid>, ops: &mut u64) -> Result<CMatrix> {
    let range = grid.range_operator()?;
    let pattern = grid.pattern_operator()?;
    let compressed = counted_mul(range, z, ops);
    Ok(counted_mul(&compressed, pattern, ops))
}

/// LS chart `(C^H C)^-1 C^H Z G^H (G G^H)^-1`.
pub fn ls_chart(obs: &ObservationGrid, grid: &Arc<ChartGrid>, window: Window) -> Result<RangeAngleChart> {
    check_dims(obs, grid)?;
    let mut ops = 0;
    let z = coherent_integration(obs, window, &mut ops);
    let b = ls_from_integrated(&z, grid, &mut ops)?;
    RangeAngleChart::finish(
        b,
        grid,
        ChartMethod::Ls,
        OpCount {
            init: ops,
            ..Default::default()
        },
    )
}

/// Matched-filter chart `C^H Z G^H` with each cell divided by
/// `|c_p|^2 |g_q|^2`, so an isolated on-grid target keeps its coefficient.
/// Works on any grid, including oversampled ones.
pub fn matched_filter_chart(obs: &ObservationGrid, grid: &Arc<ChartGrid>, window: Window) -> Result<RangeAngleChart> {
    check_dims(obs, grid)?;
    let mut ops = 0;
    let z = coherent_integration(obs, window, &mut ops);
    let compressed = counted_mul(&grid.steering.adjoint(), &z, &mut ops);
    let mut b = counted_mul(&compressed, &grid.pattern.adjoint(), &mut ops);
    let n = obs.waveform.n_subcarriers as f64;
    for q in 0..grid.n_angles() {
        let gq: f64 = grid.pattern.row(q).iter().map(|g| g.norm_sqr()).sum();
        let scale = if gq > 0.0 { 1.0 / (n * gq) } else { 0.0 };
        b.column_mut(q).scale_mut(scale);
    }
    RangeAngleChart::finish(
        b,
        grid,
        ChartMethod::MatchedFilter,
        OpCount {
            init: ops,
            ..Default::default()
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "kebab-case")]
pub enum Lambda {
    /// Fraction of `2 max|C^H Z G^H|`, the smallest weight whose solution is
    /// all zero.
    Relative(f64),
    Absolute(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IstaParams {
    pub lambda: Lambda,
    /// Step factor beta in (0, 1).
    pub beta: f64,
    pub max_iter: usize,
    pub tol: f64,
    #[serde(default)]
    pub window: Window,
}

impl Default for IstaParams {
    fn default() -> Self {
        IstaParams {
            lambda: Lambda::Relative(0.08),
            beta: 0.9,
            max_iter: 200,
            tol: 1e-4,
            window: Window::None,
        }
    }
}

/// Complex soft threshold `(|b| - t)_+ sgn(b)`.
pub fn soft_threshold(b: Complex64, t: f64) -> Complex64 {
    let mag = b.norm();
    if mag <= t {
        Complex64::new(0.0, 0.0)
    } else {
        b * ((mag - t) / mag)
    }
}

/// Sparse chart by ISTA on `|Z - C B G|_F^2 + lambda |B|_1`, started from the
/// LS chart.
pub fn ista_chart(obs: &ObservationGrid, grid: &Arc<ChartGrid>, params: &IstaParams) -> Result<RangeAngleChart> {
    check_dims(obs, grid)?;
    let mut init_ops = 0;
    let z = coherent_integration(obs, params.window, &mut init_ops);
    ista_from_integrated(&z, grid, params, init_ops)
}

pub fn ista_from_integrated(
    z: &CMatrix,
    grid: &Arc<ChartGrid>,
    params: &IstaParams,
    mut init_ops: u64,
) -> Result<RangeAngleChart> {
    if !(params.beta > 0.0 && params.beta < 1.0) {
        return Err(Error::config(format!(
            "ISTA step factor {} outside (0, 1)",
            params.beta
        )));
    }
    let mut b = ls_from_integrated(z, grid, &mut init_ops)?;
    let eta = params.beta / (grid.lambda_max_c * grid.lambda_max_g);
    let mut iter_ops = 0;
    let gram = |m: &CMatrix, ops: &mut u64| {
        let left = counted_mul(&grid.c_gram, m, ops);
        counted_mul(&left, &grid.g_gram, ops)
    };
    // At the LS point C^H C B G G^H equals C^H Z G^H, so the first Gram
    // product doubles as the correlation term K.
    let mut h = gram(&b, &mut iter_ops);
    let k = h.clone();
    let lambda = match params.lambda {
        Lambda::Relative(r) => r * 2.0 * k.iter().map(|v| v.norm()).fold(0.0, f64::max),
        Lambda::Absolute(a) => a,
    };
    if !(lambda >= 0.0) {
        return Err(Error::config("ISTA regularization weight must be >= 0"));
    }
    let z_energy = frobenius_sq(z);
    let objective = |b: &CMatrix, h: &CMatrix| {
        let l1: f64 = b.iter().map(|v| v.norm()).sum();
        z_energy - 2.0 * inner_re(b, &k) + inner_re(b, h) + lambda * l1
    };
    let thr = lambda * eta;
    let mut history = vec![objective(&b, &h)];
    let mut iterations = 0;
    let mut converged = false;
    let mut pending_h = false;
    while iterations < params.max_iter {
        let step = Complex64::from(2.0 * eta);
        let next = b.zip_map(&h.zip_map(&k, |a, c| a - c), |bv, g| soft_threshold(bv - step * g, thr));
        iterations += 1;
        let diff: f64 = next.zip_map(&b, |a, c| a - c).norm();
        let base = b.norm();
        b = next;
        let done = if base > 0.0 {
            diff / base < params.tol
        } else {
            diff == 0.0
        };
        if done || iterations == params.max_iter {
            converged = done;
            pending_h = true;
            break;
        }
        h = gram(&b, &mut iter_ops);
        let f = objective(&b, &h);
        debug_assert!(
            f <= history[history.len() - 1] + 1e-9 * z_energy.max(f.abs()).max(1e-300),
            "ISTA objective increased: {} -> {f}",
            history[history.len() - 1]
        );
        history.push(f);
    }
    let mut obj_ops = 0;
    if pending_h {
        h = gram(&b, &mut obj_ops);
        history.push(objective(&b, &h));
    }
    if !converged {
        log::warn!("ISTA stopped after {iterations} iterations without converging");
    }
    let mut chart = RangeAngleChart::finish(
        b,
        grid,
        ChartMethod::Ista,
        OpCount {
            init: init_ops,
            iterations: iter_ops,
            objective: obj_ops,
        },
    )?;
    chart.iterations = iterations;
    chart.converged = converged;
    chart.objective = history;
    Ok(chart)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OpEstimate {
    pub ls_init: u64,
    pub per_iteration: u64,
    pub iterations_total: u64,
}

/// Closed-form multiplication counts: `M N I + C_R N I + C_R C_phi I` for the
/// LS start and `C_R^2 C_phi + C_R C_phi^2` per ISTA iteration.
pub fn op_count_estimate(n: u64, m: u64, i: u64, c_r: u64, c_phi: u64, n_iter: u64) -> OpEstimate {
    let per = c_r * c_r * c_phi + c_r * c_phi * c_phi;
    OpEstimate {
        ls_init: m * n * i + c_r * n * i + c_r * c_phi * i,
        per_iteration: per,
        iterations_total: per * n_iter,
    }
}
