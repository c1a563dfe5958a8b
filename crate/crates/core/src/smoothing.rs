//! Fixed-interval IMM smoothing of finished tracks.
//!
//! Backward recursion in the style of the Rauch-Tung-Striebel smoother run
//! per model pair, with the backward model transition probabilities
//! approximated from the forward ones and the smoothed density kept as a
//! mixture with one component per model.

use nalgebra::{Cholesky, DMatrix, Dyn, Matrix2};
use rayon::prelude::*;

use crate::geometry::Point;
use crate::linalg::symmetrize;
use crate::tracking::{combine, conversion, ImmState, ModelState, Track, TrackerConfig};

const JITTER: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedStep {
    pub step: usize,
    pub pose_index: usize,
    pub state: ImmState,
    pub position: Point,
    pub position_cov: Matrix2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedTrack {
    pub track_id: u64,
    pub steps: Vec<SmoothedStep>,
    /// Set when a predicted covariance had to be regularized before
    /// inversion.
    pub regularized: bool,
}

impl SmoothedTrack {
    /// The forward-filtered estimates in smoothed-track form, used for
    /// filter-only maps.
    pub fn from_filtered(track: &Track) -> Self {
        SmoothedTrack {
            track_id: track.id,
            steps: track
                .history
                .iter()
                .map(|s| step_from(s.step, s.pose_index, s.state.clone()))
                .collect(),
            regularized: false,
        }
    }
}

fn step_from(step: usize, pose_index: usize, state: ImmState) -> SmoothedStep {
    let (position, position_cov) = combine(&state.models, &state.mu);
    SmoothedStep {
        step,
        pose_index,
        state,
        position,
        position_cov,
    }
}

/// Smooths one track. The last step equals the filtered state exactly.
pub fn imm_smooth(track: &Track, config: &TrackerConfig) -> SmoothedTrack {
    let hist = &track.history;
    let n = hist.len();
    let mut regularized = false;
    let mut out: Vec<ImmState> = Vec::with_capacity(n);
    if n == 0 {
        return SmoothedTrack {
            track_id: track.id,
            steps: Vec::new(),
            regularized,
        };
    }
    out.push(hist[n - 1].state.clone());
    for k in (0..n - 1).rev() {
        let next = out.last().expect("pushed above");
        let s = backward_step(&hist[k].state, next, config, hist[k + 1].dt, &mut regularized);
        out.push(s);
    }
    out.reverse();
    SmoothedTrack {
        track_id: track.id,
        steps: hist
            .iter()
            .zip(out)
            .map(|(h, s)| step_from(h.step, h.pose_index, s))
            .collect(),
        regularized,
    }
}

/// Smooths every track in parallel, preserving order.
pub fn smooth_all(tracks: &[Track], config: &TrackerConfig) -> Vec<SmoothedTrack> {
    tracks.par_iter().map(|t| imm_smooth(t, config)).collect()
}

fn backward_step(
    filt: &ImmState,
    next: &ImmState,
    config: &TrackerConfig,
    dt: f64,
    regularized: &mut bool,
) -> ImmState {
    let w = filt.models.len();
    let p = &config.transition;
    // mixing[i][j] = P(model i at k | model j at k+1, data up to k)
    let mut mixing = vec![vec![0.0; w]; w];
    for j in 0..w {
        let c: f64 = (0..w).map(|i| p[i][j] * filt.mu[i]).sum();
        for i in 0..w {
            mixing[i][j] = if c > 0.0 {
                p[i][j] * filt.mu[i] / c
            } else if i == j {
                1.0
            } else {
                0.0
            };
        }
    }
    let mut mu: Vec<f64> = (0..w)
        .map(|i| (0..w).map(|j| mixing[i][j] * next.mu[j]).sum())
        .collect();
    let total: f64 = mu.iter().sum();
    for m in &mut mu {
        *m /= total;
    }

    let mut models = Vec::with_capacity(w);
    for i in 0..w {
        let xi = &filt.models[i];
        if mu[i] <= 0.0 {
            models.push(xi.clone());
            continue;
        }
        let mut parts: Vec<(f64, ModelState)> = Vec::new();
        for j in 0..w {
            let wt = mixing[i][j] * next.mu[j] / total / mu[i];
            if wt <= 0.0 {
                continue;
            }
            let part = rts_pair(xi, &filt.models[j], &next.models[j], &config.models[j], dt, regularized);
            parts.push((wt, part));
        }
        let norm: f64 = parts.iter().map(|(wt, _)| wt).sum();
        let dim = xi.mean.len();
        let mut mean = nalgebra::DVector::zeros(dim);
        for (wt, s) in &parts {
            mean += &s.mean * (wt / norm);
        }
        let mut cov = DMatrix::zeros(dim, dim);
        for (wt, s) in &parts {
            let d = &s.mean - &mean;
            cov += (&s.cov + &d * d.transpose()) * (wt / norm);
        }
        models.push(ModelState {
            mean,
            cov: symmetrize(&cov),
        });
    }
    ImmState { models, mu }
}

/// RTS step of model-`i` filtered state `xi` against the model-`j` smoothed
/// state at the next step, with the prediction made under model `j`.
fn rts_pair(
    xi: &ModelState,
    template_j: &ModelState,
    smoothed_j: &ModelState,
    model_j: &crate::tracking::MotionModel,
    dt: f64,
    regularized: &mut bool,
) -> ModelState {
    let (t, b, a) = conversion(xi.mean.len(), template_j);
    let f = model_j.transition(dt);
    let q = model_j.process_noise(dt);
    let ft = &f * &t;
    let x_pred = &ft * &xi.mean + &f * b;
    let p_pred = symmetrize(&(&ft * &xi.cov * ft.transpose() + &f * a * f.transpose() + q));
    let cross = &xi.cov * ft.transpose();
    let inv = match Cholesky::<f64, Dyn>::new(p_pred.clone()) {
        Some(ch) => ch.inverse(),
        None => {
            *regularized = true;
            let n = p_pred.nrows();
            Cholesky::<f64, Dyn>::new(&p_pred + DMatrix::identity(n, n) * JITTER)
                .map(|ch| ch.inverse())
                .unwrap_or_else(|| DMatrix::zeros(n, n))
        }
    };
    let gain = cross * inv;
    let mean = &xi.mean + &gain * (&smoothed_j.mean - x_pred);
    let cov = &xi.cov + &gain * (&smoothed_j.cov - p_pred) * gain.transpose();
    ModelState {
        mean,
        cov: symmetrize(&cov),
    }
}
