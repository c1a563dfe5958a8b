//! IMM-EKF tracking of scatterer interaction points.
//!
//! Every track runs a bank of EKFs, one per motion model: a random-walk
//! position model for diffuse points (CWNV, state `[x, y]`) and a
//! near-constant-velocity model for specular points (CWNA, state
//! `[x, y, vx, vy]`). Position always occupies the leading two state entries.
//! Measurements are `(global azimuth from the UE, half bistatic path length)`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::assignment;
use crate::chart::Detection;
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Point, Pose};
use crate::linalg::symmetrize;

const DEGENERATE_EPS: f64 = 1e-9;
/// Cost assigned to pairs outside the gate when gating is folded into the
/// assignment.
const FORBIDDEN_COST: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Cwnv,
    Cwna,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionModel {
    pub kind: ModelKind,
    /// Process-noise power spectral density: m²/s for CWNV, m²/s³ for CWNA.
    pub q_c: f64,
}

impl MotionModel {
    pub fn cwnv(q_c: f64) -> Self {
        MotionModel {
            kind: ModelKind::Cwnv,
            q_c,
        }
    }

    pub fn cwna(q_c: f64) -> Self {
        MotionModel {
            kind: ModelKind::Cwna,
            q_c,
        }
    }

    pub fn state_dim(&self) -> usize {
        match self.kind {
            ModelKind::Cwnv => 2,
            ModelKind::Cwna => 4,
        }
    }

    pub fn transition(&self, dt: f64) -> DMatrix<f64> {
        match self.kind {
            ModelKind::Cwnv => DMatrix::identity(2, 2),
            ModelKind::Cwna => {
                let mut f = DMatrix::identity(4, 4);
                f[(0, 2)] = dt;
                f[(1, 3)] = dt;
                f
            }
        }
    }

    pub fn process_noise(&self, dt: f64) -> DMatrix<f64> {
        match self.kind {
            ModelKind::Cwnv => DMatrix::identity(2, 2) * (self.q_c * dt),
            ModelKind::Cwna => {
                let (a, b, c) = (dt.powi(3) / 3.0, dt * dt / 2.0, dt);
                let mut q = DMatrix::zeros(4, 4);
                for k in 0..2 {
                    q[(k, k)] = a;
                    q[(k, k + 2)] = b;
                    q[(k + 2, k)] = b;
                    q[(k + 2, k + 2)] = c;
                }
                q * self.q_c
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub models: Vec<MotionModel>,
    /// Row-stochastic model transition matrix `p[i][j] = P(j at l | i at l-1)`.
    pub transition: Vec<Vec<f64>>,
    pub initial_probabilities: Vec<f64>,
    pub angle_std_deg: f64,
    pub range_std: f64,
    /// Confidence of the association gate ellipse.
    pub gate_probability: f64,
    /// Consecutive coasting steps tolerated before a track is deleted.
    pub max_misses: u32,
    pub init_position_var: f64,
    pub init_velocity_var: f64,
    /// Seconds between consecutive poses.
    pub dt: f64,
    /// When set, a track whose optimal assignment falls outside its gate is
    /// dropped. Otherwise gating is folded into the assignment and such
    /// tracks coast.
    pub drop_on_gate_failure: bool,
    /// Initialize CWNA velocities at a track's second step from the UE motion
    /// projected onto an assumed single-bounce wall point.
    pub init_specular_velocity: bool,
    pub association_covariance: AssociationCovariance,
}

/// Covariance used for the association distance and the gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssociationCovariance {
    /// IMM-combined predicted position covariance only.
    Prior,
    /// Predicted covariance plus the measurement noise mapped to Cartesian
    /// coordinates through the inverse measurement Jacobian.
    PriorPlusMeasurement,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            models: vec![MotionModel::cwnv(1e-6), MotionModel::cwna(0.05)],
            transition: vec![vec![0.95, 0.05], vec![0.05, 0.95]],
            initial_probabilities: vec![0.85, 0.15],
            angle_std_deg: 10.0,
            range_std: 0.2,
            gate_probability: 0.99,
            max_misses: 3,
            init_position_var: 1e4,
            init_velocity_var: 0.5,
            dt: 1.0,
            drop_on_gate_failure: true,
            init_specular_velocity: true,
            association_covariance: AssociationCovariance::PriorPlusMeasurement,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let w = self.models.len();
        if w == 0 {
            return Err(Error::config("tracker needs at least one motion model"));
        }
        if self.transition.len() != w || self.transition.iter().any(|r| r.len() != w) {
            return Err(Error::config(format!(
                "transition matrix must be {w}x{w} to match the model list"
            )));
        }
        for (i, row) in self.transition.iter().enumerate() {
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::config(format!("transition row {i} has entries outside [0, 1]")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::config(format!("transition row {i} sums to {s}, not 1")));
            }
        }
        if self.initial_probabilities.len() != w
            || self.initial_probabilities.iter().any(|&p| !(0.0..=1.0).contains(&p))
            || (self.initial_probabilities.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::config(
                "initial model probabilities must be a distribution over the models",
            ));
        }
        if self.models.iter().any(|m| !(m.q_c >= 0.0) || !m.q_c.is_finite()) {
            return Err(Error::config("process noise densities must be finite and non-negative"));
        }
        if !(self.angle_std_deg > 0.0) || !(self.range_std > 0.0) {
            return Err(Error::config("measurement standard deviations must be positive"));
        }
        if !(self.gate_probability > 0.0 && self.gate_probability < 1.0) {
            return Err(Error::config("gate probability must lie in (0, 1)"));
        }
        if !(self.init_position_var > 0.0) || !(self.init_velocity_var > 0.0) {
            return Err(Error::config("initial variances must be positive"));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::config("dt must be positive"));
        }
        Ok(())
    }

    /// Measurement noise covariance over (angle rad, range m).
    pub fn measurement_noise(&self) -> Matrix2<f64> {
        let sa = self.angle_std_deg.to_radians();
        Matrix2::new(sa * sa, 0.0, 0.0, self.range_std * self.range_std)
    }

    /// Squared Mahalanobis gate: chi-square quantile with 2 degrees of
    /// freedom, which has the closed form `-2 ln(1 - p)`.
    pub fn gate_threshold(&self) -> f64 {
        -2.0 * (1.0 - self.gate_probability).ln()
    }

    pub fn model_index(&self, kind: ModelKind) -> Option<usize> {
        self.models.iter().position(|m| m.kind == kind)
    }

    fn initial_model_state(&self, model: &MotionModel, position: &Point) -> ModelState {
        let n = model.state_dim();
        let mut mean = DVector::zeros(n);
        mean[0] = position.x;
        mean[1] = position.y;
        let mut cov = DMatrix::zeros(n, n);
        for k in 0..n {
            cov[(k, k)] = if k < 2 {
                self.init_position_var
            } else {
                self.init_velocity_var
            };
        }
        ModelState { mean, cov }
    }
}

/// Bistatic measurement: global azimuth of the scatterer seen from the UE and
/// half the TX→scatterer→RX path length.
pub fn measurement_h(scatterer: &Point, pose: &Pose) -> Result<Vector2<f64>> {
    let (_, d_tx, d_rx) = distances(scatterer, pose)?;
    let rel = scatterer - pose.ue_position;
    Ok(Vector2::new(rel.y.atan2(rel.x), 0.5 * (d_tx + d_rx)))
}

/// Exact Jacobian of [`measurement_h`] with respect to the scatterer
/// position. Rows: angle, range.
pub fn measurement_jacobian(scatterer: &Point, pose: &Pose) -> Result<Matrix2<f64>> {
    let (d_ue, d_tx, d_rx) = distances(scatterer, pose)?;
    let rel = scatterer - pose.ue_position;
    let t = scatterer - pose.tx_position;
    let r = scatterer - pose.rx_position;
    let d2 = d_ue * d_ue;
    Ok(Matrix2::new(
        -rel.y / d2,
        rel.x / d2,
        0.5 * (t.x / d_tx + r.x / d_rx),
        0.5 * (t.y / d_tx + r.y / d_rx),
    ))
}

fn distances(scatterer: &Point, pose: &Pose) -> Result<(f64, f64, f64)> {
    let d_ue = (scatterer - pose.ue_position).norm();
    let d_tx = (scatterer - pose.tx_position).norm();
    let d_rx = (scatterer - pose.rx_position).norm();
    if !(d_ue > DEGENERATE_EPS && d_tx > DEGENERATE_EPS && d_rx > DEGENERATE_EPS) {
        return Err(Error::DegenerateGeometry(format!(
            "scatterer ({}, {}) coincides with the UE or an antenna",
            scatterer.x, scatterer.y
        )));
    }
    Ok((d_ue, d_tx, d_rx))
}

/// Global position of a detection: polar (range, local angle) composed with
/// the pose.
pub fn coarse_position(det: &Detection, pose: &Pose) -> Point {
    let az = pose.to_global(det.angle);
    pose.ue_position + Point::new(az.cos(), az.sin()) * det.range
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl ModelState {
    pub fn position(&self) -> Point {
        Point::new(self.mean[0], self.mean[1])
    }

    pub fn position_cov(&self) -> Matrix2<f64> {
        Matrix2::new(self.cov[(0, 0)], self.cov[(0, 1)], self.cov[(1, 0)], self.cov[(1, 1)])
    }

    fn is_finite(&self) -> bool {
        self.mean.iter().chain(self.cov.iter()).all(|v| v.is_finite())
    }
}

/// Linear map between the state spaces of two models: `y = T x + b`,
/// `P_y = T P_x Tᵀ + A`. Entries missing from the source are taken from
/// `template` (a state of the target model) and treated as independent.
pub(crate) fn conversion(from_dim: usize, template: &ModelState) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let to_dim = template.mean.len();
    let shared = from_dim.min(to_dim);
    let mut t = DMatrix::zeros(to_dim, from_dim);
    for k in 0..shared {
        t[(k, k)] = 1.0;
    }
    let mut b = DVector::zeros(to_dim);
    let mut a = DMatrix::zeros(to_dim, to_dim);
    for r in shared..to_dim {
        b[r] = template.mean[r];
        for c in shared..to_dim {
            a[(r, c)] = template.cov[(r, c)];
        }
    }
    (t, b, a)
}

fn convert(state: &ModelState, template: &ModelState) -> ModelState {
    if state.mean.len() == template.mean.len() {
        return state.clone();
    }
    let (t, b, a) = conversion(state.mean.len(), template);
    ModelState {
        mean: &t * &state.mean + b,
        cov: &t * &state.cov * t.transpose() + a,
    }
}

/// Model-conditioned filter states plus model probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ImmState {
    pub models: Vec<ModelState>,
    pub mu: Vec<f64>,
}

/// Prior after mixing and prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct ImmPrediction {
    pub models: Vec<ModelState>,
    /// Predicted model probabilities.
    pub mu: Vec<f64>,
}

impl ImmState {
    /// Fresh state at `position` with the configured initial covariances,
    /// before any measurement.
    pub fn initial(config: &TrackerConfig, position: &Point) -> Self {
        ImmState {
            models: config
                .models
                .iter()
                .map(|m| config.initial_model_state(m, position))
                .collect(),
            mu: config.initial_probabilities.clone(),
        }
    }

    /// IMM-weighted position and position covariance.
    pub fn combined(&self) -> (Point, Matrix2<f64>) {
        combine(&self.models, &self.mu)
    }

    /// Mixing followed by per-model prediction over `dt`.
    pub fn predict(&self, config: &TrackerConfig, dt: f64) -> ImmPrediction {
        let w = self.models.len();
        let mut c = vec![0.0; w];
        for j in 0..w {
            for i in 0..w {
                c[j] += config.transition[i][j] * self.mu[i];
            }
        }
        let total: f64 = c.iter().sum();
        for cj in &mut c {
            *cj /= total;
        }
        let mut models = Vec::with_capacity(w);
        for (j, model) in config.models.iter().enumerate() {
            let own = &self.models[j];
            let mixed = if c[j] > 0.0 {
                let weights: Vec<f64> = (0..w)
                    .map(|i| config.transition[i][j] * self.mu[i] / total / c[j])
                    .collect();
                mix(&self.models, &weights, own)
            } else {
                own.clone()
            };
            let f = model.transition(dt);
            let q = model.process_noise(dt);
            models.push(ModelState {
                mean: &f * &mixed.mean,
                cov: symmetrize(&(&f * &mixed.cov * f.transpose() + q)),
            });
        }
        ImmPrediction { models, mu: c }
    }
}

fn mix(states: &[ModelState], weights: &[f64], template: &ModelState) -> ModelState {
    let n = template.mean.len();
    let converted: Vec<Option<ModelState>> = states
        .iter()
        .zip(weights)
        .map(|(s, &wt)| (wt > 0.0).then(|| convert(s, template)))
        .collect();
    let mut mean = DVector::zeros(n);
    for (s, &wt) in converted.iter().zip(weights) {
        if let Some(s) = s {
            mean += &s.mean * wt;
        }
    }
    let mut cov = DMatrix::zeros(n, n);
    for (s, &wt) in converted.iter().zip(weights) {
        if let Some(s) = s {
            let d = &s.mean - &mean;
            cov += (&s.cov + &d * d.transpose()) * wt;
        }
    }
    ModelState {
        mean,
        cov: symmetrize(&cov),
    }
}

pub(crate) fn combine(models: &[ModelState], mu: &[f64]) -> (Point, Matrix2<f64>) {
    let mut pos = Point::zeros();
    for (m, &w) in models.iter().zip(mu) {
        if w > 0.0 {
            pos += m.position() * w;
        }
    }
    let mut cov = Matrix2::zeros();
    for (m, &w) in models.iter().zip(mu) {
        if w > 0.0 {
            let d = m.position() - pos;
            cov += (m.position_cov() + d * d.transpose()) * w;
        }
    }
    (pos, (cov + cov.transpose()) * 0.5)
}

impl ImmPrediction {
    pub fn combined(&self) -> (Point, Matrix2<f64>) {
        combine(&self.models, &self.mu)
    }

    /// No measurement: the prior becomes the posterior.
    pub fn coast(&self) -> ImmState {
        ImmState {
            models: self.models.clone(),
            mu: self.mu.clone(),
        }
    }

    /// Per-model EKF update with measurement `z = (global angle, half path)`
    /// followed by the model-probability update.
    pub fn update(&self, config: &TrackerConfig, pose: &Pose, z: &Vector2<f64>) -> Result<ImmState> {
        let r = config.measurement_noise();
        let mut models = Vec::with_capacity(self.models.len());
        let mut log_like = Vec::with_capacity(self.models.len());
        for prior in &self.models {
            let (post, ll) = ekf_update(prior, pose, z, &r)?;
            models.push(post);
            log_like.push(ll);
        }
        let max_ll = log_like
            .iter()
            .zip(&self.mu)
            .filter(|(_, &m)| m > 0.0)
            .map(|(l, _)| *l)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut mu: Vec<f64> = self
            .mu
            .iter()
            .zip(&log_like)
            .map(|(&m, &l)| if m > 0.0 { m * (l - max_ll).exp() } else { 0.0 })
            .collect();
        let total: f64 = mu.iter().sum();
        if total > 0.0 && total.is_finite() {
            for m in &mut mu {
                *m /= total;
            }
        } else {
            mu = self.mu.clone();
        }
        Ok(ImmState { models, mu })
    }
}

/// Joseph-form EKF update with innovation angle wrapping. Returns the
/// posterior and the Gaussian log-likelihood of the innovation.
pub fn ekf_update(prior: &ModelState, pose: &Pose, z: &Vector2<f64>, r: &Matrix2<f64>) -> Result<(ModelState, f64)> {
    let n = prior.mean.len();
    let pos = prior.position();
    let predicted = measurement_h(&pos, pose)?;
    let jac = measurement_jacobian(&pos, pose)?;
    let mut h = DMatrix::zeros(2, n);
    for rr in 0..2 {
        for cc in 0..2 {
            h[(rr, cc)] = jac[(rr, cc)];
        }
    }
    let nu = DVector::from_vec(vec![wrap_angle(z[0] - predicted[0]), z[1] - predicted[1]]);
    let r_d = DMatrix::from_column_slice(2, 2, r.as_slice());
    let pht = &prior.cov * h.transpose();
    let s = symmetrize(&(&h * &pht + &r_d));
    let chol = Cholesky::<f64, Dyn>::new(s.clone())
        .ok_or_else(|| Error::DegenerateGeometry("innovation covariance is not positive definite".into()))?;
    let s_inv = chol.inverse();
    let k = &pht * &s_inv;
    let mean = &prior.mean + &k * &nu;
    let i_kh = DMatrix::identity(n, n) - &k * &h;
    let cov = symmetrize(&(&i_kh * &prior.cov * i_kh.transpose() + &k * &r_d * k.transpose()));
    let maha = (nu.transpose() * &s_inv * &nu)[(0, 0)];
    let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    let ll = -0.5 * (maha + log_det + 2.0 * (2.0 * PI).ln());
    Ok((ModelState { mean, cov }, ll))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackEvent {
    Spawn,
    Update,
    Coast,
    Drop,
}

impl TrackEvent {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrackEvent::Spawn => "spawn",
            TrackEvent::Update => "update",
            TrackEvent::Coast => "coast",
            TrackEvent::Drop => "drop",
        }
    }
}

/// Filtered state of a track at one step, kept for smoothing.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackSnapshot {
    pub step: usize,
    pub pose_index: usize,
    /// Time since the previous snapshot of this track.
    pub dt: f64,
    pub state: ImmState,
    pub event: TrackEvent,
    pub detection: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub state: ImmState,
    /// Number of stored steps.
    pub age: usize,
    pub misses: u32,
    pub history: Vec<TrackSnapshot>,
}

impl Track {
    pub fn combined(&self) -> (Point, Matrix2<f64>) {
        self.state.combined()
    }
}

/// One row of the per-step track log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackLogRow {
    pub step: usize,
    pub track_id: u64,
    pub x: f64,
    pub y: f64,
    pub cov_xx: f64,
    pub cov_xy: f64,
    pub cov_yy: f64,
    pub mu_cwnv: f64,
    pub mu_cwna: f64,
    pub matched_detection: Option<usize>,
    pub event: TrackEvent,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepReport {
    pub step: usize,
    /// `(track id, detection index)` pairs that produced an update.
    pub matched: Vec<(u64, usize)>,
    pub spawned: Vec<u64>,
    pub coasted: Vec<u64>,
    pub dropped: Vec<u64>,
    pub rows: Vec<TrackLogRow>,
}

/// Multi-scatterer tracker over a sequence of poses.
#[derive(Debug, Clone)]
pub struct Tracker {
    config: TrackerConfig,
    active: Vec<Track>,
    finished: Vec<Track>,
    next_id: u64,
    step: usize,
    prev_pose: Option<Pose>,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Tracker {
            config,
            active: Vec::new(),
            finished: Vec::new(),
            next_id: 0,
            step: 0,
            prev_pose: None,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn active(&self) -> &[Track] {
        &self.active
    }

    /// Advances all tracks by one pose using the (already selected)
    /// detections of that pose.
    pub fn step(&mut self, pose: &Pose, detections: &[Detection]) -> Result<StepReport> {
        let cfg = self.config.clone();
        let dt = cfg.dt;
        let step = self.step;
        self.step += 1;
        let mut report = StepReport {
            step,
            ..Default::default()
        };

        if cfg.init_specular_velocity {
            if let (Some(prev), Some(cwna)) = (self.prev_pose, cfg.model_index(ModelKind::Cwna)) {
                for track in self.active.iter_mut().filter(|t| t.age == 1) {
                    init_specular_velocity(track, cwna, &prev, pose, dt);
                }
            }
        }

        let predictions: Vec<ImmPrediction> = self.active.iter().map(|t| t.state.predict(&cfg, dt)).collect();
        for (t, p) in self.active.iter().zip(&predictions) {
            if p.models.iter().any(|m| !m.is_finite()) {
                return Err(Error::NonFiniteCovariance { track_id: t.id });
            }
        }
        let coarse: Vec<Point> = detections.iter().map(|d| coarse_position(d, pose)).collect();

        let gate = cfg.gate_threshold();
        let n_t = self.active.len();
        let n_d = detections.len();
        let mut dist2 = DMatrix::from_element(n_t, n_d, f64::INFINITY);
        for (ti, p) in predictions.iter().enumerate() {
            let (mean, mut cov) = p.combined();
            if cfg.association_covariance == AssociationCovariance::PriorPlusMeasurement {
                if let Some(jinv) = measurement_jacobian(&mean, pose).ok().and_then(|j| j.try_inverse()) {
                    cov += jinv * cfg.measurement_noise() * jinv.transpose();
                }
            }
            let inv = spd_inverse_2x2(&cov);
            for (di, c) in coarse.iter().enumerate() {
                let d = c - mean;
                dist2[(ti, di)] = (d.transpose() * inv * d)[(0, 0)].max(0.0);
            }
        }
        let cost = dist2.map(|d2| {
            if cfg.drop_on_gate_failure || d2 <= gate {
                d2.sqrt()
            } else {
                FORBIDDEN_COST
            }
        });
        let assigned = assignment::solve(&cost);

        let mut det_used = vec![false; n_d];
        let mut survivors = Vec::with_capacity(n_t);
        let old_tracks = std::mem::take(&mut self.active);
        for ((ti, mut track), pred) in old_tracks.into_iter().enumerate().zip(predictions) {
            let gated = assigned[ti].filter(|&di| dist2[(ti, di)] <= gate);
            let rejected = assigned[ti].is_some() && gated.is_none();
            if let Some(di) = gated {
                det_used[di] = true;
                let z = measurement_h(&coarse[di], pose)?;
                track.state = pred.update(&cfg, pose, &z)?;
                track.misses = 0;
                report.matched.push((track.id, di));
                push_snapshot(
                    &mut track,
                    step,
                    pose,
                    dt,
                    TrackEvent::Update,
                    Some(di),
                    &cfg,
                    &mut report,
                )?;
                survivors.push(track);
            } else if rejected && cfg.drop_on_gate_failure {
                track.state = pred.coast();
                report.dropped.push(track.id);
                report.rows.push(log_row(&track, step, TrackEvent::Drop, None, &cfg));
                self.finished.push(track);
            } else {
                track.state = pred.coast();
                track.misses += 1;
                if track.misses > cfg.max_misses {
                    report.dropped.push(track.id);
                    report.rows.push(log_row(&track, step, TrackEvent::Drop, None, &cfg));
                    self.finished.push(track);
                } else {
                    report.coasted.push(track.id);
                    push_snapshot(&mut track, step, pose, dt, TrackEvent::Coast, None, &cfg, &mut report)?;
                    survivors.push(track);
                }
            }
        }

        for (di, c) in coarse.iter().enumerate() {
            if det_used[di] {
                continue;
            }
            let id = self.next_id;
            self.next_id += 1;
            let z = measurement_h(c, pose)?;
            let init = ImmState::initial(&cfg, c);
            let prior = ImmPrediction {
                models: init.models,
                mu: init.mu,
            };
            if prior.models.iter().any(|m| !m.is_finite()) {
                return Err(Error::NonFiniteCovariance { track_id: id });
            }
            let mut track = Track {
                id,
                state: prior.update(&cfg, pose, &z)?,
                age: 0,
                misses: 0,
                history: Vec::new(),
            };
            report.spawned.push(id);
            push_snapshot(
                &mut track,
                step,
                pose,
                dt,
                TrackEvent::Spawn,
                Some(di),
                &cfg,
                &mut report,
            )?;
            survivors.push(track);
        }
        self.active = survivors;
        self.prev_pose = Some(*pose);
        Ok(report)
    }

    /// Ends tracking and returns every track ever created, ordered by id.
    pub fn finish(self) -> Vec<Track> {
        let mut all = self.finished;
        all.extend(self.active);
        all.sort_by_key(|t| t.id);
        all
    }
}

#[allow(clippy::too_many_arguments)]
fn push_snapshot(
    track: &mut Track,
    step: usize,
    pose: &Pose,
    dt: f64,
    event: TrackEvent,
    detection: Option<usize>,
    cfg: &TrackerConfig,
    report: &mut StepReport,
) -> Result<()> {
    if track.state.models.iter().any(|m| !m.is_finite()) {
        return Err(Error::NonFiniteCovariance { track_id: track.id });
    }
    track.history.push(TrackSnapshot {
        step,
        pose_index: pose.index,
        dt,
        state: track.state.clone(),
        event,
        detection,
    });
    track.age = track.history.len();
    report.rows.push(log_row(track, step, event, detection, cfg));
    Ok(())
}

fn log_row(
    track: &Track,
    step: usize,
    event: TrackEvent,
    detection: Option<usize>,
    cfg: &TrackerConfig,
) -> TrackLogRow {
    let (p, c) = track.combined();
    let mu_of = |k| cfg.model_index(k).map_or(0.0, |i| track.state.mu[i]);
    TrackLogRow {
        step,
        track_id: track.id,
        x: p.x,
        y: p.y,
        cov_xx: c[(0, 0)],
        cov_xy: c[(0, 1)],
        cov_yy: c[(1, 1)],
        mu_cwnv: mu_of(ModelKind::Cwnv),
        mu_cwna: mu_of(ModelKind::Cwna),
        matched_detection: detection,
        event,
    }
}

/// For a monostatic single-bounce wall reflection the interaction point is
/// the foot of the perpendicular from the UE to the wall, so it moves with the
/// UE velocity component parallel to the wall (normal to the line of sight).
fn init_specular_velocity(track: &mut Track, cwna: usize, prev: &Pose, pose: &Pose, dt: f64) {
    let v_ue = (pose.ue_position - prev.ue_position) / dt;
    let los = track.state.models[cwna].position() - prev.ue_position;
    let n = los.norm();
    if n <= DEGENERATE_EPS {
        return;
    }
    let u = los / n;
    let v = v_ue - u * v_ue.dot(&u);
    let m = &mut track.state.models[cwna];
    m.mean[2] = v.x;
    m.mean[3] = v.y;
    if let Some(last) = track.history.last_mut() {
        last.state.models[cwna].mean[2] = v.x;
        last.state.models[cwna].mean[3] = v.y;
    }
}

/// Inverse of a symmetric 2×2 covariance, regularized when it is singular.
fn spd_inverse_2x2(c: &Matrix2<f64>) -> Matrix2<f64> {
    c.cholesky()
        .map(|ch| ch.inverse())
        .or_else(|| (c + Matrix2::identity() * 1e-9).cholesky().map(|ch| ch.inverse()))
        .unwrap_or_else(Matrix2::zeros)
}

#[cfg(test)]
mod tests;
