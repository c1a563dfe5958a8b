//! Frequency-domain OFDM radar observation synthesis.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use super::array::{ArrayConfig, Constellation, WaveformConfig};
use super::scene::{enumerate_paths, Scene};
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Point, Pose};
use crate::linalg::CMatrix;

/// Received and transmitted symbols of one beam sweep, one `N x I` matrix per
/// OFDM symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationGrid {
    pub received: Vec<CMatrix>,
    pub transmitted: Vec<CMatrix>,
    /// Steering directions in the UE's local frame, radians.
    pub beam_angles: Vec<f64>,
    pub pose: Pose,
    pub waveform: WaveformConfig,
}

impl ObservationGrid {
    pub fn n_beams(&self) -> usize {
        self.beam_angles.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.waveform.n_subcarriers;
        let m = self.waveform.n_symbols;
        let i = self.beam_angles.len();
        if i == 0 {
            return Err(Error::config("observation grid has no beams"));
        }
        if self.received.len() != m || self.transmitted.len() != m {
            return Err(Error::config(format!(
                "expected {m} symbols, got {} received / {} transmitted",
                self.received.len(),
                self.transmitted.len()
            )));
        }
        for mat in self.received.iter().chain(self.transmitted.iter()) {
            if mat.nrows() != n || mat.ncols() != i {
                return Err(Error::config(format!(
                    "symbol matrix is {}x{}, expected {n}x{i}",
                    mat.nrows(),
                    mat.ncols()
                )));
            }
            if mat.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(Error::config("observation contains non-finite samples"));
            }
        }
        if self.beam_angles.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::config("beam angles must be strictly increasing"));
        }
        Ok(())
    }

    /// Coherent integration `(1/M) sum_m conj(X_m) .* Y_m`.
    pub fn coherent_integration(&self) -> CMatrix {
        let (n, i) = (self.waveform.n_subcarriers, self.beam_angles.len());
        let mut z = CMatrix::zeros(n, i);
        for (x, y) in self.transmitted.iter().zip(&self.received) {
            z.zip_apply(&x.zip_map(y, |a, b| a.conj() * b), |acc, v| *acc += v);
        }
        z / Complex64::from(self.received.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthPoint {
    pub pose_index: usize,
    /// Interaction point (order 1) or apparent ghost position (order 2).
    pub position: Point,
    pub order: u8,
    pub rss_db: f64,
    pub delay: f64,
    /// Global azimuth from the UE, radians.
    pub angle: f64,
    pub range: f64,
    pub in_fov: bool,
}

/// Evenly spaced beam directions from `start` to `stop` inclusive.
pub fn beam_sweep(start: f64, stop: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..count)
            .map(|i| start + (stop - start) * i as f64 / (count - 1) as f64)
            .collect(),
    }
}

/// Circular sweep of `count` beams covering the full azimuth, starting at -pi.
pub fn circular_sweep(count: usize) -> Vec<f64> {
    (0..count).map(|i| -PI + 2.0 * PI * i as f64 / count as f64).collect()
}

/// Whether `angle` (local frame) is inside the swept sector widened by half a
/// beam width.
pub fn in_field_of_view(beams: &[f64], angle: f64, half_width: f64) -> bool {
    let (Some(&lo), Some(&hi)) = (beams.first(), beams.last()) else {
        return false;
    };
    let spacing = if beams.len() > 1 {
        (hi - lo) / (beams.len() - 1) as f64
    } else {
        0.0
    };
    if hi - lo + spacing >= 2.0 * PI - 1e-9 {
        return true;
    }
    let a = wrap_angle(angle);
    a >= lo - half_width && a <= hi + half_width
}

fn draw_symbol(rng: &mut ChaCha8Rng, c: Constellation) -> Complex64 {
    match c {
        Constellation::Qpsk => {
            let bits: u8 = rng.random_range(0..4);
            let re = if bits & 1 == 0 { 1.0 } else { -1.0 };
            let im = if bits & 2 == 0 { 1.0 } else { -1.0 };
            Complex64::new(re * FRAC_1_SQRT_2, im * FRAC_1_SQRT_2)
        }
        Constellation::Qam16 => {
            let lv = [-3.0, -1.0, 1.0, 3.0];
            let re = lv[rng.random_range(0..4)];
            let im = lv[rng.random_range(0..4)];
            Complex64::new(re, im) / 10f64.sqrt()
        }
    }
}

/// Per-beam random stream: symbols on even streams, noise on odd ones.
fn beam_rng(seed: u64, beam: usize, noise: bool) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * beam as u64 + noise as u64);
    rng
}

/// Synthesizes one beam sweep at `pose`.
///
/// Each path contributes `gamma_n * g_tx * g_rx * x` with
/// `gamma_n = gain * exp(-j 2 pi tau (f_c + n df))`; noise is circular complex
/// Gaussian with variance `scene.noise_power`.
pub fn synthesize(
    scene: &Scene,
    pose: &Pose,
    waveform: &WaveformConfig,
    arrays: &ArrayConfig,
    beam_angles: &[f64],
    seed: u64,
) -> Result<(ObservationGrid, Vec<TruthPoint>)> {
    waveform.validate()?;
    arrays.validate()?;
    scene.validate()?;
    let n = waveform.n_subcarriers;
    let m = waveform.n_symbols;
    let i_count = beam_angles.len();
    let paths = enumerate_paths(scene, pose, waveform.carrier_frequency);

    // H[n, i] = sum_k gamma_{k,n} g_k(i)
    let mut gammas = CMatrix::zeros(n, paths.len());
    let mut gains = CMatrix::zeros(paths.len(), i_count);
    for (k, p) in paths.iter().enumerate() {
        let tx_local = p.geometry.tx_angle - pose.orientation;
        let rx_local = p.geometry.rx_angle - pose.orientation;
        for nn in 0..n {
            let f = waveform.carrier_frequency + nn as f64 * waveform.subcarrier_spacing;
            gammas[(nn, k)] = p.coefficient(f);
        }
        for (i, &steer) in beam_angles.iter().enumerate() {
            gains[(k, i)] = arrays.path_gain(steer, tx_local, rx_local);
        }
    }
    let channel = &gammas * &gains;

    let mut transmitted: Vec<CMatrix> = (0..m).map(|_| CMatrix::zeros(n, i_count)).collect();
    let mut received: Vec<CMatrix> = (0..m).map(|_| CMatrix::zeros(n, i_count)).collect();
    let sigma = (scene.noise_power / 2.0).sqrt();
    for i in 0..i_count {
        let mut sym_rng = beam_rng(seed, i, false);
        let mut noise_rng = beam_rng(seed, i, true);
        for mm in 0..m {
            for nn in 0..n {
                let x = draw_symbol(&mut sym_rng, waveform.constellation);
                let mut y = channel[(nn, i)] * x;
                if sigma > 0.0 {
                    let re: f64 = noise_rng.sample(StandardNormal);
                    let im: f64 = noise_rng.sample(StandardNormal);
                    y += Complex64::new(re, im) * sigma;
                }
                transmitted[mm][(nn, i)] = x;
                received[mm][(nn, i)] = y;
            }
        }
    }

    let half_width = arrays.beamwidth_3db / 2.0;
    let truth = paths
        .iter()
        .map(|p| TruthPoint {
            pose_index: pose.index,
            position: p.position,
            order: p.order,
            rss_db: p.rss_db(),
            delay: p.geometry.delay,
            angle: p.geometry.ue_angle,
            range: p.geometry.ue_range,
            in_fov: in_field_of_view(beam_angles, pose.to_local(p.geometry.ue_angle), half_width),
        })
        .collect();

    Ok((
        ObservationGrid {
            received,
            transmitted,
            beam_angles: beam_angles.to_vec(),
            pose: *pose,
            waveform: *waveform,
        },
        truth,
    ))
}
