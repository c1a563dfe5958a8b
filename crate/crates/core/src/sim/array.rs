//! Waveform parameters and TX/RX beam patterns.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, C0};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Constellation {
    /// Unit-modulus QPSK.
    #[default]
    Qpsk,
    /// 16-QAM normalized to unit average power.
    Qam16,
}

impl Constellation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Constellation::Qpsk => "qpsk",
            Constellation::Qam16 => "qam16",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "qpsk" => Some(Constellation::Qpsk),
            "qam16" => Some(Constellation::Qam16),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveformConfig {
    pub n_subcarriers: usize,
    pub n_symbols: usize,
    /// Hz.
    pub subcarrier_spacing: f64,
    /// Hz.
    pub carrier_frequency: f64,
    #[serde(default)]
    pub constellation: Constellation,
}

impl WaveformConfig {
    /// 400 MHz desk-scale waveform.
    pub fn desk() -> Self {
        WaveformConfig {
            n_subcarriers: 512,
            n_symbols: 4,
            subcarrier_spacing: 781.25e3,
            carrier_frequency: 28e9,
            constellation: Constellation::Qpsk,
        }
    }

    /// 5G NR FR2 numerology with 120 kHz spacing.
    pub fn nr_fr2() -> Self {
        WaveformConfig {
            n_subcarriers: 3168,
            n_symbols: 28,
            subcarrier_spacing: 120e3,
            carrier_frequency: 28e9,
            constellation: Constellation::Qpsk,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_subcarriers == 0 || self.n_symbols == 0 {
            return Err(Error::config("waveform needs at least one subcarrier and one symbol"));
        }
        if !(self.subcarrier_spacing > 0.0) || !(self.carrier_frequency > 0.0) {
            return Err(Error::config(
                "subcarrier spacing and carrier frequency must be positive",
            ));
        }
        Ok(())
    }

    pub fn bandwidth(&self) -> f64 {
        self.n_subcarriers as f64 * self.subcarrier_spacing
    }

    pub fn wavelength(&self) -> f64 {
        C0 / self.carrier_frequency
    }

    pub fn subcarrier_wavelength(&self, n: usize) -> f64 {
        C0 / (self.carrier_frequency + n as f64 * self.subcarrier_spacing)
    }

    /// Delay resolution 1/B, seconds.
    pub fn delay_resolution(&self) -> f64 {
        1.0 / self.bandwidth()
    }

    /// Range resolution c0/(2B), meters.
    pub fn range_resolution(&self) -> f64 {
        C0 / (2.0 * self.bandwidth())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatternModel {
    /// Uniform linear arrays with conjugate beamforming weights.
    Ula,
    /// Gaussian main lobe with a given 3 dB width; no sidelobes.
    Parametric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayConfig {
    pub n_tx_elements: usize,
    pub n_rx_elements: usize,
    /// Element spacing, meters.
    pub element_spacing: f64,
    /// Frequency at which the (frequency-flat) ULA pattern is evaluated, Hz.
    pub design_frequency: f64,
    pub pattern_model: PatternModel,
    /// Two-way 3 dB beam width of the parametric model, radians.
    pub beamwidth_3db: f64,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        let f = 28e9;
        ArrayConfig {
            n_tx_elements: 16,
            n_rx_elements: 16,
            element_spacing: C0 / f / 2.0,
            design_frequency: f,
            pattern_model: PatternModel::Parametric,
            beamwidth_3db: 17f64.to_radians(),
        }
    }
}

impl ArrayConfig {
    pub fn validate(&self) -> Result<()> {
        match self.pattern_model {
            PatternModel::Ula => {
                if self.n_tx_elements == 0 || self.n_rx_elements == 0 {
                    return Err(Error::config("ULA needs at least one element per array"));
                }
                if !(self.element_spacing > 0.0) || !(self.design_frequency > 0.0) {
                    return Err(Error::config("ULA spacing and design frequency must be positive"));
                }
            }
            PatternModel::Parametric => {
                if !(self.beamwidth_3db > 0.0) {
                    return Err(Error::config("beam width must be positive"));
                }
            }
        }
        Ok(())
    }

    fn electrical(&self, angle: f64) -> f64 {
        2.0 * PI * self.element_spacing * self.design_frequency / C0 * angle.sin()
    }

    /// Gaussian width parameter s with |g_tx g_rx|^2 = exp(-d^2 / s^2).
    fn gauss_s2(&self) -> f64 {
        self.beamwidth_3db * self.beamwidth_3db / (4.0 * std::f64::consts::LN_2)
    }

    /// TX gain `a_tx(target)^H w_tx` with `w_tx = a_tx(steer)`.
    pub fn tx_gain(&self, steer: f64, target: f64) -> Complex64 {
        match self.pattern_model {
            PatternModel::Ula => {
                let du = self.electrical(steer) - self.electrical(target);
                (0..self.n_tx_elements)
                    .map(|k| Complex64::from_polar(1.0, k as f64 * du))
                    .sum()
            }
            PatternModel::Parametric => {
                let d = wrap_angle(target - steer);
                Complex64::from((-d * d / (4.0 * self.gauss_s2())).exp())
            }
        }
    }

    /// RX gain `w_rx^H a_rx(target)` with `w_rx = a_rx(steer)`.
    pub fn rx_gain(&self, steer: f64, target: f64) -> Complex64 {
        match self.pattern_model {
            PatternModel::Ula => {
                let du = self.electrical(target) - self.electrical(steer);
                (0..self.n_rx_elements)
                    .map(|k| Complex64::from_polar(1.0, k as f64 * du))
                    .sum()
            }
            PatternModel::Parametric => self.tx_gain(steer, target),
        }
    }

    /// Combined gain of a path leaving the TX at `tx_angle` and reaching the RX
    /// from `rx_angle` while both arrays are steered to `steer`.
    pub fn path_gain(&self, steer: f64, tx_angle: f64, rx_angle: f64) -> Complex64 {
        self.tx_gain(steer, tx_angle) * self.rx_gain(steer, rx_angle)
    }

    pub fn peak_gain(&self) -> f64 {
        match self.pattern_model {
            PatternModel::Ula => (self.n_tx_elements * self.n_rx_elements) as f64,
            PatternModel::Parametric => 1.0,
        }
    }
}

/// Combined TX-RX pattern `g(target - steer)` for a target seen at the same
/// angle by both arrays.
pub fn combined_pattern(arrays: &ArrayConfig, steer: f64, target: f64) -> Complex64 {
    arrays.path_gain(steer, target, target)
}
