//! Bistatic sensing geometry in the azimuth plane.
//!
//! The UE reference point sits midway between the TX and RX arrays. Both
//! arrays lie on a line through the UE perpendicular to the boresight
//! direction, so the orientation rotates the antenna baseline rigidly.
//!
//! Units: meters, seconds, radians. Azimuths passed to [`Pose`] methods are
//! global (measured from the +x axis); [`bistatic_range`] takes the angle
//! measured from the TX–RX baseline.

use nalgebra::Vector2;
use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const C0: f64 = 299_792_458.0;

pub type Point = Vector2<f64>;

const COINCIDENT_EPS: f64 = 1e-9;

/// Wraps an angle to (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Distance from the UE center to a point on the delay ellipse whose foci are
/// the TX and RX arrays.
///
/// `angle` is measured from the TX–RX baseline. For `d_ant = 0` the result is
/// `c0 * delay / 2` exactly.
pub fn bistatic_range(delay: f64, angle: f64, d_ant: f64) -> Result<f64> {
    if d_ant < 0.0 || !d_ant.is_finite() {
        return Err(Error::DegenerateGeometry(format!(
            "antenna separation must be non-negative, got {d_ant}"
        )));
    }
    let path = C0 * delay;
    if !(path > d_ant) {
        return Err(Error::InfeasibleDelay {
            path_length: path,
            d_ant,
        });
    }
    if d_ant == 0.0 {
        return Ok(path / 2.0);
    }
    let ecc = d_ant / path * angle.cos();
    Ok((path * path - d_ant * d_ant).sqrt() / (2.0 * (1.0 - ecc * ecc).sqrt()))
}

/// UE sensing pose at one trajectory index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub index: usize,
    pub ue_position: Point,
    /// Boresight azimuth, radians.
    pub orientation: f64,
    pub tx_position: Point,
    pub rx_position: Point,
}

impl Pose {
    /// Builds a pose with the arrays placed `d_ant / 2` either side of the UE
    /// along the direction perpendicular to boresight (TX on the left).
    pub fn new(index: usize, ue_position: Point, orientation: f64, d_ant: f64) -> Self {
        let half = Point::new(-orientation.sin(), orientation.cos()) * (d_ant / 2.0);
        Pose {
            index,
            ue_position,
            orientation,
            tx_position: ue_position + half,
            rx_position: ue_position - half,
        }
    }

    pub fn monostatic(index: usize, ue_position: Point, orientation: f64) -> Self {
        Self::new(index, ue_position, orientation, 0.0)
    }

    /// Builds a pose from explicit antenna positions; the UE must be their
    /// midpoint.
    pub fn with_antennas(
        index: usize,
        ue_position: Point,
        orientation: f64,
        tx_position: Point,
        rx_position: Point,
    ) -> Result<Self> {
        let pose = Pose {
            index,
            ue_position,
            orientation,
            tx_position,
            rx_position,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn validate(&self) -> Result<()> {
        let mid = (self.tx_position + self.rx_position) / 2.0;
        let scale = 1.0 + self.ue_position.norm();
        let finite = [
            self.ue_position.x,
            self.ue_position.y,
            self.orientation,
            self.tx_position.x,
            self.tx_position.y,
            self.rx_position.x,
            self.rx_position.y,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::DegenerateGeometry(format!(
                "pose {} has non-finite fields",
                self.index
            )));
        }
        if (mid - self.ue_position).norm() > 1e-9 * scale {
            return Err(Error::DegenerateGeometry(format!(
                "pose {}: UE position is not the midpoint of the TX and RX arrays",
                self.index
            )));
        }
        Ok(())
    }

    pub fn d_ant(&self) -> f64 {
        (self.rx_position - self.tx_position).norm()
    }

    /// Azimuth of the TX→RX baseline. Falls back to the broadside-normal
    /// direction when the arrays are co-located.
    pub fn baseline_angle(&self) -> f64 {
        let b = self.rx_position - self.tx_position;
        if b.norm() > 0.0 {
            b.y.atan2(b.x)
        } else {
            self.orientation - FRAC_PI_2
        }
    }

    /// Distance from the UE center to the point of the delay ellipse lying in
    /// global direction `azimuth`.
    pub fn range_at(&self, delay: f64, azimuth: f64) -> Result<f64> {
        bistatic_range(delay, azimuth - self.baseline_angle(), self.d_ant())
    }

    pub fn to_local(&self, azimuth: f64) -> f64 {
        wrap_angle(azimuth - self.orientation)
    }

    pub fn to_global(&self, local: f64) -> f64 {
        wrap_angle(local + self.orientation)
    }
}

/// Full propagation geometry of a single path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathGeometry {
    pub delay: f64,
    pub ue_angle: f64,
    pub tx_angle: f64,
    pub rx_angle: f64,
    pub ue_range: f64,
    pub tx_range: f64,
    pub rx_range: f64,
}

/// TX and RX departure/arrival azimuths for a target at (`delay`, `ue_angle`).
pub fn tx_rx_angles(pose: &Pose, delay: f64, ue_angle: f64) -> Result<(f64, f64)> {
    let rho = pose.range_at(delay, ue_angle)?;
    let target = pose.ue_position + Point::new(ue_angle.cos(), ue_angle.sin()) * rho;
    let to_tx = target - pose.tx_position;
    let to_rx = target - pose.rx_position;
    if to_tx.norm() < COINCIDENT_EPS || to_rx.norm() < COINCIDENT_EPS {
        return Err(Error::DegenerateGeometry(
            "target coincides with an antenna position".into(),
        ));
    }
    Ok((to_tx.y.atan2(to_tx.x), to_rx.y.atan2(to_rx.x)))
}

/// Global Cartesian position of a chart cell given in the UE's local frame.
pub fn cell_to_cartesian(pose: &Pose, cell_delay: f64, cell_angle: f64) -> Result<Point> {
    let azimuth = cell_angle + pose.orientation;
    let rho = pose.range_at(cell_delay, azimuth)?;
    Ok(pose.ue_position + Point::new(azimuth.cos(), azimuth.sin()) * rho)
}

/// Forward geometry for a point scatterer.
pub fn path_delay(pose: &Pose, scatterer: &Point) -> Result<PathGeometry> {
    let to_tx = scatterer - pose.tx_position;
    let to_rx = scatterer - pose.rx_position;
    let to_ue = scatterer - pose.ue_position;
    let tx_range = to_tx.norm();
    let rx_range = to_rx.norm();
    if tx_range < COINCIDENT_EPS || rx_range < COINCIDENT_EPS {
        return Err(Error::DegenerateGeometry(format!(
            "scatterer ({}, {}) coincides with an antenna",
            scatterer.x, scatterer.y
        )));
    }
    Ok(PathGeometry {
        delay: (tx_range + rx_range) / C0,
        ue_angle: to_ue.y.atan2(to_ue.x),
        tx_angle: to_tx.y.atan2(to_tx.x),
        rx_angle: to_rx.y.atan2(to_rx.x),
        ue_range: to_ue.norm(),
        tx_range,
        rx_range,
    })
}
