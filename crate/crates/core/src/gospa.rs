//! Generalized optimal sub-pattern assignment (GOSPA) metric with α = 2.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::assignment;
use crate::error::{Error, Result};
use crate::geometry::Point;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GospaConfig {
    /// Cut-off distance, meters.
    pub cutoff: f64,
    pub order: f64,
}

impl Default for GospaConfig {
    fn default() -> Self {
        GospaConfig {
            cutoff: 2.0,
            order: 2.0,
        }
    }
}

impl GospaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cutoff > 0.0) || !self.cutoff.is_finite() {
            return Err(Error::config("GOSPA cutoff must be positive"));
        }
        if !(self.order >= 1.0) || !self.order.is_finite() {
            return Err(Error::config("GOSPA order must be at least 1"));
        }
        Ok(())
    }
}

/// GOSPA value and its decomposition. The three parts are in p-th power
/// units and sum to `total^p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GospaResult {
    pub total: f64,
    pub localization: f64,
    pub missed: f64,
    pub false_alarm: f64,
    pub n_assigned: usize,
    pub n_missed: usize,
    pub n_false: usize,
}

/// GOSPA between a set of estimates and the ground truth.
pub fn gospa(estimates: &[Point], truth: &[Point], config: &GospaConfig) -> GospaResult {
    let c = config.cutoff;
    let p = config.order;
    let cp = c.powf(p);
    let cost = DMatrix::from_fn(truth.len(), estimates.len(), |i, j| {
        (truth[i] - estimates[j]).norm().min(c).powf(p)
    });
    let assigned = assignment::solve(&cost);
    let mut localization = 0.0;
    let mut n_assigned = 0;
    for (i, a) in assigned.iter().enumerate() {
        if let Some(j) = a {
            let d = (truth[i] - estimates[*j]).norm();
            if d < c {
                localization += d.powf(p);
                n_assigned += 1;
            }
        }
    }
    let n_missed = truth.len() - n_assigned;
    let n_false = estimates.len() - n_assigned;
    let missed = cp / 2.0 * n_missed as f64;
    let false_alarm = cp / 2.0 * n_false as f64;
    GospaResult {
        total: (localization + missed + false_alarm).powf(1.0 / p),
        localization,
        missed,
        false_alarm,
        n_assigned,
        n_missed,
        n_false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        let cfg = GospaConfig::default();
        let a = [Point::new(0.0, 0.0), Point::new(3.0, 1.0)];
        assert_eq!(gospa(&a, &a, &cfg).total, 0.0);
        let r = gospa(&[], &[Point::new(1.0, 1.0)], &cfg);
        assert_relative_eq!(r.total, 2f64.sqrt(), epsilon = 1e-12);
        assert_eq!(r.n_missed, 1);
        let r = gospa(&[Point::new(0.5, 0.0)], &[Point::zeros()], &cfg);
        assert_relative_eq!(r.total, 0.5, epsilon = 1e-12);
        assert_eq!((r.n_missed, r.n_false), (0, 0));
    }

    #[test]
    fn far_pair_counts_as_miss_and_false() {
        let cfg = GospaConfig::default();
        let r = gospa(&[Point::new(10.0, 0.0)], &[Point::zeros()], &cfg);
        assert_eq!((r.n_assigned, r.n_missed, r.n_false), (0, 1, 1));
        assert_relative_eq!(r.total, 2.0, epsilon = 1e-12);
    }

    fn points(v: &[(i8, i8)]) -> Vec<Point> {
        v.iter().map(|&(x, y)| Point::new(x as f64, y as f64)).collect()
    }

    proptest! {
        #[test]
        fn swap_exchanges_missed_and_false(
            a in proptest::collection::vec((-5i8..5, -5i8..5), 0..6),
            b in proptest::collection::vec((-5i8..5, -5i8..5), 0..6),
        ) {
            let cfg = GospaConfig::default();
            let (a, b) = (points(&a), points(&b));
            let ab = gospa(&a, &b, &cfg);
            let ba = gospa(&b, &a, &cfg);
            prop_assert!((ab.total - ba.total).abs() < 1e-12);
            prop_assert!((ab.missed - ba.false_alarm).abs() < 1e-12);
            prop_assert!((ab.false_alarm - ba.missed).abs() < 1e-12);
            prop_assert!((ab.localization + ab.missed + ab.false_alarm - ab.total.powi(2)).abs() < 1e-9);
            prop_assert_eq!(gospa(&a, &a, &cfg).total, 0.0);
        }
    }
}
