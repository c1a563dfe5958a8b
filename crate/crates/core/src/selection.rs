//! Single-bounce vs higher-order classification of detections by EM over two
//! pathloss hypotheses, and the measurement selection rule.
//!
//! H0: `rss = beta - 20 log10 d + n`, `n ~ N(0, sigma_h0^2)`
//! H1: `rss = beta' - 10 alpha' log10 d + n`, `n ~ N(0, sigma_h1^2)`

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::chart::Detection;
use crate::error::{Error, Result};

const PRIOR_CLAMP: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathlossModelState {
    pub beta_h0: f64,
    pub beta_h1: f64,
    pub alpha_h1: f64,
    pub sigma_h0: f64,
    pub sigma_h1: f64,
    /// Mixing weight of H0.
    pub prior_h0: f64,
}

impl PathlossModelState {
    /// Start values for a radar whose single-bounce chart amplitude at 1 m is
    /// `amplitude_1m`: the H1 intercept is 6 dB lower and alpha' = 4.
    pub fn from_reference(amplitude_1m: f64) -> Self {
        let beta = 20.0 * amplitude_1m.log10();
        PathlossModelState {
            beta_h0: beta,
            beta_h1: beta - 6.0,
            alpha_h1: 4.0,
            sigma_h0: 2.0,
            sigma_h1: 10.0,
            prior_h0: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_h0 > 0.0 && self.sigma_h1 > 0.0) {
            return Err(Error::config("pathloss sigmas must be positive"));
        }
        if !(0.0..=1.0).contains(&self.prior_h0) {
            return Err(Error::config("H0 prior must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn mean_h0(&self, d: f64) -> f64 {
        self.beta_h0 - 20.0 * d.log10()
    }

    pub fn mean_h1(&self, d: f64) -> f64 {
        self.beta_h1 - 10.0 * self.alpha_h1 * d.log10()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmOptions {
    pub max_iter: usize,
    /// Stop when the log-likelihood gain falls below this.
    pub tol: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            max_iter: 200,
            tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmFit {
    pub state: PathlossModelState,
    /// Posterior probability of H0 per sample.
    pub posteriors: Vec<f64>,
    /// Log-likelihood after each E-step.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    /// The H1 regression was rank deficient and alpha' was held fixed.
    pub alpha_frozen: bool,
}

fn log_normal(x: f64, mean: f64, sigma: f64) -> f64 {
    let z = (x - mean) / sigma;
    -0.5 * z * z - sigma.ln() - 0.5 * (2.0 * PI).ln()
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Posteriors of H0 and total log-likelihood under `s`.
fn e_step(samples: &[(f64, f64)], s: &PathlossModelState) -> (Vec<f64>, f64) {
    let lp0 = s.prior_h0.ln();
    let lp1 = (1.0 - s.prior_h0).ln();
    let mut ll = 0.0;
    let post = samples
        .iter()
        .map(|&(d, rss)| {
            let a = lp0 + log_normal(rss, s.mean_h0(d), s.sigma_h0);
            let b = lp1 + log_normal(rss, s.mean_h1(d), s.sigma_h1);
            let total = log_sum_exp(a, b);
            ll += total;
            (a - total).exp()
        })
        .collect();
    (post, ll)
}

/// Fits the two-hypothesis mixture to `(range_m, rss_db)` samples.
///
/// Sigmas are held at their configured values; beta is refit with slope -20,
/// (beta', alpha') by weighted regression on `-10 log10 d`, and the mixing
/// weight is re-estimated within [1e-3, 1 - 1e-3]. With fewer than two
/// samples the initial state is returned with posteriors equal to its prior.
pub fn em_fit(samples: &[(f64, f64)], init: &PathlossModelState, opts: &EmOptions) -> Result<EmFit> {
    init.validate()?;
    if samples.iter().any(|&(d, r)| !(d > 0.0) || !r.is_finite()) {
        return Err(Error::config("EM samples need positive ranges and finite RSS"));
    }
    if samples.len() < 2 {
        return Ok(EmFit {
            state: *init,
            posteriors: vec![init.prior_h0; samples.len()],
            log_likelihood: Vec::new(),
            iterations: 0,
            alpha_frozen: false,
        });
    }
    let mut state = *init;
    state.prior_h0 = state.prior_h0.clamp(PRIOR_CLAMP, 1.0 - PRIOR_CLAMP);
    let (mut post, mut ll) = e_step(samples, &state);
    let mut history = vec![ll];
    let mut alpha_frozen = false;
    let mut iterations = 0;
    for _ in 0..opts.max_iter {
        iterations += 1;
        let w0: f64 = post.iter().sum();
        let w1: f64 = post.iter().map(|p| 1.0 - p).sum();

        if w0 > 0.0 {
            state.beta_h0 = samples
                .iter()
                .zip(&post)
                .map(|(&(d, r), &p)| p * (r + 20.0 * d.log10()))
                .sum::<f64>()
                / w0;
        }
        if w1 > 0.0 {
            // Weighted LS of rss on u = -10 log10 d.
            let u_mean = samples
                .iter()
                .zip(&post)
                .map(|(&(d, _), &p)| (1.0 - p) * -10.0 * d.log10())
                .sum::<f64>()
                / w1;
            let r_mean = samples
                .iter()
                .zip(&post)
                .map(|(&(_, r), &p)| (1.0 - p) * r)
                .sum::<f64>()
                / w1;
            let (mut suu, mut sur) = (0.0, 0.0);
            for (&(d, r), &p) in samples.iter().zip(&post) {
                let du = -10.0 * d.log10() - u_mean;
                suu += (1.0 - p) * du * du;
                sur += (1.0 - p) * du * (r - r_mean);
            }
            if suu > 1e-12 * w1 {
                state.alpha_h1 = sur / suu;
            } else {
                alpha_frozen = true;
            }
            state.beta_h1 = r_mean - state.alpha_h1 * u_mean;
        }
        state.prior_h0 = (w0 / samples.len() as f64).clamp(PRIOR_CLAMP, 1.0 - PRIOR_CLAMP);

        let (p, l) = e_step(samples, &state);
        debug_assert!(
            l >= ll - 1e-9 * ll.abs().max(1.0),
            "EM log-likelihood decreased: {ll} -> {l}"
        );
        post = p;
        history.push(l);
        let gain = l - ll;
        ll = l;
        if gain.abs() < opts.tol {
            break;
        }
    }
    Ok(EmFit {
        state,
        posteriors: post,
        log_likelihood: history,
        iterations,
        alpha_frozen,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledDetection {
    pub detection: Detection,
    pub posterior_h0: f64,
    pub selected: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionParams {
    pub p_th: f64,
    /// Meters.
    pub d_th: f64,
}

impl Default for SelectionParams {
    fn default() -> Self {
        SelectionParams { p_th: 0.01, d_th: 2.3 }
    }
}

/// Keeps a detection when its H0 posterior reaches `p_th` or it is closer
/// than `d_th`.
pub fn is_selected(posterior_h0: f64, range: f64, params: &SelectionParams) -> bool {
    posterior_h0 >= params.p_th || range <= params.d_th
}

pub fn select(labeled: &[(Detection, f64)], params: &SelectionParams) -> Vec<Detection> {
    labeled
        .iter()
        .filter(|(d, p)| is_selected(*p, d.range, params))
        .map(|(d, _)| *d)
        .collect()
}

/// Recursive selector over a pose sequence: every call refits on all
/// detections seen so far, warm-started from the previous estimate.
#[derive(Debug, Clone)]
pub struct MeasurementSelector {
    pub state: PathlossModelState,
    pub params: SelectionParams,
    pub options: EmOptions,
    history: Vec<(f64, f64)>,
}

impl MeasurementSelector {
    pub fn new(init: PathlossModelState, params: SelectionParams, options: EmOptions) -> Self {
        MeasurementSelector {
            state: init,
            params,
            options,
            history: Vec::new(),
        }
    }

    pub fn process(&mut self, detections: &[Detection]) -> Result<Vec<LabeledDetection>> {
        let start = self.history.len();
        self.history.extend(
            detections
                .iter()
                .filter(|d| d.rss.is_finite())
                .map(|d| (d.range, d.rss)),
        );
        let fit = em_fit(&self.history, &self.state, &self.options)?;
        self.state = fit.state;
        let mut post = fit.posteriors[start..].iter();
        Ok(detections
            .iter()
            .map(|d| {
                // Zero-amplitude detections carry no pathloss information.
                let p = if d.rss.is_finite() { *post.next().unwrap() } else { 0.0 };
                LabeledDetection {
                    detection: *d,
                    posterior_h0: p,
                    selected: is_selected(p, d.range, &self.params),
                }
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn det(range: f64, rss: f64) -> Detection {
        Detection {
            pose_index: 0,
            angle: 0.0,
            range,
            rss,
            amplitude: Complex64::new(1.0, 0.0),
            cell: (0, 0),
        }
    }

    fn init() -> PathlossModelState {
        PathlossModelState {
            beta_h0: -45.0,
            beta_h1: -51.0,
            alpha_h1: 4.0,
            sigma_h0: 2.0,
            sigma_h1: 10.0,
            prior_h0: 0.5,
        }
    }

    #[test]
    fn exact_h0_data_is_recognised() {
        let samples: Vec<_> = (0..40)
            .map(|k| {
                let d = 1.5 + k as f64 * 0.7;
                (d, -40.0 - 20.0 * f64::log10(d))
            })
            .collect();
        let fit = em_fit(&samples, &init(), &EmOptions::default()).unwrap();
        assert!(fit.posteriors.iter().all(|&p| p >= 0.99), "{:?}", fit.posteriors);
        assert!((fit.state.beta_h0 + 40.0).abs() < 1e-6);
    }

    fn two_population(seed: u64, n: usize) -> (Vec<(f64, f64)>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n0 = Normal::new(0.0, 2.0).unwrap();
        let n1 = Normal::new(0.0, 10.0).unwrap();
        let mut samples = Vec::new();
        let mut labels = Vec::new();
        for k in 0..n {
            let d: f64 = rng.random_range(1.5..30.0);
            let h0 = k % 2 == 0;
            let rss = if h0 {
                -40.0 - 20.0 * d.log10() + n0.sample(&mut rng)
            } else {
                -35.0 - 40.0 * d.log10() + n1.sample(&mut rng)
            };
            samples.push((d, rss));
            labels.push(h0);
        }
        (samples, labels)
    }

    #[test]
    fn log_likelihood_is_monotone() {
        let (samples, _) = two_population(3, 300);
        let fit = em_fit(&samples, &init(), &EmOptions::default()).unwrap();
        assert!(fit.iterations > 1);
        for w in fit.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs());
        }
    }

    #[test]
    fn posteriors_are_probabilities() {
        let (samples, _) = two_population(5, 100);
        let fit = em_fit(&samples, &init(), &EmOptions::default()).unwrap();
        for &p in &fit.posteriors {
            assert!((0.0..=1.0).contains(&p));
            assert!((p + (1.0 - p) - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn single_detection_returns_init() {
        let fit = em_fit(&[(5.0, -60.0)], &init(), &EmOptions::default()).unwrap();
        assert_eq!(fit.state, init());
        assert_eq!(fit.posteriors, vec![0.5]);
    }

    #[test]
    fn identical_ranges_freeze_alpha() {
        let samples = vec![(4.0, -50.0), (4.0, -70.0), (4.0, -52.0), (4.0, -65.0)];
        let fit = em_fit(&samples, &init(), &EmOptions::default()).unwrap();
        assert!(fit.alpha_frozen);
        assert_eq!(fit.state.alpha_h1, init().alpha_h1);
    }

    #[test]
    fn bad_samples_rejected() {
        assert!(em_fit(&[(0.0, -50.0), (1.0, -40.0)], &init(), &EmOptions::default()).is_err());
    }

    #[test]
    fn selection_rule_examples() {
        let p = SelectionParams::default();
        assert!(is_selected(0.0, 1.8, &p));
        assert!(!is_selected(0.005, 10.0, &p));
        let all = SelectionParams { p_th: 0.0, ..p };
        assert!(is_selected(0.0, 100.0, &all));
        let kept = select(
            &[
                (det(1.8, -50.0), 0.0),
                (det(10.0, -80.0), 0.005),
                (det(7.0, -60.0), 0.4),
            ],
            &p,
        );
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].range, 1.8);
        assert_eq!(kept[1].range, 7.0);
    }

    #[test]
    fn selector_warm_starts_over_poses() {
        let (samples, _) = two_population(8, 60);
        let mut sel = MeasurementSelector::new(init(), SelectionParams::default(), EmOptions::default());
        for chunk in samples.chunks(6) {
            let dets: Vec<_> = chunk.iter().map(|&(d, r)| det(d, r)).collect();
            let out = sel.process(&dets).unwrap();
            assert_eq!(out.len(), dets.len());
        }
        assert!((sel.state.beta_h0 + 40.0).abs() < 2.0, "{}", sel.state.beta_h0);
    }

    proptest! {
        #[test]
        fn raising_threshold_never_grows_selection(
            posts in proptest::collection::vec(0.0f64..1.0, 1..30),
            ranges in proptest::collection::vec(0.5f64..30.0, 30),
            lo in 0.0f64..1.0,
            extra in 0.0f64..1.0,
        ) {
            let labeled: Vec<_> = posts.iter().zip(&ranges).map(|(&p, &r)| (det(r, -50.0), p)).collect();
            let a = select(&labeled, &SelectionParams { p_th: lo, d_th: 2.3 });
            let b = select(&labeled, &SelectionParams { p_th: (lo + extra).min(1.0), d_th: 2.3 });
            prop_assert!(b.len() <= a.len());
            for d in &b {
                prop_assert!(a.iter().any(|x| x.range == d.range));
            }
        }
    }
}
