use super::*;
use approx::assert_relative_eq;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::FRAC_PI_2;

fn detection_at(pose: &Pose, p: &Point) -> Detection {
    let rel = p - pose.ue_position;
    Detection {
        pose_index: pose.index,
        angle: pose.to_local(rel.y.atan2(rel.x)),
        range: rel.norm(),
        rss: -60.0,
        amplitude: Complex64::new(1e-3, 0.0),
        cell: (0, 0),
    }
}

fn walking_pose(l: usize) -> Pose {
    Pose::new(l, Point::new(0.5 * l as f64, 0.0), 0.0, 0.06)
}

#[test]
fn monostatic_measurement_example() {
    let pose = Pose::monostatic(0, Point::zeros(), 0.0);
    let z = measurement_h(&Point::new(3.0, 4.0), &pose).unwrap();
    assert_relative_eq!(z[0], 4f64.atan2(3.0), epsilon = 1e-15);
    assert_relative_eq!(z[1], 5.0, epsilon = 1e-15);
}

#[test]
fn on_axis_range_uses_direct_distances() {
    // Baseline along x: TX at -0.3, RX at +0.3; scatterer beyond RX.
    let pose = Pose::new(0, Point::zeros(), FRAC_PI_2, 0.6);
    let z = measurement_h(&Point::new(2.0, 0.0), &pose).unwrap();
    assert_relative_eq!(z[1], (2.3 + 1.7) / 2.0, epsilon = 1e-12);
}

#[test]
fn measurement_agrees_with_forward_delay() {
    let pose = Pose::monostatic(0, Point::new(1.0, 2.0), 0.3);
    let s = Point::new(-4.0, 7.5);
    let g = crate::geometry::path_delay(&pose, &s).unwrap();
    let z = measurement_h(&s, &pose).unwrap();
    assert_relative_eq!(z[1], crate::C0 * g.delay / 2.0, max_relative = 1e-14);
    assert_relative_eq!(z[0], g.ue_angle, epsilon = 1e-14);
}

#[test]
fn degenerate_points_are_rejected() {
    let pose = Pose::new(0, Point::zeros(), 0.0, 0.6);
    assert!(measurement_h(&Point::zeros(), &pose).is_err());
    assert!(measurement_jacobian(&pose.tx_position.clone(), &pose).is_err());
}

#[test]
fn jacobian_due_north() {
    let pose = Pose::monostatic(0, Point::zeros(), 0.0);
    let j = measurement_jacobian(&Point::new(0.0, 4.0), &pose).unwrap();
    assert_relative_eq!(j[(0, 0)], -0.25, epsilon = 1e-15);
    assert_eq!(j[(0, 1)], 0.0);
    // Co-located arrays: range row is the unit vector toward the target.
    assert_relative_eq!(j[(1, 0)], 0.0, epsilon = 1e-15);
    assert_relative_eq!(j[(1, 1)], 1.0, epsilon = 1e-15);
}

#[test]
fn jacobian_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-6;
    for _ in 0..1000 {
        let pose = Pose::new(
            0,
            Point::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)),
            rng.random_range(-PI..PI),
            rng.random_range(0.0..0.6),
        );
        let a = rng.random_range(-PI..PI);
        let s = pose.ue_position + Point::new(a.cos(), a.sin()) * rng.random_range(0.8..30.0);
        let j = measurement_jacobian(&s, &pose).unwrap();
        for c in 0..2 {
            let mut dp = Point::zeros();
            dp[c] = h;
            let zp = measurement_h(&(s + dp), &pose).unwrap();
            let zm = measurement_h(&(s - dp), &pose).unwrap();
            let d_angle = wrap_angle(zp[0] - zm[0]) / (2.0 * h);
            let d_range = (zp[1] - zm[1]) / (2.0 * h);
            for (r, fd) in [(0, d_angle), (1, d_range)] {
                let scale = j.row(r).abs().max();
                assert!(
                    (j[(r, c)] - fd).abs() <= 1e-5 * scale,
                    "entry ({r},{c}): analytic {} vs fd {fd}",
                    j[(r, c)]
                );
            }
        }
    }
}

#[test]
fn coarse_position_frames() {
    let det = |angle: f64, range: f64| Detection {
        pose_index: 0,
        angle,
        range,
        rss: 0.0,
        amplitude: Complex64::new(1.0, 0.0),
        cell: (0, 0),
    };
    let p = coarse_position(&det(0.5, 3.0), &Pose::monostatic(0, Point::zeros(), 0.0));
    assert!((p - Point::new(3.0 * 0.5f64.cos(), 3.0 * 0.5f64.sin())).norm() < 1e-15);
    let p = coarse_position(&det(0.0, 1.5), &Pose::monostatic(0, Point::new(2.0, 0.0), PI));
    assert!((p - Point::new(0.5, 0.0)).norm() < 1e-12);
}

#[test]
fn motion_models_have_consistent_shapes() {
    for m in [MotionModel::cwnv(1e-6), MotionModel::cwna(0.05)] {
        let n = m.state_dim();
        let f = m.transition(0.7);
        let q = m.process_noise(0.7);
        assert_eq!(f.shape(), (n, n));
        assert_eq!(q.shape(), (n, n));
        assert_eq!(q, q.transpose());
        assert!(q.clone().symmetric_eigen().eigenvalues.min() >= -1e-15);
    }
    let q = MotionModel::cwna(2.0).process_noise(1.0);
    assert_relative_eq!(q[(0, 0)], 2.0 / 3.0, epsilon = 1e-15);
    assert_relative_eq!(q[(0, 2)], 1.0, epsilon = 1e-15);
    assert_relative_eq!(q[(2, 2)], 2.0, epsilon = 1e-15);
}

#[test]
fn default_config_is_valid_and_gate_matches_chi_square() {
    let cfg = TrackerConfig::default();
    cfg.validate().unwrap();
    assert_relative_eq!(cfg.gate_threshold(), 9.21034, epsilon = 1e-5);
    let mut bad = cfg.clone();
    bad.transition[0] = vec![0.5, 0.6];
    assert!(bad.validate().is_err());
}

#[test]
fn stationary_scatterer_converges_to_cwnv() {
    let s = Point::new(4.0, 3.0);
    let mut tracker = Tracker::new(TrackerConfig::default()).unwrap();
    for l in 0..20 {
        let pose = walking_pose(l);
        let r = tracker.step(&pose, &[detection_at(&pose, &s)]).unwrap();
        assert_eq!(r.matched.len() + r.spawned.len(), 1);
    }
    let tracks = tracker.finish();
    assert_eq!(tracks.len(), 1);
    let (p, _) = tracks[0].combined();
    assert!((p - s).norm() < 0.01, "error {}", (p - s).norm());
    let cwnv = tracks[0].state.mu[0];
    assert!(cwnv > 0.9, "mu(cwnv) = {cwnv}");
    for snap in &tracks[0].history {
        assert!((snap.state.mu.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn covariances_stay_symmetric_psd() {
    let s = Point::new(2.0, -3.0);
    let mut tracker = Tracker::new(TrackerConfig::default()).unwrap();
    for l in 0..12 {
        let pose = walking_pose(l);
        let dets = if l % 4 == 3 {
            vec![]
        } else {
            vec![detection_at(&pose, &s)]
        };
        tracker.step(&pose, &dets).unwrap();
    }
    for t in tracker.finish() {
        for snap in &t.history {
            for m in &snap.state.models {
                assert_eq!(m.cov, m.cov.transpose());
                assert!(Cholesky::new(m.cov.clone()).is_some());
            }
        }
    }
}

fn two_track_tracker(a: Point, b: Point) -> Tracker {
    let mut tracker = Tracker::new(TrackerConfig::default()).unwrap();
    for l in 0..3 {
        let pose = walking_pose(l);
        tracker
            .step(&pose, &[detection_at(&pose, &a), detection_at(&pose, &b)])
            .unwrap();
    }
    tracker
}

#[test]
fn two_track_assignment_matches_brute_force() {
    let (a, b) = (Point::new(3.0, 4.0), Point::new(-2.0, 6.0));
    let mut tracker = two_track_tracker(a, b);
    let pose = walking_pose(3);
    let dets = [detection_at(&pose, &b), detection_at(&pose, &a)];
    let preds: Vec<_> = tracker
        .active()
        .iter()
        .map(|t| t.state.predict(tracker.config(), 1.0).combined())
        .collect();
    let dist = |t: usize, d: usize| {
        let c = coarse_position(&dets[d], &pose) - preds[t].0;
        (c.transpose() * preds[t].1.try_inverse().unwrap() * c)[(0, 0)].sqrt()
    };
    let identity = dist(0, 0) + dist(1, 1);
    let swapped = dist(0, 1) + dist(1, 0);
    let best = if identity < swapped {
        [(0, 0), (1, 1)]
    } else {
        [(0, 1), (1, 0)]
    };
    let ids: Vec<u64> = tracker.active().iter().map(|t| t.id).collect();
    let report = tracker.step(&pose, &dets).unwrap();
    let mut matched = report.matched.clone();
    matched.sort();
    let mut expected: Vec<(u64, usize)> = best.iter().map(|&(t, d)| (ids[t], d)).collect();
    expected.sort();
    assert_eq!(matched, expected);
    // Track 0 follows `a`, which is now detection 1.
    assert_eq!(expected, vec![(ids[0], 1), (ids[1], 0)]);
    assert!(report.dropped.is_empty() && report.spawned.is_empty());
}

#[test]
fn empty_detections_coast() {
    let (a, b) = (Point::new(3.0, 4.0), Point::new(-2.0, 6.0));
    let mut tracker = two_track_tracker(a, b);
    let before: Vec<Track> = tracker.active().to_vec();
    let report = tracker.step(&walking_pose(3), &[]).unwrap();
    assert_eq!(report.coasted.len(), 2);
    for (old, new) in before.iter().zip(tracker.active()) {
        assert_eq!(new.misses, old.misses + 1);
        let pred = old.state.predict(tracker.config(), 1.0).coast();
        assert_eq!(new.state, pred);
        assert_eq!(new.history.last().unwrap().event, TrackEvent::Coast);
    }
}

#[test]
fn tracks_are_deleted_after_max_misses() {
    let mut tracker = Tracker::new(TrackerConfig::default()).unwrap();
    let pose = walking_pose(0);
    tracker
        .step(&pose, &[detection_at(&pose, &Point::new(3.0, 1.0))])
        .unwrap();
    for l in 1..=3 {
        let r = tracker.step(&walking_pose(l), &[]).unwrap();
        assert_eq!(r.coasted.len(), 1);
    }
    let r = tracker.step(&walking_pose(4), &[]).unwrap();
    assert_eq!(r.dropped.len(), 1);
    assert!(tracker.active().is_empty());
    assert_eq!(tracker.finish()[0].history.len(), 4);
}

#[test]
fn gate_failure_drops_and_respawns() {
    let mut tracker = Tracker::new(TrackerConfig::default()).unwrap();
    let a = Point::new(3.0, 1.0);
    for l in 0..5 {
        let pose = walking_pose(l);
        tracker.step(&pose, &[detection_at(&pose, &a)]).unwrap();
    }
    let pose = walking_pose(5);
    let r = tracker
        .step(&pose, &[detection_at(&pose, &Point::new(-6.0, 8.0))])
        .unwrap();
    assert_eq!(r.dropped.len(), 1);
    assert_eq!(r.spawned.len(), 1);

    let cfg = TrackerConfig {
        drop_on_gate_failure: false,
        ..TrackerConfig::default()
    };
    let mut tracker = Tracker::new(cfg).unwrap();
    for l in 0..5 {
        let pose = walking_pose(l);
        tracker.step(&pose, &[detection_at(&pose, &a)]).unwrap();
    }
    let r = tracker
        .step(&pose, &[detection_at(&pose, &Point::new(-6.0, 8.0))])
        .unwrap();
    assert_eq!(r.coasted.len(), 1);
    assert_eq!(r.spawned.len(), 1);
}

/// Plain EKF with the CWNA model, written independently of the IMM code.
fn standalone_ekf(cfg: &TrackerConfig, zs: &[(Pose, Point)]) -> Vec<(DVector<f64>, DMatrix<f64>)> {
    let m = MotionModel::cwna(0.05);
    let f = m.transition(1.0);
    let q = m.process_noise(1.0);
    let r = cfg.measurement_noise();
    let r = DMatrix::from_row_slice(2, 2, &[r[(0, 0)], 0.0, 0.0, r[(1, 1)]]);
    let mut out = Vec::new();
    let mut x = DVector::zeros(4);
    let mut p = DMatrix::zeros(4, 4);
    for (k, (pose, c)) in zs.iter().enumerate() {
        if k == 0 {
            x = DVector::from_vec(vec![c.x, c.y, 0.0, 0.0]);
            p = DMatrix::from_diagonal(&DVector::from_vec(vec![1e4, 1e4, 0.5, 0.5]));
        } else {
            x = &f * &x;
            p = &f * &p * f.transpose() + &q;
            p = (&p + p.transpose()) * 0.5;
        }
        let pos = Point::new(x[0], x[1]);
        let rel = pos - pose.ue_position;
        let dt = (pos - pose.tx_position).norm();
        let dr = (pos - pose.rx_position).norm();
        let hx = [rel.y.atan2(rel.x), 0.5 * (dt + dr)];
        let d2 = rel.norm_squared();
        let mut h = DMatrix::zeros(2, 4);
        h[(0, 0)] = -rel.y / d2;
        h[(0, 1)] = rel.x / d2;
        h[(1, 0)] = 0.5 * ((pos.x - pose.tx_position.x) / dt + (pos.x - pose.rx_position.x) / dr);
        h[(1, 1)] = 0.5 * ((pos.y - pose.tx_position.y) / dt + (pos.y - pose.rx_position.y) / dr);
        let crel = c - pose.ue_position;
        let cz = [
            crel.y.atan2(crel.x),
            0.5 * ((c - pose.tx_position).norm() + (c - pose.rx_position).norm()),
        ];
        let nu = DVector::from_vec(vec![wrap_angle(cz[0] - hx[0]), cz[1] - hx[1]]);
        let s = &h * &p * h.transpose() + &r;
        let s = (&s + s.transpose()) * 0.5;
        let k = &p * h.transpose() * s.try_inverse().unwrap();
        x = &x + &k * nu;
        let ikh = DMatrix::identity(4, 4) - &k * &h;
        p = &ikh * &p * ikh.transpose() + &k * &r * k.transpose();
        p = (&p + p.transpose()) * 0.5;
        out.push((x.clone(), p.clone()));
    }
    out
}

pub(crate) fn single_model_config() -> TrackerConfig {
    TrackerConfig {
        transition: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        initial_probabilities: vec![0.0, 1.0],
        init_specular_velocity: false,
        ..TrackerConfig::default()
    }
}

#[test]
fn degenerate_imm_equals_standalone_ekf() {
    let cfg = single_model_config();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut tracker = Tracker::new(cfg.clone()).unwrap();
    let mut zs = Vec::new();
    for l in 0..15 {
        let pose = walking_pose(l);
        let truth = Point::new(0.5 * l as f64, 3.0);
        let noisy = truth + Point::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05));
        let r = tracker.step(&pose, &[detection_at(&pose, &noisy)]).unwrap();
        assert!(r.dropped.is_empty());
        // Feed the oracle the exact coarse position the tracker used.
        zs.push((pose, coarse_position(&detection_at(&pose, &noisy), &pose)));
    }
    let oracle = standalone_ekf(&cfg, &zs);
    let track = &tracker.finish()[0];
    assert_eq!(track.history.len(), oracle.len());
    for (snap, (x, p)) in track.history.iter().zip(&oracle) {
        let m = &snap.state.models[1];
        assert!((&m.mean - x).amax() < 1e-10);
        assert!((&m.cov - p).amax() < 1e-10 * p.amax().max(1.0));
        assert_eq!(snap.state.mu, vec![0.0, 1.0]);
    }
}

#[test]
fn non_finite_state_is_a_hard_error() {
    let cfg = TrackerConfig {
        init_position_var: f64::INFINITY,
        ..TrackerConfig::default()
    };
    let mut tracker = Tracker::new(cfg).unwrap();
    let pose = walking_pose(0);
    let err = tracker
        .step(&pose, &[detection_at(&pose, &Point::new(2.0, 2.0))])
        .unwrap_err();
    assert!(matches!(err, Error::NonFiniteCovariance { track_id: 0 }));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn model_probabilities_sum_to_one(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points: Vec<Point> = (0..3)
            .map(|_| Point::new(rng.random_range(-8.0..8.0), rng.random_range(2.0..8.0)))
            .collect();
        let mut tracker = Tracker::new(TrackerConfig::default()).unwrap();
        for l in 0..10 {
            let pose = walking_pose(l);
            let mut dets = Vec::new();
            for p in &points {
                if rng.random::<f64>() < 0.8 {
                    let jitter = Point::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2));
                    dets.push(detection_at(&pose, &(p + jitter)));
                }
            }
            tracker.step(&pose, &dets).unwrap();
            for t in tracker.active() {
                prop_assert!((t.state.mu.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(t.state.mu.iter().all(|&m| m >= 0.0));
            }
        }
    }

    #[test]
    fn association_is_permutation_invariant(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points: Vec<Point> = (0..4)
            .map(|_| Point::new(rng.random_range(-8.0..8.0), rng.random_range(2.0..8.0)))
            .collect();
        let mut tracker = Tracker::new(TrackerConfig::default()).unwrap();
        for l in 0..4 {
            let pose = walking_pose(l);
            let dets: Vec<Detection> = points.iter().map(|p| detection_at(&pose, p)).collect();
            tracker.step(&pose, &dets).unwrap();
        }
        let pose = walking_pose(4);
        let dets: Vec<Detection> = points
            .iter()
            .map(|p| detection_at(&pose, &(p + Point::new(rng.random_range(-0.3..0.3), 0.0))))
            .collect();
        let mut order: Vec<usize> = (0..dets.len()).collect();
        order.reverse();
        order.swap(0, 2);
        let shuffled: Vec<Detection> = order.iter().map(|&i| dets[i]).collect();
        let mut a = tracker.clone();
        let mut b = tracker;
        let ra = a.step(&pose, &dets).unwrap();
        let rb = b.step(&pose, &shuffled).unwrap();
        let mut pa = ra.matched.clone();
        pa.sort();
        let mut pb: Vec<(u64, usize)> = rb.matched.iter().map(|&(t, d)| (t, order[d])).collect();
        pb.sort();
        prop_assert_eq!(pa, pb);
    }
}
