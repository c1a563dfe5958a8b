//! Scene description and image-method path enumeration.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, PathGeometry, Point, Pose, C0};

const EPS: f64 = 1e-9;

fn default_reflection() -> f64 {
    0.5
}

fn default_excess() -> f64 {
    1.0
}

fn default_diffuse_exponent() -> f64 {
    4.0
}

/// Specular reflector between two endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Wall {
    pub start: Point,
    pub end: Point,
    /// Amplitude reflection coefficient; a negative value flips the phase.
    #[serde(default = "default_reflection")]
    pub reflection: f64,
}

impl Wall {
    pub fn new(start: Point, end: Point, reflection: f64) -> Self {
        Wall { start, end, reflection }
    }

    pub fn length(&self) -> f64 {
        (self.end - self.start).norm()
    }

    /// Mirror image of `p` across the wall's supporting line.
    pub fn reflect(&self, p: &Point) -> Point {
        let d = (self.end - self.start) / self.length();
        let v = p - self.start;
        let along = d * v.dot(&d);
        self.start + along * 2.0 - v
    }

    fn side(&self, p: &Point) -> f64 {
        let d = self.end - self.start;
        let v = p - self.start;
        d.x * v.y - d.y * v.x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusePoint {
    pub position: Point,
    /// Radar cross section, m^2.
    pub rcs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    #[serde(default)]
    pub walls: Vec<Wall>,
    #[serde(default)]
    pub diffuse_points: Vec<DiffusePoint>,
    #[serde(default)]
    pub enable_double_bounce: bool,
    /// Ghost paths decay with exponent `2 + double_bounce_excess_exponent`.
    #[serde(default = "default_excess")]
    pub double_bounce_excess_exponent: f64,
    /// Distance exponent of the diffuse-point radar equation (4 for a point
    /// target, 2 for a surface patch).
    #[serde(default = "default_diffuse_exponent")]
    pub diffuse_pathloss_exponent: f64,
    /// Noise variance per subcarrier sample, W.
    #[serde(default)]
    pub noise_power: f64,
}

impl Default for Scene {
    fn default() -> Self {
        Scene {
            walls: Vec::new(),
            diffuse_points: Vec::new(),
            enable_double_bounce: false,
            double_bounce_excess_exponent: default_excess(),
            diffuse_pathloss_exponent: default_diffuse_exponent(),
            noise_power: 0.0,
        }
    }
}

/// On-disk scene document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneFile {
    pub schema: u32,
    #[serde(flatten)]
    pub scene: Scene,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        for (i, w) in self.walls.iter().enumerate() {
            if !(w.length() > EPS) {
                return Err(Error::config(format!("wall {i} has zero length")));
            }
            if !(w.reflection.abs() <= 1.0) {
                return Err(Error::config(format!(
                    "wall {i} reflection coefficient {} outside [-1, 1]",
                    w.reflection
                )));
            }
        }
        for (i, p) in self.diffuse_points.iter().enumerate() {
            if !(p.rcs > 0.0) {
                return Err(Error::config(format!("diffuse point {i} has non-positive RCS")));
            }
        }
        if !(self.double_bounce_excess_exponent >= 0.0) {
            return Err(Error::config("double-bounce excess exponent must be >= 0"));
        }
        if !(self.diffuse_pathloss_exponent > 0.0) {
            return Err(Error::config("diffuse pathloss exponent must be positive"));
        }
        if !(self.noise_power >= 0.0) {
            return Err(Error::config("noise power must be >= 0"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: SceneFile = serde_json::from_str(text)?;
        if file.schema != 1 {
            return Err(Error::config(format!(
                "unsupported scene schema {} (expected 1)",
                file.schema
            )));
        }
        file.scene.validate()?;
        Ok(file.scene)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&SceneFile {
            schema: 1,
            scene: self.clone(),
        })?)
    }

    pub fn ghost_exponent(&self) -> f64 {
        2.0 + self.double_bounce_excess_exponent
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathKind {
    Diffuse {
        point: usize,
    },
    Specular {
        wall: usize,
    },
    WallWall {
        first: usize,
        second: usize,
    },
    WallPoint {
        wall: usize,
        point: usize,
        wall_first: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationPath {
    pub kind: PathKind,
    pub order: u8,
    pub geometry: PathGeometry,
    /// Signed magnitude of the path coefficient at the carrier.
    pub gain: f64,
    /// Interaction point for order-1 paths, apparent position for order-2.
    pub position: Point,
}

impl PropagationPath {
    /// Complex coefficient at frequency `f`: `gain * exp(-j 2 pi tau f)`.
    pub fn coefficient(&self, f: f64) -> num_complex::Complex64 {
        num_complex::Complex64::from_polar(self.gain, -2.0 * PI * self.geometry.delay * f)
    }

    pub fn rss_db(&self) -> f64 {
        20.0 * self.gain.abs().log10()
    }
}

/// Parameter pair (t, u) with `p + t (q - p) = a + u (b - a)`.
fn intersect(p: &Point, q: &Point, a: &Point, b: &Point) -> Option<(f64, f64)> {
    let r = q - p;
    let s = b - a;
    let den = r.x * s.y - r.y * s.x;
    if den.abs() < 1e-15 {
        return None;
    }
    let ap = a - p;
    let t = (ap.x * s.y - ap.y * s.x) / den;
    let u = (ap.x * r.y - ap.y * r.x) / den;
    Some((t, u))
}

fn hit_wall(from: &Point, to: &Point, wall: &Wall) -> Option<Point> {
    let (t, u) = intersect(from, to, &wall.start, &wall.end)?;
    if t > EPS && t < 1.0 - EPS && (-EPS..=1.0 + EPS).contains(&u) {
        Some(from + (to - from) * t)
    } else {
        None
    }
}

fn blocked(scene: &Scene, from: &Point, to: &Point, skip: &[usize]) -> bool {
    scene.walls.iter().enumerate().any(|(i, w)| {
        if skip.contains(&i) {
            return false;
        }
        match intersect(from, to, &w.start, &w.end) {
            Some((t, u)) => t > 1e-7 && t < 1.0 - 1e-7 && (0.0..=1.0).contains(&u),
            None => false,
        }
    })
}

fn same_side(wall: &Wall, a: &Point, b: &Point) -> bool {
    let sa = wall.side(a);
    let sb = wall.side(b);
    sa * sb > 0.0 && sa.abs() > EPS && sb.abs() > EPS
}

fn angle_of(v: Point) -> f64 {
    v.y.atan2(v.x)
}

fn order1_geometry(pose: &Pose, p: &Point) -> Option<PathGeometry> {
    let tx = p - pose.tx_position;
    let rx = p - pose.rx_position;
    let ue = p - pose.ue_position;
    if tx.norm() < EPS || rx.norm() < EPS {
        return None;
    }
    Some(PathGeometry {
        delay: (tx.norm() + rx.norm()) / C0,
        ue_angle: angle_of(ue),
        tx_angle: angle_of(tx),
        rx_angle: angle_of(rx),
        ue_range: ue.norm(),
        tx_range: tx.norm(),
        rx_range: rx.norm(),
    })
}

/// Geometry of a double-interaction path TX -> a -> b -> RX. The apparent
/// direction is the circular mean of departure and arrival directions.
fn order2_geometry(pose: &Pose, a: &Point, b: &Point) -> Option<(PathGeometry, Point)> {
    let l1 = (a - pose.tx_position).norm();
    let l2 = (b - a).norm();
    let l3 = (pose.rx_position - b).norm();
    if l1 < EPS || l2 < EPS || l3 < EPS {
        return None;
    }
    let tx_angle = angle_of(a - pose.tx_position);
    let rx_angle = angle_of(b - pose.rx_position);
    let apparent = tx_angle + 0.5 * wrap_angle(rx_angle - tx_angle);
    let delay = (l1 + l2 + l3) / C0;
    let rho = pose.range_at(delay, apparent).ok()?;
    let pos = pose.ue_position + Point::new(apparent.cos(), apparent.sin()) * rho;
    Some((
        PathGeometry {
            delay,
            ue_angle: wrap_angle(apparent),
            tx_angle,
            rx_angle,
            ue_range: rho,
            tx_range: l1 + 0.5 * l2,
            rx_range: l3 + 0.5 * l2,
        },
        pos,
    ))
}

/// All propagation paths between the TX and RX arrays of `pose`.
///
/// Amplitudes are evaluated at the carrier wavelength. Diffuse points follow
/// the radar equation with the scene's distance exponent, specular walls the
/// image-method free-space law, and ghosts (double interactions) decay with
/// the configured excess exponent.
pub fn enumerate_paths(scene: &Scene, pose: &Pose, carrier_frequency: f64) -> Vec<PropagationPath> {
    let lambda = C0 / carrier_frequency;
    let four_pi = 4.0 * PI;
    let mut out = Vec::new();
    let (tx, rx) = (pose.tx_position, pose.rx_position);

    for (k, dp) in scene.diffuse_points.iter().enumerate() {
        let p = dp.position;
        if blocked(scene, &tx, &p, &[]) || blocked(scene, &p, &rx, &[]) {
            continue;
        }
        let Some(g) = order1_geometry(pose, &p) else { continue };
        let alpha = scene.diffuse_pathloss_exponent;
        let denom = four_pi.powi(3) * (g.tx_range * g.rx_range).powf(alpha / 2.0);
        out.push(PropagationPath {
            kind: PathKind::Diffuse { point: k },
            order: 1,
            geometry: g,
            gain: (lambda * lambda * dp.rcs / denom).sqrt(),
            position: p,
        });
    }

    for (w, wall) in scene.walls.iter().enumerate() {
        if !same_side(wall, &tx, &rx) {
            continue;
        }
        let image = wall.reflect(&tx);
        let Some(p) = hit_wall(&image, &rx, wall) else { continue };
        if blocked(scene, &tx, &p, &[w]) || blocked(scene, &p, &rx, &[w]) {
            continue;
        }
        let Some(g) = order1_geometry(pose, &p) else { continue };
        let len = g.tx_range + g.rx_range;
        out.push(PropagationPath {
            kind: PathKind::Specular { wall: w },
            order: 1,
            geometry: g,
            gain: wall.reflection * lambda / (four_pi * len),
            position: p,
        });
    }

    if !scene.enable_double_bounce {
        return out;
    }
    let ghost_alpha = scene.ghost_exponent();
    let ghost_gain = |kappa: f64, len: f64| kappa * lambda / four_pi * len.powf(-ghost_alpha / 2.0);

    for (a, wa) in scene.walls.iter().enumerate() {
        for (b, wb) in scene.walls.iter().enumerate() {
            if a == b {
                continue;
            }
            let img1 = wa.reflect(&tx);
            let img2 = wb.reflect(&img1);
            let Some(p2) = hit_wall(&img2, &rx, wb) else { continue };
            let Some(p1) = hit_wall(&img1, &p2, wa) else { continue };
            if !same_side(wa, &tx, &p2) || !same_side(wb, &p1, &rx) {
                continue;
            }
            if blocked(scene, &tx, &p1, &[a]) || blocked(scene, &p1, &p2, &[a, b]) || blocked(scene, &p2, &rx, &[b]) {
                continue;
            }
            let Some((g, pos)) = order2_geometry(pose, &p1, &p2) else {
                continue;
            };
            out.push(PropagationPath {
                kind: PathKind::WallWall { first: a, second: b },
                order: 2,
                gain: ghost_gain(wa.reflection * wb.reflection, g.delay * C0),
                geometry: g,
                position: pos,
            });
        }
    }

    for (w, wall) in scene.walls.iter().enumerate() {
        for (k, dp) in scene.diffuse_points.iter().enumerate() {
            let p = dp.position;
            let kappa = wall.reflection * (dp.rcs / four_pi).sqrt();
            // TX -> wall -> point -> RX
            if same_side(wall, &tx, &p) {
                let img = wall.reflect(&p);
                if let Some(hit) = hit_wall(&tx, &img, wall) {
                    if !blocked(scene, &tx, &hit, &[w])
                        && !blocked(scene, &hit, &p, &[w])
                        && !blocked(scene, &p, &rx, &[])
                    {
                        if let Some((g, pos)) = order2_geometry(pose, &hit, &p) {
                            out.push(PropagationPath {
                                kind: PathKind::WallPoint {
                                    wall: w,
                                    point: k,
                                    wall_first: true,
                                },
                                order: 2,
                                gain: ghost_gain(kappa, g.delay * C0),
                                geometry: g,
                                position: pos,
                            });
                        }
                    }
                }
            }
            // TX -> point -> wall -> RX
            if same_side(wall, &p, &rx) {
                let img = wall.reflect(&rx);
                if let Some(hit) = hit_wall(&p, &img, wall) {
                    if !blocked(scene, &tx, &p, &[])
                        && !blocked(scene, &p, &hit, &[w])
                        && !blocked(scene, &hit, &rx, &[w])
                    {
                        if let Some((g, pos)) = order2_geometry(pose, &p, &hit) {
                            out.push(PropagationPath {
                                kind: PathKind::WallPoint {
                                    wall: w,
                                    point: k,
                                    wall_first: false,
                                },
                                order: 2,
                                gain: ghost_gain(kappa, g.delay * C0),
                                geometry: g,
                                position: pos,
                            });
                        }
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn origin_pose(d_ant: f64) -> Pose {
        Pose::new(0, Point::zeros(), 0.0, d_ant)
    }

    #[test]
    fn empty_scene_has_no_paths() {
        assert!(enumerate_paths(&Scene::default(), &origin_pose(0.6), 28e9).is_empty());
    }

    #[test]
    fn diffuse_point_radar_equation() {
        let scene = Scene {
            diffuse_points: vec![DiffusePoint {
                position: Point::new(10.0, 0.0),
                rcs: 1.0,
            }],
            ..Scene::default()
        };
        let paths = enumerate_paths(&scene, &origin_pose(0.0), 28e9);
        assert_eq!(paths.len(), 1);
        let lambda = C0 / 28e9;
        assert_relative_eq!(lambda, 0.010707, epsilon = 1e-6);
        let expected = (lambda * lambda / ((4.0 * PI).powi(3) * 1e4)).sqrt();
        assert_relative_eq!(paths[0].gain, expected, max_relative = 1e-12);
        assert!((paths[0].gain - 2.404e-6).abs() < 1e-9);
    }

    #[test]
    fn monostatic_wall_specular_point_is_perpendicular_foot() {
        let scene = Scene {
            walls: vec![Wall::new(Point::new(-50.0, 2.0), Point::new(50.0, 2.0), 0.5)],
            ..Scene::default()
        };
        let pose = Pose::monostatic(0, Point::new(3.0, 0.0), 0.0);
        let paths = enumerate_paths(&scene, &pose, 28e9);
        assert_eq!(paths.len(), 1);
        let p = &paths[0];
        assert!((p.position - Point::new(3.0, 2.0)).norm() < 1e-12);
        assert_relative_eq!(p.geometry.delay, 4.0 / C0, max_relative = 1e-14);
        assert_eq!(p.order, 1);
    }

    #[test]
    fn bistatic_wall_satisfies_equal_angles() {
        let wall = Wall::new(Point::new(-10.0, 1.5), Point::new(10.0, 1.5), 0.5);
        let scene = Scene {
            walls: vec![wall],
            ..Scene::default()
        };
        let pose = Pose::new(0, Point::zeros(), 0.0, 0.6);
        let paths = enumerate_paths(&scene, &pose, 28e9);
        assert_eq!(paths.len(), 1);
        let p = paths[0].position;
        assert_relative_eq!(p.y, 1.5, epsilon = 1e-12);
        // Angle of incidence equals angle of reflection.
        let a = (p - pose.tx_position).normalize();
        let b = (pose.rx_position - p).normalize();
        assert_relative_eq!(a.x, b.x, epsilon = 1e-12);
        assert_relative_eq!(a.y, -b.y, epsilon = 1e-12);
        let g = paths[0].geometry;
        assert_relative_eq!(g.delay * C0, g.tx_range + g.rx_range, epsilon = 1e-12);
    }

    #[test]
    fn wall_behind_segment_end_not_visible() {
        let scene = Scene {
            walls: vec![Wall::new(Point::new(5.0, 2.0), Point::new(8.0, 2.0), 0.5)],
            ..Scene::default()
        };
        assert!(enumerate_paths(&scene, &origin_pose(0.0), 28e9).is_empty());
    }

    #[test]
    fn occluded_point_is_dropped() {
        let scene = Scene {
            walls: vec![Wall::new(Point::new(3.0, -1.0), Point::new(3.0, 1.0), 0.5)],
            diffuse_points: vec![DiffusePoint {
                position: Point::new(6.0, 0.0),
                rcs: 1.0,
            }],
            ..Scene::default()
        };
        let paths = enumerate_paths(&scene, &origin_pose(0.0), 28e9);
        assert!(paths.iter().all(|p| !matches!(p.kind, PathKind::Diffuse { .. })));
    }

    #[test]
    fn rss_example_ratios() {
        let mk = |x: f64, rcs: f64| Scene {
            diffuse_points: vec![DiffusePoint {
                position: Point::new(x, 0.0),
                rcs,
            }],
            ..Scene::default()
        };
        let pose = origin_pose(0.0);
        let r1 = enumerate_paths(&mk(5.0, 1.0), &pose, 28e9)[0].rss_db();
        let r2 = enumerate_paths(&mk(10.0, 1.0), &pose, 28e9)[0].rss_db();
        let r3 = enumerate_paths(&mk(5.0, 2.0), &pose, 28e9)[0].rss_db();
        assert_relative_eq!(r1 - r2, 40.0 * 2f64.log10(), epsilon = 1e-9);
        assert!((r1 - r2 - 12.04).abs() < 0.01);
        assert!((r3 - r1 - 3.01).abs() < 0.01);
    }

    #[test]
    fn corridor_ghosts_are_order_two_and_weaker() {
        let scene = Scene {
            walls: vec![
                Wall::new(Point::new(0.0, 1.0), Point::new(20.0, 1.0), 0.5),
                Wall::new(Point::new(0.0, -1.0), Point::new(20.0, -1.0), 0.5),
            ],
            enable_double_bounce: true,
            ..Scene::default()
        };
        let pose = Pose::new(0, Point::new(5.0, 0.0), 0.0, 0.6);
        let paths = enumerate_paths(&scene, &pose, 28e9);
        let order1: Vec<_> = paths.iter().filter(|p| p.order == 1).collect();
        let order2: Vec<_> = paths.iter().filter(|p| p.order == 2).collect();
        assert_eq!(order1.len(), 2);
        assert_eq!(order2.len(), 2);
        for g in &order2 {
            assert!(g.gain.abs() < order1[0].gain.abs());
            assert!(g.geometry.delay * C0 >= 3.4 - 1e-9);
        }
    }

    #[test]
    fn scene_json_round_trip() {
        let scene = Scene {
            walls: vec![Wall::new(Point::new(0.0, 1.0), Point::new(2.0, 1.0), -0.3)],
            diffuse_points: vec![DiffusePoint {
                position: Point::new(1.0, 0.5),
                rcs: 0.7,
            }],
            enable_double_bounce: true,
            ..Scene::default()
        };
        let text = scene.to_json().unwrap();
        assert!(text.contains("\"schema\": 1"));
        assert_eq!(Scene::from_json(&text).unwrap(), scene);
        let bad = text.replace("\"schema\": 1", "\"schema\": 2");
        assert!(Scene::from_json(&bad).is_err());
    }

    #[test]
    fn invalid_scene_rejected() {
        let scene = Scene {
            diffuse_points: vec![DiffusePoint {
                position: Point::new(1.0, 0.5),
                rcs: 0.0,
            }],
            ..Scene::default()
        };
        assert!(scene.validate().is_err());
    }
}
