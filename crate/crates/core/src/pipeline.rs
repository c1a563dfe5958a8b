//! End-to-end batch pipeline: synthesis, charting, selection, tracking,
//! smoothing, map extraction and GOSPA evaluation.
//!
//! Every stage reads its inputs from the output directory and writes its
//! artifacts back there, so running the stages one by one gives the same
//! files as a fused run.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use crate::chart::{
    detect_targets, ista_chart, ls_chart, matched_filter_chart, AngleAxis, ChartGrid, ChartGridConfig, ChartMethod,
    Detection, DetectionParams, IstaParams, Lambda,
};
use crate::error::{Error, Result};
use crate::geometry::{Point, Pose, C0};
use crate::gospa::{gospa, GospaConfig};
use crate::io;
use crate::map::{extract_map, EnvironmentMap, DEFAULT_COV_THRESHOLD};
use crate::selection::{EmOptions, LabeledDetection, MeasurementSelector, PathlossModelState, SelectionParams};
use crate::sim::{
    beam_sweep, circular_sweep, synthesize, ArrayConfig, DiffusePoint, ObservationGrid, Scene, TruthPoint, Wall,
    WaveformConfig,
};
use crate::smoothing::{smooth_all, SmoothedTrack};
use crate::tracking::{coarse_position, Tracker, TrackerConfig};

pub const OBSERVATIONS_FILE: &str = "observations.rfobs";
pub const POSES_FILE: &str = "poses.csv";
pub const TRUTH_FILE: &str = "ground_truth.csv";
pub const SCENE_FILE: &str = "scene.json";
pub const DETECTIONS_FILE: &str = "detections.csv";
pub const CHARTS_DIR: &str = "charts";
pub const SELECTION_FILE: &str = "selection.csv";
pub const TRACKS_FILE: &str = "tracks.csv";
pub const MAP_FILE: &str = "map.csv";
pub const FILTERED_MAP_FILE: &str = "map_filtered.csv";
pub const GOSPA_FILE: &str = "gospa.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOCK_FILE: &str = ".lock";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TrajectoryConfig {
    /// `count` poses spaced `step` meters apart along `heading_deg`. The
    /// boresight defaults to the heading.
    Line {
        start: [f64; 2],
        heading_deg: f64,
        step: f64,
        count: usize,
        #[serde(default)]
        orientation_deg: Option<f64>,
        d_ant: f64,
    },
    Explicit {
        poses: Vec<PoseSpec>,
        d_ant: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseSpec {
    pub x: f64,
    pub y: f64,
    pub orientation_deg: f64,
}

impl TrajectoryConfig {
    pub fn poses(&self) -> Result<Vec<Pose>> {
        let poses: Vec<Pose> = match self {
            TrajectoryConfig::Line {
                start,
                heading_deg,
                step,
                count,
                orientation_deg,
                d_ant,
            } => {
                let h = heading_deg.to_radians();
                let o = orientation_deg.unwrap_or(*heading_deg).to_radians();
                let dir = Point::new(h.cos(), h.sin());
                (0..*count)
                    .map(|l| Pose::new(l, Point::new(start[0], start[1]) + dir * (*step * l as f64), o, *d_ant))
                    .collect()
            }
            TrajectoryConfig::Explicit { poses, d_ant } => poses
                .iter()
                .enumerate()
                .map(|(l, p)| Pose::new(l, Point::new(p.x, p.y), p.orientation_deg.to_radians(), *d_ant))
                .collect(),
        };
        for p in &poses {
            p.validate()?;
        }
        Ok(poses)
    }
}

/// Sensing directions of one sweep, local frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BeamConfig {
    Circular {
        count: usize,
    },
    Sector {
        start_deg: f64,
        stop_deg: f64,
        count: usize,
    },
}

impl BeamConfig {
    pub fn angles(&self) -> Vec<f64> {
        match self {
            BeamConfig::Circular { count } => circular_sweep(*count),
            BeamConfig::Sector {
                start_deg,
                stop_deg,
                count,
            } => beam_sweep(start_deg.to_radians(), stop_deg.to_radians(), *count),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChartConfig {
    pub method: ChartMethod,
    pub grid: ChartGridConfig,
    pub ista: IstaParams,
    pub detection: DetectionParams,
    /// Write per-pose chart CSVs.
    pub write_charts: bool,
}

impl Default for ChartConfig {
    fn default() -> Self {
        ChartConfig {
            method: ChartMethod::Ista,
            grid: ChartGridConfig::default(),
            ista: IstaParams::default(),
            detection: DetectionParams::default(),
            write_charts: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub params: SelectionParams,
    pub em: EmOptions,
    /// EM start values; derived from the waveform when absent.
    pub init: Option<PathlossModelState>,
    /// Skip selection and track every detection.
    pub disabled: bool,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            params: SelectionParams::default(),
            em: EmOptions::default(),
            init: None,
            disabled: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapConfig {
    /// Largest accepted eigenvalue of a map point's position covariance, m².
    pub cov_threshold: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        MapConfig {
            cov_threshold: DEFAULT_COV_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Scene JSON file; relative paths are resolved against the config file.
    #[serde(default)]
    pub scene_file: Option<PathBuf>,
    /// Inline scene, used when no scene file is given.
    #[serde(default)]
    pub scene: Option<Scene>,
    pub trajectory: TrajectoryConfig,
    pub waveform: WaveformConfig,
    #[serde(default)]
    pub arrays: ArrayConfig,
    pub beams: BeamConfig,
    #[serde(default)]
    pub chart: ChartConfig,
    #[serde(default)]
    pub selection: SelectionConfig,
    #[serde(default)]
    pub tracker: TrackerConfig,
    #[serde(default)]
    pub map: MapConfig,
    #[serde(default)]
    pub gospa: GospaConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Simulate,
    Chart,
    Track,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Simulate, Stage::Chart, Stage::Track, Stage::Evaluate];

    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Chart => "chart",
            Stage::Track => "track",
            Stage::Evaluate => "evaluate",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Stage::ALL.into_iter().find(|st| st.as_str() == s)
    }
}

pub const PRESETS: [&str; 2] = ["corridor-desk", "corridor-rt"];

impl ScenarioConfig {
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "corridor-desk" => Ok(corridor_desk()),
            "corridor-rt" => Ok(corridor_rt()),
            other => Err(Error::config(format!(
                "unknown preset `{other}` (expected one of {})",
                PRESETS.join(", ")
            ))),
        }
    }

    /// Reads a JSON config; a relative `scene_file` is resolved against the
    /// config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: ScenarioConfig = serde_json::from_str(&fs::read_to_string(path)?)?;
        if let Some(scene) = &cfg.scene_file {
            if scene.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.scene_file = Some(base.join(scene));
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.scene_file, &self.scene) {
            (Some(_), Some(_)) => return Err(Error::config("give either `scene_file` or `scene`, not both")),
            (None, None) => return Err(Error::config("config needs a `scene_file` or an inline `scene`")),
            (Some(p), None) if !p.is_file() => {
                return Err(Error::config(format!("scene file {} does not exist", p.display())))
            }
            _ => {}
        }
        self.waveform.validate()?;
        self.arrays.validate()?;
        self.tracker.validate()?;
        self.gospa.validate()?;
        if self.beams.angles().is_empty() {
            return Err(Error::config("beam sweep is empty"));
        }
        let poses = self.trajectory.poses()?;
        if poses.len() < 2 {
            return Err(Error::config("trajectory needs at least 2 poses for tracking"));
        }
        if !(self.map.cov_threshold >= 0.0) {
            return Err(Error::config("map covariance threshold must be non-negative"));
        }
        Ok(())
    }

    pub fn load_scene(&self) -> Result<Scene> {
        match (&self.scene_file, &self.scene) {
            (Some(p), _) => Scene::load(p),
            (None, Some(s)) => {
                s.validate()?;
                Ok(s.clone())
            }
            (None, None) => Err(Error::config("config needs a scene")),
        }
    }

    /// EM start values: explicit, or a single-bounce reference for a wall
    /// with reflection coefficient 0.5 seen at 1 m.
    pub fn selection_init(&self) -> PathlossModelState {
        self.selection.init.unwrap_or_else(|| {
            let lambda = self.waveform.wavelength();
            PathlossModelState::from_reference(0.5 * lambda / (4.0 * PI * 2.0))
        })
    }
}

fn corridor_walls(half_width: f64, x0: f64, x1: f64) -> Vec<Wall> {
    vec![
        Wall {
            start: Point::new(x0, half_width),
            end: Point::new(x1, half_width),
            reflection: 0.5,
        },
        Wall {
            start: Point::new(x0, -half_width),
            end: Point::new(x1, -half_width),
            reflection: 0.5,
        },
    ]
}

fn diffuse(points: &[(f64, f64, f64)]) -> Vec<DiffusePoint> {
    points
        .iter()
        .map(|&(x, y, rcs)| DiffusePoint {
            position: Point::new(x, y),
            rcs,
        })
        .collect()
}

/// 20 m long, 2 m wide corridor with two reflecting side walls, eight
/// diffuse objects along the walls and double-bounce ghosts; 21 poses 0.5 m
/// apart down the centre line with a full circular sweep.
fn corridor_desk() -> ScenarioConfig {
    let scene = Scene {
        walls: corridor_walls(1.0, -10.0, 10.0),
        diffuse_points: diffuse(&[
            (-7.5, 0.8, 1.0),
            (-5.0, -0.8, 0.8),
            (-2.5, 0.8, 1.0),
            (-0.5, -0.8, 0.8),
            (1.5, 0.8, 1.0),
            (3.5, -0.8, 0.8),
            (6.0, 0.8, 1.0),
            (8.5, -0.8, 0.8),
        ]),
        enable_double_bounce: true,
        double_bounce_excess_exponent: 1.0,
        diffuse_pathloss_exponent: 2.0,
        noise_power: 1e-9,
    };
    ScenarioConfig {
        name: "corridor-desk".into(),
        seed: 1,
        scene_file: None,
        scene: Some(scene),
        trajectory: TrajectoryConfig::Line {
            start: [-5.0, 0.0],
            heading_deg: 0.0,
            step: 0.5,
            count: 21,
            orientation_deg: None,
            d_ant: 0.06,
        },
        waveform: WaveformConfig::desk(),
        arrays: ArrayConfig::default(),
        beams: BeamConfig::Circular { count: 40 },
        chart: ChartConfig {
            grid: ChartGridConfig {
                max_range: 12.0,
                delay_oversampling: 1,
                angles: AngleAxis::Beams,
            },
            ista: IstaParams {
                lambda: Lambda::Relative(0.03),
                ..IstaParams::default()
            },
            detection: DetectionParams {
                min_sep_range: 1.0,
                ..DetectionParams::default()
            },
            ..ChartConfig::default()
        },
        selection: SelectionConfig::default(),
        // Angle error of a 9 degree beam grid is about 2.6 degrees rms.
        tracker: TrackerConfig {
            angle_std_deg: 3.0,
            ..TrackerConfig::default()
        },
        map: MapConfig::default(),
        gospa: GospaConfig::default(),
    }
}

/// Longer office-corridor analogue: 31 poses 1 m apart, full circular sweep.
fn corridor_rt() -> ScenarioConfig {
    let mut cfg = corridor_desk();
    cfg.name = "corridor-rt".into();
    cfg.scene = Some(Scene {
        walls: corridor_walls(1.2, -20.0, 20.0),
        diffuse_points: diffuse(&[
            (-17.0, 1.0, 1.0),
            (-13.0, -1.0, 0.8),
            (-9.5, 1.0, 1.0),
            (-6.0, -1.0, 0.8),
            (-2.5, 1.0, 1.0),
            (1.0, -1.0, 0.8),
            (4.5, 1.0, 1.0),
            (8.0, -1.0, 0.8),
            (11.5, 1.0, 1.0),
            (15.0, -1.0, 0.8),
            (18.0, 1.0, 1.0),
        ]),
        enable_double_bounce: true,
        double_bounce_excess_exponent: 1.0,
        diffuse_pathloss_exponent: 2.0,
        noise_power: 1e-9,
    });
    cfg.trajectory = TrajectoryConfig::Line {
        start: [-15.0, 0.0],
        heading_deg: 0.0,
        step: 1.0,
        count: 31,
        orientation_deg: None,
        d_ant: 0.06,
    };
    cfg
}

/// Counter-based seed derivation: stage and pose select independent
/// substreams of the master seed.
pub fn derive_seed(master: u64, stage: u64, index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(master ^ mix(stage.wrapping_mul(0x1_0000_0001) ^ mix(index)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub seconds: f64,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub steps: usize,
    pub raw_mean: f64,
    pub filter_mean: Option<f64>,
    pub smoother_mean: f64,
    pub map_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub status: String,
    pub seed: u64,
    pub config: ScenarioConfig,
    pub stages: Vec<StageRecord>,
    pub tracks: Option<usize>,
    pub summary: Option<EvalSummary>,
}

impl RunManifest {
    fn new(config: &ScenarioConfig) -> Self {
        RunManifest {
            tool: "scattermap".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            status: "running".into(),
            seed: config.seed,
            config: config.clone(),
            stages: Vec::new(),
            tracks: None,
            summary: None,
        }
    }

    fn write(&self, out: &Path) -> Result<()> {
        fs::write(out.join(MANIFEST_FILE), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// Exclusive claim on an output directory, released on drop.
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(out: &Path) -> Result<Self> {
        fs::create_dir_all(out)?;
        let path = out.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(OutputLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::config(format!(
                "output directory {} is in use by another run (remove {} if stale)",
                out.display(),
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn rel(out: &Path, p: &Path) -> String {
    p.strip_prefix(out).unwrap_or(p).to_string_lossy().replace('\\', "/")
}

/// Synthesizes observations and ground truth for every pose.
pub fn stage_simulate(cfg: &ScenarioConfig, out: &Path) -> Result<Vec<String>> {
    let scene = cfg.load_scene()?;
    let poses = cfg.trajectory.poses()?;
    let beams = cfg.beams.angles();
    let results: Vec<(ObservationGrid, Vec<TruthPoint>)> = poses
        .par_iter()
        .map(|p| {
            synthesize(
                &scene,
                p,
                &cfg.waveform,
                &cfg.arrays,
                &beams,
                derive_seed(cfg.seed, 0, p.index as u64),
            )
        })
        .collect::<Result<_>>()?;
    let (grids, truth): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let truth: Vec<TruthPoint> = truth.into_iter().flatten().collect();
    let files = [
        out.join(OBSERVATIONS_FILE),
        out.join(POSES_FILE),
        out.join(TRUTH_FILE),
        out.join(SCENE_FILE),
    ];
    io::write_observations(&files[0], &grids)?;
    io::write_poses(&files[1], &poses)?;
    io::write_truth(&files[2], &truth)?;
    fs::write(&files[3], scene.to_json()? + "\n")?;
    Ok(files.iter().map(|f| rel(out, f)).collect())
}

/// Charts every observation and extracts detections.
pub fn stage_chart(cfg: &ScenarioConfig, out: &Path, observations: Option<&Path>) -> Result<Vec<String>> {
    let obs_path = observations
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out.join(OBSERVATIONS_FILE));
    let grids = io::read_observations(&obs_path)?;
    let poses: Vec<Pose> = grids.iter().map(|g| g.pose).collect();
    let charts = chart_observations(cfg, &grids)?;
    let mut files = vec![out.join(POSES_FILE), out.join(DETECTIONS_FILE)];
    io::write_poses(&files[0], &poses)?;
    let detections: Vec<Detection> = charts.iter().flat_map(|(_, d)| d.iter().copied()).collect();
    io::write_detections(&files[1], &detections)?;
    if cfg.chart.write_charts {
        let dir = out.join(CHARTS_DIR);
        fs::create_dir_all(&dir)?;
        for (g, (chart, _)) in grids.iter().zip(&charts) {
            let path = dir.join(format!("chart_{:04}.csv", g.pose.index));
            io::write_chart(&path, chart, g.pose.index)?;
            files.push(io::sidecar_path(&path));
            files.push(path);
        }
    }
    Ok(files.iter().map(|f| rel(out, f)).collect())
}

/// Range–angle charts and detections for a batch of observations. Grids are
/// shared between poses with the same beams, waveform and antenna spacing.
pub fn chart_observations(
    cfg: &ScenarioConfig,
    grids: &[ObservationGrid],
) -> Result<Vec<(crate::chart::RangeAngleChart, Vec<Detection>)>> {
    let mut cache: Vec<(Vec<f64>, WaveformConfig, f64, Arc<ChartGrid>)> = Vec::new();
    let mut per_pose = Vec::with_capacity(grids.len());
    for g in grids {
        g.validate()?;
        let d_ant = g.pose.d_ant();
        let hit = cache
            .iter()
            .find(|(b, w, d, _)| *b == g.beam_angles && *w == g.waveform && (*d - d_ant).abs() < 1e-12);
        let grid = match hit {
            Some((_, _, _, grid)) => grid.clone(),
            None => {
                let grid = Arc::new(ChartGrid::from_config(
                    &cfg.chart.grid,
                    &g.beam_angles,
                    &g.waveform,
                    &cfg.arrays,
                    d_ant,
                )?);
                cache.push((g.beam_angles.clone(), g.waveform, d_ant, grid.clone()));
                grid
            }
        };
        per_pose.push(grid);
    }
    grids
        .par_iter()
        .zip(per_pose.par_iter())
        .map(|(g, grid)| {
            let chart = match cfg.chart.method {
                ChartMethod::Ls => ls_chart(g, grid, cfg.chart.ista.window)?,
                ChartMethod::Ista => ista_chart(g, grid, &cfg.chart.ista)?,
                ChartMethod::MatchedFilter => matched_filter_chart(g, grid, cfg.chart.ista.window)?,
            };
            let dets = detect_targets(&chart, &cfg.chart.detection, &g.pose);
            Ok((chart, dets))
        })
        .collect()
}

pub struct TrackOutput {
    pub labeled: Vec<Vec<LabeledDetection>>,
    pub tracks: Vec<crate::tracking::Track>,
    pub log: Vec<crate::tracking::TrackLogRow>,
    pub smoothed: Vec<SmoothedTrack>,
    pub filtered: Vec<SmoothedTrack>,
    pub map: EnvironmentMap,
    pub filtered_map: EnvironmentMap,
}

/// Selection, tracking, smoothing and map extraction over a pose sequence.
pub fn track_detections(cfg: &ScenarioConfig, poses: &[Pose], detections: &[Detection]) -> Result<TrackOutput> {
    let mut by_pose: BTreeMap<usize, Vec<Detection>> = BTreeMap::new();
    for d in detections {
        by_pose.entry(d.pose_index).or_default().push(*d);
    }
    let mut selector = MeasurementSelector::new(cfg.selection_init(), cfg.selection.params, cfg.selection.em);
    let mut tracker = Tracker::new(cfg.tracker.clone())?;
    let mut labeled = Vec::with_capacity(poses.len());
    let mut log = Vec::new();
    for pose in poses {
        let dets = by_pose.remove(&pose.index).unwrap_or_default();
        let lab = if cfg.selection.disabled || dets.is_empty() {
            dets.iter()
                .map(|d| LabeledDetection {
                    detection: *d,
                    posterior_h0: 1.0,
                    selected: true,
                })
                .collect()
        } else {
            selector.process(&dets)?
        };
        let selected: Vec<Detection> = lab.iter().filter(|l| l.selected).map(|l| l.detection).collect();
        let report = tracker.step(pose, &selected)?;
        log.extend(report.rows);
        labeled.push(lab);
    }
    let tracks = tracker.finish();
    let smoothed = smooth_all(&tracks, &cfg.tracker);
    let filtered: Vec<SmoothedTrack> = tracks.iter().map(SmoothedTrack::from_filtered).collect();
    let map = extract_map(&smoothed, cfg.map.cov_threshold);
    let filtered_map = extract_map(&filtered, cfg.map.cov_threshold);
    Ok(TrackOutput {
        labeled,
        tracks,
        log,
        smoothed,
        filtered,
        map,
        filtered_map,
    })
}

pub fn stage_track(cfg: &ScenarioConfig, out: &Path) -> Result<(Vec<String>, usize)> {
    let poses = io::read_poses(&out.join(POSES_FILE))?;
    let detections = io::read_detections(&out.join(DETECTIONS_FILE))?;
    let res = track_detections(cfg, &poses, &detections)?;
    let files = [
        out.join(SELECTION_FILE),
        out.join(TRACKS_FILE),
        out.join(MAP_FILE),
        out.join(FILTERED_MAP_FILE),
    ];
    io::write_selection(&files[0], &res.labeled)?;
    io::write_track_log(&files[1], &res.log)?;
    io::write_map(&files[2], &res.map)?;
    io::write_map(&files[3], &res.filtered_map)?;
    Ok((files.iter().map(|f| rel(out, f)).collect(), res.tracks.len()))
}

/// Ground truth for map scoring: order-1 interaction points inside the
/// swept sector whose half path length is within `max_range`.
pub fn truth_by_pose(truth: &[TruthPoint], max_range: f64) -> BTreeMap<usize, Vec<Point>> {
    let mut m: BTreeMap<usize, Vec<Point>> = BTreeMap::new();
    for t in truth
        .iter()
        .filter(|t| t.order == 1 && t.in_fov && 0.5 * C0 * t.delay <= max_range)
    {
        m.entry(t.pose_index).or_default().push(t.position);
    }
    m
}

/// Per-step GOSPA of the smoothed map, and optionally of the filtered map and
/// of the raw detections. Step `k` is scored against pose `poses[k]`.
pub fn evaluate(
    cfg: &GospaConfig,
    max_range: f64,
    poses: &[Pose],
    truth: &[TruthPoint],
    smoothed: &EnvironmentMap,
    filtered: Option<&EnvironmentMap>,
    detections: Option<&[Detection]>,
) -> (Vec<io::GospaRow>, EvalSummary) {
    let truth = truth_by_pose(truth, max_range);
    let empty = Vec::new();
    let rows_per_step: Vec<Vec<io::GospaRow>> = poses
        .par_iter()
        .enumerate()
        .map(|(k, pose)| {
            let t = truth.get(&pose.index).unwrap_or(&empty);
            let mut rows = Vec::new();
            if let Some(dets) = detections {
                let raw: Vec<Point> = dets
                    .iter()
                    .filter(|d| d.pose_index == pose.index)
                    .map(|d| coarse_position(d, pose))
                    .collect();
                rows.push(io::GospaRow::new(k, "raw", &gospa(&raw, t, cfg)));
            }
            if let Some(f) = filtered {
                rows.push(io::GospaRow::new(k, "filter", &gospa(&f.at_step(k), t, cfg)));
            }
            rows.push(io::GospaRow::new(k, "smoother", &gospa(&smoothed.at_step(k), t, cfg)));
            rows
        })
        .collect();
    let rows: Vec<io::GospaRow> = rows_per_step.into_iter().flatten().collect();
    let mean = |name: &str| {
        let v: Vec<f64> = rows.iter().filter(|r| r.estimator == name).map(|r| r.total).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let summary = EvalSummary {
        steps: poses.len(),
        raw_mean: mean("raw").unwrap_or(f64::NAN),
        filter_mean: mean("filter"),
        smoother_mean: mean("smoother").unwrap_or(0.0),
        map_points: smoothed.len(),
    };
    (rows, summary)
}

pub fn stage_evaluate(cfg: &ScenarioConfig, out: &Path) -> Result<(Vec<String>, EvalSummary)> {
    let truth = io::read_truth(&out.join(TRUTH_FILE))?;
    let map = io::read_map(&out.join(MAP_FILE))?;
    let filtered_path = out.join(FILTERED_MAP_FILE);
    let filtered = filtered_path
        .is_file()
        .then(|| io::read_map(&filtered_path))
        .transpose()?;
    let poses_path = out.join(POSES_FILE);
    let poses = if poses_path.is_file() {
        io::read_poses(&poses_path)?
    } else {
        poses_from_truth(&truth)
    };
    let det_path = out.join(DETECTIONS_FILE);
    let detections = det_path.is_file().then(|| io::read_detections(&det_path)).transpose()?;
    let (rows, summary) = evaluate(
        &cfg.gospa,
        cfg.chart.grid.max_range,
        &poses,
        &truth,
        &map,
        filtered.as_ref(),
        detections.as_deref(),
    );
    let path = out.join(GOSPA_FILE);
    io::write_gospa(&path, &rows)?;
    Ok((vec![rel(out, &path)], summary))
}

/// Placeholder poses (one per truth pose index) for scoring without a pose
/// file; only the indices are used.
fn poses_from_truth(truth: &[TruthPoint]) -> Vec<Pose> {
    let mut idx: Vec<usize> = truth.iter().map(|t| t.pose_index).collect();
    idx.sort_unstable();
    idx.dedup();
    idx.into_iter()
        .map(|i| Pose::monostatic(i, Point::zeros(), 0.0))
        .collect()
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Last stage to execute.
    pub through: Option<Stage>,
    /// Start from this stage; earlier artifacts must already exist.
    pub from: Option<Stage>,
    /// External observation file for the chart stage.
    pub observations: Option<PathBuf>,
}

/// Runs the configured stages, writing artifacts and a manifest into `out`.
/// On failure the manifest records the failing stage and the error names it.
pub fn run_pipeline(cfg: &ScenarioConfig, out: &Path, opts: &RunOptions) -> Result<RunManifest> {
    let first = opts.from.unwrap_or(Stage::Simulate);
    if first == Stage::Simulate {
        cfg.validate()?;
    } else {
        cfg.tracker.validate()?;
        cfg.gospa.validate()?;
    }
    let last = opts.through.unwrap_or(Stage::Evaluate);
    let _lock = OutputLock::acquire(out)?;
    let mut manifest = RunManifest::new(cfg);
    manifest.write(out)?;
    for stage in Stage::ALL.into_iter().filter(|s| *s >= first && *s <= last) {
        let t0 = Instant::now();
        let result = match stage {
            Stage::Simulate => stage_simulate(cfg, out),
            Stage::Chart => stage_chart(cfg, out, opts.observations.as_deref()),
            Stage::Track => stage_track(cfg, out).map(|(f, n)| {
                manifest.tracks = Some(n);
                f
            }),
            Stage::Evaluate => stage_evaluate(cfg, out).map(|(f, s)| {
                manifest.summary = Some(s);
                f
            }),
        };
        match result {
            Ok(outputs) => {
                log::info!("stage {} finished in {:.2?}", stage.as_str(), t0.elapsed());
                manifest.stages.push(StageRecord {
                    name: stage.as_str().into(),
                    seconds: t0.elapsed().as_secs_f64(),
                    outputs,
                });
                manifest.write(out)?;
            }
            Err(e) => {
                manifest.status = format!("failed at {}", stage.as_str());
                manifest.write(out)?;
                return Err(Error::Stage {
                    stage: stage.as_str(),
                    source: Box::new(e),
                });
            }
        }
    }
    manifest.status = "complete".into();
    manifest.write(out)?;
    Ok(manifest)
}
