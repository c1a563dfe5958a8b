//! File formats: the binary observation container and the CSV/JSON
//! artifacts written by the pipeline.
//!
//! # Observation container
//!
//! A text header followed by one or more records. Every record has its own
//! text header terminated by an `end` line, then a little-endian f64 payload
//! of interleaved `(re, im)` pairs: first all received symbols, then all
//! transmitted symbols, each ordered with the subcarrier index fastest, then
//! the beam index, then the OFDM symbol index.
//!
//! ```text
//! RFOBS 1
//! records 2
//! record 0
//! n_subcarriers 512
//! n_beams 40
//! n_symbols 4
//! subcarrier_spacing 781250
//! carrier_frequency 28000000000
//! constellation qpsk
//! pose 0 0 0 1.5707963267948966 -0.03 0 0.03 0
//! beam_angles -3.14159 ...
//! payload 1310720
//! end
//! <1310720 bytes>
//! record 1
//! ...
//! ```
//!
//! The `pose` line is `index ue_x ue_y orientation tx_x tx_y rx_x rx_y`;
//! angles are radians.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::chart::{Detection, RangeAngleChart};
use crate::error::{Error, Result};
use crate::geometry::{Point, Pose};
use crate::gospa::GospaResult;
use crate::linalg::CMatrix;
use crate::map::{EnvironmentMap, MapPoint};
use crate::selection::LabeledDetection;
use crate::sim::{Constellation, ObservationGrid, TruthPoint, WaveformConfig};
use crate::tracking::TrackLogRow;

const MAGIC: &str = "RFOBS 1";

/// Serializes observation grids into the container format.
pub fn encode_observations(grids: &[ObservationGrid]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(format!("{MAGIC}\nrecords {}\n", grids.len()).as_bytes());
    for (k, g) in grids.iter().enumerate() {
        let w = &g.waveform;
        let p = &g.pose;
        let angles: Vec<String> = g.beam_angles.iter().map(|a| a.to_string()).collect();
        let payload = payload_len(w.n_subcarriers, g.beam_angles.len(), w.n_symbols);
        let header = format!(
            "record {k}\nn_subcarriers {}\nn_beams {}\nn_symbols {}\nsubcarrier_spacing {}\n\
             carrier_frequency {}\nconstellation {}\npose {} {} {} {} {} {} {} {}\nbeam_angles {}\npayload {payload}\nend\n",
            w.n_subcarriers,
            g.beam_angles.len(),
            w.n_symbols,
            w.subcarrier_spacing,
            w.carrier_frequency,
            w.constellation.as_str(),
            p.index,
            p.ue_position.x,
            p.ue_position.y,
            p.orientation,
            p.tx_position.x,
            p.tx_position.y,
            p.rx_position.x,
            p.rx_position.y,
            angles.join(" "),
        );
        out.extend_from_slice(header.as_bytes());
        for set in [&g.received, &g.transmitted] {
            for mat in set.iter() {
                // Column-major storage is subcarrier-fastest, then beam.
                for z in mat.iter() {
                    out.extend_from_slice(&z.re.to_le_bytes());
                    out.extend_from_slice(&z.im.to_le_bytes());
                }
            }
        }
    }
    out
}

fn payload_len(n: usize, i: usize, m: usize) -> usize {
    2 * m * i * n * 2 * 8
}

pub fn write_observations(path: &Path, grids: &[ObservationGrid]) -> Result<()> {
    fs::write(path, encode_observations(grids))?;
    Ok(())
}

pub fn read_observations(path: &Path) -> Result<Vec<ObservationGrid>> {
    decode_observations(&fs::read(path)?)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Next header line and the offset at which it starts.
    fn line(&mut self) -> Result<(u64, &'a str)> {
        let start = self.pos;
        let rest = &self.buf[start..];
        let len = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::parse(start as u64, "unexpected end of header"))?;
        let text = std::str::from_utf8(&rest[..len])
            .map_err(|_| Error::parse(start as u64, "header line is not valid UTF-8"))?;
        self.pos = start + len + 1;
        Ok((start as u64, text))
    }

    /// Next line, which must start with `key`; returns the remaining fields.
    fn keyed(&mut self, key: &str) -> Result<(u64, Vec<&'a str>)> {
        let (off, text) = self.line()?;
        let mut fields = text.split_whitespace();
        match fields.next() {
            Some(k) if k == key => Ok((off, fields.collect())),
            other => Err(Error::parse(
                off,
                format!("expected `{key}`, found `{}`", other.unwrap_or("")),
            )),
        }
    }

    fn single<T: std::str::FromStr>(&mut self, key: &str) -> Result<(u64, T)> {
        let (off, fields) = self.keyed(key)?;
        if fields.len() != 1 {
            return Err(Error::parse(off, format!("`{key}` takes exactly one value")));
        }
        let v = fields[0]
            .parse()
            .map_err(|_| Error::parse(off, format!("invalid value `{}` for `{key}`", fields[0])))?;
        Ok((off, v))
    }
}

fn parse_floats(off: u64, key: &str, fields: &[&str]) -> Result<Vec<f64>> {
    fields
        .iter()
        .map(|f| {
            f.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(off, format!("invalid number `{f}` in `{key}`")))
        })
        .collect()
}

pub fn decode_observations(buf: &[u8]) -> Result<Vec<ObservationGrid>> {
    let mut r = Reader { buf, pos: 0 };
    let (off, magic) = r.line()?;
    if magic.trim_end() != MAGIC {
        return Err(Error::parse(
            off,
            format!("bad magic line `{magic}`, expected `{MAGIC}`"),
        ));
    }
    let (_, count) = r.single::<usize>("records")?;
    let mut grids = Vec::with_capacity(count);
    for k in 0..count {
        let (off, idx) = r.single::<usize>("record")?;
        if idx != k {
            return Err(Error::parse(off, format!("expected record {k}, found {idx}")));
        }
        let (off_n, n) = r.single::<usize>("n_subcarriers")?;
        if n == 0 {
            return Err(Error::parse(off_n, "n_subcarriers must be positive"));
        }
        let (off_i, i) = r.single::<usize>("n_beams")?;
        if i == 0 {
            return Err(Error::parse(off_i, "n_beams must be positive"));
        }
        let (off_m, m) = r.single::<usize>("n_symbols")?;
        if m == 0 {
            return Err(Error::parse(off_m, "n_symbols must be positive"));
        }
        let (off_df, df) = r.single::<f64>("subcarrier_spacing")?;
        let (off_fc, fc) = r.single::<f64>("carrier_frequency")?;
        for (o, v, name) in [(off_df, df, "subcarrier_spacing"), (off_fc, fc, "carrier_frequency")] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::parse(o, format!("{name} must be positive")));
            }
        }
        let (off_c, cname) = r.single::<String>("constellation")?;
        let constellation = Constellation::parse(&cname)
            .ok_or_else(|| Error::parse(off_c, format!("unknown constellation `{cname}`")))?;
        let (off_p, pf) = r.keyed("pose")?;
        if pf.len() != 8 {
            return Err(Error::parse(off_p, "pose needs 8 fields"));
        }
        let pose_index: usize = pf[0]
            .parse()
            .map_err(|_| Error::parse(off_p, format!("invalid pose index `{}`", pf[0])))?;
        let v = parse_floats(off_p, "pose", &pf[1..])?;
        let pose = Pose::with_antennas(
            pose_index,
            Point::new(v[0], v[1]),
            v[2],
            Point::new(v[3], v[4]),
            Point::new(v[5], v[6]),
        )
        .map_err(|e| Error::parse(off_p, e.to_string()))?;
        let (off_a, af) = r.keyed("beam_angles")?;
        let beam_angles = parse_floats(off_a, "beam_angles", &af)?;
        if beam_angles.len() != i {
            return Err(Error::parse(
                off_a,
                format!("header declares {i} beams but lists {} angles", beam_angles.len()),
            ));
        }
        let (off_pl, declared) = r.single::<usize>("payload")?;
        let expected = payload_len(n, i, m);
        if declared != expected {
            return Err(Error::parse(
                off_pl,
                format!("payload of {declared} bytes does not match N={n}, I={i}, M={m} ({expected} bytes)"),
            ));
        }
        r.keyed("end")?;
        let start = r.pos;
        let available = buf.len() - start;
        if available < expected {
            return Err(Error::parse(
                start as u64,
                format!("truncated payload: expected {expected} bytes, found {available}"),
            ));
        }
        let mut values = buf[start..start + expected]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")));
        let mut read_set = || -> Vec<CMatrix> {
            (0..m)
                .map(|_| {
                    CMatrix::from_iterator(
                        n,
                        i,
                        (0..n * i).map(|_| {
                            let re = values.next().expect("length checked");
                            let im = values.next().expect("length checked");
                            Complex64::new(re, im)
                        }),
                    )
                })
                .collect()
        };
        let received = read_set();
        let transmitted = read_set();
        if let Some(bad) = buf[start..start + expected]
            .chunks_exact(8)
            .position(|c| !f64::from_le_bytes(c.try_into().expect("chunk of 8")).is_finite())
        {
            return Err(Error::parse((start + 8 * bad) as u64, "non-finite sample in payload"));
        }
        r.pos = start + expected;
        let grid = ObservationGrid {
            received,
            transmitted,
            beam_angles,
            pose,
            waveform: WaveformConfig {
                n_subcarriers: n,
                n_symbols: m,
                subcarrier_spacing: df,
                carrier_frequency: fc,
                constellation,
            },
        };
        grid.validate().map_err(|e| Error::parse(off, e.to_string()))?;
        grids.push(grid);
    }
    if r.pos != buf.len() {
        return Err(Error::parse(
            r.pos as u64,
            format!("{} trailing bytes after the last record", buf.len() - r.pos),
        ));
    }
    Ok(grids)
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Like [`write_csv`] but writes the header even when there are no rows.
fn write_csv_with_header<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    if rows.is_empty() {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(header)?;
        w.flush()?;
        return Ok(());
    }
    write_csv(path, rows)
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRow {
    pub pose_index: usize,
    pub ue_x: f64,
    pub ue_y: f64,
    pub orientation: f64,
    pub tx_x: f64,
    pub tx_y: f64,
    pub rx_x: f64,
    pub rx_y: f64,
}

const POSE_HEADER: &[&str] = &[
    "pose_index",
    "ue_x",
    "ue_y",
    "orientation",
    "tx_x",
    "tx_y",
    "rx_x",
    "rx_y",
];

pub fn write_poses(path: &Path, poses: &[Pose]) -> Result<()> {
    let rows: Vec<PoseRow> = poses
        .iter()
        .map(|p| PoseRow {
            pose_index: p.index,
            ue_x: p.ue_position.x,
            ue_y: p.ue_position.y,
            orientation: p.orientation,
            tx_x: p.tx_position.x,
            tx_y: p.tx_position.y,
            rx_x: p.rx_position.x,
            rx_y: p.rx_position.y,
        })
        .collect();
    write_csv_with_header(path, POSE_HEADER, &rows)
}

pub fn read_poses(path: &Path) -> Result<Vec<Pose>> {
    read_csv::<PoseRow>(path)?
        .into_iter()
        .map(|r| {
            Pose::with_antennas(
                r.pose_index,
                Point::new(r.ue_x, r.ue_y),
                r.orientation,
                Point::new(r.tx_x, r.tx_y),
                Point::new(r.rx_x, r.rx_y),
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub pose_index: usize,
    pub x: f64,
    pub y: f64,
    pub order: u8,
    pub rss_db: f64,
    pub delay_s: f64,
    /// Global azimuth, radians.
    pub angle_rad: f64,
    pub range_m: f64,
    pub in_fov: bool,
}

const TRUTH_HEADER: &[&str] = &[
    "pose_index",
    "x",
    "y",
    "order",
    "rss_db",
    "delay_s",
    "angle_rad",
    "range_m",
    "in_fov",
];

pub fn write_truth(path: &Path, truth: &[TruthPoint]) -> Result<()> {
    let rows: Vec<TruthRow> = truth
        .iter()
        .map(|t| TruthRow {
            pose_index: t.pose_index,
            x: t.position.x,
            y: t.position.y,
            order: t.order,
            rss_db: t.rss_db,
            delay_s: t.delay,
            angle_rad: t.angle,
            range_m: t.range,
            in_fov: t.in_fov,
        })
        .collect();
    write_csv_with_header(path, TRUTH_HEADER, &rows)
}

pub fn read_truth(path: &Path) -> Result<Vec<TruthPoint>> {
    Ok(read_csv::<TruthRow>(path)?
        .into_iter()
        .map(|r| TruthPoint {
            pose_index: r.pose_index,
            position: Point::new(r.x, r.y),
            order: r.order,
            rss_db: r.rss_db,
            delay: r.delay_s,
            angle: r.angle_rad,
            range: r.range_m,
            in_fov: r.in_fov,
        })
        .collect())
}

/// Detection CSV row. `angle_deg` is the human-readable local azimuth;
/// `angle_rad` carries the exact value used downstream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRow {
    pub pose_index: usize,
    pub angle_deg: f64,
    pub range_m: f64,
    pub rss_db: f64,
    pub re: f64,
    pub im: f64,
    pub angle_rad: f64,
    pub cell_range: usize,
    pub cell_angle: usize,
}

const DETECTION_HEADER: &[&str] = &[
    "pose_index",
    "angle_deg",
    "range_m",
    "rss_db",
    "re",
    "im",
    "angle_rad",
    "cell_range",
    "cell_angle",
];

impl From<&Detection> for DetectionRow {
    fn from(d: &Detection) -> Self {
        DetectionRow {
            pose_index: d.pose_index,
            angle_deg: d.angle.to_degrees(),
            range_m: d.range,
            rss_db: d.rss,
            re: d.amplitude.re,
            im: d.amplitude.im,
            angle_rad: d.angle,
            cell_range: d.cell.0,
            cell_angle: d.cell.1,
        }
    }
}

impl From<&DetectionRow> for Detection {
    fn from(r: &DetectionRow) -> Self {
        Detection {
            pose_index: r.pose_index,
            angle: r.angle_rad,
            range: r.range_m,
            rss: r.rss_db,
            amplitude: Complex64::new(r.re, r.im),
            cell: (r.cell_range, r.cell_angle),
        }
    }
}

pub fn write_detections(path: &Path, detections: &[Detection]) -> Result<()> {
    let rows: Vec<DetectionRow> = detections.iter().map(DetectionRow::from).collect();
    write_csv_with_header(path, DETECTION_HEADER, &rows)
}

pub fn read_detections(path: &Path) -> Result<Vec<Detection>> {
    Ok(read_csv::<DetectionRow>(path)?.iter().map(Detection::from).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub pose_index: usize,
    pub detection_index: usize,
    pub rss_db: f64,
    pub range_m: f64,
    pub posterior_h0: f64,
    pub selected: bool,
}

const SELECTION_HEADER: &[&str] = &[
    "pose_index",
    "detection_index",
    "rss_db",
    "range_m",
    "posterior_h0",
    "selected",
];

/// `labeled[k]` holds the labeled detections of one pose, in detection order.
pub fn write_selection(path: &Path, labeled: &[Vec<LabeledDetection>]) -> Result<()> {
    let rows: Vec<SelectionRow> = labeled
        .iter()
        .flat_map(|pose| {
            pose.iter().enumerate().map(|(k, l)| SelectionRow {
                pose_index: l.detection.pose_index,
                detection_index: k,
                rss_db: l.detection.rss,
                range_m: l.detection.range,
                posterior_h0: l.posterior_h0,
                selected: l.selected,
            })
        })
        .collect();
    write_csv_with_header(path, SELECTION_HEADER, &rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrackCsvRow {
    step: usize,
    track_id: u64,
    x: f64,
    y: f64,
    cov_xx: f64,
    cov_xy: f64,
    cov_yy: f64,
    mu_cwnv: f64,
    mu_cwna: f64,
    matched_detection: Option<usize>,
    event: String,
}

const TRACK_HEADER: &[&str] = &[
    "step",
    "track_id",
    "x",
    "y",
    "cov_xx",
    "cov_xy",
    "cov_yy",
    "mu_cwnv",
    "mu_cwna",
    "matched_detection",
    "event",
];

pub fn write_track_log(path: &Path, rows: &[TrackLogRow]) -> Result<()> {
    let rows: Vec<TrackCsvRow> = rows
        .iter()
        .map(|r| TrackCsvRow {
            step: r.step,
            track_id: r.track_id,
            x: r.x,
            y: r.y,
            cov_xx: r.cov_xx,
            cov_xy: r.cov_xy,
            cov_yy: r.cov_yy,
            mu_cwnv: r.mu_cwnv,
            mu_cwna: r.mu_cwna,
            matched_detection: r.matched_detection,
            event: r.event.as_str().to_string(),
        })
        .collect();
    write_csv_with_header(path, TRACK_HEADER, &rows)
}

const MAP_HEADER: &[&str] = &["x", "y", "cov_xx", "cov_xy", "cov_yy", "track_id", "step"];

pub fn write_map(path: &Path, map: &EnvironmentMap) -> Result<()> {
    write_csv_with_header(path, MAP_HEADER, &map.points)
}

pub fn read_map(path: &Path) -> Result<EnvironmentMap> {
    Ok(EnvironmentMap {
        points: read_csv::<MapPoint>(path)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GospaRow {
    pub step: usize,
    pub estimator: String,
    pub total: f64,
    pub localization: f64,
    pub missed: f64,
    pub false_alarm: f64,
}

impl GospaRow {
    pub fn new(step: usize, estimator: &str, r: &GospaResult) -> Self {
        GospaRow {
            step,
            estimator: estimator.to_string(),
            total: r.total,
            localization: r.localization,
            missed: r.missed,
            false_alarm: r.false_alarm,
        }
    }
}

const GOSPA_HEADER: &[&str] = &["step", "estimator", "total", "localization", "missed", "false_alarm"];

pub fn write_gospa(path: &Path, rows: &[GospaRow]) -> Result<()> {
    write_csv_with_header(path, GOSPA_HEADER, rows)
}

pub fn read_gospa(path: &Path) -> Result<Vec<GospaRow>> {
    read_csv(path)
}

/// Grid axes and solver facts stored next to a chart CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartSidecar {
    pub pose_index: usize,
    pub method: String,
    pub delays_s: Vec<f64>,
    pub half_path_m: Vec<f64>,
    pub angles_rad: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub nonzero: usize,
}

/// Writes the chart magnitude in dB (rows: delay cells, columns: angle
/// cells) to `csv_path` and the axes to `<csv_path>.json`.
pub fn write_chart(csv_path: &Path, chart: &RangeAngleChart, pose_index: usize) -> Result<()> {
    let db = chart.magnitude_db();
    let mut w = csv::Writer::from_path(csv_path)?;
    for p in 0..db.nrows() {
        let row: Vec<String> = (0..db.ncols()).map(|q| db[(p, q)].to_string()).collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    let grid = &chart.grid;
    let sidecar = ChartSidecar {
        pose_index,
        method: chart.method.as_str().to_string(),
        delays_s: grid.delays.clone(),
        half_path_m: (0..grid.n_delays()).map(|p| grid.half_path(p)).collect(),
        angles_rad: grid.angles.clone(),
        iterations: chart.iterations,
        converged: chart.converged,
        nonzero: chart.nonzero_count(),
    };
    let mut f = fs::File::create(sidecar_path(csv_path))?;
    serde_json::to_writer_pretty(&mut f, &sidecar)?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn sidecar_path(csv_path: &Path) -> std::path::PathBuf {
    let mut s = csv_path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}
