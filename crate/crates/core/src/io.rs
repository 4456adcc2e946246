//! File formats shared by the simulator, the pipeline and the evaluator.
//!
//! Dataset layout:
//!
//! ```text
//! manifest.json
//! calibration/correspondences.csv
//! calibration/robot_beacons.csv
//! samples/<id>/cloud.ply
//! samples/<id>/beacons.csv
//! truth/<id>.json
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{Point2, Point3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calib::{CameraIntrinsics, Correspondence, PlaneTag};
use crate::geom::{BeaconPair, FrameId, GeomError, RigidTransform};
use crate::labelgen::{LabelFile, ObjectSpec};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl IoError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn parse(path: &Path, message: impl ToString) -> Self {
        IoError::Parse {
            path: path.to_path_buf(),
            message: message.to_string(),
        }
    }
}

/// Writes via a temporary file in the target directory and renames it into
/// place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    let mut builder = tempfile::Builder::new();
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        builder.permissions(fs::Permissions::from_mode(0o644));
    }
    let mut tmp = builder.tempfile_in(dir).map_err(|e| IoError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| IoError::io(path, e))?;
    tmp.persist(path).map_err(|e| IoError::io(path, e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| IoError::parse(path, e))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| IoError::parse(path, e))
}

/// ASCII PLY with `float` x, y, z.
pub fn write_ply(path: &Path, points: &[Point3<f64>]) -> Result<(), IoError> {
    let mut s = String::with_capacity(32 * points.len() + 128);
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", points.len());
    s.push_str("property float x\nproperty float y\nproperty float z\nend_header\n");
    for p in points {
        let _ = writeln!(s, "{} {} {}", p.x as f32, p.y as f32, p.z as f32);
    }
    write_atomic(path, s.as_bytes())
}

/// Reads the x, y, z properties of an ASCII PLY vertex element.
pub fn read_ply(path: &Path) -> Result<Vec<Point3<f64>>, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(IoError::parse(path, "missing `ply` magic"));
    }
    let mut count = None;
    let mut props: Vec<String> = Vec::new();
    let mut in_vertex = false;
    loop {
        let line = lines.next().ok_or_else(|| IoError::parse(path, "unterminated header"))?;
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["format", fmt, ..] if *fmt != "ascii" => {
                return Err(IoError::parse(path, format!("unsupported PLY format `{fmt}`")))
            }
            ["element", name, n] => {
                in_vertex = *name == "vertex";
                if in_vertex {
                    count = Some(n.parse::<usize>().map_err(|e| IoError::parse(path, e))?);
                }
            }
            ["property", _, name] if in_vertex => props.push(name.to_string()),
            ["end_header"] => break,
            _ => {}
        }
    }
    let count = count.ok_or_else(|| IoError::parse(path, "no vertex element"))?;
    let col = |name: &str| {
        props
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| IoError::parse(path, format!("no `{name}` property")))
    };
    let (ix, iy, iz) = (col("x")?, col("y")?, col("z")?);
    let mut out = Vec::with_capacity(count);
    for (row, line) in lines.take(count).enumerate() {
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| IoError::parse(path, format!("vertex {row}: {e}")))?;
        if vals.len() < props.len() {
            return Err(IoError::parse(path, format!("vertex {row}: too few values")));
        }
        out.push(Point3::new(vals[ix], vals[iy], vals[iz]));
    }
    if out.len() != count {
        return Err(IoError::parse(path, format!("expected {count} vertices, found {}", out.len())));
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct CorrespondenceRow {
    beacon_x: f64,
    beacon_y: f64,
    beacon_z: f64,
    u: f64,
    v: f64,
    plane_tag: Option<PlaneTag>,
}

pub fn write_correspondences(path: &Path, corrs: &[Correspondence]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for c in corrs {
        w.serialize(CorrespondenceRow {
            beacon_x: c.beacon_ips.x,
            beacon_y: c.beacon_ips.y,
            beacon_z: c.beacon_ips.z,
            u: c.pixel.x,
            v: c.pixel.y,
            plane_tag: c.plane_tag,
        })
        .map_err(|e| IoError::parse(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| IoError::parse(path, e))?;
    write_atomic(path, &bytes)
}

pub fn read_correspondences(path: &Path) -> Result<Vec<Correspondence>, IoError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize::<CorrespondenceRow>()
        .map(|row| {
            let row = row.map_err(|e| csv_error(path, e))?;
            Ok(Correspondence {
                beacon_ips: Point3::new(row.beacon_x, row.beacon_y, row.beacon_z),
                pixel: Point2::new(row.u, row.v),
                plane_tag: row.plane_tag,
            })
        })
        .collect()
}

fn csv_error(path: &Path, e: csv::Error) -> IoError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => IoError::io(path, io),
            other => IoError::parse(path, format!("{other:?}")),
        }
    } else {
        IoError::parse(path, e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BeaconId {
    Front,
    Rear,
}

/// One row of a beacon CSV. `clean_*` carry the noise-free position when
/// known (simulated data) and are empty otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeaconRow {
    pub frame: FrameId,
    pub beacon_id: BeaconId,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub clean_x: Option<f64>,
    pub clean_y: Option<f64>,
    pub clean_z: Option<f64>,
}

/// Readings grouped per frame, in file order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BeaconReadings {
    pub noisy: BTreeMap<FrameId, Vec<BeaconPair>>,
    pub clean: BTreeMap<FrameId, Vec<BeaconPair>>,
}

impl BeaconReadings {
    pub fn frame(&self, f: FrameId) -> &[BeaconPair] {
        self.noisy.get(&f).map_or(&[], Vec::as_slice)
    }
}

/// Rows for each reading: front then rear, frames in the given order.
pub fn beacon_rows(readings: &[(FrameId, BeaconPair, Option<BeaconPair>)]) -> Vec<BeaconRow> {
    let mut rows = Vec::with_capacity(2 * readings.len());
    for (frame, noisy, clean) in readings {
        for (id, p, c) in [
            (BeaconId::Front, noisy.front, clean.map(|c| c.front)),
            (BeaconId::Rear, noisy.rear, clean.map(|c| c.rear)),
        ] {
            rows.push(BeaconRow {
                frame: *frame,
                beacon_id: id,
                x: p.x,
                y: p.y,
                z: p.z,
                clean_x: c.map(|c| c.x),
                clean_y: c.map(|c| c.y),
                clean_z: c.map(|c| c.z),
            });
        }
    }
    rows
}

pub fn write_beacons(path: &Path, rows: &[BeaconRow]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| IoError::parse(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| IoError::parse(path, e))?;
    write_atomic(path, &bytes)
}

/// Pairs each front row with the next rear row of the same frame.
pub fn read_beacons(path: &Path) -> Result<BeaconReadings, IoError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut pending: BTreeMap<FrameId, (Point3<f64>, Option<Point3<f64>>)> = BTreeMap::new();
    let mut out = BeaconReadings::default();
    for (line, row) in r.deserialize::<BeaconRow>().enumerate() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let p = Point3::new(row.x, row.y, row.z);
        let c = match (row.clean_x, row.clean_y, row.clean_z) {
            (Some(x), Some(y), Some(z)) => Some(Point3::new(x, y, z)),
            _ => None,
        };
        match row.beacon_id {
            BeaconId::Front => {
                if pending.insert(row.frame, (p, c)).is_some() {
                    return Err(IoError::parse(path, format!("row {}: two front readings in a row for `{}`", line + 2, row.frame)));
                }
            }
            BeaconId::Rear => {
                let (fp, fc) = pending
                    .remove(&row.frame)
                    .ok_or_else(|| IoError::parse(path, format!("row {}: rear reading without front for `{}`", line + 2, row.frame)))?;
                out.noisy.entry(row.frame).or_default().push(BeaconPair::new(fp, p));
                if let (Some(fc), Some(c)) = (fc, c) {
                    out.clean.entry(row.frame).or_default().push(BeaconPair::new(fc, c));
                }
            }
        }
    }
    if let Some(frame) = pending.keys().next() {
        return Err(IoError::parse(path, format!("front reading without rear for `{frame}`")));
    }
    Ok(out)
}

/// A measured object present in every sample of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectEntry {
    pub id: String,
    pub frame: FrameId,
    pub spec: ObjectSpec,
}

/// Rig constants known to the simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigTruth {
    /// `T_cam←robot`, row-major.
    pub cam_from_robot: [f64; 16],
    /// `T_lidar←cam`, row-major.
    pub lidar_from_cam: [f64; 16],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub seed: u64,
    pub intrinsics: CameraIntrinsics,
    /// `T_lidar←cam`, row-major.
    pub lidar_from_cam: [f64; 16],
    pub objects: Vec<ObjectEntry>,
    pub samples: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<RigTruth>,
}

impl Manifest {
    pub fn lidar_from_cam(&self) -> Result<RigidTransform, GeomError> {
        RigidTransform::from_row_major(&self.lidar_from_cam, FrameId::Cam, FrameId::Lidar)
    }
}

pub const MANIFEST: &str = "manifest.json";

/// Paths inside a dataset directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self, IoError> {
        Ok(Self {
            root: root.to_path_buf(),
            manifest: read_json(&root.join(MANIFEST))?,
        })
    }

    pub fn correspondences_path(root: &Path) -> PathBuf {
        root.join("calibration").join("correspondences.csv")
    }

    pub fn robot_beacons_path(root: &Path) -> PathBuf {
        root.join("calibration").join("robot_beacons.csv")
    }

    pub fn cloud_path(root: &Path, id: &str) -> PathBuf {
        root.join("samples").join(id).join("cloud.ply")
    }

    pub fn beacons_path(root: &Path, id: &str) -> PathBuf {
        root.join("samples").join(id).join("beacons.csv")
    }

    pub fn truth_path(root: &Path, id: &str) -> PathBuf {
        root.join("truth").join(format!("{id}.json"))
    }

    pub fn load_cloud(&self, id: &str) -> Result<Vec<Point3<f64>>, IoError> {
        read_ply(&Self::cloud_path(&self.root, id))
    }

    pub fn load_beacons(&self, id: &str) -> Result<BeaconReadings, IoError> {
        read_beacons(&Self::beacons_path(&self.root, id))
    }

    pub fn load_truth(&self, id: &str) -> Result<LabelFile, IoError> {
        read_json(&Self::truth_path(&self.root, id))
    }
}

/// Label files in a directory, keyed by sample id (file stem), sorted.
pub fn read_label_dir(dir: &Path) -> Result<BTreeMap<String, LabelFile>, IoError> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| IoError::io(dir, e))? {
        let path = entry.map_err(|e| IoError::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let label: LabelFile = read_json(&path)?;
        out.insert(label.sample_id.clone(), label);
    }
    Ok(out)
}
