//! Deterministic synthetic scenes: a robot carrying a camera and a level
//! multi-channel LiDAR, cuboid and table objects tagged with beacon pairs,
//! and a calibration session with beacons on the floor and on a table.
//!
//! Placement, beacon noise, pixel noise and range noise draw from separate
//! RNG streams, so changing a noise level never moves the objects.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{Point2, Point3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calib::{CameraIntrinsics, Correspondence, PlaneTag};
use crate::geom::{BeaconPair, FrameId, GeomError, RigidTransform};
use crate::io::{self, BeaconReadings, Dataset, IoError, Manifest, ObjectEntry, RigTruth};
use crate::labelgen::{self, ImageLabel, LabelFile, ObjectLabel, ObjectSpec, OrientedBox3};
use crate::rng::derive_seed;

const CALIB_STREAM: u64 = 1;
const SAMPLE_STREAM: u64 = 2;
const MAX_PLACEMENT_TRIES: usize = 10_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scene config: {0}")]
    InvalidConfig(String),
    #[error("could not place objects after {0} attempts; loosen the placement limits")]
    PlacementFailed(usize),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BeaconNoise {
    /// Independent per-axis noise in `[−half_width, half_width]`.
    Uniform { half_width: f64 },
    Gaussian { sigma: f64 },
}

impl BeaconNoise {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector3<f64> {
        match *self {
            BeaconNoise::Uniform { half_width: b } => Vector3::from_fn(|_, _| {
                if b > 0.0 {
                    rng.random_range(-b..=b)
                } else {
                    0.0
                }
            }),
            BeaconNoise::Gaussian { sigma } => {
                if sigma > 0.0 {
                    let n = Normal::new(0.0, sigma).expect("sigma validated");
                    Vector3::from_fn(|_, _| n.sample(rng))
                } else {
                    Vector3::zeros()
                }
            }
        }
    }

    fn scale(&self) -> f64 {
        match *self {
            BeaconNoise::Uniform { half_width } => half_width,
            BeaconNoise::Gaussian { sigma } => sigma,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    Cuboid,
    /// Thin top slab on a square central stem.
    Table { top_thickness: f64, stem_width: f64 },
}

/// Unknown keys are rejected by the flattened [`ObjectSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectConfig {
    #[serde(flatten)]
    pub spec: ObjectSpec,
    pub shape: Shape,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LidarConfig {
    pub channels: u32,
    /// Full vertical field of view, degrees, symmetric about the horizon.
    pub vertical_fov_deg: f64,
    pub azimuth_step_deg: f64,
    pub max_range: f64,
    /// Gaussian range noise, meters.
    pub range_noise: f64,
}

impl Default for LidarConfig {
    fn default() -> Self {
        Self {
            channels: 16,
            vertical_fov_deg: 30.0,
            azimuth_step_deg: 0.2,
            max_range: 30.0,
            range_noise: 0.0,
        }
    }
}

/// Sensor mounting on the robot. The robot frame has its origin on the
/// front robot beacon, x forward and z up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RigConfig {
    /// Height of the robot beacons above the floor.
    pub beacon_height: f64,
    /// Distance from the front to the rear robot beacon.
    pub beacon_spacing: f64,
    pub camera_offset: [f64; 3],
    /// Downward tilt of the optical axis.
    pub camera_pitch_deg: f64,
    pub lidar_offset: [f64; 3],
    pub lidar_yaw_deg: f64,
}

impl Default for RigConfig {
    fn default() -> Self {
        Self {
            beacon_height: 0.3,
            beacon_spacing: 0.5,
            camera_offset: [0.1, 0.0, 0.7],
            camera_pitch_deg: 10.0,
            lidar_offset: [0.0, 0.0, 0.6],
            lidar_yaw_deg: 1.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationScene {
    pub correspondences: usize,
    /// Share of beacons on the table plane; the rest lie on the floor.
    pub table_fraction: f64,
    pub table_height: f64,
    /// Horizontal camera-to-beacon distance limits, meters.
    pub min_range: f64,
    pub max_range: f64,
    pub pixel_margin: f64,
    pub robot_readings: usize,
}

impl Default for CalibrationScene {
    fn default() -> Self {
        Self {
            correspondences: 63,
            table_fraction: 0.5,
            table_height: 0.75,
            min_range: 1.5,
            max_range: 6.0,
            pixel_margin: 20.0,
            robot_readings: 16,
        }
    }
}

/// Object placement relative to the robot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlacementConfig {
    pub min_range: f64,
    pub max_range: f64,
    pub max_bearing_deg: f64,
    /// Minimum bearing difference between objects, against mutual occlusion.
    pub min_bearing_gap_deg: f64,
    /// Minimum center distance between objects.
    pub min_separation: f64,
    /// Robot positions are drawn from `[−e, e]²`.
    pub room_half_extent: f64,
}

impl Default for PlacementConfig {
    fn default() -> Self {
        Self {
            min_range: 2.0,
            max_range: 4.5,
            max_bearing_deg: 28.0,
            min_bearing_gap_deg: 22.0,
            min_separation: 2.2,
            room_half_extent: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub samples: usize,
    pub intrinsics: CameraIntrinsics,
    pub rig: RigConfig,
    pub lidar: LidarConfig,
    pub beacon_noise: BeaconNoise,
    /// Gaussian pixel noise on calibration annotations.
    pub pixel_noise_sigma: f64,
    /// Beacon readings emitted per frame per sample.
    pub readings_per_sample: usize,
    pub calibration: CalibrationScene,
    pub placement: PlacementConfig,
    pub objects: Vec<ObjectConfig>,
}

pub fn default_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics {
        fx: 700.0,
        fy: 700.0,
        cx: 640.0,
        cy: 360.0,
        width: 1280,
        height: 720,
    }
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            samples: 20,
            intrinsics: default_intrinsics(),
            rig: RigConfig::default(),
            lidar: LidarConfig::default(),
            beacon_noise: BeaconNoise::Uniform { half_width: 0.02 },
            pixel_noise_sigma: 1.0,
            readings_per_sample: 1,
            calibration: CalibrationScene::default(),
            placement: PlacementConfig::default(),
            objects: vec![
                ObjectConfig {
                    spec: ObjectSpec {
                        class: "cabinet".into(),
                        length: 0.8,
                        width: 0.5,
                        height: 1.2,
                    },
                    shape: Shape::Cuboid,
                },
                ObjectConfig {
                    spec: ObjectSpec {
                        class: "table".into(),
                        length: 1.2,
                        width: 0.8,
                        height: 0.75,
                    },
                    shape: Shape::Table {
                        top_thickness: 0.08,
                        stem_width: 0.08,
                    },
                },
            ],
        }
    }
}

impl SceneConfig {
    /// Same scene with every noise source switched off.
    pub fn noise_free(&self) -> Self {
        Self {
            beacon_noise: BeaconNoise::Uniform { half_width: 0.0 },
            pixel_noise_sigma: 0.0,
            lidar: LidarConfig {
                range_noise: 0.0,
                ..self.lidar
            },
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        self.intrinsics
            .validate()
            .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        if self.lidar.channels == 0 {
            return bad("lidar.channels must be at least 1".into());
        }
        if !(self.lidar.azimuth_step_deg > 0.0 && self.lidar.max_range > 0.0) {
            return bad("lidar azimuth step and range must be positive".into());
        }
        if !(self.beacon_noise.scale() >= 0.0) || !(self.pixel_noise_sigma >= 0.0) || !(self.lidar.range_noise >= 0.0) {
            return bad("noise levels must be non-negative".into());
        }
        if self.readings_per_sample == 0 || self.calibration.robot_readings == 0 {
            return bad("reading counts must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.calibration.table_fraction) {
            return bad("calibration.table_fraction must be in [0, 1]".into());
        }
        if self.placement.min_range > self.placement.max_range || self.calibration.min_range > self.calibration.max_range {
            return bad("range limits are inverted".into());
        }
        for o in &self.objects {
            o.spec.validate().map_err(|e| SimError::InvalidConfig(e.to_string()))?;
            if let Shape::Table { top_thickness, stem_width } = o.shape {
                if !(top_thickness > 0.0 && top_thickness < o.spec.height)
                    || !(stem_width > 0.0 && stem_width <= o.spec.length.min(o.spec.width))
                {
                    return bad(format!("table `{}` has inconsistent top/stem sizes", o.spec.class));
                }
            }
        }
        Ok(())
    }
}

/// True sensor transforms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rig {
    pub intrinsics: CameraIntrinsics,
    pub cam_from_robot: RigidTransform,
    pub lidar_from_robot: RigidTransform,
    pub lidar_from_cam: RigidTransform,
}

impl Rig {
    pub fn new(cfg: &SceneConfig) -> Self {
        let r = &cfg.rig;
        let p = r.camera_pitch_deg.to_radians();
        // Optical axis forward and pitched down, image x to the robot's
        // right, image y down.
        let z_c = Vector3::new(p.cos(), 0.0, -p.sin());
        let x_c = Vector3::new(0.0, -1.0, 0.0);
        let y_c = z_c.cross(&x_c);
        let robot_from_cam = RigidTransform::new(
            nalgebra::Matrix3::from_columns(&[x_c, y_c, z_c]),
            Vector3::from(r.camera_offset),
            FrameId::Cam,
            FrameId::Robot,
        )
        .expect("orthonormal by construction");
        let robot_from_lidar = RigidTransform::from_yaw(
            r.lidar_yaw_deg.to_radians(),
            Vector3::from(r.lidar_offset),
            FrameId::Lidar,
            FrameId::Robot,
        );
        let cam_from_robot = robot_from_cam.inverse();
        let lidar_from_robot = robot_from_lidar.inverse();
        Self {
            intrinsics: cfg.intrinsics,
            cam_from_robot,
            lidar_from_robot,
            lidar_from_cam: lidar_from_robot.compose(&robot_from_cam).expect("frames chain"),
        }
    }
}

/// Beacon positions on an object's top surface, ±0.4·l along its x-axis.
pub fn object_beacons(box_ips: &OrientedBox3) -> BeaconPair {
    let (s, c) = box_ips.yaw.sin_cos();
    let off = 0.4 * box_ips.dims.x;
    let top = box_ips.center.z + 0.5 * box_ips.dims.z;
    BeaconPair::new(
        Point3::new(box_ips.center.x + c * off, box_ips.center.y + s * off, top),
        Point3::new(box_ips.center.x - c * off, box_ips.center.y - s * off, top),
    )
}

/// Solid parts of an object, in the object's parent frame.
pub fn object_parts(b: &OrientedBox3, shape: &Shape) -> Vec<OrientedBox3> {
    match *shape {
        Shape::Cuboid => vec![*b],
        Shape::Table { top_thickness, stem_width } => {
            let bottom = b.center.z - 0.5 * b.dims.z;
            let stem_h = b.dims.z - top_thickness;
            vec![
                OrientedBox3::new(
                    b.frame,
                    Point3::new(b.center.x, b.center.y, bottom + b.dims.z - 0.5 * top_thickness),
                    Vector3::new(b.dims.x, b.dims.y, top_thickness),
                    b.yaw,
                ),
                OrientedBox3::new(
                    b.frame,
                    Point3::new(b.center.x, b.center.y, bottom + 0.5 * stem_h),
                    Vector3::new(stem_width, stem_width, stem_h),
                    b.yaw,
                ),
            ]
        }
    }
}

/// Entry distance of a ray into a yaw box (slab method); `None` on a miss
/// or when the origin is inside.
pub fn ray_box(origin: &Point3<f64>, dir: &Vector3<f64>, b: &OrientedBox3) -> Option<f64> {
    let (s, c) = b.yaw.sin_cos();
    let d0 = origin - b.center;
    let o = Vector3::new(c * d0.x + s * d0.y, -s * d0.x + c * d0.y, d0.z);
    let d = Vector3::new(c * dir.x + s * dir.y, -s * dir.x + c * dir.y, dir.z);
    let half = b.dims * 0.5;
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for k in 0..3 {
        if d[k].abs() < 1e-15 {
            if o[k].abs() > half[k] {
                return None;
            }
            continue;
        }
        let a = (-half[k] - o[k]) / d[k];
        let z = (half[k] - o[k]) / d[k];
        t0 = t0.max(a.min(z));
        t1 = t1.min(a.max(z));
    }
    (t0 <= t1 && t0 > 0.0).then_some(t0)
}

/// Unit ray directions of the scan pattern, channel-major.
pub fn scan_directions(l: &LidarConfig) -> Vec<Vector3<f64>> {
    let steps = (360.0 / l.azimuth_step_deg).round() as usize;
    let half = 0.5 * l.vertical_fov_deg;
    (0..l.channels)
        .flat_map(|ch| {
            let elev = if l.channels == 1 {
                0.0
            } else {
                -half + l.vertical_fov_deg * ch as f64 / (l.channels - 1) as f64
            }
            .to_radians();
            (0..steps).map(move |j| {
                let az = (j as f64 * l.azimuth_step_deg).to_radians();
                Vector3::new(elev.cos() * az.cos(), elev.cos() * az.sin(), elev.sin())
            })
        })
        .collect()
}

/// Nearest hit per ray among object parts and the ground, in the LiDAR
/// frame. `parts` are LiDAR-frame boxes; the ground is `z = ground_z`.
pub fn raycast_lidar<R: Rng + ?Sized>(
    l: &LidarConfig,
    parts: &[OrientedBox3],
    ground_z: f64,
    rng: &mut R,
) -> Vec<Point3<f64>> {
    let origin = Point3::origin();
    let noise = (l.range_noise > 0.0).then(|| Normal::new(0.0, l.range_noise).expect("validated"));
    let mut out = Vec::new();
    for dir in scan_directions(l) {
        let mut best = if dir.z < 0.0 { ground_z / dir.z } else { f64::INFINITY };
        for p in parts {
            if let Some(t) = ray_box(&origin, &dir, p) {
                best = best.min(t);
            }
        }
        if best <= l.max_range {
            let t = match &noise {
                Some(n) => best + n.sample(rng),
                None => best,
            };
            out.push(Point3::from(dir * t));
        }
    }
    out
}

/// One reading: the noisy pair and the true pair.
pub fn emit_beacons<R: Rng + ?Sized>(clean: &BeaconPair, noise: &BeaconNoise, rng: &mut R) -> (BeaconPair, BeaconPair) {
    let front = clean.front + noise.sample(rng);
    let rear = clean.rear + noise.sample(rng);
    (BeaconPair::new(front, rear), *clean)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectTruth {
    pub id: String,
    pub frame: FrameId,
    pub class: String,
    /// Object beacon frame pose in the robot frame, from the placement
    /// parameters directly.
    pub robot_from_obj: RigidTransform,
    pub box_ips: OrientedBox3,
    pub box_lidar: OrientedBox3,
    /// `Err` holds the reason no image box exists.
    pub image: Result<ImageLabel, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthSample {
    pub id: String,
    pub ips_from_robot: RigidTransform,
    /// Per reading: frame, noisy pair, clean pair. Robot first, then objects.
    pub readings: Vec<(FrameId, BeaconPair, BeaconPair)>,
    /// LiDAR frame.
    pub cloud: Vec<Point3<f64>>,
    pub objects: Vec<ObjectTruth>,
}

impl GroundTruthSample {
    /// Readings grouped by frame, as they would be read back from disk.
    pub fn beacon_readings(&self) -> BeaconReadings {
        let mut out = BeaconReadings::default();
        for (f, n, c) in &self.readings {
            out.noisy.entry(*f).or_default().push(*n);
            out.clean.entry(*f).or_default().push(*c);
        }
        out
    }

    pub fn label_file(&self) -> LabelFile {
        LabelFile {
            sample_id: self.id.clone(),
            objects: self
                .objects
                .iter()
                .map(|o| {
                    let (box2d, truncated, note) = match &o.image {
                        Ok(l) => (Some(l.bbox), l.truncated, None),
                        Err(r) => (None, false, Some(r.clone())),
                    };
                    ObjectLabel {
                        id: o.id.clone(),
                        class: o.class.clone(),
                        box3d_lidar: Some((&o.box_lidar).into()),
                        box2d,
                        truncated,
                        refined: false,
                        note,
                    }
                })
                .collect(),
        }
    }
}

pub fn sample_id(index: usize) -> String {
    format!("{index:04}")
}

fn robot_beacons(cfg: &SceneConfig, ips_from_robot: &RigidTransform) -> BeaconPair {
    BeaconPair::new(
        ips_from_robot.transform_point(&Point3::origin()),
        ips_from_robot.transform_point(&Point3::new(-cfg.rig.beacon_spacing, 0.0, 0.0)),
    )
}

fn random_robot_pose(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> RigidTransform {
    let e = cfg.placement.room_half_extent;
    let (x, y) = if e > 0.0 {
        (rng.random_range(-e..=e), rng.random_range(-e..=e))
    } else {
        (0.0, 0.0)
    };
    RigidTransform::from_yaw(
        rng.random_range(-PI..PI),
        Vector3::new(x, y, cfg.rig.beacon_height),
        FrameId::Robot,
        FrameId::Ips,
    )
}

/// Object (center on the floor plane, yaw) poses relative to the robot.
fn place_objects(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Result<Vec<(f64, f64, f64)>, SimError> {
    let p = &cfg.placement;
    let max_b = p.max_bearing_deg.to_radians();
    let gap = p.min_bearing_gap_deg.to_radians();
    for _ in 0..MAX_PLACEMENT_TRIES {
        let poses: Vec<(f64, f64, f64, f64)> = cfg
            .objects
            .iter()
            .map(|_| {
                let range = rng.random_range(p.min_range..=p.max_range);
                let bearing = rng.random_range(-max_b..=max_b);
                let yaw = rng.random_range(-PI..PI);
                (range * bearing.cos(), range * bearing.sin(), yaw, bearing)
            })
            .collect();
        let ok = poses.iter().enumerate().all(|(i, a)| {
            poses[..i].iter().all(|b| {
                (a.3 - b.3).abs() >= gap && ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt() >= p.min_separation
            })
        });
        if ok {
            return Ok(poses.into_iter().map(|(x, y, yaw, _)| (x, y, yaw)).collect());
        }
    }
    Err(SimError::PlacementFailed(MAX_PLACEMENT_TRIES))
}

/// Generates sample `index` of the sequence.
pub fn simulate_sample(cfg: &SceneConfig, seed: u64, index: usize) -> Result<GroundTruthSample, SimError> {
    let mut place_rng = sample_rng(seed, index, 0);
    let ips_from_robot = random_robot_pose(cfg, &mut place_rng);
    let placements = place_objects(cfg, &mut place_rng)?;
    simulate_placed(cfg, seed, index, &ips_from_robot, &placements)
}

fn sample_rng(seed: u64, index: usize, k: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, &[SAMPLE_STREAM, index as u64, k]))
}

/// Sample `index` with a given robot pose and per-object `(x, y, yaw)` floor
/// placements in the robot frame, one per configured object.
pub fn simulate_placed(
    cfg: &SceneConfig,
    seed: u64,
    index: usize,
    ips_from_robot: &RigidTransform,
    placements: &[(f64, f64, f64)],
) -> Result<GroundTruthSample, SimError> {
    if placements.len() != cfg.objects.len() {
        return Err(SimError::InvalidConfig(format!(
            "{} placements for {} objects",
            placements.len(),
            cfg.objects.len()
        )));
    }
    let rig = Rig::new(cfg);
    let (mut beacon_rng, mut lidar_rng) = (sample_rng(seed, index, 1), sample_rng(seed, index, 2));
    let ips_from_robot = *ips_from_robot;
    let robot_from_ips = ips_from_robot.inverse();
    let cam_from_ips = rig.cam_from_robot.compose(&robot_from_ips)?;
    let lidar_from_ips = rig.lidar_from_robot.compose(&robot_from_ips)?;

    let mut objects = Vec::new();
    let mut parts_lidar = Vec::new();
    for (k, (o, &(x, y, yaw))) in cfg.objects.iter().zip(placements).enumerate() {
        let frame = FrameId::Obj(k as u32);
        let h = o.spec.height;
        // Box center in the robot frame (robot origin is beacon_height up).
        let center_robot = Point3::new(x, y, 0.5 * h - cfg.rig.beacon_height);
        let box_robot = OrientedBox3::new(FrameId::Robot, center_robot, o.spec.dims(), yaw);
        let box_ips = box_robot.transform_level(&ips_from_robot)?;
        let box_lidar = box_robot.transform_level(&rig.lidar_from_robot)?;
        // Object frame: origin on the front beacon, x along the heading.
        let (s, c) = yaw.sin_cos();
        let front = center_robot + Vector3::new(c * 0.4 * o.spec.length, s * 0.4 * o.spec.length, 0.5 * h);
        let robot_from_obj = RigidTransform::from_yaw(yaw, front.coords, frame, FrameId::Robot);
        let cam_vertices = box_ips.vertices().transform(&cam_from_ips)?;
        let image = match labelgen::project_box(&cam_vertices, &cfg.intrinsics) {
            Ok(l) if l.bbox.area() > 0.0 => Ok(l),
            Ok(_) => Err("outside image".to_string()),
            Err(_) => Err("behind camera".to_string()),
        };
        parts_lidar.extend(object_parts(&box_lidar, &o.shape));
        objects.push(ObjectTruth {
            id: frame.to_string(),
            frame,
            class: o.spec.class.clone(),
            robot_from_obj,
            box_ips,
            box_lidar,
            image,
        });
    }

    let ground_z = -lidar_from_ips.inverse().translation().z;
    let cloud = raycast_lidar(&cfg.lidar, &parts_lidar, ground_z, &mut lidar_rng);

    let robot_pair = robot_beacons(cfg, &ips_from_robot);
    let mut readings = Vec::new();
    for _ in 0..cfg.readings_per_sample {
        let (n, c) = emit_beacons(&robot_pair, &cfg.beacon_noise, &mut beacon_rng);
        readings.push((FrameId::Robot, n, c));
        for o in &objects {
            let (n, c) = emit_beacons(&object_beacons(&o.box_ips), &cfg.beacon_noise, &mut beacon_rng);
            readings.push((o.frame, n, c));
        }
    }
    Ok(GroundTruthSample {
        id: sample_id(index),
        ips_from_robot,
        readings,
        cloud,
        objects,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSession {
    pub correspondences: Vec<Correspondence>,
    /// Noise-free counterpart of `correspondences`.
    pub clean: Vec<Correspondence>,
    pub robot_readings: Vec<(BeaconPair, BeaconPair)>,
    pub ips_from_robot: RigidTransform,
}

/// A stationary robot observing beacons on the floor and on a table.
pub fn simulate_calibration(cfg: &SceneConfig, seed: u64) -> Result<CalibrationSession, SimError> {
    cfg.validate()?;
    let rig = Rig::new(cfg);
    let c = &cfg.calibration;
    let stream = |k: u64| ChaCha8Rng::seed_from_u64(derive_seed(seed, &[CALIB_STREAM, k]));
    let (mut geo_rng, mut beacon_rng, mut pixel_rng) = (stream(0), stream(1), stream(2));

    let ips_from_robot = random_robot_pose(cfg, &mut geo_rng);
    let cam_from_ips = rig.cam_from_robot.compose(&ips_from_robot.inverse())?;
    let ips_from_cam = cam_from_ips.inverse();
    let cam_center = ips_from_cam.transform_point(&Point3::origin());
    let k = &cfg.intrinsics;
    let n_table = (c.table_fraction * c.correspondences as f64).round() as usize;

    let mut clean = Vec::with_capacity(c.correspondences);
    for i in 0..c.correspondences {
        let (tag, z) = if i < n_table {
            (PlaneTag::Table, c.table_height)
        } else {
            (PlaneTag::Floor, 0.0)
        };
        let mut tries = 0;
        let corr = loop {
            tries += 1;
            if tries > MAX_PLACEMENT_TRIES {
                return Err(SimError::PlacementFailed(MAX_PLACEMENT_TRIES));
            }
            let m = c.pixel_margin;
            let px = Point2::new(
                geo_rng.random_range(m..k.width as f64 - m),
                geo_rng.random_range(m..k.height as f64 - m),
            );
            let ray_cam = Vector3::new((px.x - k.cx) / k.fx, (px.y - k.cy) / k.fy, 1.0);
            let ray = ips_from_cam.transform_vector(&ray_cam);
            if ray.z >= -1e-9 {
                continue;
            }
            let t = (z - cam_center.z) / ray.z;
            if t <= 0.0 {
                continue;
            }
            let p = cam_center + ray * t;
            let horizontal = ((p.x - cam_center.x).powi(2) + (p.y - cam_center.y).powi(2)).sqrt();
            if horizontal < c.min_range || horizontal > c.max_range {
                continue;
            }
            break Correspondence {
                beacon_ips: Point3::new(p.x, p.y, z),
                pixel: px,
                plane_tag: Some(tag),
            };
        };
        clean.push(corr);
    }

    let pixel_noise = (cfg.pixel_noise_sigma > 0.0).then(|| Normal::new(0.0, cfg.pixel_noise_sigma).expect("validated"));
    let correspondences = clean
        .iter()
        .map(|cc| {
            let beacon = cc.beacon_ips + cfg.beacon_noise.sample(&mut beacon_rng);
            let mut pixel = cc.pixel;
            if let Some(n) = &pixel_noise {
                pixel.x += n.sample(&mut pixel_rng);
                pixel.y += n.sample(&mut pixel_rng);
            }
            Correspondence {
                beacon_ips: beacon,
                pixel,
                plane_tag: cc.plane_tag,
            }
        })
        .collect();
    let robot_pair = robot_beacons(cfg, &ips_from_robot);
    let robot_readings = (0..c.robot_readings)
        .map(|_| emit_beacons(&robot_pair, &cfg.beacon_noise, &mut beacon_rng))
        .collect();
    Ok(CalibrationSession {
        correspondences,
        clean,
        robot_readings,
        ips_from_robot,
    })
}

/// Writes a complete dataset (see [`crate::io`] for the layout). Samples are
/// generated in parallel; the output depends only on `cfg` and `seed`.
pub fn generate_dataset(cfg: &SceneConfig, seed: u64, out: &Path) -> Result<Manifest, SimError> {
    cfg.validate()?;
    let rig = Rig::new(cfg);
    let session = simulate_calibration(cfg, seed)?;
    io::write_correspondences(&Dataset::correspondences_path(out), &session.correspondences)?;
    let robot_rows: Vec<_> = session
        .robot_readings
        .iter()
        .map(|(n, c)| (FrameId::Robot, *n, Some(*c)))
        .collect();
    io::write_beacons(&Dataset::robot_beacons_path(out), &io::beacon_rows(&robot_rows))?;

    let ids: Vec<String> = (0..cfg.samples).map(sample_id).collect();
    (0..cfg.samples).into_par_iter().try_for_each(|i| -> Result<(), SimError> {
        let s = simulate_sample(cfg, seed, i)?;
        io::write_ply(&Dataset::cloud_path(out, &s.id), &s.cloud)?;
        let rows: Vec<_> = s.readings.iter().map(|(f, n, c)| (*f, *n, Some(*c))).collect();
        io::write_beacons(&Dataset::beacons_path(out, &s.id), &io::beacon_rows(&rows))?;
        io::write_json(&Dataset::truth_path(out, &s.id), &s.label_file())?;
        Ok(())
    })?;

    let manifest = Manifest {
        seed,
        intrinsics: cfg.intrinsics,
        lidar_from_cam: rig.lidar_from_cam.to_row_major(),
        objects: cfg
            .objects
            .iter()
            .enumerate()
            .map(|(k, o)| ObjectEntry {
                id: FrameId::Obj(k as u32).to_string(),
                frame: FrameId::Obj(k as u32),
                spec: o.spec.clone(),
            })
            .collect(),
        samples: ids,
        truth: Some(RigTruth {
            cam_from_robot: rig.cam_from_robot.to_row_major(),
            lidar_from_cam: rig.lidar_from_cam.to_row_major(),
        }),
    };
    io::write_json(&out.join(io::MANIFEST), &manifest)?;
    Ok(manifest)
}

/// Rotation taking +z to `n` (used for arbitrary-plane test fixtures).
pub fn rotation_to(n: &Vector3<f64>) -> Rotation3<f64> {
    Rotation3::rotation_between(&Vector3::z(), n).unwrap_or_else(Rotation3::identity)
}
