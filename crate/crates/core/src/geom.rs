//! Rigid-body transforms, 4-DOF frames built from beacon pairs, and the
//! transform graph that links the IPS, robot, camera, LiDAR and object frames.
//!
//! Convention: a [`RigidTransform`] with `from = A` and `to = B` maps point
//! coordinates expressed in frame `A` into frame `B`, so
//! `compose(a: Y→Z, b: X→Y)` yields `X→Z`.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Matrix4, Point3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum planar separation of a beacon pair, in meters.
pub const DEFAULT_MIN_BEACON_SEPARATION: f64 = 1e-3;

/// Rotation drift (max abs entry of `RᵀR − I`) above which a composed
/// rotation is projected back onto SO(3).
const ORTHONORMAL_DRIFT: f64 = 1e-7;

/// Matrices further than this from SO(3) are rejected outright.
const ROTATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeomError {
    #[error("degenerate beacon pair: planar separation {separation:.3e} m is below {min:.3e} m")]
    DegenerateBeaconPair { separation: f64, min: f64 },
    #[error("frame mismatch: expected `{expected}`, found `{found}`")]
    FrameMismatch { expected: FrameId, found: FrameId },
    #[error("no beacon readings to average")]
    EmptyReadings,
    #[error("matrix is not a proper rotation (orthonormality error {error:.3e}, det {det:.6})")]
    NotARotation { error: f64, det: f64 },
    #[error("no transform path from `{from}` to `{to}`")]
    Disconnected { from: FrameId, to: FrameId },
    #[error("unknown frame id `{0}`")]
    UnknownFrame(String),
}

/// Symbolic name of a coordinate frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum FrameId {
    Ips,
    Robot,
    Cam,
    Lidar,
    Obj(u32),
}

impl fmt::Display for FrameId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FrameId::Ips => f.write_str("ips"),
            FrameId::Robot => f.write_str("robot"),
            FrameId::Cam => f.write_str("cam"),
            FrameId::Lidar => f.write_str("lidar"),
            FrameId::Obj(i) => write!(f, "obj{i}"),
        }
    }
}

impl FromStr for FrameId {
    type Err = GeomError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ips" => Ok(FrameId::Ips),
            "robot" => Ok(FrameId::Robot),
            "cam" => Ok(FrameId::Cam),
            "lidar" => Ok(FrameId::Lidar),
            _ => s
                .strip_prefix("obj")
                .and_then(|n| n.parse().ok())
                .map(FrameId::Obj)
                .ok_or_else(|| GeomError::UnknownFrame(s.to_string())),
        }
    }
}

impl From<FrameId> for String {
    fn from(id: FrameId) -> String {
        id.to_string()
    }
}

impl TryFrom<String> for FrameId {
    type Error = GeomError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// Homogeneous SE(3) transform tagged with its source and target frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    from: FrameId,
    to: FrameId,
}

fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).amax()
}

/// Closest rotation in the Frobenius sense (polar decomposition).
fn nearest_rotation(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let u = svd.u.expect("svd u requested");
    let v_t = svd.v_t.expect("svd v_t requested");
    let mut out = u * v_t;
    if out.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        out = u * v_t;
    }
    out
}

impl RigidTransform {
    pub fn identity(from: FrameId, to: FrameId) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            from,
            to,
        }
    }

    /// Builds a transform, validating that `rotation` lies on SO(3).
    ///
    /// Small drift (below 1e-6) is projected away; anything further is an error.
    pub fn new(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        from: FrameId,
        to: FrameId,
    ) -> Result<Self, GeomError> {
        let error = orthonormality_error(&rotation);
        let det = rotation.determinant();
        if !(error <= ROTATION_TOLERANCE) || (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(GeomError::NotARotation { error, det });
        }
        let rotation = if error > ORTHONORMAL_DRIFT {
            nearest_rotation(&rotation)
        } else {
            rotation
        };
        Ok(Self {
            rotation,
            translation,
            from,
            to,
        })
    }

    /// Pure translation.
    pub fn from_translation(translation: Vector3<f64>, from: FrameId, to: FrameId) -> Self {
        Self {
            translation,
            ..Self::identity(from, to)
        }
    }

    /// Rotation about +z by `yaw` radians followed by `translation`.
    pub fn from_yaw(yaw: f64, translation: Vector3<f64>, from: FrameId, to: FrameId) -> Self {
        Self {
            rotation: *Rotation3::from_axis_angle(&Vector3::z_axis(), yaw).matrix(),
            translation,
            from,
            to,
        }
    }

    /// Rotation given as an axis-angle vector (direction = axis, norm = angle).
    pub fn from_axis_angle(
        axis_angle: Vector3<f64>,
        translation: Vector3<f64>,
        from: FrameId,
        to: FrameId,
    ) -> Self {
        Self {
            rotation: *Rotation3::new(axis_angle).matrix(),
            translation,
            from,
            to,
        }
    }

    pub fn from_matrix4(m: &Matrix4<f64>, from: FrameId, to: FrameId) -> Result<Self, GeomError> {
        let rotation = m.fixed_view::<3, 3>(0, 0).into_owned();
        let translation = m.fixed_view::<3, 1>(0, 3).into_owned();
        Self::new(rotation, translation, from, to)
    }

    /// Parses the 16 entries of the homogeneous matrix in row-major order.
    pub fn from_row_major(values: &[f64; 16], from: FrameId, to: FrameId) -> Result<Self, GeomError> {
        Self::from_matrix4(&Matrix4::from_row_slice(values), from, to)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn from_frame(&self) -> FrameId {
        self.from
    }

    pub fn to_frame(&self) -> FrameId {
        self.to
    }

    /// Same geometry, relabelled endpoints.
    pub fn with_frames(mut self, from: FrameId, to: FrameId) -> Self {
        self.from = from;
        self.to = to;
        self
    }

    pub fn to_matrix4(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn to_row_major(&self) -> [f64; 16] {
        let m = self.to_matrix4();
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = m[(r, c)];
            }
        }
        out
    }

    pub fn transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
            from: self.to,
            to: self.from,
        }
    }

    /// `self ∘ inner`: apply `inner` first, then `self`.
    pub fn compose(&self, inner: &RigidTransform) -> Result<Self, GeomError> {
        if inner.to != self.from {
            return Err(GeomError::FrameMismatch {
                expected: self.from,
                found: inner.to,
            });
        }
        let mut rotation = self.rotation * inner.rotation;
        if orthonormality_error(&rotation) > ORTHONORMAL_DRIFT {
            rotation = nearest_rotation(&rotation);
        }
        Ok(Self {
            rotation,
            translation: self.rotation * inner.translation + self.translation,
            from: inner.from,
            to: self.to,
        })
    }

    /// Rotation angle about +z, read from the first column.
    pub fn yaw(&self) -> f64 {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }

    /// Angle between the rotation's z-axis image and +z; zero for level transforms.
    pub fn tilt(&self) -> f64 {
        let r = &self.rotation;
        r[(0, 2)].hypot(r[(1, 2)]).atan2(r[(2, 2)])
    }

    /// Largest rotation-angle and translation discrepancy between two transforms.
    pub fn distance(&self, other: &RigidTransform) -> (f64, f64) {
        let dr = self.rotation.transpose() * other.rotation;
        // atan2 of the axis part stays accurate for tiny angles, unlike acos.
        let axis = Vector3::new(dr[(2, 1)] - dr[(1, 2)], dr[(0, 2)] - dr[(2, 0)], dr[(1, 0)] - dr[(0, 1)]);
        let angle = (0.5 * axis.norm()).atan2(0.5 * (dr.trace() - 1.0));
        (angle, (self.translation - other.translation).norm())
    }
}

/// `a ∘ b`, with `a: Y→Z` and `b: X→Y`.
pub fn compose(a: &RigidTransform, b: &RigidTransform) -> Result<RigidTransform, GeomError> {
    a.compose(b)
}

pub fn inverse(t: &RigidTransform) -> RigidTransform {
    t.inverse()
}

/// Two beacon positions in the global IPS frame, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeaconPair {
    pub front: Point3<f64>,
    pub rear: Point3<f64>,
}

impl BeaconPair {
    pub fn new(front: Point3<f64>, rear: Point3<f64>) -> Self {
        Self { front, rear }
    }

    /// Both beacons moved to their common mean height.
    pub fn levelled(&self) -> Self {
        let z = 0.5 * (self.front.z + self.rear.z);
        Self {
            front: Point3::new(self.front.x, self.front.y, z),
            rear: Point3::new(self.rear.x, self.rear.y, z),
        }
    }

    pub fn midpoint(&self) -> Point3<f64> {
        nalgebra::center(&self.front, &self.rear)
    }
}

/// Builds the 4-DOF pose of `frame` in the IPS frame from a beacon pair.
///
/// Heights are averaged, `x̂` points rear → front, `ẑ` is the IPS up axis and
/// `ŷ = ẑ × x̂` completes a right-handed basis. The origin sits on the front
/// beacon. The result maps `frame` coordinates into IPS coordinates.
pub fn frame_from_beacons(pair: &BeaconPair, frame: FrameId) -> Result<RigidTransform, GeomError> {
    frame_from_beacons_with(pair, frame, DEFAULT_MIN_BEACON_SEPARATION)
}

pub fn frame_from_beacons_with(
    pair: &BeaconPair,
    frame: FrameId,
    min_separation: f64,
) -> Result<RigidTransform, GeomError> {
    let level = pair.levelled();
    let d = level.front - level.rear;
    let separation = d.norm();
    if !(separation > min_separation) {
        return Err(GeomError::DegenerateBeaconPair {
            separation,
            min: min_separation,
        });
    }
    let x = d / separation;
    let z = Vector3::z();
    let y = z.cross(&x);
    Ok(RigidTransform {
        rotation: Matrix3::from_columns(&[x, y, z]),
        translation: level.front.coords,
        from: frame,
        to: FrameId::Ips,
    })
}

/// Component-wise mean of the first `n` readings (fewer if fewer exist).
pub fn average_beacon_readings(readings: &[BeaconPair], n: usize) -> Result<BeaconPair, GeomError> {
    let used = &readings[..n.min(readings.len())];
    if used.is_empty() {
        return Err(GeomError::EmptyReadings);
    }
    let k = used.len() as f64;
    let (front, rear) = used.iter().fold(
        (Vector3::zeros(), Vector3::zeros()),
        |(f, r), p| (f + p.front.coords, r + p.rear.coords),
    );
    Ok(BeaconPair {
        front: Point3::from(front / k),
        rear: Point3::from(rear / k),
    })
}

/// Undirected graph of calibrated and measured transforms.
///
/// Each stored edge can be traversed in either direction; queries compose
/// along the shortest (fewest edges) path.
#[derive(Debug, Clone, Default)]
pub struct TransformGraph {
    edges: Vec<RigidTransform>,
}

impl TransformGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an edge, replacing any existing edge between the same two frames.
    pub fn insert(&mut self, t: RigidTransform) {
        self.edges.retain(|e| {
            !((e.from == t.from && e.to == t.to) || (e.from == t.to && e.to == t.from))
        });
        self.edges.push(t);
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Transform mapping `from` coordinates into `to` coordinates.
    pub fn get(&self, from: FrameId, to: FrameId) -> Result<RigidTransform, GeomError> {
        if from == to {
            return Ok(RigidTransform::identity(from, to));
        }
        // BFS storing, per reached frame, the transform from `from` to it.
        let mut reached: Vec<(FrameId, RigidTransform)> =
            vec![(from, RigidTransform::identity(from, from))];
        let mut queue = VecDeque::from([from]);
        while let Some(frame) = queue.pop_front() {
            let so_far = reached
                .iter()
                .find(|(f, _)| *f == frame)
                .map(|(_, t)| *t)
                .expect("queued frames are reached");
            for edge in &self.edges {
                let step = if edge.from == frame {
                    *edge
                } else if edge.to == frame {
                    edge.inverse()
                } else {
                    continue;
                };
                if reached.iter().any(|(f, _)| *f == step.to) {
                    continue;
                }
                let next = step.compose(&so_far)?;
                if step.to == to {
                    return Ok(next);
                }
                reached.push((step.to, next));
                queue.push_back(step.to);
            }
        }
        Err(GeomError::Disconnected { from, to })
    }
}
