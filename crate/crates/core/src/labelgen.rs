//! Image-plane and LiDAR-frame labels from beacon poses and measured object
//! dimensions, pushed through the calibrated transform chain.

use std::f64::consts::PI;

use nalgebra::{Point2, Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calib::{CalibError, CameraIntrinsics, MIN_DEPTH};
use crate::geom::{frame_from_beacons, BeaconPair, FrameId, GeomError, RigidTransform};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LabelError {
    #[error("all 8 box vertices are behind the camera")]
    AllVerticesBehindCamera,
    #[error("invalid object spec `{class}`: {reason}")]
    InvalidSpec { class: String, reason: String },
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Calib(#[from] CalibError),
}

/// Measured object class and dimensions. Beacons are mounted on the top
/// surface along the object's x-axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub class: String,
    pub length: f64,
    pub width: f64,
    pub height: f64,
}

impl ObjectSpec {
    pub fn validate(&self) -> Result<(), LabelError> {
        for (name, v) in [("length", self.length), ("width", self.width), ("height", self.height)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(LabelError::InvalidSpec {
                    class: self.class.clone(),
                    reason: format!("{name} must be positive, got {v}"),
                });
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> Vector3<f64> {
        Vector3::new(self.length, self.width, self.height)
    }
}

/// Wraps an angle into (−π, π].
pub fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Yaw-only box: `dims = (l, w, h)` along the box's x, y, z axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox3 {
    pub frame: FrameId,
    pub center: Point3<f64>,
    pub dims: Vector3<f64>,
    pub yaw: f64,
}

impl OrientedBox3 {
    pub fn new(frame: FrameId, center: Point3<f64>, dims: Vector3<f64>, yaw: f64) -> Self {
        Self {
            frame,
            center,
            dims,
            yaw: normalize_angle(yaw),
        }
    }

    /// Pose of the box frame (origin at the center) in its parent frame.
    pub fn pose(&self, box_frame: FrameId) -> RigidTransform {
        RigidTransform::from_yaw(self.yaw, self.center.coords, box_frame, self.frame)
    }

    /// Corner offsets from the center in the box's own axes, in vertex order.
    pub fn local_corners(dims: &Vector3<f64>) -> [Vector3<f64>; 8] {
        let (l, w, h) = (0.5 * dims.x, 0.5 * dims.y, 0.5 * dims.z);
        let foot = [(l, w), (-l, w), (-l, -w), (l, -w)];
        let mut out = [Vector3::zeros(); 8];
        for (i, (x, y)) in foot.iter().enumerate() {
            out[i] = Vector3::new(*x, *y, -h);
            out[i + 4] = Vector3::new(*x, *y, h);
        }
        out
    }

    /// The 8 corners. Bottom face first, counter-clockwise seen from above
    /// starting at front-left (+l/2, +w/2): front-left, rear-left,
    /// rear-right, front-right. The top face follows in the same order.
    pub fn vertices(&self) -> VertexSet {
        let (s, c) = self.yaw.sin_cos();
        let points = Self::local_corners(&self.dims).map(|v| {
            self.center + Vector3::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z)
        });
        VertexSet {
            frame: self.frame,
            points,
        }
    }

    /// Moves the box by a transform that is level (rotation about z only).
    pub fn transform_level(&self, t: &RigidTransform) -> Result<Self, GeomError> {
        if t.from_frame() != self.frame {
            return Err(GeomError::FrameMismatch {
                expected: t.from_frame(),
                found: self.frame,
            });
        }
        Ok(Self::new(
            t.to_frame(),
            t.transform_point(&self.center),
            self.dims,
            self.yaw + t.yaw(),
        ))
    }

    pub fn volume(&self) -> f64 {
        self.dims.x * self.dims.y * self.dims.z
    }
}

/// Eight box corners in a named frame, in [`OrientedBox3::vertices`] order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VertexSet {
    pub frame: FrameId,
    pub points: [Point3<f64>; 8],
}

impl VertexSet {
    pub fn transform(&self, t: &RigidTransform) -> Result<Self, GeomError> {
        if t.from_frame() != self.frame {
            return Err(GeomError::FrameMismatch {
                expected: t.from_frame(),
                found: self.frame,
            });
        }
        Ok(Self {
            frame: t.to_frame(),
            points: self.points.map(|p| t.transform_point(&p)),
        })
    }
}

/// Axis-aligned image box, `u0 ≤ u1`, `v0 ≤ v1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box2 {
    pub u0: f64,
    pub v0: f64,
    pub u1: f64,
    pub v1: f64,
}

impl Box2 {
    pub fn area(&self) -> f64 {
        (self.u1 - self.u0).max(0.0) * (self.v1 - self.v0).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageLabel {
    pub bbox: Box2,
    /// The unclamped extent reached past the image border.
    pub truncated: bool,
    pub behind_camera_vertices: usize,
}

/// Object box in the IPS frame: center below the beacon midpoint by half the
/// object height, heading along the rear → front beacon direction.
pub fn object_box_ips(pair: &BeaconPair, spec: &ObjectSpec) -> Result<OrientedBox3, LabelError> {
    spec.validate()?;
    let frame = frame_from_beacons(pair, FrameId::Obj(0))?;
    let mid = pair.midpoint();
    let center = Point3::new(mid.x, mid.y, mid.z - 0.5 * spec.height);
    Ok(OrientedBox3::new(FrameId::Ips, center, spec.dims(), frame.yaw()))
}

/// Camera-frame vertices: `T_cam←robot · T_robot←ips · V_ips`.
pub fn box_to_camera(
    ips_box: &OrientedBox3,
    cam_from_robot: &RigidTransform,
    robot_from_ips: &RigidTransform,
) -> Result<VertexSet, LabelError> {
    let cam_from_ips = cam_from_robot.compose(robot_from_ips)?;
    Ok(ips_box.vertices().transform(&cam_from_ips)?)
}

/// Extremes of the projected vertices, clamped to the image. Vertices behind
/// the camera are skipped and mark the label truncated.
pub fn project_box(vertices: &VertexSet, intr: &CameraIntrinsics) -> Result<ImageLabel, LabelError> {
    if vertices.frame != FrameId::Cam {
        return Err(GeomError::FrameMismatch {
            expected: FrameId::Cam,
            found: vertices.frame,
        }
        .into());
    }
    let mut behind = 0;
    let (mut u0, mut v0, mut u1, mut v1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in &vertices.points {
        if !(p.z > MIN_DEPTH) {
            behind += 1;
            continue;
        }
        let px: Point2<f64> = intr.project(p)?;
        u0 = u0.min(px.x);
        v0 = v0.min(px.y);
        u1 = u1.max(px.x);
        v1 = v1.max(px.y);
    }
    if behind == 8 {
        return Err(LabelError::AllVerticesBehindCamera);
    }
    let (w, h) = (intr.width as f64, intr.height as f64);
    let bbox = Box2 {
        u0: u0.clamp(0.0, w),
        v0: v0.clamp(0.0, h),
        u1: u1.clamp(0.0, w),
        v1: v1.clamp(0.0, h),
    };
    let truncated = behind > 0 || bbox.u0 != u0 || bbox.v0 != v0 || bbox.u1 != u1 || bbox.v1 != v1;
    Ok(ImageLabel {
        bbox,
        truncated,
        behind_camera_vertices: behind,
    })
}

/// Re-reads a yaw box from transformed vertices. Any roll or pitch picked up
/// along the chain is dropped: the center is kept, the heading is the
/// footprint direction of the box's x-axis, and the dims are edge lengths.
pub fn box_from_vertices(v: &VertexSet) -> OrientedBox3 {
    let p = &v.points;
    let center = Point3::from(p.iter().map(|q| q.coords).sum::<Vector3<f64>>() / 8.0);
    let edge = |pairs: [(usize, usize); 4]| {
        pairs.iter().map(|&(a, b)| (p[a] - p[b]).norm()).sum::<f64>() / 4.0
    };
    let length = edge([(0, 1), (3, 2), (4, 5), (7, 6)]);
    let width = edge([(0, 3), (1, 2), (4, 7), (5, 6)]);
    let height = edge([(4, 0), (5, 1), (6, 2), (7, 3)]);
    let forward = [0, 3, 4, 7].iter().map(|&i| p[i].coords).sum::<Vector3<f64>>()
        - [1, 2, 5, 6].iter().map(|&i| p[i].coords).sum::<Vector3<f64>>();
    OrientedBox3::new(
        v.frame,
        center,
        Vector3::new(length, width, height),
        forward.y.atan2(forward.x),
    )
}

/// LiDAR-frame box from camera-frame vertices and `T_lidar←cam`.
pub fn box_to_lidar(vertices_cam: &VertexSet, lidar_from_cam: &RigidTransform) -> Result<OrientedBox3, LabelError> {
    if lidar_from_cam.to_frame() != FrameId::Lidar {
        return Err(GeomError::FrameMismatch {
            expected: FrameId::Lidar,
            found: lidar_from_cam.to_frame(),
        }
        .into());
    }
    Ok(box_from_vertices(&vertices_cam.transform(lidar_from_cam)?))
}

/// Everything needed to turn beacon readings into labels.
#[derive(Debug, Clone, Copy)]
pub struct LabelChain<'a> {
    pub intrinsics: &'a CameraIntrinsics,
    pub cam_from_robot: &'a RigidTransform,
    pub robot_from_ips: &'a RigidTransform,
    pub lidar_from_cam: &'a RigidTransform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedLabel {
    pub ips_box: OrientedBox3,
    pub lidar_box: OrientedBox3,
    /// `Err` carries the reason the 2D label was left out.
    pub image: Result<ImageLabel, String>,
}

/// Full per-object chain. A 2D label is dropped (with a reason) when the box
/// is behind the camera or projects entirely outside the image.
pub fn generate_label(pair: &BeaconPair, spec: &ObjectSpec, chain: &LabelChain) -> Result<GeneratedLabel, LabelError> {
    let ips_box = object_box_ips(pair, spec)?;
    let cam = box_to_camera(&ips_box, chain.cam_from_robot, chain.robot_from_ips)?;
    let lidar_box = box_to_lidar(&cam, chain.lidar_from_cam)?;
    let image = match project_box(&cam, chain.intrinsics) {
        Ok(l) if l.bbox.area() > 0.0 => Ok(l),
        Ok(_) => Err("outside image".to_string()),
        Err(LabelError::AllVerticesBehindCamera) => Err("behind camera".to_string()),
        Err(e) => return Err(e),
    };
    Ok(GeneratedLabel {
        ips_box,
        lidar_box,
        image,
    })
}

/// `box3d_lidar` entry of a label file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Box3Record {
    pub center: [f64; 3],
    pub dims: [f64; 3],
    pub yaw: f64,
}

impl Box3Record {
    pub fn to_box(&self, frame: FrameId) -> OrientedBox3 {
        OrientedBox3::new(
            frame,
            Point3::from(self.center),
            Vector3::from(self.dims),
            self.yaw,
        )
    }
}

impl From<&OrientedBox3> for Box3Record {
    fn from(b: &OrientedBox3) -> Self {
        Self {
            center: b.center.coords.into(),
            dims: b.dims.into(),
            yaw: b.yaw,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectLabel {
    pub id: String,
    pub class: String,
    pub box3d_lidar: Option<Box3Record>,
    pub box2d: Option<Box2>,
    pub truncated: bool,
    pub refined: bool,
    /// Why a box was left out, or the error hit while generating it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelFile {
    pub sample_id: String,
    pub objects: Vec<ObjectLabel>,
}

impl ObjectLabel {
    pub fn from_generated(id: &str, class: &str, g: &GeneratedLabel) -> Self {
        let (box2d, truncated, note) = match &g.image {
            Ok(l) => (Some(l.bbox), l.truncated, None),
            Err(reason) => (None, false, Some(reason.clone())),
        };
        Self {
            id: id.to_string(),
            class: class.to_string(),
            box3d_lidar: Some(Box3Record::from(&g.lidar_box)),
            box2d,
            truncated,
            refined: false,
            note,
        }
    }

    pub fn failed(id: &str, class: &str, err: &LabelError) -> Self {
        Self {
            id: id.to_string(),
            class: class.to_string(),
            box3d_lidar: None,
            box2d: None,
            truncated: false,
            refined: false,
            note: Some(err.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec(l: f64, w: f64, h: f64) -> ObjectSpec {
        ObjectSpec {
            class: "cabinet".into(),
            length: l,
            width: w,
            height: h,
        }
    }

    #[test]
    fn box_from_beacons() {
        let b = object_box_ips(
            &BeaconPair::new(Point3::new(0.5, 0.0, 1.0), Point3::new(-0.5, 0.0, 1.0)),
            &spec(1.0, 1.0, 1.0),
        )
        .unwrap();
        assert_eq!(b.center, Point3::new(0.0, 0.0, 0.5));
        assert_eq!(b.yaw, 0.0);
        assert_eq!(b.frame, FrameId::Ips);

        let b = object_box_ips(
            &BeaconPair::new(Point3::new(0.0, 0.5, 1.0), Point3::new(0.0, -0.5, 1.0)),
            &spec(1.0, 1.0, 1.0),
        )
        .unwrap();
        assert!((b.yaw - PI / 2.0).abs() < 1e-15);

        let b = object_box_ips(
            &BeaconPair::new(Point3::new(0.3, 0.1, 0.93), Point3::new(-0.2, 0.4, 0.91)),
            &spec(1.0, 0.5, 0.8),
        )
        .unwrap();
        assert_eq!(b.center.z, (0.93 + 0.91) / 2.0 - 0.4);

        assert!(matches!(
            object_box_ips(&BeaconPair::new(Point3::origin(), Point3::origin()), &spec(1.0, 1.0, 1.0)),
            Err(LabelError::Geom(GeomError::DegenerateBeaconPair { .. }))
        ));
        assert!(matches!(
            object_box_ips(
                &BeaconPair::new(Point3::new(1.0, 0.0, 0.0), Point3::origin()),
                &spec(1.0, 0.0, 1.0)
            ),
            Err(LabelError::InvalidSpec { .. })
        ));
    }

    #[test]
    fn vertex_order() {
        let b = OrientedBox3::new(FrameId::Ips, Point3::new(0.0, 0.0, 1.0), Vector3::new(4.0, 2.0, 2.0), 0.0);
        let v = b.vertices().points;
        assert_eq!(v[0], Point3::new(2.0, 1.0, 0.0));
        assert_eq!(v[1], Point3::new(-2.0, 1.0, 0.0));
        assert_eq!(v[2], Point3::new(-2.0, -1.0, 0.0));
        assert_eq!(v[3], Point3::new(2.0, -1.0, 0.0));
        for i in 0..4 {
            assert_eq!(v[i + 4], v[i] + Vector3::new(0.0, 0.0, 2.0));
        }
        // Counter-clockwise: positive signed area of the bottom face.
        let area: f64 = (0..4)
            .map(|i| {
                let (a, b) = (v[i], v[(i + 1) % 4]);
                a.x * b.y - b.x * a.y
            })
            .sum();
        assert!(area > 0.0);
    }

    #[test]
    fn yaw_normalized() {
        let b = OrientedBox3::new(FrameId::Ips, Point3::origin(), Vector3::repeat(1.0), -PI);
        assert_eq!(b.yaw, PI);
        assert!((normalize_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
        assert_eq!(normalize_angle(0.25), 0.25);
    }

    #[test]
    fn camera_chain() {
        let b = OrientedBox3::new(FrameId::Ips, Point3::new(1.0, 2.0, 0.5), Vector3::repeat(1.0), 0.3);
        let id_cr = RigidTransform::identity(FrameId::Robot, FrameId::Cam);
        let id_ri = RigidTransform::identity(FrameId::Ips, FrameId::Robot);
        let v = box_to_camera(&b, &id_cr, &id_ri).unwrap();
        assert_eq!(v.points, b.vertices().points);
        assert_eq!(v.frame, FrameId::Cam);

        let shift = RigidTransform::from_translation(Vector3::new(0.5, -1.0, 2.0), FrameId::Robot, FrameId::Cam);
        let v = box_to_camera(&b, &shift, &id_ri).unwrap();
        for (p, q) in v.points.iter().zip(b.vertices().points) {
            assert!((p - q - Vector3::new(0.5, -1.0, 2.0)).norm() < 1e-12);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let a = RigidTransform::from_axis_angle(
                Vector3::new(rng.random(), rng.random(), rng.random()),
                Vector3::new(rng.random(), rng.random(), rng.random()),
                FrameId::Robot,
                FrameId::Cam,
            );
            let c = RigidTransform::from_yaw(rng.random_range(-3.0..3.0), Vector3::new(rng.random(), rng.random(), 0.0), FrameId::Ips, FrameId::Robot);
            let v = box_to_camera(&b, &a, &c).unwrap();
            for (p, q) in v.points.iter().zip(b.vertices().points) {
                let oracle = a.transform_point(&c.transform_point(&q));
                assert!((p - oracle).norm() < 1e-12);
            }
        }

        let wrong = RigidTransform::identity(FrameId::Lidar, FrameId::Cam);
        assert!(box_to_camera(&b, &wrong, &id_ri).is_err());
    }

    #[test]
    fn projected_cube() {
        let k = CameraIntrinsics { fx: 500.0, fy: 500.0, cx: 320.0, cy: 320.0, width: 640, height: 640 };
        let cube = OrientedBox3::new(FrameId::Cam, Point3::new(0.0, 0.0, 5.0), Vector3::repeat(1.0), 0.0);
        let label = project_box(&cube.vertices(), &k).unwrap();
        let half = 500.0 * 0.5 / 4.5;
        let oracle = Box2 { u0: 320.0 - half, v0: 320.0 - half, u1: 320.0 + half, v1: 320.0 + half };
        for (a, b) in [(label.bbox.u0, oracle.u0), (label.bbox.v0, oracle.v0), (label.bbox.u1, oracle.u1), (label.bbox.v1, oracle.v1)] {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(!label.truncated);
        assert_eq!(label.behind_camera_vertices, 0);

        let behind = OrientedBox3::new(FrameId::Cam, Point3::new(0.0, 0.0, -5.0), Vector3::repeat(1.0), 0.0);
        assert_eq!(project_box(&behind.vertices(), &k), Err(LabelError::AllVerticesBehindCamera));

        // Straddling the camera plane: the near half is discarded.
        let straddle = OrientedBox3::new(FrameId::Cam, Point3::new(0.0, 0.0, 0.2), Vector3::new(1.0, 1.0, 1.0), 0.0);
        let label = project_box(&straddle.vertices(), &k).unwrap();
        assert_eq!(label.behind_camera_vertices, 4);
        assert!(label.truncated);
        assert_eq!(label.bbox, Box2 { u0: 0.0, v0: 0.0, u1: 640.0, v1: 640.0 });
    }

    #[test]
    fn lidar_box_cases() {
        let b = OrientedBox3::new(FrameId::Cam, Point3::new(1.0, 0.5, 4.0), Vector3::new(1.2, 0.6, 0.9), 0.4);
        let id = RigidTransform::identity(FrameId::Cam, FrameId::Lidar);
        let out = box_to_lidar(&b.vertices(), &id).unwrap();
        assert!((out.center - b.center).norm() < 1e-12);
        assert!((out.dims - b.dims).norm() < 1e-12);
        assert!((out.yaw - b.yaw).abs() < 1e-12);
        assert_eq!(out.frame, FrameId::Lidar);

        let theta = 0.7;
        let rot = RigidTransform::from_yaw(theta, Vector3::zeros(), FrameId::Cam, FrameId::Lidar);
        let out = box_to_lidar(&b.vertices(), &rot).unwrap();
        assert!((normalize_angle(out.yaw - b.yaw - theta)).abs() < 1e-12);

        let wrong = RigidTransform::identity(FrameId::Cam, FrameId::Robot);
        assert!(box_to_lidar(&b.vertices(), &wrong).is_err());
    }

    #[test]
    fn label_json_shape() {
        let label = LabelFile {
            sample_id: "000".into(),
            objects: vec![ObjectLabel {
                id: "obj0".into(),
                class: "table".into(),
                box3d_lidar: Some(Box3Record { center: [1.0, 2.0, 0.5], dims: [1.0, 0.5, 0.75], yaw: 0.1 }),
                box2d: None,
                truncated: false,
                refined: false,
                note: Some("behind camera".into()),
            }],
        };
        let json = serde_json::to_value(&label).unwrap();
        assert_eq!(json["objects"][0]["box3d_lidar"]["dims"][2], 0.75);
        assert!(json["objects"][0]["box2d"].is_null());
        let back: LabelFile = serde_json::from_value(json).unwrap();
        assert_eq!(back, label);
    }

    fn arb_box() -> impl Strategy<Value = OrientedBox3> {
        (
            -2.0..2.0f64,
            -1.0..1.0f64,
            3.0..8.0f64,
            0.2..2.0f64,
            0.2..2.0f64,
            0.2..2.0f64,
            -PI..PI,
        )
            .prop_map(|(x, y, z, l, w, h, yaw)| {
                OrientedBox3::new(FrameId::Cam, Point3::new(x, y, z), Vector3::new(l, w, h), yaw)
            })
    }

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics { fx: 700.0, fy: 700.0, cx: 640.0, cy: 360.0, width: 1280, height: 720 }
    }

    proptest! {
        #[test]
        fn projection_ignores_vertex_order(b in arb_box(), perm in Just((0..8).collect::<Vec<usize>>()).prop_shuffle()) {
            let v = b.vertices();
            let mut shuffled = v;
            for (i, &j) in perm.iter().enumerate() {
                shuffled.points[i] = v.points[j];
            }
            prop_assert_eq!(project_box(&v, &intr()).unwrap(), project_box(&shuffled, &intr()).unwrap());
        }

        #[test]
        fn shrinking_dims_shrinks_image_box(b in arb_box(), s in 0.1..1.0f64) {
            let small = OrientedBox3 { dims: b.dims * s, ..b };
            let big = project_box(&b.vertices(), &intr()).unwrap().bbox;
            let sm = project_box(&small.vertices(), &intr()).unwrap().bbox;
            prop_assert!(sm.u0 >= big.u0 - 1e-9 && sm.v0 >= big.v0 - 1e-9);
            prop_assert!(sm.u1 <= big.u1 + 1e-9 && sm.v1 <= big.v1 + 1e-9);
        }

        #[test]
        fn center_height_is_exact(fz in -1.0..2.0f64, rz in -1.0..2.0f64, h in 0.1..2.0f64) {
            let pair = BeaconPair::new(Point3::new(0.4, 0.1, fz), Point3::new(-0.4, 0.2, rz));
            let b = object_box_ips(&pair, &spec(1.0, 1.0, h)).unwrap();
            prop_assert_eq!(b.center.z, (fz + rz) / 2.0 - h / 2.0);
        }
    }
}
