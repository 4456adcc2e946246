//! Automatic 2D/3D object labels from indoor positioning beacons.
//!
//! Beacon pairs give every tagged object (and the robot) a planar pose in
//! the positioning frame. A camera calibration against the robot beacons
//! and a known LiDAR-camera extrinsic carry those poses into the sensor
//! frames, and a sampling search snaps the resulting boxes onto the LiDAR
//! points.

// `!(x > y)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calib;
pub mod cloud;
pub mod eval;
pub mod geom;
pub mod io;
pub mod labelgen;
pub mod pipeline;
pub mod refine;
pub mod rng;
pub mod sim;

pub use calib::{CalibOptions, CalibrationReport, CalibrationResult, CameraIntrinsics, Correspondence, PlaneTag};
pub use cloud::PointCloud;
pub use eval::{iou_2d, iou_3d, EvalReport};
pub use geom::{BeaconPair, FrameId, RigidTransform, TransformGraph};
pub use labelgen::{Box2, LabelFile, ObjectLabel, ObjectSpec, OrientedBox3};
pub use refine::{GroundPlane, MpfKind, RefineConfig, RefineOutcome};
pub use sim::{GroundTruthSample, SceneConfig};

/// Any error raised by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Geom(#[from] geom::GeomError),
    #[error(transparent)]
    Calib(#[from] calib::CalibError),
    #[error(transparent)]
    Label(#[from] labelgen::LabelError),
    #[error(transparent)]
    Refine(#[from] refine::RefineError),
    #[error(transparent)]
    Io(#[from] io::IoError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
    #[error(transparent)]
    Sim(#[from] sim::SimError),
    #[error(transparent)]
    Pipeline(#[from] pipeline::PipelineError),
}
