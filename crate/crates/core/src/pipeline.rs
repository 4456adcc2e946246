//! Per-sample glue: beacon readings to label files, label files to refined
//! label files.

use std::collections::BTreeMap;

use nalgebra::Point3;
use thiserror::Error;

use crate::calib::CameraIntrinsics;
use crate::geom::{average_beacon_readings, frame_from_beacons, BeaconPair, FrameId, GeomError, RigidTransform};
use crate::io::{BeaconReadings, ObjectEntry};
use crate::labelgen::{generate_label, LabelChain, LabelFile, ObjectLabel};
use crate::refine::{fit_ground_plane, refine_label_with_plane, MpfKind, RefineConfig, RefineError};
use crate::rng::derive_seed;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no robot beacon readings in sample `{0}`")]
    NoRobotReadings(String),
    #[error("object `{id}` has class `{class}` with no proposal functions; known kinds: {known}")]
    UnknownClass { id: String, class: String, known: String },
    #[error("label `{0}` does not match any dataset object")]
    UnknownObject(String),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Refine(#[from] RefineError),
}

/// Proposal functions per class name.
pub type ClassKinds = BTreeMap<String, Vec<MpfKind>>;

pub fn default_class_kinds() -> ClassKinds {
    BTreeMap::from([
        (
            "cabinet".to_string(),
            vec![
                MpfKind::CabinetLeftFront,
                MpfKind::CabinetRightFront,
                MpfKind::CabinetTwoPointFace,
            ],
        ),
        ("table".to_string(), vec![MpfKind::TableStem]),
    ])
}

/// `T_robot←ips` from the first `averaging` robot readings.
pub fn robot_from_ips(readings: &[BeaconPair], averaging: usize) -> Result<RigidTransform, GeomError> {
    let pair = average_beacon_readings(readings, averaging)?;
    Ok(frame_from_beacons(&pair, FrameId::Robot)?.inverse())
}

/// Labels for every dataset object. Objects whose readings are missing or
/// unusable get an entry with a note instead of boxes.
pub fn label_sample(
    sample_id: &str,
    readings: &BeaconReadings,
    objects: &[ObjectEntry],
    intrinsics: &CameraIntrinsics,
    cam_from_robot: &RigidTransform,
    lidar_from_cam: &RigidTransform,
    averaging: usize,
) -> Result<LabelFile, PipelineError> {
    let robot = readings.frame(FrameId::Robot);
    if robot.is_empty() {
        return Err(PipelineError::NoRobotReadings(sample_id.to_string()));
    }
    let robot_from_ips = robot_from_ips(robot, averaging)?;
    let chain = LabelChain {
        intrinsics,
        cam_from_robot,
        robot_from_ips: &robot_from_ips,
        lidar_from_cam,
    };
    let labels = objects
        .iter()
        .map(|o| {
            let generated = average_beacon_readings(readings.frame(o.frame), averaging)
                .map_err(Into::into)
                .and_then(|pair| generate_label(&pair, &o.spec, &chain));
            match generated {
                Ok(g) => ObjectLabel::from_generated(&o.id, &o.spec.class, &g),
                Err(e) => ObjectLabel::failed(&o.id, &o.spec.class, &e),
            }
        })
        .collect();
    Ok(LabelFile {
        sample_id: sample_id.to_string(),
        objects: labels,
    })
}

/// Checks that every labelled class has proposal functions.
pub fn check_classes(labels: &LabelFile, kinds: &ClassKinds) -> Result<(), PipelineError> {
    for o in &labels.objects {
        if !kinds.contains_key(&o.class) {
            return Err(PipelineError::UnknownClass {
                id: o.id.clone(),
                class: o.class.clone(),
                known: MpfKind::ALL.iter().map(|k| k.name()).collect::<Vec<_>>().join(", "),
            });
        }
    }
    Ok(())
}

/// Refines every 3D box of a label file against one LiDAR cloud. The ground
/// plane is fitted once; each object searches with its own seed. A failed
/// refinement keeps the unrefined box and records why.
pub fn refine_sample(
    labels: &LabelFile,
    cloud: &[Point3<f64>],
    objects: &[ObjectEntry],
    kinds: &ClassKinds,
    cfg: &RefineConfig,
) -> Result<LabelFile, PipelineError> {
    check_classes(labels, kinds)?;
    let plane = fit_ground_plane(cloud, cfg)?;
    let mut out = labels.clone();
    for (k, label) in out.objects.iter_mut().enumerate() {
        let Some(record) = label.box3d_lidar else { continue };
        let entry = objects
            .iter()
            .find(|o| o.id == label.id)
            .ok_or_else(|| PipelineError::UnknownObject(label.id.clone()))?;
        let obj_cfg = RefineConfig {
            seed: derive_seed(cfg.seed, &[k as u64]),
            ..*cfg
        };
        let unrefined = record.to_box(FrameId::Lidar);
        match refine_label_with_plane(cloud, &unrefined, &entry.spec, &kinds[&label.class], &obj_cfg, plane) {
            Ok(r) => {
                label.box3d_lidar = Some((&r.refined).into());
                label.refined = true;
            }
            Err(e) => label.note = Some(format!("refinement failed: {e}")),
        }
    }
    Ok(out)
}
