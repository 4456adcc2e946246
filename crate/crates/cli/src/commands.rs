use std::path::{Path, PathBuf};

use beaconlabel_core::calib::{calibrate as run_calibration, CalibOptions, CalibrationReport};
use beaconlabel_core::eval::{
    compare_labels, downsample_study, study_csv, summarize_rmse, summarize_study, ProportionSummary,
};
use beaconlabel_core::io::{self, read_label_dir, Dataset, ObjectEntry};
use beaconlabel_core::pipeline::{check_classes, label_sample, refine_sample, robot_from_ips};
use beaconlabel_core::refine::RefineConfig;
use beaconlabel_core::rng::derive_seed;
use beaconlabel_core::sim::generate_dataset;
use beaconlabel_core::{CameraIntrinsics, FrameId, LabelFile, RigidTransform};
use log::info;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::error::CliError;
use crate::{CalibrateArgs, EvaluateArgs, GenerateArgs, RefineArgs, SimulateArgs, Study};

pub struct Context {
    pub seed: Option<u64>,
    pub cfg: PipelineConfig,
}

impl Context {
    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn path(&self, flag: &Option<PathBuf>, file: &Option<PathBuf>, what: &str) -> Result<PathBuf, CliError> {
        flag.clone()
            .or_else(|| file.clone())
            .ok_or_else(|| CliError::Usage(format!("no {what} given (flag or [paths] entry)")))
    }

    fn dataset(&self, flag: &Option<PathBuf>) -> Result<Dataset, CliError> {
        Ok(Dataset::open(&self.path(flag, &self.cfg.paths.dataset, "dataset")?)?)
    }

    fn intrinsics(&self, ds: Option<&Dataset>) -> Result<CameraIntrinsics, CliError> {
        self.cfg
            .intrinsics
            .or_else(|| ds.map(|d| d.manifest.intrinsics))
            .ok_or_else(|| CliError::Usage("camera intrinsics needed: give --dataset or [intrinsics]".into()))
    }

    fn lidar_from_cam(&self, ds: &Dataset) -> Result<RigidTransform, CliError> {
        let m = self.cfg.lidar_from_cam.unwrap_or(ds.manifest.lidar_from_cam);
        Ok(RigidTransform::from_row_major(&m, FrameId::Cam, FrameId::Lidar)?)
    }

    fn refine_config(&self) -> RefineConfig {
        RefineConfig {
            seed: self.seed.unwrap_or(self.cfg.refine.seed),
            ..self.cfg.refine
        }
    }
}

/// Stable 64-bit digest of a sample id, for per-sample seeds.
fn id_hash(id: &str) -> u64 {
    id.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

fn label_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.json"))
}

pub fn simulate(ctx: &Context, a: &SimulateArgs) -> Result<(), CliError> {
    let mut scene = ctx.cfg.simulate.clone();
    if let Some(n) = a.samples {
        scene.samples = n;
    }
    if a.noise_free {
        scene = scene.noise_free();
    }
    let manifest = generate_dataset(&scene, ctx.seed(), &a.out)?;
    println!("wrote {} samples to {}", manifest.samples.len(), a.out.display());
    Ok(())
}

pub fn calibrate(ctx: &Context, a: &CalibrateArgs) -> Result<(), CliError> {
    let dataset_root = a.dataset.clone().or_else(|| ctx.cfg.paths.dataset.clone());
    let ds = dataset_root.as_deref().map(Dataset::open).transpose()?;
    let from_dataset = |f: fn(&Path) -> PathBuf| dataset_root.as_deref().map(f);
    let corr_path = a
        .correspondences
        .clone()
        .or_else(|| from_dataset(Dataset::correspondences_path))
        .ok_or_else(|| CliError::Usage("give --correspondences or --dataset".into()))?;
    let robot_path = a
        .robot_beacons
        .clone()
        .or_else(|| from_dataset(Dataset::robot_beacons_path))
        .ok_or_else(|| CliError::Usage("give --robot-beacons or --dataset".into()))?;

    let mut opts: CalibOptions = ctx.cfg.calibration;
    if a.planar {
        opts.planar = true;
    }
    if a.no_planar {
        opts.planar = false;
    }
    if let Some(d) = a.delta_px {
        opts.delta_px = d;
    }
    if a.all_points {
        opts.ransac = false;
    }

    let intrinsics = ctx.intrinsics(ds.as_ref())?;
    let corrs = io::read_correspondences(&corr_path)?;
    let robot_readings = io::read_beacons(&robot_path)?;
    let robot = robot_readings.frame(FrameId::Robot);
    if robot.is_empty() {
        return Err(CliError::Usage(format!("{}: no robot beacon readings", robot_path.display())));
    }
    let robot_from_ips = robot_from_ips(robot, opts.averaging)?;
    let result = run_calibration(&corrs, &intrinsics, &robot_from_ips, &opts, ctx.seed())?;
    io::write_json(&a.out, &CalibrationReport::from(&result))?;
    println!("inliers: {}/{}", result.inlier_indices.len(), corrs.len());
    println!("rmse_px: {:.5}", result.rmse_px);
    Ok(())
}

pub fn generate(ctx: &Context, a: &GenerateArgs) -> Result<(), CliError> {
    let ds = ctx.dataset(&a.dataset)?;
    let report_path = ctx.path(&a.calibration, &ctx.cfg.paths.calibration, "calibration report")?;
    let report: CalibrationReport = io::read_json(&report_path)?;
    let cam_from_robot = report.cam_from_robot()?;
    let lidar_from_cam = ctx.lidar_from_cam(&ds)?;
    let intrinsics = ctx.intrinsics(Some(&ds))?;
    let averaging = ctx.cfg.generate.averaging;
    ds.manifest.samples.par_iter().try_for_each(|id| -> Result<(), CliError> {
        let readings = ds.load_beacons(id)?;
        let labels = label_sample(
            id,
            &readings,
            &ds.manifest.objects,
            &intrinsics,
            &cam_from_robot,
            &lidar_from_cam,
            averaging,
        )?;
        io::write_json(&label_path(&a.out, id), &labels)?;
        Ok(())
    })?;
    println!("wrote labels for {} samples to {}", ds.manifest.samples.len(), a.out.display());
    Ok(())
}

pub fn refine(ctx: &Context, a: &RefineArgs) -> Result<(), CliError> {
    let ds = ctx.dataset(&a.dataset)?;
    let labels_dir = ctx.path(&a.labels, &ctx.cfg.paths.labels, "label directory")?;
    let labels = read_label_dir(&labels_dir)?;
    let kinds = ctx.cfg.class_kinds();
    // Fail on unknown classes before any work is done.
    for l in labels.values() {
        check_classes(l, &kinds)?;
    }
    let base = ctx.refine_config();
    base.validate()?;
    let list: Vec<(&String, &LabelFile)> = labels.iter().collect();
    let refined = list
        .par_iter()
        .map(|(id, l)| -> Result<(), CliError> {
            let cloud = ds.load_cloud(id)?;
            let cfg = RefineConfig {
                seed: derive_seed(base.seed, &[id_hash(id)]),
                ..base
            };
            let out = refine_sample(l, &cloud, &ds.manifest.objects, &kinds, &cfg)?;
            for o in out.objects.iter().filter(|o| !o.refined) {
                info!("{id}/{}: not refined ({})", o.id, o.note.as_deref().unwrap_or("no 3D box"));
            }
            io::write_json(&label_path(&a.out, id), &out)?;
            Ok(())
        })
        .collect::<Vec<_>>();
    refined.into_iter().collect::<Result<Vec<()>, _>>()?;
    println!("refined {} samples into {}", labels.len(), a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct StudyReport<'a> {
    sample_id: &'a str,
    object_id: &'a str,
    trials: usize,
    proportions: Vec<ProportionSummary>,
}

pub fn evaluate(ctx: &Context, a: &EvaluateArgs) -> Result<(), CliError> {
    if a.study == Some(Study::Downsample) {
        return study(ctx, a);
    }
    let auto_dir = ctx.path(&a.auto, &ctx.cfg.paths.labels, "--auto label directory")?;
    let reference_dir = match a.reference.clone().or_else(|| ctx.cfg.paths.reference.clone()) {
        Some(r) => r,
        None => ctx.dataset(&a.dataset)?.root.join("truth"),
    };
    let mut report = compare_labels(&read_label_dir(&auto_dir)?, &read_label_dir(&reference_dir)?)?;
    if !a.calibrations.is_empty() {
        let rmse = a
            .calibrations
            .iter()
            .map(|p| io::read_json::<CalibrationReport>(p).map(|r| r.rmse_px))
            .collect::<Result<Vec<_>, _>>()?;
        report.rmse = summarize_rmse(&rmse);
    }
    io::write_json(&a.out, &report)?;
    if let Some(p) = &a.pairs_csv {
        let bytes = report.pairs_csv().map_err(|e| CliError::Io(e.to_string()))?;
        io::write_atomic(p, &bytes)?;
    }
    let show = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    println!("matched: {} unmatched: {}", report.matched, report.unmatched);
    println!("mean_iou_2d: {}", show(report.mean_iou_2d));
    println!("mean_iou_3d: {}", show(report.mean_iou_3d));
    Ok(())
}

fn study(ctx: &Context, a: &EvaluateArgs) -> Result<(), CliError> {
    let ds = ctx.dataset(&a.dataset)?;
    let labels_dir = a
        .labels
        .clone()
        .or_else(|| a.auto.clone())
        .or_else(|| ctx.cfg.paths.labels.clone())
        .ok_or_else(|| CliError::Usage("the study needs --labels with unrefined labels".into()))?;
    let sample = a.sample.as_deref().ok_or_else(|| CliError::Usage("the study needs --sample".into()))?;
    let object = a.object.as_deref().ok_or_else(|| CliError::Usage("the study needs --object".into()))?;
    let proportions = a.proportions.clone().unwrap_or_else(|| ctx.cfg.evaluate.proportions.clone());
    let trials = a.trials.unwrap_or(ctx.cfg.evaluate.trials);

    let entry: &ObjectEntry = ds
        .manifest
        .objects
        .iter()
        .find(|o| o.id == object)
        .ok_or_else(|| CliError::Usage(format!("object `{object}` is not in the dataset")))?;
    let kinds = ctx.cfg.class_kinds();
    let class_kinds = kinds.get(&entry.spec.class).ok_or_else(|| {
        CliError::Usage(format!("no proposal functions configured for class `{}`", entry.spec.class))
    })?;
    let labels: LabelFile = io::read_json(&label_path(&labels_dir, sample))?;
    let unrefined = labels
        .objects
        .iter()
        .find(|o| o.id == object)
        .and_then(|o| o.box3d_lidar)
        .ok_or_else(|| CliError::Usage(format!("sample `{sample}` has no 3D label for `{object}`")))?
        .to_box(FrameId::Lidar);
    let truth_path = Dataset::truth_path(&ds.root, sample);
    let truth = if truth_path.exists() {
        ds.load_truth(sample)?
            .objects
            .iter()
            .find(|o| o.id == object)
            .and_then(|o| o.box3d_lidar)
            .map(|b| b.to_box(FrameId::Lidar))
    } else {
        None
    };
    let cloud = ds.load_cloud(sample)?;
    let rows = downsample_study(
        &cloud,
        &unrefined,
        &entry.spec,
        class_kinds,
        &proportions,
        trials,
        &ctx.refine_config(),
        truth.as_ref(),
    )?;
    let summary = summarize_study(&rows, &proportions);
    let csv = study_csv(&rows).map_err(|e| CliError::Io(e.to_string()))?;
    io::write_atomic(&a.out.join("study.csv"), &csv)?;
    io::write_json(
        &a.out.join("summary.json"),
        &StudyReport {
            sample_id: sample,
            object_id: object,
            trials,
            proportions: summary.clone(),
        },
    )?;
    for s in &summary {
        let fit = s.mean_fitness.map_or("n/a".into(), |f| format!("{f:.1}"));
        let iou = s.mean_iou.map_or("n/a".into(), |f| format!("{f:.4}"));
        println!("proportion {:<5} mean_fitness {fit} mean_iou {iou} failures {}", s.proportion, s.failures);
    }
    Ok(())
}
