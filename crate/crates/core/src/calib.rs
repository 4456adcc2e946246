//! Camera ↔ robot-beacon-frame calibration.
//!
//! Beacons with known IPS positions are observed in a rectified image. Their
//! positions are moved into the robot beacon frame (`T_robot←ips`) and a
//! perspective-n-point solve recovers `T_cam←robot`. The solver is a
//! normalized DLT followed by Gauss-Newton refinement of the six pose
//! parameters, optionally wrapped in a seeded RANSAC loop.

use nalgebra::{DMatrix, Matrix3, Matrix6, Point2, Point3, Rotation3, Vector2, Vector3, Vector6};
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{FrameId, GeomError, RigidTransform};
use crate::rng::stream_rng;

/// Points closer than this to the camera plane cannot be projected.
pub const MIN_DEPTH: f64 = 1e-6;
/// Correspondences drawn per RANSAC hypothesis.
pub const MIN_SAMPLE: usize = 6;
pub const DEFAULT_RANSAC_ITERATIONS: usize = 2000;

const MAX_REFINE_ITERATIONS: usize = 100;
const RMSE_DECREASE_TOL: f64 = 1e-10;
const DEGENERATE_SINGULAR_RATIO: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("point at depth {depth:.3e} m is behind the camera")]
    BehindCamera { depth: f64 },
    #[error("correspondence {index} has no plane tag")]
    MissingPlaneTag { index: usize },
    #[error("need at least {needed} correspondences, got {got}")]
    TooFewCorrespondences { needed: usize, got: usize },
    #[error("degenerate correspondence configuration")]
    DegenerateConfiguration,
    #[error("pose refinement did not converge")]
    NoConvergence,
    #[error("only {found} inliers; at least {needed} required")]
    TooFewInliers { needed: usize, found: usize },
    #[error("empty subset")]
    EmptySubset,
    #[error("pixel ({u}, {v}) of correspondence {index} lies outside the image")]
    PixelOutOfBounds { index: usize, u: f64, v: f64 },
    #[error("invalid RANSAC threshold {0}")]
    InvalidThreshold(f64),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

/// Pinhole intrinsics for rectified images (no distortion model).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<(), CalibError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(CalibError::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) || self.width == 0 || self.height == 0 {
            return Err(CalibError::InvalidIntrinsics(
                "principal point must be finite and image size non-zero".into(),
            ));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Projects a camera-frame point.
    pub fn project(&self, p: &Point3<f64>) -> Result<Point2<f64>, CalibError> {
        if !(p.z > MIN_DEPTH) {
            return Err(CalibError::BehindCamera { depth: p.z });
        }
        Ok(Point2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    /// Normalized image coordinates (`K⁻¹·[u v 1]` without the trailing 1).
    pub fn normalize(&self, px: &Point2<f64>) -> Point2<f64> {
        Point2::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy)
    }

    pub fn contains(&self, px: &Point2<f64>) -> bool {
        px.x >= 0.0 && px.y >= 0.0 && px.x <= self.width as f64 && px.y <= self.height as f64
    }
}

/// Which of the two calibration planes a beacon rests on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlaneTag {
    Floor,
    Table,
}

/// A beacon's IPS position paired with its annotated pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub beacon_ips: Point3<f64>,
    pub pixel: Point2<f64>,
    pub plane_tag: Option<PlaneTag>,
}

/// Rejects correspondences whose pixels fall outside the image.
pub fn check_pixels(corrs: &[Correspondence], intr: &CameraIntrinsics) -> Result<(), CalibError> {
    match corrs.iter().position(|c| !intr.contains(&c.pixel)) {
        Some(index) => Err(CalibError::PixelOutOfBounds {
            index,
            u: corrs[index].pixel.x,
            v: corrs[index].pixel.y,
        }),
        None => Ok(()),
    }
}

/// Replaces every beacon height with the mean height of its plane group.
pub fn apply_planar_constraint(corrs: &[Correspondence]) -> Result<Vec<Correspondence>, CalibError> {
    // Mean accumulated as offsets from the group's first height, so a group
    // that is already flat comes back bit-identical.
    let mut groups: [Option<(f64, f64, usize)>; 2] = [None; 2];
    for (index, c) in corrs.iter().enumerate() {
        let tag = c.plane_tag.ok_or(CalibError::MissingPlaneTag { index })?;
        let z = c.beacon_ips.z;
        let g = groups[tag as usize].get_or_insert((z, 0.0, 0));
        g.1 += z - g.0;
        g.2 += 1;
    }
    let means = groups.map(|g| g.map_or(0.0, |(first, off, n)| first + off / n as f64));
    Ok(corrs
        .iter()
        .map(|c| {
            let mut out = *c;
            // Tags were checked above.
            out.beacon_ips.z = means[c.plane_tag.unwrap() as usize];
            out
        })
        .collect())
}

/// `Proj · T_cam←ips · p` with homogeneous division.
pub fn project(
    intr: &CameraIntrinsics,
    cam_from_ips: &RigidTransform,
    p: &Point3<f64>,
) -> Result<Point2<f64>, CalibError> {
    intr.project(&cam_from_ips.transform_point(p))
}

fn check_robot_from_ips(t: &RigidTransform) -> Result<(), CalibError> {
    if t.from_frame() != FrameId::Ips {
        return Err(GeomError::FrameMismatch {
            expected: FrameId::Ips,
            found: t.from_frame(),
        }
        .into());
    }
    if t.to_frame() != FrameId::Robot {
        return Err(GeomError::FrameMismatch {
            expected: FrameId::Robot,
            found: t.to_frame(),
        }
        .into());
    }
    Ok(())
}

/// Squared pixel error per correspondence; infinite when behind the camera.
fn squared_errors(
    points: &[Point3<f64>],
    pixels: &[Point2<f64>],
    intr: &CameraIntrinsics,
    rotation: &Matrix3<f64>,
    translation: &Vector3<f64>,
) -> Vec<f64> {
    points
        .iter()
        .zip(pixels)
        .map(|(x, px)| {
            let y = Point3::from(rotation * x.coords + translation);
            match intr.project(&y) {
                Ok(p) => (p - px).norm_squared(),
                Err(_) => f64::INFINITY,
            }
        })
        .collect()
}

/// Root-mean-square reprojection error over `subset`, in pixels.
pub fn reprojection_rmse(
    corrs: &[Correspondence],
    intr: &CameraIntrinsics,
    cam_from_robot: &RigidTransform,
    robot_from_ips: &RigidTransform,
    subset: &[usize],
) -> Result<f64, CalibError> {
    if subset.is_empty() {
        return Err(CalibError::EmptySubset);
    }
    let cam_from_ips = cam_from_robot.compose(robot_from_ips)?;
    let mut sum = 0.0;
    for &i in subset {
        let c = &corrs[i];
        let p = project(intr, &cam_from_ips, &c.beacon_ips)?;
        sum += (p - c.pixel).norm_squared();
    }
    Ok((sum / subset.len() as f64).sqrt())
}

/// Similarity normalization: centroid to the origin, mean distance to `target`.
fn normalization<const D: usize>(
    points: impl Iterator<Item = nalgebra::SVector<f64, D>> + Clone,
    target: f64,
) -> Option<(nalgebra::SVector<f64, D>, f64)> {
    let n = points.clone().count() as f64;
    let centroid = points.clone().fold(nalgebra::SVector::<f64, D>::zeros(), |a, p| a + p) / n;
    let mean_dist = points.map(|p| (p - centroid).norm()).sum::<f64>() / n;
    if !(mean_dist > 1e-12) {
        return None;
    }
    Some((centroid, target / mean_dist))
}

/// Linear pose from ≥6 robot-frame points and normalized image coordinates.
fn dlt_pose(points: &[Point3<f64>], rays: &[Point2<f64>]) -> Result<(Matrix3<f64>, Vector3<f64>), CalibError> {
    let n = points.len();
    let (c3, s3) = normalization(points.iter().map(|p| p.coords), 3f64.sqrt())
        .ok_or(CalibError::DegenerateConfiguration)?;
    let (c2, s2) = normalization(rays.iter().map(|p| p.coords), 2f64.sqrt())
        .ok_or(CalibError::DegenerateConfiguration)?;

    let mut a = DMatrix::<f64>::zeros(2 * n.max(6), 12);
    for (i, (p, r)) in points.iter().zip(rays).enumerate() {
        let x = (p.coords - c3) * s3;
        let xh = [x.x, x.y, x.z, 1.0];
        let u = (r.coords - c2) * s2;
        for k in 0..4 {
            a[(2 * i, k)] = xh[k];
            a[(2 * i, 8 + k)] = -u.x * xh[k];
            a[(2 * i + 1, 4 + k)] = xh[k];
            a[(2 * i + 1, 8 + k)] = -u.y * xh[k];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(CalibError::DegenerateConfiguration)?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sv = |k: usize| svd.singular_values[order[k]];
    if order.len() < 12 || !(sv(10) > DEGENERATE_SINGULAR_RATIO * sv(0)) {
        return Err(CalibError::DegenerateConfiguration);
    }
    let h = v_t.row(order[11]);
    let p_norm = nalgebra::Matrix3x4::from_fn(|r, c| h[4 * r + c]);

    // Undo both normalizations: P = T2⁻¹ · P̃ · T3.
    let mut t3 = nalgebra::Matrix4::<f64>::identity() * s3;
    t3[(3, 3)] = 1.0;
    t3.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-c3 * s3));
    let t2_inv = Matrix3::new(1.0 / s2, 0.0, c2.x, 0.0, 1.0 / s2, c2.y, 0.0, 0.0, 1.0);
    let mut p = t2_inv * p_norm * t3;

    // Pick the sign that puts the points in front of the camera.
    let in_front = points
        .iter()
        .filter(|x| (p.row(2) * x.to_homogeneous())[0] > 0.0)
        .count();
    if 2 * in_front < n {
        p = -p;
    }
    let m = p.fixed_view::<3, 3>(0, 0).into_owned();
    let msvd = m.svd(true, true);
    let (u, v_t) = (msvd.u.unwrap(), msvd.v_t.unwrap());
    let rotation = u * v_t;
    if rotation.determinant() < 0.0 {
        return Err(CalibError::DegenerateConfiguration);
    }
    let scale = msvd.singular_values.sum() / 3.0;
    if !(scale > 0.0) {
        return Err(CalibError::DegenerateConfiguration);
    }
    let translation = p.column(3).into_owned() / scale;
    Ok((rotation, translation))
}

fn rmse_of(sq: &[f64]) -> f64 {
    (sq.iter().sum::<f64>() / sq.len() as f64).sqrt()
}

/// Gauss-Newton on the pose with Levenberg damping after rejected steps.
/// Rotation updates are left-multiplied axis-angle increments.
fn refine_pose(
    points: &[Point3<f64>],
    pixels: &[Point2<f64>],
    intr: &CameraIntrinsics,
    mut rotation: Matrix3<f64>,
    mut translation: Vector3<f64>,
) -> Result<(Matrix3<f64>, Vector3<f64>), CalibError> {
    let mut rmse = rmse_of(&squared_errors(points, pixels, intr, &rotation, &translation));
    if !rmse.is_finite() {
        return Err(CalibError::NoConvergence);
    }
    let mut lambda = 0.0;
    let mut converged = false;
    for _ in 0..MAX_REFINE_ITERATIONS {
        let mut jtj = Matrix6::<f64>::zeros();
        let mut jtr = Vector6::<f64>::zeros();
        for (x, px) in points.iter().zip(pixels) {
            let q = rotation * x.coords;
            let y = q + translation;
            let iz = 1.0 / y.z;
            let r = Vector2::new(
                intr.fx * y.x * iz + intr.cx - px.x,
                intr.fy * y.y * iz + intr.cy - px.y,
            );
            let dpi = nalgebra::Matrix2x3::new(
                intr.fx * iz,
                0.0,
                -intr.fx * y.x * iz * iz,
                0.0,
                intr.fy * iz,
                -intr.fy * y.y * iz * iz,
            );
            // d(exp(ω)·q)/dω at ω = 0 is −[q]×.
            let dq = -q.cross_matrix();
            let mut j = nalgebra::Matrix2x6::<f64>::zeros();
            j.fixed_view_mut::<2, 3>(0, 0).copy_from(&(dpi * dq));
            j.fixed_view_mut::<2, 3>(0, 3).copy_from(&dpi);
            jtj += j.transpose() * j;
            jtr += j.transpose() * r;
        }
        let mut damped = jtj;
        for k in 0..6 {
            damped[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
        }
        let step = match damped.cholesky() {
            Some(ch) => ch.solve(&(-jtr)),
            None => {
                lambda = if lambda == 0.0 { 1e-4 } else { lambda * 10.0 };
                if lambda > 1e12 {
                    converged = true;
                    break;
                }
                continue;
            }
        };
        let omega = Vector3::new(step[0], step[1], step[2]);
        let cand_rot = Rotation3::new(omega).matrix() * rotation;
        let cand_t = translation + Vector3::new(step[3], step[4], step[5]);
        let cand_rmse = rmse_of(&squared_errors(points, pixels, intr, &cand_rot, &cand_t));
        if cand_rmse < rmse {
            let decrease = rmse - cand_rmse;
            rotation = cand_rot;
            translation = cand_t;
            rmse = cand_rmse;
            lambda = if lambda < 1e-7 { 0.0 } else { lambda / 10.0 };
            if decrease < RMSE_DECREASE_TOL {
                converged = true;
                break;
            }
        } else {
            lambda = if lambda == 0.0 { 1e-4 } else { lambda * 10.0 };
            if lambda > 1e12 {
                // No descent direction left: at a minimum to working precision.
                converged = true;
                break;
            }
        }
    }
    if !converged || !rmse.is_finite() {
        return Err(CalibError::NoConvergence);
    }
    // Re-project onto SO(3) to keep the invariant tight after many updates.
    let rotation = RigidTransform::new(rotation, translation, FrameId::Robot, FrameId::Cam)?;
    Ok((*rotation.rotation(), translation))
}

fn robot_points(corrs: &[Correspondence], robot_from_ips: &RigidTransform) -> Vec<Point3<f64>> {
    corrs
        .iter()
        .map(|c| robot_from_ips.transform_point(&c.beacon_ips))
        .collect()
}

fn solve_pnp_points(
    points: &[Point3<f64>],
    pixels: &[Point2<f64>],
    intr: &CameraIntrinsics,
) -> Result<RigidTransform, CalibError> {
    if points.len() < MIN_SAMPLE {
        return Err(CalibError::TooFewCorrespondences {
            needed: MIN_SAMPLE,
            got: points.len(),
        });
    }
    let rays: Vec<Point2<f64>> = pixels.iter().map(|p| intr.normalize(p)).collect();
    let (r0, t0) = dlt_pose(points, &rays)?;
    let (r, t) = refine_pose(points, pixels, intr, r0, t0)?;
    Ok(RigidTransform::new(r, t, FrameId::Robot, FrameId::Cam)?)
}

/// Estimates `T_cam←robot` from all correspondences.
pub fn solve_pnp(
    corrs: &[Correspondence],
    intr: &CameraIntrinsics,
    robot_from_ips: &RigidTransform,
) -> Result<RigidTransform, CalibError> {
    intr.validate()?;
    check_robot_from_ips(robot_from_ips)?;
    let points = robot_points(corrs, robot_from_ips);
    let pixels: Vec<Point2<f64>> = corrs.iter().map(|c| c.pixel).collect();
    solve_pnp_points(&points, &pixels, intr)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacOptions {
    pub delta_px: f64,
    pub iterations: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    /// Seeded RANSAC over 6-point DLT hypotheses, refit on the inliers.
    Ransac,
    /// Single fit to every correspondence.
    AllPoints,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibMethod {
    pub solver: Solver,
    pub delta_px: Option<f64>,
    pub planar: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    /// `T_cam←robot`.
    pub extrinsic: RigidTransform,
    pub inlier_indices: Vec<usize>,
    /// Over inliers for RANSAC, over every correspondence otherwise.
    pub rmse_px: f64,
    pub method: CalibMethod,
}

/// Score of one hypothesis; the maximum under `Ord` wins.
#[derive(Debug, Clone, Copy)]
struct Hypothesis {
    inliers: usize,
    rmse: f64,
    iteration: usize,
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Hypothesis {
    /// More inliers, then lower inlier RMSE, then earlier iteration.
    fn beats(&self, other: &Hypothesis) -> bool {
        self.inliers
            .cmp(&other.inliers)
            .then_with(|| other.rmse.total_cmp(&self.rmse))
            .then_with(|| other.iteration.cmp(&self.iteration))
            .is_gt()
    }
}

/// RANSAC around [`solve_pnp`]. Hypotheses are evaluated in parallel but
/// each iteration owns its RNG stream, so the result equals a sequential run.
pub fn solve_pnp_ransac(
    corrs: &[Correspondence],
    intr: &CameraIntrinsics,
    robot_from_ips: &RigidTransform,
    opts: &RansacOptions,
) -> Result<CalibrationResult, CalibError> {
    intr.validate()?;
    check_robot_from_ips(robot_from_ips)?;
    if !(opts.delta_px > 0.0) {
        return Err(CalibError::InvalidThreshold(opts.delta_px));
    }
    let n = corrs.len();
    if n < MIN_SAMPLE {
        return Err(CalibError::TooFewCorrespondences {
            needed: MIN_SAMPLE,
            got: n,
        });
    }
    let points = robot_points(corrs, robot_from_ips);
    let pixels: Vec<Point2<f64>> = corrs.iter().map(|c| c.pixel).collect();
    let delta_sq = opts.delta_px * opts.delta_px;

    let best = (0..opts.iterations)
        .into_par_iter()
        .filter_map(|iteration| {
            let mut rng = stream_rng(opts.seed, iteration as u64);
            let sample = index::sample(&mut rng, n, MIN_SAMPLE);
            let sp: Vec<Point3<f64>> = sample.iter().map(|i| points[i]).collect();
            let sx: Vec<Point2<f64>> = sample.iter().map(|i| pixels[i]).collect();
            let model = solve_pnp_points(&sp, &sx, intr).ok()?;
            let errors = squared_errors(&points, &pixels, intr, model.rotation(), model.translation());
            let inlier_sq: Vec<f64> = errors.into_iter().filter(|&e| e < delta_sq).collect();
            if inlier_sq.is_empty() {
                return None;
            }
            Some(Hypothesis {
                inliers: inlier_sq.len(),
                rmse: rmse_of(&inlier_sq),
                iteration,
                rotation: *model.rotation(),
                translation: *model.translation(),
            })
        })
        .reduce_with(|a, b| if b.beats(&a) { b } else { a });

    let best = best.ok_or(CalibError::TooFewInliers {
        needed: MIN_SAMPLE,
        found: 0,
    })?;
    let inlier_indices: Vec<usize> =
        squared_errors(&points, &pixels, intr, &best.rotation, &best.translation)
            .iter()
            .enumerate()
            .filter(|(_, &e)| e < delta_sq)
            .map(|(i, _)| i)
            .collect();
    if inlier_indices.len() < MIN_SAMPLE {
        return Err(CalibError::TooFewInliers {
            needed: MIN_SAMPLE,
            found: inlier_indices.len(),
        });
    }
    let inlier_corrs: Vec<Correspondence> = inlier_indices.iter().map(|&i| corrs[i]).collect();
    let extrinsic = solve_pnp(&inlier_corrs, intr, robot_from_ips)?;
    let rmse_px = reprojection_rmse(corrs, intr, &extrinsic, robot_from_ips, &inlier_indices)?;
    Ok(CalibrationResult {
        extrinsic,
        inlier_indices,
        rmse_px,
        method: CalibMethod {
            solver: Solver::Ransac,
            delta_px: Some(opts.delta_px),
            planar: false,
        },
    })
}

/// Options for a full calibration run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibOptions {
    /// Replace beacon heights by per-plane means before solving.
    pub planar: bool,
    /// Use RANSAC; when false every correspondence is fitted.
    pub ransac: bool,
    pub delta_px: f64,
    pub iterations: usize,
    /// Robot beacon readings averaged into `T_robot←ips`.
    pub averaging: usize,
}

impl Default for CalibOptions {
    fn default() -> Self {
        Self {
            planar: true,
            ransac: true,
            delta_px: 8.0,
            iterations: DEFAULT_RANSAC_ITERATIONS,
            averaging: 16,
        }
    }
}

/// Planar constraint (optional) followed by RANSAC or an all-points fit.
pub fn calibrate(
    corrs: &[Correspondence],
    intr: &CameraIntrinsics,
    robot_from_ips: &RigidTransform,
    opts: &CalibOptions,
    seed: u64,
) -> Result<CalibrationResult, CalibError> {
    let prepared = if opts.planar {
        apply_planar_constraint(corrs)?
    } else {
        corrs.to_vec()
    };
    let mut result = if opts.ransac {
        solve_pnp_ransac(
            &prepared,
            intr,
            robot_from_ips,
            &RansacOptions {
                delta_px: opts.delta_px,
                iterations: opts.iterations,
                seed,
            },
        )?
    } else {
        let extrinsic = solve_pnp(&prepared, intr, robot_from_ips)?;
        let all: Vec<usize> = (0..prepared.len()).collect();
        let rmse_px = reprojection_rmse(&prepared, intr, &extrinsic, robot_from_ips, &all)?;
        CalibrationResult {
            extrinsic,
            inlier_indices: all,
            rmse_px,
            method: CalibMethod {
                solver: Solver::AllPoints,
                delta_px: None,
                planar: false,
            },
        }
    };
    result.method.planar = opts.planar;
    Ok(result)
}

/// On-disk calibration report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationReport {
    /// `T_cam←robot`, homogeneous, row-major.
    pub extrinsic: [f64; 16],
    pub inliers: Vec<usize>,
    pub rmse_px: f64,
    pub method: Solver,
    pub delta_px: Option<f64>,
    pub planar: bool,
}

impl From<&CalibrationResult> for CalibrationReport {
    fn from(r: &CalibrationResult) -> Self {
        Self {
            extrinsic: r.extrinsic.to_row_major(),
            inliers: r.inlier_indices.clone(),
            rmse_px: r.rmse_px,
            method: r.method.solver,
            delta_px: r.method.delta_px,
            planar: r.method.planar,
        }
    }
}

impl CalibrationReport {
    pub fn cam_from_robot(&self) -> Result<RigidTransform, GeomError> {
        RigidTransform::from_row_major(&self.extrinsic, FrameId::Robot, FrameId::Cam)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics {
            fx: 700.0,
            fy: 700.0,
            cx: 640.0,
            cy: 360.0,
            width: 1280,
            height: 720,
        }
    }

    fn random_pose(rng: &mut impl Rng) -> RigidTransform {
        let aa = Vector3::new(
            rng.random_range(-0.4..0.4),
            rng.random_range(-0.4..0.4),
            rng.random_range(-3.1..3.1),
        );
        let t = Vector3::new(
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
        );
        RigidTransform::from_axis_angle(aa, t, FrameId::Robot, FrameId::Cam)
    }

    /// Points in front of the camera, expressed back in the robot frame.
    fn synth(
        rng: &mut impl Rng,
        cam_from_robot: &RigidTransform,
        n: usize,
        pixel_sigma: f64,
    ) -> Vec<Correspondence> {
        let noise = Normal::new(0.0, pixel_sigma.max(1e-300)).unwrap();
        let robot_from_cam = cam_from_robot.inverse();
        (0..n)
            .map(|i| {
                let pc = Point3::new(
                    rng.random_range(-1.5..1.5),
                    rng.random_range(-0.8..0.8),
                    rng.random_range(2.0..6.0),
                );
                let mut px = intr().project(&pc).unwrap();
                if pixel_sigma > 0.0 {
                    px.x += noise.sample(rng);
                    px.y += noise.sample(rng);
                }
                Correspondence {
                    beacon_ips: robot_from_cam.transform_point(&pc),
                    pixel: px,
                    plane_tag: Some(if i % 2 == 0 { PlaneTag::Floor } else { PlaneTag::Table }),
                }
            })
            .collect()
    }

    fn robot_is_ips() -> RigidTransform {
        RigidTransform::identity(FrameId::Ips, FrameId::Robot)
    }

    #[test]
    fn planar_constraint_means() {
        let mk = |z: f64, tag| Correspondence {
            beacon_ips: Point3::new(1.0, 2.0, z),
            pixel: Point2::new(3.0, 4.0),
            plane_tag: Some(tag),
        };
        let out = apply_planar_constraint(&[mk(0.01, PlaneTag::Floor), mk(-0.01, PlaneTag::Floor)]).unwrap();
        assert!(out.iter().all(|c| c.beacon_ips.z == 0.0));
        assert_eq!(out[0].pixel, Point2::new(3.0, 4.0));

        let same = [mk(0.3, PlaneTag::Table), mk(0.3, PlaneTag::Table)];
        assert_eq!(apply_planar_constraint(&same).unwrap(), same.to_vec());

        let mut untagged = mk(0.0, PlaneTag::Floor);
        untagged.plane_tag = None;
        assert_eq!(
            apply_planar_constraint(&[mk(0.0, PlaneTag::Floor), untagged]),
            Err(CalibError::MissingPlaneTag { index: 1 })
        );
    }

    #[test]
    fn planar_constraint_two_groups() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let corrs: Vec<Correspondence> = (0..40)
            .map(|i| {
                let (base, tag) = if i < 20 { (0.0, PlaneTag::Floor) } else { (0.75, PlaneTag::Table) };
                Correspondence {
                    beacon_ips: Point3::new(i as f64, 0.0, base + rng.random_range(-0.02..0.02)),
                    pixel: Point2::origin(),
                    plane_tag: Some(tag),
                }
            })
            .collect();
        let mean = |r: std::ops::Range<usize>| corrs[r.clone()].iter().map(|c| c.beacon_ips.z).sum::<f64>() / r.len() as f64;
        let (floor, table) = (mean(0..20), mean(20..40));
        let out = apply_planar_constraint(&corrs).unwrap();
        assert!(out[..20].iter().all(|c| c.beacon_ips.z == out[0].beacon_ips.z));
        assert!(out[20..].iter().all(|c| c.beacon_ips.z == out[20].beacon_ips.z));
        assert!((out[0].beacon_ips.z - floor).abs() < 1e-14);
        assert!((out[20].beacon_ips.z - out[0].beacon_ips.z - (table - floor)).abs() < 1e-14);
        assert_eq!(apply_planar_constraint(&out).unwrap(), out);
    }

    #[test]
    fn projection_cases() {
        let k = CameraIntrinsics { fx: 100.0, fy: 100.0, cx: 0.0, cy: 0.0, width: 640, height: 480 };
        let id = RigidTransform::identity(FrameId::Ips, FrameId::Cam);
        assert_eq!(project(&k, &id, &Point3::new(0.0, 0.0, 1.0)).unwrap(), Point2::new(0.0, 0.0));
        assert_eq!(project(&k, &id, &Point3::new(0.5, 0.0, 1.0)).unwrap(), Point2::new(50.0, 0.0));
        assert!(matches!(
            project(&k, &id, &Point3::new(0.0, 0.0, -1.0)),
            Err(CalibError::BehindCamera { .. })
        ));
    }

    #[test]
    fn projection_matches_homogeneous_matrix_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let k = intr();
        for _ in 0..100 {
            let pose = random_pose(&mut rng).with_frames(FrameId::Ips, FrameId::Cam);
            let p = pose.inverse().transform_point(&Point3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(1.0..5.0),
            ));
            // [K | 0] · M₄ · [p; 1], then divide.
            let mut k34 = nalgebra::Matrix3x4::<f64>::zeros();
            k34.fixed_view_mut::<3, 3>(0, 0).copy_from(&k.matrix());
            let h = k34 * pose.to_matrix4() * p.to_homogeneous();
            let got = project(&k, &pose, &p).unwrap();
            assert!((got.x - h.x / h.z).abs() < 1e-9);
            assert!((got.y - h.y / h.z).abs() < 1e-9);
        }
    }

    #[test]
    fn rmse_cases() {
        let k = intr();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pose = random_pose(&mut rng);
        let mut corrs = synth(&mut rng, &pose, 10, 0.0);
        let all: Vec<usize> = (0..10).collect();
        assert!(reprojection_rmse(&corrs, &k, &pose, &robot_is_ips(), &all).unwrap() < 1e-9);
        corrs[3].pixel += Vector2::new(3.0, 4.0);
        let single = reprojection_rmse(&corrs, &k, &pose, &robot_is_ips(), &[3]).unwrap();
        assert!((single - 5.0).abs() < 1e-9);
        assert_eq!(
            reprojection_rmse(&corrs, &k, &pose, &robot_is_ips(), &[]),
            Err(CalibError::EmptySubset)
        );

        // Separate per-point oracle on a noisy scene.
        let noisy = synth(&mut rng, &pose, 30, 2.0);
        let subset: Vec<usize> = (0..30).step_by(3).collect();
        let mut acc = 0.0;
        for &i in &subset {
            let pc = pose.to_matrix4() * noisy[i].beacon_ips.to_homogeneous();
            let u = k.fx * pc.x / pc.z + k.cx;
            let v = k.fy * pc.y / pc.z + k.cy;
            acc += (u - noisy[i].pixel.x).powi(2) + (v - noisy[i].pixel.y).powi(2);
        }
        let oracle = (acc / subset.len() as f64).sqrt();
        let got = reprojection_rmse(&noisy, &k, &pose, &robot_is_ips(), &subset).unwrap();
        assert!((got - oracle).abs() < 1e-12);
    }

    #[test]
    fn pnp_recovers_noise_free_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let pose = random_pose(&mut rng);
            let corrs = synth(&mut rng, &pose, 20, 0.0);
            let est = solve_pnp(&corrs, &intr(), &robot_is_ips()).unwrap();
            let (dr, dt) = est.distance(&pose);
            assert!(dr < 1e-6 && dt < 1e-6, "dr={dr} dt={dt}");
            assert_eq!(est.from_frame(), FrameId::Robot);
            assert_eq!(est.to_frame(), FrameId::Cam);
        }
    }

    #[test]
    fn pnp_identity_on_two_planes() {
        // Identity camera pose; points on z ∈ {2, 2.75} planes in front of it.
        let pose = RigidTransform::identity(FrameId::Robot, FrameId::Cam);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let corrs: Vec<Correspondence> = (0..12)
            .map(|i| {
                let z = if i % 2 == 0 { 2.0 } else { 2.75 };
                let p = Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5), z);
                Correspondence {
                    beacon_ips: p,
                    pixel: intr().project(&p).unwrap(),
                    plane_tag: None,
                }
            })
            .collect();
        let est = solve_pnp(&corrs, &intr(), &robot_is_ips()).unwrap();
        let (dr, dt) = est.distance(&pose);
        assert!(dr < 1e-6 && dt < 1e-6);
    }

    #[test]
    fn pnp_noisy_rmse_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let pose = random_pose(&mut rng);
        let corrs = synth(&mut rng, &pose, 63, 0.5);
        let est = solve_pnp(&corrs, &intr(), &robot_is_ips()).unwrap();
        let all: Vec<usize> = (0..63).collect();
        let rmse = reprojection_rmse(&corrs, &intr(), &est, &robot_is_ips(), &all).unwrap();
        assert!(rmse <= 1.0, "rmse {rmse}");
    }

    #[test]
    fn pnp_rejects_bad_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pose = random_pose(&mut rng);
        let corrs = synth(&mut rng, &pose, 5, 0.0);
        assert_eq!(
            solve_pnp(&corrs, &intr(), &robot_is_ips()),
            Err(CalibError::TooFewCorrespondences { needed: 6, got: 5 })
        );
        // All points on one line through space.
        let line: Vec<Correspondence> = (0..8)
            .map(|i| {
                let p = Point3::new(0.1 * i as f64, 0.0, 3.0);
                Correspondence { beacon_ips: p, pixel: intr().project(&p).unwrap(), plane_tag: None }
            })
            .collect();
        assert!(solve_pnp(&line, &intr(), &robot_is_ips()).is_err());
        let wrong = RigidTransform::identity(FrameId::Robot, FrameId::Ips);
        assert!(matches!(
            solve_pnp(&synth(&mut rng, &pose, 8, 0.0), &intr(), &wrong),
            Err(CalibError::Geom(GeomError::FrameMismatch { .. }))
        ));
    }

    #[test]
    fn ransac_separates_outliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let pose = random_pose(&mut rng);
        let mut corrs = synth(&mut rng, &pose, 63, 0.0);
        let corrupted: Vec<usize> = (0..63).filter(|i| i % 5 == 2).take(13).collect();
        assert_eq!(corrupted.len(), 13);
        for &i in &corrupted {
            let angle = i as f64;
            corrs[i].pixel += Vector2::new(50.0 * angle.cos(), 50.0 * angle.sin());
        }
        let opts = RansacOptions { delta_px: 8.0, iterations: 500, seed: 9 };
        let res = solve_pnp_ransac(&corrs, &intr(), &robot_is_ips(), &opts).unwrap();
        let clean: Vec<usize> = (0..63).filter(|i| !corrupted.contains(i)).collect();
        assert_eq!(res.inlier_indices, clean);
        assert!(res.rmse_px < 1e-6);
        let (dr, dt) = res.extrinsic.distance(&pose);
        assert!(dr < 1e-6 && dt < 1e-6);
    }

    #[test]
    fn ransac_with_wide_threshold_equals_all_points_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let pose = random_pose(&mut rng);
        let corrs = synth(&mut rng, &pose, 40, 1.0);
        let opts = RansacOptions { delta_px: 1e4, iterations: 50, seed: 1 };
        let res = solve_pnp_ransac(&corrs, &intr(), &robot_is_ips(), &opts).unwrap();
        assert_eq!(res.inlier_indices, (0..40).collect::<Vec<_>>());
        let direct = solve_pnp(&corrs, &intr(), &robot_is_ips()).unwrap();
        assert_eq!(res.extrinsic, direct);
    }

    #[test]
    fn ransac_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let pose = random_pose(&mut rng);
        let corrs = synth(&mut rng, &pose, 30, 3.0);
        let opts = RansacOptions { delta_px: 4.0, iterations: 300, seed: 77 };
        let a = solve_pnp_ransac(&corrs, &intr(), &robot_is_ips(), &opts).unwrap();
        let b = solve_pnp_ransac(&corrs, &intr(), &robot_is_ips(), &opts).unwrap();
        assert_eq!(a, b);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c = pool.install(|| solve_pnp_ransac(&corrs, &intr(), &robot_is_ips(), &opts).unwrap());
        assert_eq!(a, c);
    }

    #[test]
    fn ransac_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let pose = random_pose(&mut rng);
        let corrs = synth(&mut rng, &pose, 20, 5.0);
        let opts = RansacOptions { delta_px: 1e-9, iterations: 20, seed: 1 };
        assert!(matches!(
            solve_pnp_ransac(&corrs, &intr(), &robot_is_ips(), &opts),
            Err(CalibError::TooFewInliers { .. })
        ));
        let opts = RansacOptions { delta_px: 0.0, iterations: 20, seed: 1 };
        assert_eq!(
            solve_pnp_ransac(&corrs, &intr(), &robot_is_ips(), &opts),
            Err(CalibError::InvalidThreshold(0.0))
        );
    }

    #[test]
    fn report_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let pose = random_pose(&mut rng);
        let corrs = synth(&mut rng, &pose, 20, 0.5);
        let res = calibrate(&corrs, &intr(), &robot_is_ips(), &CalibOptions::default(), 3).unwrap();
        assert!(res.method.planar);
        let report = CalibrationReport::from(&res);
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"method\":\"ransac\""));
        let back: CalibrationReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
        assert_eq!(back.cam_from_robot().unwrap().to_row_major(), report.extrinsic);
    }
}
