//! Point-cloud label refinement: ground-plane removal, class-specific model
//! proposal functions (MPFs) and a RANSAC loop that also samples which MPF
//! to apply, scored by the shell-counting fitness.
//!
//! Every proposal keeps the measured dimensions and rests on the fitted
//! ground plane; only position and heading are searched.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::{Matrix3, Point3, SymmetricEigen, Vector3};
use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labelgen::{normalize_angle, ObjectSpec, OrientedBox3};
use crate::rng::{derive_seed, stream_rng};

/// Projected sample points closer than this are treated as coincident.
const MIN_SAMPLE_SEPARATION: f64 = 1e-6;
/// Ground-plane inliers must make up at least this share of the cloud.
const MIN_GROUND_RATIO: f64 = 0.1;
const GROUND_STREAM: u64 = 0x67726f756e64;
const PROPOSAL_STREAM: u64 = 0x70726f706f73;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RefineError {
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("no ground plane found (best inlier ratio {ratio:.3})")]
    NoPlaneFound { ratio: f64 },
    #[error("no points left near the label after ground removal")]
    EmptyNeighborhood,
    #[error("degenerate sample")]
    DegenerateSample,
    #[error("no model proposal functions given")]
    NoModelKinds,
    #[error("every proposal was degenerate")]
    AllProposalsDegenerate,
    #[error("invalid refine config: {0}")]
    InvalidConfig(String),
}

/// Plane `n̂·p = d` with `n̂` pointing up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundPlane {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl GroundPlane {
    pub fn level(height: f64) -> Self {
        Self {
            normal: Vector3::z(),
            offset: height,
        }
    }

    pub fn signed_distance(&self, p: &Point3<f64>) -> f64 {
        self.normal.dot(&p.coords) - self.offset
    }

    pub fn project(&self, p: &Point3<f64>) -> Point3<f64> {
        p - self.normal * self.signed_distance(p)
    }
}

/// Model proposal functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MpfKind {
    /// Third sample point is the front corner; length runs along `(ŝ+ô)/√2`.
    CabinetLeftFront,
    /// Mirror of the above: length along `(ŝ−ô)/√2`.
    CabinetRightFront,
    /// Two points on one face; face choice and inward side are sampled.
    CabinetTwoPointFace,
    /// Third sample point is on the table's central stem.
    TableStem,
}

impl MpfKind {
    pub const ALL: [MpfKind; 4] = [
        MpfKind::CabinetLeftFront,
        MpfKind::CabinetRightFront,
        MpfKind::CabinetTwoPointFace,
        MpfKind::TableStem,
    ];

    pub fn sample_size(self) -> usize {
        match self {
            MpfKind::CabinetTwoPointFace => 2,
            _ => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MpfKind::CabinetLeftFront => "cabinet_left_front",
            MpfKind::CabinetRightFront => "cabinet_right_front",
            MpfKind::CabinetTwoPointFace => "cabinet_two_point_face",
            MpfKind::TableStem => "table_stem",
        }
    }
}

impl std::str::FromStr for MpfKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        MpfKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown MPF kind `{s}`"))
    }
}

/// Which face the two sampled points lie on, and which side the body is.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TwoPointVariant {
    /// The points lie on a length face (true) or a width face.
    pub length_face: bool,
    /// Body extends to the left (`n̂ × û`) of the sampled segment.
    pub left: bool,
}

impl TwoPointVariant {
    fn from_index(i: u32) -> Self {
        Self {
            length_face: i & 1 == 0,
            left: i & 2 == 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineConfig {
    /// Sampling neighborhood radius around the unrefined center, meters.
    pub radius: f64,
    /// Shell half-thickness for the fitness, meters.
    pub shell_delta: f64,
    /// Total proposals drawn.
    pub iterations: usize,
    /// Points closer than this to the ground plane are removed, meters.
    pub ground_threshold: f64,
    /// Table refinement drops points lower than this above ground, meters.
    pub table_min_height: f64,
    pub ground_iterations: usize,
    /// Candidate ground planes tilted further than this are skipped, degrees.
    pub max_ground_tilt_deg: f64,
    pub seed: u64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            radius: 1.5,
            shell_delta: 0.05,
            iterations: 5000,
            ground_threshold: 0.03,
            table_min_height: 0.3,
            ground_iterations: 500,
            max_ground_tilt_deg: 45.0,
            seed: 0,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<(), RefineError> {
        let positive = [
            ("radius", self.radius),
            ("shell_delta", self.shell_delta),
            ("ground_threshold", self.ground_threshold),
            ("table_min_height", self.table_min_height),
            ("max_ground_tilt_deg", self.max_ground_tilt_deg),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(RefineError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if self.iterations == 0 || self.ground_iterations == 0 {
            return Err(RefineError::InvalidConfig("iteration counts must be positive".into()));
        }
        Ok(())
    }
}

fn plane_through(a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>) -> Option<GroundPlane> {
    let n = (b - a).cross(&(c - a));
    let norm = n.norm();
    if !(norm > 1e-12) {
        return None;
    }
    let mut normal = n / norm;
    if normal.z < 0.0 {
        normal = -normal;
    }
    Some(GroundPlane {
        normal,
        offset: normal.dot(&a.coords),
    })
}

/// Least-squares plane through `points` (smallest principal axis).
fn plane_least_squares(points: &[Point3<f64>]) -> Option<GroundPlane> {
    let n = points.len() as f64;
    let centroid = points.iter().map(|p| p.coords).sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p.coords - centroid;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let k = eig.eigenvalues.imin();
    let mut normal = eig.eigenvectors.column(k).into_owned();
    let norm = normal.norm();
    if !(norm > 0.0) || !normal.iter().all(|v| v.is_finite()) {
        return None;
    }
    normal /= norm;
    if normal.z < 0.0 {
        normal = -normal;
    }
    Some(GroundPlane {
        normal,
        offset: normal.dot(&centroid),
    })
}

/// 3-point RANSAC plane with a least-squares refit on the winning inliers.
pub fn fit_ground_plane(points: &[Point3<f64>], cfg: &RefineConfig) -> Result<GroundPlane, RefineError> {
    cfg.validate()?;
    if points.len() < 3 {
        return Err(RefineError::TooFewPoints {
            needed: 3,
            got: points.len(),
        });
    }
    let seed = derive_seed(cfg.seed, &[GROUND_STREAM]);
    let min_up = cfg.max_ground_tilt_deg.to_radians().cos();
    let inliers_of = |plane: &GroundPlane| {
        points
            .iter()
            .filter(|p| plane.signed_distance(p).abs() <= cfg.ground_threshold)
            .count()
    };
    let best = (0..cfg.ground_iterations)
        .into_par_iter()
        .filter_map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let s = index::sample(&mut rng, points.len(), 3);
            let plane = plane_through(&points[s.index(0)], &points[s.index(1)], &points[s.index(2)])?;
            if plane.normal.z < min_up {
                return None;
            }
            Some((inliers_of(&plane), i, plane))
        })
        .reduce_with(|a, b| if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a });
    let (count, _, plane) = best.ok_or(RefineError::NoPlaneFound { ratio: 0.0 })?;
    let ratio = count as f64 / points.len() as f64;
    if ratio < MIN_GROUND_RATIO {
        return Err(RefineError::NoPlaneFound { ratio });
    }
    let inliers: Vec<Point3<f64>> = points
        .iter()
        .filter(|p| plane.signed_distance(p).abs() <= cfg.ground_threshold)
        .copied()
        .collect();
    Ok(plane_least_squares(&inliers).unwrap_or(plane))
}

/// Points within `radius` of the unrefined center and clear of the ground.
/// With a table MPF in `kinds`, points lower than `table_min_height` above
/// the ground are dropped too.
pub fn crop_and_strip(
    points: &[Point3<f64>],
    unrefined: &OrientedBox3,
    plane: &GroundPlane,
    cfg: &RefineConfig,
    kinds: &[MpfKind],
) -> Result<Vec<Point3<f64>>, RefineError> {
    let min_height = if kinds.contains(&MpfKind::TableStem) {
        cfg.table_min_height.max(cfg.ground_threshold)
    } else {
        cfg.ground_threshold
    };
    let out: Vec<Point3<f64>> = points
        .iter()
        .filter(|p| (*p - unrefined.center).norm() <= cfg.radius && plane.signed_distance(p) > min_height)
        .copied()
        .collect();
    if out.is_empty() {
        return Err(RefineError::EmptyNeighborhood);
    }
    Ok(out)
}

fn yaw_of(v: &Vector3<f64>) -> f64 {
    v.y.atan2(v.x)
}

/// Box with its bottom-face center at `base` (on the plane) and its length
/// axis along `l_dir`.
fn box_on_plane(base: Point3<f64>, l_dir: &Vector3<f64>, plane: &GroundPlane, spec: &ObjectSpec) -> OrientedBox3 {
    OrientedBox3::new(
        crate::geom::FrameId::Lidar,
        base + plane.normal * (0.5 * spec.height),
        spec.dims(),
        yaw_of(l_dir),
    )
}

fn unit(v: Vector3<f64>) -> Result<Vector3<f64>, RefineError> {
    let n = v.norm();
    if !(n > MIN_SAMPLE_SEPARATION) {
        return Err(RefineError::DegenerateSample);
    }
    Ok(v / n)
}

/// Apex on the ground plane, bisector `ŝ` and `ô = n̂ × ŝ`.
type BisectorFrame = (Point3<f64>, Vector3<f64>, Vector3<f64>);

/// Projected samples, unit edge directions from `q3`, bisector `ŝ` and `ô = n̂ × ŝ`.
fn bisector_frame(p: [&Point3<f64>; 3], plane: &GroundPlane) -> Result<BisectorFrame, RefineError> {
    let q = p.map(|x| plane.project(x));
    if (q[0] - q[1]).norm() <= MIN_SAMPLE_SEPARATION {
        return Err(RefineError::DegenerateSample);
    }
    let v1 = unit(q[0] - q[2])?;
    let v2 = unit(q[1] - q[2])?;
    let s = unit(v1 + v2)?;
    let o = plane.normal.cross(&s);
    Ok((q[2], s, o))
}

/// Cabinet proposal from two face points and the front corner `p3`.
pub fn mpf_cabinet(
    p1: &Point3<f64>,
    p2: &Point3<f64>,
    p3: &Point3<f64>,
    plane: &GroundPlane,
    spec: &ObjectSpec,
    kind: MpfKind,
) -> Result<OrientedBox3, RefineError> {
    let (q3, s, o) = bisector_frame([p1, p2, p3], plane)?;
    let plus = (s + o) * FRAC_1_SQRT_2;
    let minus = (s - o) * FRAC_1_SQRT_2;
    let (l_dir, w_dir) = match kind {
        MpfKind::CabinetLeftFront => (plus, minus),
        MpfKind::CabinetRightFront => (minus, plus),
        _ => return Err(RefineError::DegenerateSample),
    };
    let base = q3 + 0.5 * (spec.length * l_dir + spec.width * w_dir);
    Ok(box_on_plane(base, &l_dir, plane, spec))
}

/// Cabinet proposal from two points on one face.
pub fn mpf_cabinet_two_point(
    p1: &Point3<f64>,
    p2: &Point3<f64>,
    plane: &GroundPlane,
    spec: &ObjectSpec,
    variant: TwoPointVariant,
) -> Result<OrientedBox3, RefineError> {
    let (q1, q2) = (plane.project(p1), plane.project(p2));
    let u = unit(q1 - q2)?;
    let side = plane.normal.cross(&u);
    let inward = if variant.left { side } else { -side };
    let mid = nalgebra::center(&q1, &q2);
    let (depth, l_dir) = if variant.length_face {
        (spec.width, u)
    } else {
        (spec.length, inward)
    };
    Ok(box_on_plane(mid + 0.5 * depth * inward, &l_dir, plane, spec))
}

/// Table proposal: `p3` on the stem, assumed to stand under the footprint
/// centre; footprint axes from the bisector.
pub fn mpf_table(
    p1: &Point3<f64>,
    p2: &Point3<f64>,
    p3: &Point3<f64>,
    plane: &GroundPlane,
    spec: &ObjectSpec,
) -> Result<OrientedBox3, RefineError> {
    let (q3, s, o) = bisector_frame([p1, p2, p3], plane)?;
    Ok(box_on_plane(q3, &((s + o) * FRAC_1_SQRT_2), plane, spec))
}

/// Point coordinates in the box's own axes.
#[inline]
fn to_box_frame(b: &OrientedBox3, cs: (f64, f64), p: &Point3<f64>) -> Vector3<f64> {
    let (c, s) = cs;
    let d = p - b.center;
    Vector3::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z)
}

/// Per-axis shell counts `(|A|, |B|, |C|)`.
pub fn fitness_breakdown(b: &OrientedBox3, points: &[Point3<f64>], delta: f64) -> [usize; 3] {
    let (s, c) = b.yaw.sin_cos();
    let half = b.dims * 0.5;
    let outer = half.add_scalar(delta);
    let inner = half.add_scalar(-delta);
    let mut counts = [0usize; 3];
    for p in points {
        let l = to_box_frame(b, (c, s), p).abs();
        if l.x <= outer.x && l.y <= outer.y && l.z <= outer.z {
            for k in 0..3 {
                if l[k] >= inner[k] {
                    counts[k] += 1;
                }
            }
        }
    }
    counts
}

/// Shell fitness: points within `±delta` of a face, counted once per face
/// pair they are near (a corner point counts three times).
pub fn fitness(b: &OrientedBox3, points: &[Point3<f64>], delta: f64) -> usize {
    fitness_breakdown(b, points, delta).iter().sum()
}

/// Shell counts for each of the six faces, ordered `+x, −x, +y, −y, +z, −z`.
pub fn face_counts(b: &OrientedBox3, points: &[Point3<f64>], delta: f64) -> [usize; 6] {
    let (s, c) = b.yaw.sin_cos();
    let half = b.dims * 0.5;
    let mut counts = [0usize; 6];
    for p in points {
        let l = to_box_frame(b, (c, s), p);
        if (0..3).all(|k| l[k].abs() <= half[k] + delta) {
            for k in 0..3 {
                if l[k] >= half[k] - delta {
                    counts[2 * k] += 1;
                }
                if l[k] <= -(half[k] - delta) {
                    counts[2 * k + 1] += 1;
                }
            }
        }
    }
    counts
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutcome {
    pub refined: OrientedBox3,
    /// Fitness on the cropped, ground-stripped neighborhood searched.
    pub fitness: usize,
    /// Fitness on the full input cloud.
    pub fitness_full: usize,
    pub best_iteration: usize,
    pub degenerate: usize,
    pub plane: GroundPlane,
    pub neighborhood: usize,
}

/// Proposal generator for one label. Proposal `i` depends only on the seed
/// and `i`, so any iteration can be reproduced in isolation.
pub struct Refiner<'a> {
    pub points: Vec<Point3<f64>>,
    pub plane: GroundPlane,
    spec: &'a ObjectSpec,
    kinds: &'a [MpfKind],
    cfg: &'a RefineConfig,
    seed: u64,
}

impl<'a> Refiner<'a> {
    pub fn new(
        cloud: &[Point3<f64>],
        unrefined: &OrientedBox3,
        plane: GroundPlane,
        spec: &'a ObjectSpec,
        kinds: &'a [MpfKind],
        cfg: &'a RefineConfig,
    ) -> Result<Self, RefineError> {
        cfg.validate()?;
        if kinds.is_empty() {
            return Err(RefineError::NoModelKinds);
        }
        let points = crop_and_strip(cloud, unrefined, &plane, cfg, kinds)?;
        let needed = kinds.iter().map(|k| k.sample_size()).max().unwrap_or(3);
        if points.len() < needed {
            return Err(RefineError::TooFewPoints {
                needed,
                got: points.len(),
            });
        }
        Ok(Self {
            points,
            plane,
            spec,
            kinds,
            cfg,
            seed: derive_seed(cfg.seed, &[PROPOSAL_STREAM]),
        })
    }

    pub fn proposal(&self, iteration: usize) -> Result<OrientedBox3, RefineError> {
        let mut rng = stream_rng(self.seed, iteration as u64);
        let kind = self.kinds[rng.random_range(0..self.kinds.len())];
        let idx = index::sample(&mut rng, self.points.len(), kind.sample_size());
        let p = |k: usize| &self.points[idx.index(k)];
        match kind {
            MpfKind::CabinetLeftFront | MpfKind::CabinetRightFront => {
                mpf_cabinet(p(0), p(1), p(2), &self.plane, self.spec, kind)
            }
            MpfKind::CabinetTwoPointFace => {
                let variant = TwoPointVariant::from_index(rng.random_range(0..4));
                mpf_cabinet_two_point(p(0), p(1), &self.plane, self.spec, variant)
            }
            MpfKind::TableStem => mpf_table(p(0), p(1), p(2), &self.plane, self.spec),
        }
    }

    /// Fitness of proposal `i` on the neighborhood; `None` when degenerate.
    pub fn score(&self, iteration: usize) -> Option<(usize, OrientedBox3)> {
        let b = self.proposal(iteration).ok()?;
        Some((fitness(&b, &self.points, self.cfg.shell_delta), b))
    }

    /// Best of `cfg.iterations` proposals: strictly greater fitness wins, so
    /// ties keep the earliest. Parallel evaluation gives the same answer.
    pub fn run(&self) -> Result<(usize, usize, OrientedBox3, usize), RefineError> {
        let (best, degenerate) = (0..self.cfg.iterations)
            .into_par_iter()
            .map(|i| match self.score(i) {
                Some((f, b)) => (Some((f, i, b)), 0usize),
                None => (None, 1usize),
            })
            .reduce(
                || (None, 0),
                |(a, da), (b, db)| {
                    let best = match (a, b) {
                        (Some(x), Some(y)) => Some(if y.0 > x.0 || (y.0 == x.0 && y.1 < x.1) { y } else { x }),
                        (x, None) => x,
                        (None, y) => y,
                    };
                    (best, da + db)
                },
            );
        let (f, i, b) = best.ok_or(RefineError::AllProposalsDegenerate)?;
        Ok((f, i, b, degenerate))
    }
}

/// Heading flipped by π where that brings it closer to `reference`; the box
/// occupies the same space either way.
pub fn align_heading(b: &OrientedBox3, reference: f64) -> OrientedBox3 {
    let diff = normalize_angle(b.yaw - reference);
    if diff.abs() > PI / 2.0 {
        OrientedBox3::new(b.frame, b.center, b.dims, b.yaw + PI)
    } else {
        *b
    }
}

/// Refinement with a known ground plane.
pub fn refine_label_with_plane(
    cloud: &[Point3<f64>],
    unrefined: &OrientedBox3,
    spec: &ObjectSpec,
    kinds: &[MpfKind],
    cfg: &RefineConfig,
    plane: GroundPlane,
) -> Result<RefineOutcome, RefineError> {
    let refiner = Refiner::new(cloud, unrefined, plane, spec, kinds, cfg)?;
    let (fit, best_iteration, best, degenerate) = refiner.run()?;
    let refined = OrientedBox3 {
        frame: unrefined.frame,
        ..align_heading(&best, unrefined.yaw)
    };
    Ok(RefineOutcome {
        refined,
        fitness: fit,
        fitness_full: fitness(&refined, cloud, cfg.shell_delta),
        best_iteration,
        degenerate,
        plane,
        neighborhood: refiner.points.len(),
    })
}

/// Fits the ground plane on the whole cloud, then refines.
pub fn refine_label(
    cloud: &[Point3<f64>],
    unrefined: &OrientedBox3,
    spec: &ObjectSpec,
    kinds: &[MpfKind],
    cfg: &RefineConfig,
) -> Result<RefineOutcome, RefineError> {
    let plane = fit_ground_plane(cloud, cfg)?;
    refine_label_with_plane(cloud, unrefined, spec, kinds, cfg, plane)
}
