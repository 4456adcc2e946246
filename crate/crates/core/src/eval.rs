//! IoU metrics, label-set comparison and the down-sampling fitness study.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Point2, Point3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::downsample;
use crate::geom::FrameId;
use crate::io::{read_label_dir, IoError};
use crate::labelgen::{Box2, LabelFile, ObjectSpec, OrientedBox3};
use crate::refine::{fit_ground_plane, fitness, refine_label_with_plane, MpfKind, RefineConfig, RefineError};
use crate::rng::{derive_seed, stream_rng};

/// Auto and reference objects further apart than this are never paired, meters.
pub const MATCH_GATE: f64 = 2.0;
const DOWNSAMPLE_STREAM: u64 = 0x646f776e;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("sample `{0}` is missing from one of the label sets")]
    MissingSample(String),
    #[error("sample `{sample}`: reference `{reference}` ({expected}) is nearest to `{found_id}` of class `{found}`")]
    ClassMismatch {
        sample: String,
        reference: String,
        expected: String,
        found_id: String,
        found: String,
    },
    #[error("invalid study parameters: {0}")]
    InvalidStudy(String),
    #[error(transparent)]
    Refine(#[from] RefineError),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Intersection over union of two image boxes; 0 when either is empty.
pub fn iou_2d(a: &Box2, b: &Box2) -> f64 {
    let iw = (a.u1.min(b.u1) - a.u0.max(b.u0)).max(0.0);
    let ih = (a.v1.min(b.v1) - a.v0.max(b.v0)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union > 0.0 {
        (inter / union).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Footprint corners, counter-clockwise.
fn footprint(b: &OrientedBox3) -> Vec<Point2<f64>> {
    b.vertices().points[..4].iter().map(|p| Point2::new(p.x, p.y)).collect()
}

fn polygon_area(poly: &[Point2<f64>]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let twice: f64 = (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.x * b.y - b.x * a.y
        })
        .sum();
    0.5 * twice.abs()
}

/// Sutherland–Hodgman: `subject` clipped by the convex CCW polygon `clip`.
fn clip_convex(subject: &[Point2<f64>], clip: &[Point2<f64>]) -> Vec<Point2<f64>> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let edge = b - a;
        let side = |p: &Point2<f64>| edge.x * (p.y - a.y) - edge.y * (p.x - a.x);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let (p, q) = (input[j], input[(j + 1) % input.len()]);
            let (sp, sq) = (side(&p), side(&q));
            if sp >= 0.0 {
                out.push(p);
            }
            if (sp >= 0.0) != (sq >= 0.0) {
                let t = sp / (sp - sq);
                out.push(p + (q - p) * t);
            }
        }
    }
    out
}

/// Volume IoU of two yaw-only boxes: footprint overlap times height overlap.
pub fn iou_3d(a: &OrientedBox3, b: &OrientedBox3) -> f64 {
    let dz = (a.center.z + 0.5 * a.dims.z).min(b.center.z + 0.5 * b.dims.z)
        - (a.center.z - 0.5 * a.dims.z).max(b.center.z - 0.5 * b.dims.z);
    if !(dz > 0.0) {
        return 0.0;
    }
    let area = polygon_area(&clip_convex(&footprint(a), &footprint(b)));
    let inter = area * dz;
    let union = a.volume() + b.volume() - inter;
    if union > 0.0 {
        (inter / union).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseSummary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

pub fn summarize_rmse(values: &[f64]) -> Option<RmseSummary> {
    let median = median(values)?;
    Some(RmseSummary {
        count: values.len(),
        mean: values.iter().sum::<f64>() / values.len() as f64,
        median,
        min: values.iter().cloned().fold(f64::INFINITY, f64::min),
        max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub proportion: f64,
    pub trial: usize,
    /// Best proposal's fitness on the original cloud.
    pub fitness: Option<usize>,
    pub iou: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProportionSummary {
    pub proportion: f64,
    pub trials: usize,
    pub failures: usize,
    pub mean_fitness: Option<f64>,
    pub mean_iou: Option<f64>,
}

/// Refinement on random subsamples of the label's neighborhood.
///
/// For every proportion, `trials` independent subsamples of the points within
/// `cfg.radius` of the unrefined center are refined; the winning box is then
/// scored on the original cloud. Refinement failures are recorded per row.
#[allow(clippy::too_many_arguments)]
pub fn downsample_study(
    cloud: &[Point3<f64>],
    unrefined: &OrientedBox3,
    spec: &ObjectSpec,
    kinds: &[MpfKind],
    proportions: &[f64],
    trials: usize,
    cfg: &RefineConfig,
    truth: Option<&OrientedBox3>,
) -> Result<Vec<StudyRow>, EvalError> {
    if trials == 0 {
        return Err(EvalError::InvalidStudy("trials must be at least 1".into()));
    }
    if let Some(p) = proportions.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
        return Err(EvalError::InvalidStudy(format!("proportion {p} is outside (0, 1]")));
    }
    let plane = fit_ground_plane(cloud, cfg)?;
    let region: Vec<Point3<f64>> = cloud
        .iter()
        .filter(|p| (*p - unrefined.center).norm() <= cfg.radius)
        .copied()
        .collect();
    let jobs: Vec<(usize, usize)> = (0..proportions.len())
        .flat_map(|pi| (0..trials).map(move |t| (pi, t)))
        .collect();
    Ok(jobs
        .par_iter()
        .map(|&(pi, trial)| {
            let proportion = proportions[pi];
            let mut rng = stream_rng(derive_seed(cfg.seed, &[DOWNSAMPLE_STREAM, pi as u64]), trial as u64);
            let sub = downsample(&region, proportion, &mut rng);
            let trial_cfg = RefineConfig {
                seed: derive_seed(cfg.seed, &[pi as u64, trial as u64]),
                ..*cfg
            };
            match refine_label_with_plane(&sub, unrefined, spec, kinds, &trial_cfg, plane) {
                Ok(out) => StudyRow {
                    proportion,
                    trial,
                    fitness: Some(fitness(&out.refined, cloud, cfg.shell_delta)),
                    iou: truth.map(|t| iou_3d(&out.refined, t)),
                    error: None,
                },
                Err(e) => StudyRow {
                    proportion,
                    trial,
                    fitness: None,
                    iou: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect())
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn summarize_study(rows: &[StudyRow], proportions: &[f64]) -> Vec<ProportionSummary> {
    proportions
        .iter()
        .map(|&p| {
            let sel: Vec<&StudyRow> = rows.iter().filter(|r| r.proportion == p).collect();
            ProportionSummary {
                proportion: p,
                trials: sel.len(),
                failures: sel.iter().filter(|r| r.error.is_some()).count(),
                mean_fitness: mean(sel.iter().filter_map(|r| r.fitness.map(|f| f as f64))),
                mean_iou: mean(sel.iter().filter_map(|r| r.iou)),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEval {
    pub reference_id: String,
    pub auto_id: String,
    pub class: String,
    pub iou_2d: Option<f64>,
    pub iou_3d: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEval {
    pub sample_id: String,
    pub pairs: Vec<PairEval>,
    pub unmatched_reference: Vec<String>,
    pub unmatched_auto: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: Vec<SampleEval>,
    pub matched: usize,
    pub unmatched: usize,
    pub mean_iou_2d: Option<f64>,
    pub mean_iou_3d: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rmse: Option<RmseSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub downsample: Option<Vec<ProportionSummary>>,
}

impl EvalReport {
    /// One CSV row per matched pair.
    pub fn pairs_csv(&self) -> Result<Vec<u8>, csv::Error> {
        #[derive(Serialize)]
        struct Row<'a> {
            sample_id: &'a str,
            reference_id: &'a str,
            auto_id: &'a str,
            class: &'a str,
            iou_2d: Option<f64>,
            iou_3d: Option<f64>,
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        for s in &self.samples {
            for p in &s.pairs {
                w.serialize(Row {
                    sample_id: &s.sample_id,
                    reference_id: &p.reference_id,
                    auto_id: &p.auto_id,
                    class: &p.class,
                    iou_2d: p.iou_2d,
                    iou_3d: p.iou_3d,
                })?;
            }
        }
        w.into_inner().map_err(|e| e.into_error().into())
    }
}

pub fn study_csv(rows: &[StudyRow]) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

fn compare_sample(sample: &str, auto: &LabelFile, reference: &LabelFile) -> Result<SampleEval, EvalError> {
    let boxes = |l: &LabelFile| -> Vec<Option<OrientedBox3>> {
        l.objects
            .iter()
            .map(|o| o.box3d_lidar.map(|b| b.to_box(FrameId::Lidar)))
            .collect()
    };
    let (auto_boxes, ref_boxes) = (boxes(auto), boxes(reference));
    let mut used = vec![false; auto.objects.len()];
    let mut pairs = Vec::new();
    let mut unmatched_reference = Vec::new();
    for (ri, r) in reference.objects.iter().enumerate() {
        let Some(rb) = ref_boxes[ri] else {
            unmatched_reference.push(r.id.clone());
            continue;
        };
        let nearest = |same_class: bool| {
            auto.objects
                .iter()
                .enumerate()
                .filter(|(ai, a)| !used[*ai] && (a.class == r.class) == same_class)
                .filter_map(|(ai, _)| auto_boxes[ai].map(|b| (ai, (b.center - rb.center).norm())))
                .filter(|(_, d)| *d <= MATCH_GATE)
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        };
        match nearest(true) {
            Some((ai, _)) => {
                used[ai] = true;
                let a = &auto.objects[ai];
                pairs.push(PairEval {
                    reference_id: r.id.clone(),
                    auto_id: a.id.clone(),
                    class: r.class.clone(),
                    iou_2d: match (&a.box2d, &r.box2d) {
                        (Some(x), Some(y)) => Some(iou_2d(x, y)),
                        _ => None,
                    },
                    iou_3d: auto_boxes[ai].map(|b| iou_3d(&b, &rb)),
                });
            }
            None => {
                if let Some((ai, _)) = nearest(false) {
                    return Err(EvalError::ClassMismatch {
                        sample: sample.to_string(),
                        reference: r.id.clone(),
                        expected: r.class.clone(),
                        found_id: auto.objects[ai].id.clone(),
                        found: auto.objects[ai].class.clone(),
                    });
                }
                unmatched_reference.push(r.id.clone());
            }
        }
    }
    let unmatched_auto = auto
        .objects
        .iter()
        .zip(&used)
        .filter(|(_, u)| !**u)
        .map(|(a, _)| a.id.clone())
        .collect();
    Ok(SampleEval {
        sample_id: sample.to_string(),
        pairs,
        unmatched_reference,
        unmatched_auto,
    })
}

/// Pairs objects by sample id, class and nearest 3D center within
/// [`MATCH_GATE`], and averages the IoUs over matched pairs.
pub fn compare_labels(
    auto: &BTreeMap<String, LabelFile>,
    reference: &BTreeMap<String, LabelFile>,
) -> Result<EvalReport, EvalError> {
    if let Some(id) = reference.keys().find(|k| !auto.contains_key(*k)) {
        return Err(EvalError::MissingSample(id.clone()));
    }
    if let Some(id) = auto.keys().find(|k| !reference.contains_key(*k)) {
        return Err(EvalError::MissingSample(id.clone()));
    }
    if reference.is_empty() {
        return Err(EvalError::MissingSample("<none>".into()));
    }
    let samples = reference
        .iter()
        .map(|(id, r)| compare_sample(id, &auto[id], r))
        .collect::<Result<Vec<_>, _>>()?;
    let all_pairs = || samples.iter().flat_map(|s| s.pairs.iter());
    Ok(EvalReport {
        matched: all_pairs().count(),
        unmatched: samples
            .iter()
            .map(|s| s.unmatched_reference.len() + s.unmatched_auto.len())
            .sum(),
        mean_iou_2d: mean(all_pairs().filter_map(|p| p.iou_2d)),
        mean_iou_3d: mean(all_pairs().filter_map(|p| p.iou_3d)),
        samples,
        rmse: None,
        downsample: None,
    })
}

pub fn compare_label_dirs(auto: &Path, reference: &Path) -> Result<EvalReport, EvalError> {
    compare_labels(&read_label_dir(auto)?, &read_label_dir(reference)?)
}
