//! Per-component pose errors, true-positive logic, detection average
//! precision and summary statistics.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::FusedScene;
use crate::scene::{geodesic_angle, yaw, Box2d, GroundTruthObject, ObjectId, Rotation, SceneInstance, Vec3, VoxelGrid};

/// True-positive thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    /// Translation error, meters (`<=`).
    pub delta_t: f64,
    /// Mean absolute log2 scale ratio (`<=`).
    pub delta_s: f64,
    /// Rotation error, degrees (`<=`).
    pub delta_q: f64,
    /// Voxel IoU (`>=`).
    pub delta_v: f64,
    /// Box IoU (`>=`).
    pub delta_b: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { delta_t: 0.5, delta_s: 0.2, delta_q: 30.0, delta_v: 0.25, delta_b: 0.5 }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        let all = [self.delta_t, self.delta_s, self.delta_q, self.delta_v, self.delta_b];
        if all.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::invalid(format!("thresholds must be positive: {self:?}")));
        }
        Ok(())
    }
}

pub fn translation_error(pred: &Vec3, gt: &Vec3) -> f64 {
    (pred - gt).norm()
}

/// Mean over axes of `|log2 pred - log2 gt|`, from extents.
pub fn scale_error(pred_extents: &Vec3, gt_extents: &Vec3) -> Result<f64> {
    if pred_extents.iter().chain(gt_extents.iter()).any(|&e| !(e > 0.0)) {
        return Err(Error::invalid("scale error needs positive extents"));
    }
    Ok(pred_extents.iter().zip(gt_extents.iter()).map(|(p, g)| (p.log2() - g.log2()).abs()).sum::<f64>() / 3.0)
}

/// Same as [`scale_error`] from natural-log extents.
pub fn scale_error_log(pred_log: &Vec3, gt_log: &Vec3) -> f64 {
    (pred_log - gt_log).abs().sum() / (3.0 * std::f64::consts::LN_2)
}

/// Geodesic error in degrees, minimized over the yaw symmetry group of the object.
pub fn rotation_error(pred: &Rotation, gt: &Rotation, symmetry_order: u8) -> f64 {
    let order = symmetry_order.max(1);
    (0..order)
        .map(|k| {
            let g = yaw(std::f64::consts::TAU * f64::from(k) / f64::from(order));
            geodesic_angle(pred, &(gt * g))
        })
        .fold(f64::INFINITY, f64::min)
        .to_degrees()
}

/// IoU of the thresholded occupancies; two empty grids have IoU 1.
pub fn voxel_iou(pred: &VoxelGrid, gt: &VoxelGrid) -> Result<f64> {
    if pred.resolution() != gt.resolution() {
        return Err(Error::ResolutionMismatch { left: pred.resolution(), right: gt.resolution() });
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for i in 0..pred.values().len() {
        let (a, b) = (pred.is_occupied(i), gt.is_occupied(i));
        inter += usize::from(a && b);
        union += usize::from(a || b);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

pub fn box2d_iou(a: &Box2d, b: &Box2d) -> f64 {
    let w = (a.xmax.min(b.xmax) - a.xmin.max(b.xmin)).max(0.0);
    let h = (a.ymax.min(b.ymax) - a.ymin.max(b.ymin)).max(0.0);
    let inter = w * h;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    inter / union
}

/// Subset of {box2d, trans, rot, scale, shape} used to decide a true positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct CriteriaMask(u8);

impl CriteriaMask {
    pub const BOX2D: Self = Self(1);
    pub const TRANSLATION: Self = Self(2);
    pub const ROTATION: Self = Self(4);
    pub const SCALE: Self = Self(8);
    pub const SHAPE: Self = Self(16);
    pub const ALL: Self = Self(31);
    pub const NONE: Self = Self(0);

    const NAMES: [(&'static str, CriteriaMask); 5] = [
        ("box2d", Self::BOX2D),
        ("trans", Self::TRANSLATION),
        ("rot", Self::ROTATION),
        ("scale", Self::SCALE),
        ("shape", Self::SHAPE),
    ];

    pub const fn union(self, other: Self) -> Self {
        Self(self.0 | other.0)
    }

    pub const fn contains(self, other: Self) -> bool {
        self.0 & other.0 == other.0
    }

    /// The four criteria sets of the standard detection table:
    /// all, box2d+trans, box2d+rot, box2d+scale.
    pub fn detection_table() -> Vec<CriteriaMask> {
        vec![
            Self::ALL,
            Self::BOX2D.union(Self::TRANSLATION),
            Self::BOX2D.union(Self::ROTATION),
            Self::BOX2D.union(Self::SCALE),
        ]
    }
}

impl fmt::Display for CriteriaMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == Self::ALL {
            return f.write_str("all");
        }
        let parts: Vec<&str> = Self::NAMES.iter().filter(|(_, m)| self.contains(*m)).map(|(n, _)| *n).collect();
        if parts.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&parts.join("+"))
        }
    }
}

impl FromStr for CriteriaMask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "all" {
            return Ok(Self::ALL);
        }
        let mut mask = Self::NONE;
        for part in s.split('+') {
            let part = part.trim();
            let (_, m) = Self::NAMES
                .iter()
                .find(|(n, _)| *n == part)
                .ok_or_else(|| Error::invalid(format!("unknown criterion {part:?}")))?;
            mask = mask.union(*m);
        }
        Ok(mask)
    }
}

impl Serialize for CriteriaMask {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

/// A pose hypothesis being evaluated against ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub object_id: ObjectId,
    pub category: String,
    pub score: f64,
    pub translation: Vec3,
    pub log_scale: Vec3,
    pub rotation: Rotation,
    pub box2d: Option<Box2d>,
    pub shape: Option<Arc<VoxelGrid>>,
}

/// Whether `pred` satisfies every selected threshold against `gt`. Categories must agree.
pub fn is_true_positive(
    pred: &Detection,
    gt: &GroundTruthObject,
    thresholds: &Thresholds,
    mask: CriteriaMask,
) -> Result<bool> {
    if pred.category != gt.category {
        return Ok(false);
    }
    if mask.contains(CriteriaMask::SHAPE) && pred.shape.is_none() {
        return Err(Error::MissingShape(format!("prediction {}", pred.object_id)));
    }
    if mask.contains(CriteriaMask::BOX2D) {
        let b = pred.box2d.ok_or_else(|| Error::invalid(format!("prediction {} has no 2D box", pred.object_id)))?;
        if box2d_iou(&b, &gt.box2d) < thresholds.delta_b {
            return Ok(false);
        }
    }
    if mask.contains(CriteriaMask::TRANSLATION)
        && translation_error(&pred.translation, &gt.pose.translation) > thresholds.delta_t
    {
        return Ok(false);
    }
    if mask.contains(CriteriaMask::ROTATION)
        && rotation_error(&pred.rotation, &gt.pose.rotation, gt.symmetry_order) > thresholds.delta_q
    {
        return Ok(false);
    }
    if mask.contains(CriteriaMask::SCALE) && scale_error_log(&pred.log_scale, &gt.pose.log_scale) > thresholds.delta_s {
        return Ok(false);
    }
    if let (true, Some(shape)) = (mask.contains(CriteriaMask::SHAPE), &pred.shape) {
        if voxel_iou(shape, &gt.shape)? < thresholds.delta_v {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Detections and ground truth of one image.
#[derive(Debug, Clone, Copy)]
pub struct DetectionSet<'a> {
    pub detections: &'a [Detection],
    pub ground_truth: &'a [GroundTruthObject],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApResult {
    pub criteria: CriteriaMask,
    pub ap: f64,
    /// Raw precision/recall after each ranked detection.
    pub pr: Vec<PrPoint>,
    pub num_gt: usize,
    pub num_tp: usize,
}

/// All-points interpolated AP from a ranked true/false-positive sequence.
pub fn average_precision(ranked_tp: &[bool], num_gt: usize) -> Result<(f64, Vec<PrPoint>)> {
    if num_gt == 0 {
        return Err(Error::EmptyGroundTruth);
    }
    let mut tp = 0usize;
    let mut pr = Vec::with_capacity(ranked_tp.len());
    for (i, &hit) in ranked_tp.iter().enumerate() {
        tp += usize::from(hit);
        pr.push(PrPoint { recall: tp as f64 / num_gt as f64, precision: tp as f64 / (i + 1) as f64 });
    }
    let mut envelope: Vec<f64> = pr.iter().map(|p| p.precision).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, env) in pr.iter().zip(&envelope) {
        ap += (p.recall - prev_recall) * env;
        prev_recall = p.recall;
    }
    Ok((ap, pr))
}

/// Precision envelope (non-increasing in rank) of a PR sequence.
pub fn precision_envelope(pr: &[PrPoint]) -> Vec<PrPoint> {
    let mut out = pr.to_vec();
    for i in (0..out.len().saturating_sub(1)).rev() {
        out[i].precision = out[i].precision.max(out[i + 1].precision);
    }
    out
}

/// Detection AP over a set of images. Detections are ranked by descending score
/// (ties by image then object id); each is matched to the first unmatched
/// ground truth of its image that it satisfies.
pub fn detection_ap(sets: &[DetectionSet<'_>], thresholds: &Thresholds, mask: CriteriaMask) -> Result<ApResult> {
    let num_gt: usize = sets.iter().map(|s| s.ground_truth.len()).sum();
    if num_gt == 0 {
        return Err(Error::EmptyGroundTruth);
    }
    let mut order: Vec<(usize, usize)> =
        sets.iter().enumerate().flat_map(|(i, s)| (0..s.detections.len()).map(move |j| (i, j))).collect();
    order.sort_by(|&(ia, ja), &(ib, jb)| {
        let (a, b) = (&sets[ia].detections[ja], &sets[ib].detections[jb]);
        b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal).then(ia.cmp(&ib)).then(a.object_id.cmp(&b.object_id))
    });
    let mut matched: Vec<Vec<bool>> = sets.iter().map(|s| vec![false; s.ground_truth.len()]).collect();
    let mut ranked = Vec::with_capacity(order.len());
    for (i, j) in order {
        let det = &sets[i].detections[j];
        let mut hit = false;
        for (k, gt) in sets[i].ground_truth.iter().enumerate() {
            if !matched[i][k] && is_true_positive(det, gt, thresholds, mask)? {
                matched[i][k] = true;
                hit = true;
                break;
            }
        }
        ranked.push(hit);
    }
    let num_tp = ranked.iter().filter(|&&h| h).count();
    let (ap, pr) = average_precision(&ranked, num_gt)?;
    Ok(ApResult { criteria: mask, ap, pr, num_gt, num_tp })
}

/// Median, mean and percentage within threshold of one error component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentStats {
    pub count: usize,
    pub median: f64,
    pub mean: f64,
    pub pct_within: f64,
}

impl ComponentStats {
    /// `within` decides whether a single value passes the threshold.
    pub fn from_values(values: &[f64], within: impl Fn(f64) -> bool) -> Self {
        if values.is_empty() {
            return Self { count: 0, median: 0.0, mean: 0.0, pct_within: 0.0 };
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 { sorted[n / 2] } else { (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0 };
        let mean = sorted.iter().sum::<f64>() / n as f64;
        let pct_within = 100.0 * values.iter().filter(|&&v| within(v)).count() as f64 / n as f64;
        Self { count: n, median, mean, pct_within }
    }
}

/// Per-object errors for one matched prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObjectErrors {
    pub translation: f64,
    pub rotation: f64,
    pub scale: f64,
    pub shape_iou: Option<f64>,
}

pub fn object_errors(pred: &Detection, gt: &GroundTruthObject) -> Result<ObjectErrors> {
    Ok(ObjectErrors {
        translation: translation_error(&pred.translation, &gt.pose.translation),
        rotation: rotation_error(&pred.rotation, &gt.pose.rotation, gt.symmetry_order),
        scale: scale_error_log(&pred.log_scale, &gt.pose.log_scale),
        shape_iou: match &pred.shape {
            Some(s) => Some(voxel_iou(s, &gt.shape)?),
            None => None,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorStats {
    pub translation: ComponentStats,
    pub rotation: ComponentStats,
    pub scale: ComponentStats,
    pub shape: Option<ComponentStats>,
}

impl ErrorStats {
    pub fn from_errors(errors: &[ObjectErrors], thresholds: &Thresholds) -> Self {
        let col = |f: fn(&ObjectErrors) -> f64| errors.iter().map(f).collect::<Vec<_>>();
        let ious: Vec<f64> = errors.iter().filter_map(|e| e.shape_iou).collect();
        Self {
            translation: ComponentStats::from_values(&col(|e| e.translation), |v| v <= thresholds.delta_t),
            rotation: ComponentStats::from_values(&col(|e| e.rotation), |v| v <= thresholds.delta_q),
            scale: ComponentStats::from_values(&col(|e| e.scale), |v| v <= thresholds.delta_s),
            shape: (!ious.is_empty()).then(|| ComponentStats::from_values(&ious, |v| v >= thresholds.delta_v)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub stats: ErrorStats,
    pub detection: Vec<ApResult>,
}

/// Component statistics over every prediction whose id names a ground-truth
/// object (identity matching, as with ground-truth boxes).
pub fn scene_error_stats(sets: &[DetectionSet<'_>], thresholds: &Thresholds) -> Result<ErrorStats> {
    let mut errors = Vec::new();
    for s in sets {
        for d in s.detections {
            if let Some(gt) = s.ground_truth.iter().find(|g| g.object_id == d.object_id) {
                errors.push(object_errors(d, gt)?);
            }
        }
    }
    Ok(ErrorStats::from_errors(&errors, thresholds))
}

/// Statistics plus AP for each criteria set.
pub fn evaluate(sets: &[DetectionSet<'_>], thresholds: &Thresholds, criteria: &[CriteriaMask]) -> Result<EvalReport> {
    thresholds.validate()?;
    let stats = scene_error_stats(sets, thresholds)?;
    let detection = criteria.iter().map(|&m| detection_ap(sets, thresholds, m)).collect::<Result<Vec<_>>>()?;
    Ok(EvalReport { stats, detection })
}

/// Detections for `fused`, taking category, score, box and shape from the matching unary predictions.
pub fn detections(scene: &SceneInstance, fused: &FusedScene) -> Result<Vec<Detection>> {
    fused
        .objects
        .iter()
        .map(|o| {
            let u = scene.unary_index(o.object_id).map(|i| &scene.unary[i]).ok_or_else(|| {
                Error::IdMismatch(format!("{}: no unary prediction for object {}", scene.scene_id, o.object_id))
            })?;
            Ok(Detection {
                object_id: o.object_id,
                category: u.category.clone(),
                score: u.score,
                translation: o.translation,
                log_scale: o.log_scale,
                rotation: o.rotation,
                box2d: u.box2d,
                shape: u.shape.clone(),
            })
        })
        .collect()
}
