//! Domain types for scenes, poses and predictions.
//!
//! Frames: the camera frame is x right, y down, z forward. Objects live in a
//! canonical frame that is upright and front-facing (+z is the front), and
//! the camera is gravity aligned, so "up" is `-y` in both frames and object
//! orientations are yaw rotations about that axis. Quaternions are stored
//! `(w, x, y, z)` with the Hamilton product and map canonical coordinates
//! into the camera frame.

use std::collections::HashSet;
use std::sync::Arc;

use nalgebra::{Matrix3, Quaternion, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::binning::{quantize_direction, DirectionBinTable};
use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Rotation = UnitQuaternion<f64>;
pub type ObjectId = u32;

/// Simplex tolerance used by every probability-vector check.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Probability floor applied before any `-log`.
pub const PROB_FLOOR: f64 = 1e-12;

/// Gravity "up" in both the camera and canonical frames.
pub fn up_axis() -> Unit<Vec3> {
    Unit::new_unchecked(Vec3::new(0.0, -1.0, 0.0))
}

/// Rotation by `angle` radians about the up axis.
pub fn yaw(angle: f64) -> Rotation {
    UnitQuaternion::from_axis_angle(&up_axis(), angle)
}

/// Yaw angle whose rotated front axis (+z) points along the horizontal part of `dir`.
pub fn yaw_facing(dir: &Vec3) -> f64 {
    (-dir.x).atan2(dir.z)
}

/// Builds a rotation from `(w, x, y, z)`, re-normalizing.
pub fn rotation_from_wxyz(q: [f64; 4]) -> Result<Rotation> {
    let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
    let norm = quat.norm();
    if !norm.is_finite() || norm < 1e-12 {
        return Err(Error::invalid(format!("quaternion {q:?} cannot be normalized")));
    }
    // already unit up to rounding: keep the stored bits
    if (norm - 1.0).abs() <= 4.0 * f64::EPSILON {
        return Ok(UnitQuaternion::new_unchecked(quat));
    }
    Ok(UnitQuaternion::from_quaternion(quat))
}

pub fn rotation_to_wxyz(q: &Rotation) -> [f64; 4] {
    [q.w, q.i, q.j, q.k]
}

/// Expresses a camera-frame vector in the frame of an object with rotation `rotation`,
/// i.e. applies `R^T`.
pub fn frame_transform(rotation: &Rotation, v: &Vec3) -> Vec3 {
    rotation.inverse_transform_vector(v)
}

/// Same as [`frame_transform`] for an explicit rotation matrix.
pub fn frame_transform_matrix(rotation: &Matrix3<f64>, v: &Vec3) -> Vec3 {
    rotation.transpose() * v
}

/// Geodesic angle between two rotations in radians, in `[0, pi]`.
///
/// Uses the chordal quaternion distance `|q1 - q2| = 2 sin(theta / 4)`, taking
/// the closer of the two quaternion signs.
pub fn geodesic_angle(a: &Rotation, b: &Rotation) -> f64 {
    let qa = a.as_ref().coords;
    let qb = b.as_ref().coords;
    let chord = (qa - qb).norm().min((qa + qb).norm());
    4.0 * (chord / 2.0).clamp(0.0, 1.0).asin()
}

pub fn normalize_direction(v: &Vec3) -> Result<Vec3> {
    let n = v.norm();
    if !n.is_finite() || n < 1e-12 {
        return Err(Error::DegenerateDirection);
    }
    Ok(v / n)
}

/// Checks that `p` is a probability vector within [`SIMPLEX_TOL`].
pub fn check_simplex(p: &[f64], what: &str) -> Result<()> {
    if p.is_empty() {
        return Err(Error::invalid(format!("{what}: empty distribution")));
    }
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::invalid(format!("{what}: negative or non-finite probability")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::invalid(format!("{what}: probabilities sum to {sum}")));
    }
    Ok(())
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Index of the smallest entry; ties go to the lowest index.
pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// Translation, log-extent and orientation of one object in the camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub translation: Vec3,
    /// Natural log of the full per-axis extent in meters.
    pub log_scale: Vec3,
    pub rotation: Rotation,
}

impl Pose {
    pub fn new(translation: Vec3, log_scale: Vec3, rotation: Quaternion<f64>) -> Result<Self> {
        if translation.iter().chain(log_scale.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("pose has non-finite translation or log-scale"));
        }
        let rotation = rotation_from_wxyz([rotation.w, rotation.i, rotation.j, rotation.k])?;
        Ok(Self { translation, log_scale, rotation })
    }

    pub fn from_extents(translation: Vec3, extents: Vec3, rotation: Rotation) -> Result<Self> {
        if extents.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::invalid(format!("non-positive extent {extents:?}")));
        }
        Self::new(translation, extents.map(f64::ln), rotation.into_inner())
    }

    pub fn extents(&self) -> Vec3 {
        self.log_scale.map(f64::exp)
    }

    /// The 8 corners of the object's oriented cuboid in the camera frame.
    pub fn corners(&self) -> [Vec3; 8] {
        let half = self.extents() / 2.0;
        let mut out = [Vec3::zeros(); 8];
        for (i, c) in out.iter_mut().enumerate() {
            let local = Vec3::new(
                if i & 1 == 0 { -half.x } else { half.x },
                if i & 2 == 0 { -half.y } else { half.y },
                if i & 4 == 0 { -half.z } else { half.z },
            );
            *c = self.translation + self.rotation * local;
        }
        out
    }
}

/// Axis-aligned image rectangle in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box2d {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl Box2d {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self> {
        if !(xmin <= xmax && ymin <= ymax) {
            return Err(Error::invalid(format!("box ({xmin}, {ymin}, {xmax}, {ymax}) is not well ordered")));
        }
        Ok(Self { xmin, ymin, xmax, ymax })
    }

    pub fn from_array(b: [f64; 4]) -> Result<Self> {
        Self::new(b[0], b[1], b[2], b[3])
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.xmin, self.ymin, self.xmax, self.ymax]
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.xmin + self.xmax) / 2.0, (self.ymin + self.ymax) / 2.0)
    }
}

/// Occupancy over the canonical unit cube, indexed `x + res * (y + res * z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    resolution: usize,
    occupancy: Vec<f32>,
}

impl VoxelGrid {
    pub const DEFAULT_RESOLUTION: usize = 32;

    pub fn new(resolution: usize, occupancy: Vec<f32>) -> Result<Self> {
        if resolution == 0 || occupancy.len() != resolution.pow(3) {
            return Err(Error::invalid(format!(
                "voxel grid of resolution {resolution} needs {} values, got {}",
                resolution.pow(3),
                occupancy.len()
            )));
        }
        if occupancy.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("voxel occupancy outside [0, 1]"));
        }
        Ok(Self { resolution, occupancy })
    }

    pub fn filled(resolution: usize, value: f32) -> Result<Self> {
        Self::new(resolution, vec![value; resolution.pow(3)])
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn values(&self) -> &[f32] {
        &self.occupancy
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.resolution * (y + self.resolution * z)
    }

    pub fn is_occupied(&self, i: usize) -> bool {
        self.occupancy[i] >= 0.5
    }

    pub fn occupied_count(&self) -> usize {
        self.occupancy.iter().filter(|&&v| v >= 0.5).count()
    }
}

/// Pinhole intrinsics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl Default for Camera {
    fn default() -> Self {
        Self { fx: 500.0, fy: 500.0, cx: 320.0, cy: 240.0, width: 640.0, height: 480.0 }
    }
}

impl Camera {
    pub fn project(&self, p: &Vec3) -> (f64, f64) {
        (self.cx + self.fx * p.x / p.z, self.cy + self.fy * p.y / p.z)
    }

    pub fn contains_pixel(&self, u: f64, v: f64) -> bool {
        (0.0..=self.width).contains(&u) && (0.0..=self.height).contains(&v)
    }
}

/// Whether predictions come from ground-truth boxes or from a detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    GtBox,
    Detection,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gt-box" | "gt_box" => Ok(Mode::GtBox),
            "detection" => Ok(Mode::Detection),
            other => Err(Error::invalid(format!("unknown mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::GtBox => "gt-box",
            Mode::Detection => "detection",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthObject {
    pub object_id: ObjectId,
    pub category: String,
    pub pose: Pose,
    /// Number of yaw rotations mapping the object onto itself: 1, 2 or 4.
    pub symmetry_order: u8,
    pub shape: Arc<VoxelGrid>,
    pub box2d: Box2d,
}

impl GroundTruthObject {
    pub fn validate(&self) -> Result<()> {
        check_symmetry_order(self.symmetry_order)?;
        Box2d::new(self.box2d.xmin, self.box2d.ymin, self.box2d.xmax, self.box2d.ymax)?;
        Ok(())
    }
}

pub fn check_symmetry_order(order: u8) -> Result<()> {
    match order {
        1 | 2 | 4 => Ok(()),
        other => Err(Error::invalid(format!("symmetry order {other} not in {{1, 2, 4}}"))),
    }
}

/// Independent per-object estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct UnaryPrediction {
    pub object_id: ObjectId,
    pub category: String,
    pub translation: Vec3,
    pub log_scale: Vec3,
    /// Distribution over the rotation codebook.
    pub rotation_prob: Vec<f64>,
    /// Detection confidence in `[0, 1]`.
    pub score: f64,
    /// Detector box, when the prediction came from a detector.
    pub box2d: Option<Box2d>,
    pub shape: Option<Arc<VoxelGrid>>,
}

impl UnaryPrediction {
    pub fn validate(&self) -> Result<()> {
        check_simplex(&self.rotation_prob, "rotation_prob")?;
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::invalid(format!("score {} outside [0, 1]", self.score)));
        }
        Ok(())
    }
}

/// Pairwise estimate from `source_id` to `target_id`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativePrediction {
    pub source_id: ObjectId,
    pub target_id: ObjectId,
    /// `t_target - t_source`, camera frame.
    pub rel_translation: Vec3,
    /// `s_target - s_source`.
    pub rel_log_scale: Vec3,
    /// Distribution over the direction codebook for the target expressed in the source's frame.
    pub direction_prob: Vec<f64>,
}

impl RelativePrediction {
    pub fn validate(&self) -> Result<()> {
        if self.source_id == self.target_id {
            return Err(Error::invalid(format!("relative prediction from {} to itself", self.source_id)));
        }
        check_simplex(&self.direction_prob, "direction_prob")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneInstance {
    pub scene_id: String,
    pub camera: Camera,
    pub gt_objects: Vec<GroundTruthObject>,
    pub unary: Vec<UnaryPrediction>,
    pub relative: Vec<RelativePrediction>,
}

impl SceneInstance {
    pub fn validate(&self) -> Result<()> {
        let mut gt_ids = HashSet::new();
        for gt in &self.gt_objects {
            gt.validate()?;
            if !gt_ids.insert(gt.object_id) {
                return Err(Error::invalid(format!("duplicate ground-truth id {}", gt.object_id)));
            }
        }
        let mut unary_ids = HashSet::new();
        for u in &self.unary {
            u.validate()?;
            if !unary_ids.insert(u.object_id) {
                return Err(Error::invalid(format!("duplicate prediction id {}", u.object_id)));
            }
        }
        let mut pairs = HashSet::new();
        for r in &self.relative {
            r.validate()?;
            if !unary_ids.contains(&r.source_id) || !unary_ids.contains(&r.target_id) {
                return Err(Error::invalid(format!(
                    "relative ({}, {}) references an unknown prediction",
                    r.source_id, r.target_id
                )));
            }
            if !pairs.insert((r.source_id, r.target_id)) {
                return Err(Error::invalid(format!(
                    "duplicate relative prediction ({}, {})",
                    r.source_id, r.target_id
                )));
            }
        }
        Ok(())
    }

    pub fn gt_by_id(&self, id: ObjectId) -> Option<&GroundTruthObject> {
        self.gt_objects.iter().find(|g| g.object_id == id)
    }

    pub fn unary_index(&self, id: ObjectId) -> Option<usize> {
        self.unary.iter().position(|u| u.object_id == id)
    }
}

/// Exact relative pose from `source` to `target`, with a one-hot direction distribution.
pub fn relative_ground_truth(
    source_id: ObjectId,
    source: &Pose,
    target_id: ObjectId,
    target: &Pose,
    dir_table: &DirectionBinTable,
) -> Result<RelativePrediction> {
    let rel_translation = target.translation - source.translation;
    let direction = normalize_direction(&rel_translation)?;
    let local = frame_transform(&source.rotation, &direction);
    let bin = quantize_direction(&local, dir_table)?;
    Ok(RelativePrediction {
        source_id,
        target_id,
        rel_translation,
        rel_log_scale: target.log_scale - source.log_scale,
        direction_prob: one_hot(dir_table.len(), bin),
    })
}

/// Reverses a relative prediction: translation and log-scale negate, and the direction
/// is re-derived in the frame of the former target.
pub fn swap(rel: &RelativePrediction, target: &Pose, dir_table: &DirectionBinTable) -> Result<RelativePrediction> {
    let rel_translation = -rel.rel_translation;
    let direction = normalize_direction(&rel_translation)?;
    let local = frame_transform(&target.rotation, &direction);
    let bin = quantize_direction(&local, dir_table)?;
    Ok(RelativePrediction {
        source_id: rel.target_id,
        target_id: rel.source_id,
        rel_translation,
        rel_log_scale: -rel.rel_log_scale,
        direction_prob: one_hot(dir_table.len(), bin),
    })
}

pub fn one_hot(len: usize, index: usize) -> Vec<f64> {
    let mut p = vec![0.0; len];
    p[index] = 1.0;
    p
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_2;

    use super::*;
    use crate::binning::default_direction_codebook;

    fn pose(t: [f64; 3], s: [f64; 3], rot: Rotation) -> Pose {
        Pose::new(Vec3::from(t), Vec3::from(s), rot.into_inner()).unwrap()
    }

    #[test]
    fn pose_renormalizes_quaternion() {
        let p = Pose::new(Vec3::zeros(), Vec3::zeros(), Quaternion::new(2.0, 0.0, 0.0, 0.0)).unwrap();
        assert!((p.rotation.as_ref().norm() - 1.0).abs() < 1e-12);
        assert!(Pose::new(Vec3::zeros(), Vec3::zeros(), Quaternion::new(0.0, 0.0, 0.0, 0.0)).is_err());
        assert!(Pose::new(Vec3::new(f64::NAN, 0.0, 0.0), Vec3::zeros(), Quaternion::identity()).is_err());
    }

    #[test]
    fn identity_relative() {
        let table = default_direction_codebook();
        let a = pose([0.0; 3], [0.0; 3], Rotation::identity());
        let b = pose([1.0, 0.0, 0.0], [0.0; 3], Rotation::identity());
        let rel = relative_ground_truth(0, &a, 1, &b, &table).unwrap();
        assert_eq!(rel.rel_translation, Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(rel.rel_log_scale, Vec3::zeros());
        assert_eq!(rel.direction_prob.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn displacement_along_up_is_yaw_invariant() {
        let table = default_direction_codebook();
        let a = pose([1.0, 2.0, 3.0], [0.0; 3], yaw(FRAC_PI_2));
        let b = pose([1.0, 2.0 - 2.0, 3.0], [0.0; 3], Rotation::identity());
        let local = frame_transform(&a.rotation, &(b.translation - a.translation).normalize());
        assert!((local - up_axis().into_inner()).norm() < 1e-12);
        let rel = relative_ground_truth(0, &a, 1, &b, &table).unwrap();
        let expected = quantize_direction(&up_axis(), &table).unwrap();
        assert_eq!(argmax(&rel.direction_prob), expected);
    }

    #[test]
    fn coincident_translations_are_degenerate() {
        let table = default_direction_codebook();
        let a = pose([1.0, 1.0, 1.0], [0.0; 3], Rotation::identity());
        let err = relative_ground_truth(0, &a, 1, &a, &table).unwrap_err();
        assert!(matches!(err, Error::DegenerateDirection));
    }

    #[test]
    fn swap_negates() {
        let table = default_direction_codebook();
        let a = pose([0.0; 3], [0.0, 0.0, 0.0], Rotation::identity());
        let b = pose([1.0, 0.0, 0.0], [0.3, 0.0, -0.3], yaw(0.7));
        let rel = relative_ground_truth(3, &a, 4, &b, &table).unwrap();
        let back = swap(&rel, &b, &table).unwrap();
        assert_eq!(back.rel_translation, Vec3::new(-1.0, 0.0, 0.0));
        assert_eq!(back.rel_log_scale, Vec3::new(-0.3, 0.0, 0.3));
        assert_eq!((back.source_id, back.target_id), (4, 3));
        assert_eq!(back, relative_ground_truth(4, &b, 3, &a, &table).unwrap());
    }

    #[test]
    fn yaw_facing_points_front_axis() {
        for dir in [Vec3::new(1.0, 0.0, 0.0), Vec3::new(-0.3, 0.0, 0.8), Vec3::new(0.0, 0.0, -2.0)] {
            let front = yaw(yaw_facing(&dir)) * Vec3::z();
            assert!((front - dir.normalize()).norm() < 1e-12, "{dir:?} -> {front:?}");
        }
    }

    #[test]
    fn geodesic_of_yaw_is_angle() {
        for deg in [0.0, 15.0, 90.0, 179.0, 180.0] {
            let a: f64 = deg;
            let g = geodesic_angle(&Rotation::identity(), &yaw(a.to_radians()));
            assert!((g.to_degrees() - deg).abs() < 1e-9, "{deg} -> {}", g.to_degrees());
        }
        // sign of the quaternion is irrelevant
        let q = yaw(0.4);
        let neg = Rotation::new_unchecked(-q.into_inner());
        assert!(geodesic_angle(&q, &neg) < 1e-12);
    }

    #[test]
    fn projection_corners() {
        let p = Pose::from_extents(Vec3::new(0.0, 0.0, 5.0), Vec3::new(1.0, 2.0, 3.0), Rotation::identity()).unwrap();
        let corners = p.corners();
        let min = corners.iter().fold(Vec3::repeat(f64::MAX), |m, c| m.inf(c));
        let max = corners.iter().fold(Vec3::repeat(f64::MIN), |m, c| m.sup(c));
        assert!((min - Vec3::new(-0.5, -1.0, 3.5)).norm() < 1e-12);
        assert!((max - Vec3::new(0.5, 1.0, 6.5)).norm() < 1e-12);
    }

    #[test]
    fn simplex_checks() {
        assert!(check_simplex(&[0.5, 0.5], "p").is_ok());
        assert!(check_simplex(&[0.5, 0.6], "p").is_err());
        assert!(check_simplex(&[-0.1, 1.1], "p").is_err());
        assert!(check_simplex(&[], "p").is_err());
    }

    #[test]
    fn scene_validation_rejects_duplicate_pairs() {
        let u = UnaryPrediction {
            object_id: 0,
            category: "chair".into(),
            translation: Vec3::zeros(),
            log_scale: Vec3::zeros(),
            rotation_prob: vec![1.0],
            score: 1.0,
            box2d: None,
            shape: None,
        };
        let mut v = u.clone();
        v.object_id = 1;
        let r = RelativePrediction {
            source_id: 0,
            target_id: 1,
            rel_translation: Vec3::x(),
            rel_log_scale: Vec3::zeros(),
            direction_prob: vec![1.0],
        };
        let mut scene = SceneInstance {
            scene_id: "s".into(),
            camera: Camera::default(),
            gt_objects: vec![],
            unary: vec![u, v],
            relative: vec![r.clone()],
        };
        scene.validate().unwrap();
        scene.relative.push(r);
        assert!(scene.validate().is_err());
    }
}
