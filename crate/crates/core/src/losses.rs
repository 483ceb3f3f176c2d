//! Unary, relative and joint losses, and a finite-difference check of the
//! gradient of the joint translation loss through the linear fusion.

use serde::Serialize;

use crate::binning::{symmetry_equivalent_bins, RotationBinTable};
use crate::error::{Error, Result};
use crate::fusion::{gated_relatives, FusedScene, FusionConfig, LinearFusionSystem};
use crate::scene::{
    argmax, GroundTruthObject, RelativePrediction, SceneInstance, UnaryPrediction, Vec3, VoxelGrid, PROB_FLOOR,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UnaryLosses {
    pub translation: f64,
    pub scale: f64,
    pub rotation: f64,
    /// Mean voxel cross-entropy; absent when the prediction carries no shape.
    pub shape: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RelativeLosses {
    pub translation: f64,
    pub scale: f64,
    pub direction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JointLosses {
    pub translation: f64,
    pub scale: f64,
}

fn nll(p: f64) -> f64 {
    -p.max(PROB_FLOOR).ln()
}

/// Negative mean binary cross-entropy between occupancy grids.
pub fn voxel_cross_entropy(pred: &VoxelGrid, gt: &VoxelGrid) -> Result<f64> {
    if pred.resolution() != gt.resolution() {
        return Err(Error::ResolutionMismatch { left: pred.resolution(), right: gt.resolution() });
    }
    let sum: f64 = pred
        .values()
        .iter()
        .zip(gt.values())
        .map(|(&p, &v)| {
            let p = f64::from(p).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
            let v = f64::from(v);
            v * p.ln() + (1.0 - v) * (1.0 - p).ln()
        })
        .sum();
    Ok(-sum / pred.values().len() as f64)
}

/// Losses of one per-object prediction against its ground truth.
///
/// The rotation target is the bin nearest the ground-truth rotation; for
/// symmetric objects the loss uses the most probable of the equivalent bins.
pub fn unary_losses(
    pred: &UnaryPrediction,
    gt: &GroundTruthObject,
    rot_table: &RotationBinTable,
) -> Result<UnaryLosses> {
    if pred.rotation_prob.len() != rot_table.len() {
        return Err(Error::invalid("rotation distribution does not match the codebook"));
    }
    let gt_bin = rot_table.nearest_bin(&gt.pose.rotation);
    let bins = symmetry_equivalent_bins(gt_bin, gt.symmetry_order, rot_table)?;
    let best = bins.iter().map(|&b| pred.rotation_prob[b]).fold(0.0, f64::max);
    let shape = match &pred.shape {
        Some(s) => Some(voxel_cross_entropy(s, &gt.shape)?),
        None => None,
    };
    Ok(UnaryLosses {
        translation: (pred.translation - gt.pose.translation).norm_squared(),
        scale: (pred.log_scale - gt.pose.log_scale).norm_squared(),
        rotation: nll(best),
        shape,
    })
}

/// Losses of one relative prediction against the ground-truth relative pose
/// (whose direction distribution is one-hot).
pub fn relative_losses(pred: &RelativePrediction, gt_rel: &RelativePrediction) -> Result<RelativeLosses> {
    if pred.direction_prob.len() != gt_rel.direction_prob.len() {
        return Err(Error::invalid("direction distributions have different lengths"));
    }
    let gt_bin = argmax(&gt_rel.direction_prob);
    Ok(RelativeLosses {
        translation: (pred.rel_translation - gt_rel.rel_translation).norm_squared(),
        scale: (pred.rel_log_scale - gt_rel.rel_log_scale).norm_squared(),
        direction: nll(pred.direction_prob[gt_bin]),
    })
}

/// Summed squared error of fused translations and log-scales, matched by id.
pub fn joint_losses(fused: &FusedScene, gts: &[GroundTruthObject]) -> Result<JointLosses> {
    let mut out = JointLosses { translation: 0.0, scale: 0.0 };
    for obj in &fused.objects {
        let gt = gts
            .iter()
            .find(|g| g.object_id == obj.object_id)
            .ok_or_else(|| Error::IdMismatch(format!("fused object {} has no ground truth", obj.object_id)))?;
        out.translation += (obj.translation - gt.pose.translation).norm_squared();
        out.scale += (obj.log_scale - gt.pose.log_scale).norm_squared();
    }
    Ok(out)
}

/// Analytic gradient of the joint translation loss with respect to the unary
/// and (gated) relative translations of a scene.
#[derive(Debug, Clone)]
pub struct JointGradient {
    pub loss: f64,
    pub unary: Vec<Vec3>,
    pub relative: Vec<Vec3>,
}

struct JointProblem {
    system: LinearFusionSystem,
    unary: Vec<Vec3>,
    relative: Vec<Vec3>,
    targets: Vec<Vec3>,
}

impl JointProblem {
    fn new(scene: &SceneInstance, config: &FusionConfig) -> Result<Self> {
        config.validate()?;
        let gated = gated_relatives(scene, config)?;
        let pairs: Vec<(usize, usize)> = gated.iter().map(|g| (g.source, g.target)).collect();
        let system = LinearFusionSystem::new(scene.unary.len(), &pairs, config.lambda)?;
        let targets = scene
            .unary
            .iter()
            .map(|u| {
                scene
                    .gt_by_id(u.object_id)
                    .map(|g| g.pose.translation)
                    .ok_or_else(|| Error::IdMismatch(format!("prediction {} has no ground truth", u.object_id)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            system,
            unary: scene.unary.iter().map(|u| u.translation).collect(),
            relative: gated.iter().map(|g| scene.relative[g.index].rel_translation).collect(),
            targets,
        })
    }

    fn loss(&self, unary: &[Vec3], relative: &[Vec3]) -> Result<f64> {
        let fused = self.system.solve(unary, relative)?;
        Ok(fused.iter().zip(&self.targets).map(|(x, t)| (x - t).norm_squared()).sum())
    }

    fn gradient(&self) -> Result<JointGradient> {
        let fused = self.system.solve(&self.unary, &self.relative)?;
        let residual: Vec<Vec3> = fused.iter().zip(&self.targets).map(|(x, t)| 2.0 * (x - t)).collect();
        let (unary, relative) = self.system.backprop(&residual)?;
        let loss = fused.iter().zip(&self.targets).map(|(x, t)| (x - t).norm_squared()).sum();
        Ok(JointGradient { loss, unary, relative })
    }
}

pub fn joint_translation_gradient(scene: &SceneInstance, config: &FusionConfig) -> Result<JointGradient> {
    JointProblem::new(scene, config)?.gradient()
}

/// Compares the analytic gradient of the joint translation loss with central
/// differences of step `epsilon`; returns `max |analytic - numeric| / max(1, |numeric|)`.
pub fn grad_check_joint(scene: &SceneInstance, config: &FusionConfig, epsilon: f64) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::invalid(format!("finite-difference step {epsilon} outside [1e-7, 1e-3]")));
    }
    let problem = JointProblem::new(scene, config)?;
    let analytic = problem.gradient()?;
    let mut worst: f64 = 0.0;
    let mut compare = |a: f64, numeric: f64| {
        worst = worst.max((a - numeric).abs() / numeric.abs().max(1.0));
    };
    for i in 0..problem.unary.len() {
        for c in 0..3 {
            let mut plus = problem.unary.clone();
            let mut minus = problem.unary.clone();
            plus[i][c] += epsilon;
            minus[i][c] -= epsilon;
            let numeric =
                (problem.loss(&plus, &problem.relative)? - problem.loss(&minus, &problem.relative)?) / (2.0 * epsilon);
            compare(analytic.unary[i][c], numeric);
        }
    }
    for e in 0..problem.relative.len() {
        for c in 0..3 {
            let mut plus = problem.relative.clone();
            let mut minus = problem.relative.clone();
            plus[e][c] += epsilon;
            minus[e][c] -= epsilon;
            let numeric =
                (problem.loss(&problem.unary, &plus)? - problem.loss(&problem.unary, &minus)?) / (2.0 * epsilon);
            compare(analytic.relative[e][c], numeric);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::binning::{default_direction_codebook, default_rotation_codebook};
    use crate::scene::{relative_ground_truth, yaw, Box2d, Camera, Pose};

    fn gt(id: u32, t: Vec3, order: u8) -> GroundTruthObject {
        GroundTruthObject {
            object_id: id,
            category: "table".into(),
            pose: Pose::new(t, Vec3::new(0.1, -0.2, 0.3), yaw(0.0).into_inner()).unwrap(),
            symmetry_order: order,
            shape: Arc::new(VoxelGrid::filled(4, 1.0).unwrap()),
            box2d: Box2d::new(0.0, 0.0, 10.0, 10.0).unwrap(),
        }
    }

    fn perfect(g: &GroundTruthObject) -> UnaryPrediction {
        UnaryPrediction {
            object_id: g.object_id,
            category: g.category.clone(),
            translation: g.pose.translation,
            log_scale: g.pose.log_scale,
            rotation_prob: crate::scene::one_hot(24, 0),
            score: 1.0,
            box2d: None,
            shape: None,
        }
    }

    #[test]
    fn perfect_unary_has_zero_loss() {
        let table = default_rotation_codebook();
        let g = gt(0, Vec3::new(1.0, 2.0, 3.0), 1);
        let l = unary_losses(&perfect(&g), &g, &table).unwrap();
        assert_eq!((l.translation, l.scale, l.rotation), (0.0, 0.0, 0.0));
        assert!(l.shape.is_none());
    }

    #[test]
    fn unit_offset() {
        let table = default_rotation_codebook();
        let g = gt(0, Vec3::new(1.0, 2.0, 3.0), 1);
        let mut p = perfect(&g);
        p.translation += Vec3::new(1.0, 0.0, 0.0);
        assert_eq!(unary_losses(&p, &g, &table).unwrap().translation, 1.0);
    }

    #[test]
    fn symmetric_uniform_rotation_loss() {
        let table = default_rotation_codebook();
        let g = gt(0, Vec3::zeros(), 2);
        let mut p = perfect(&g);
        p.rotation_prob = vec![1.0 / 24.0; 24];
        let l = unary_losses(&p, &g, &table).unwrap();
        assert!((l.rotation - 24f64.ln()).abs() < 1e-12);
        assert!((l.rotation - 3.178).abs() < 1e-3);
    }

    #[test]
    fn symmetric_bin_counts_as_correct() {
        let table = default_rotation_codebook();
        let g = gt(0, Vec3::zeros(), 4);
        let mut p = perfect(&g);
        p.rotation_prob = crate::scene::one_hot(24, 6); // 90 degrees
        assert_eq!(unary_losses(&p, &g, &table).unwrap().rotation, 0.0);
        let g1 = gt(0, Vec3::zeros(), 1);
        let l = unary_losses(&p, &g1, &table).unwrap();
        assert!((l.rotation - (-PROB_FLOOR.ln())).abs() < 1e-9);
    }

    #[test]
    fn shape_loss_of_confident_match_is_tiny() {
        let table = default_rotation_codebook();
        let g = gt(0, Vec3::zeros(), 1);
        let mut p = perfect(&g);
        p.shape = Some(Arc::new(VoxelGrid::filled(4, 1.0).unwrap()));
        let l = unary_losses(&p, &g, &table).unwrap();
        assert!(l.shape.unwrap() < 1e-10);
        p.shape = Some(Arc::new(VoxelGrid::filled(4, 0.5).unwrap()));
        let l = unary_losses(&p, &g, &table).unwrap();
        assert!((l.shape.unwrap() - 2f64.ln()).abs() < 1e-12);
        p.shape = Some(Arc::new(VoxelGrid::filled(2, 0.5).unwrap()));
        assert!(unary_losses(&p, &g, &table).is_err());
    }

    #[test]
    fn relative_loss_cases() {
        let dir = default_direction_codebook();
        let a = gt(0, Vec3::zeros(), 1);
        let b = gt(1, Vec3::new(1.0, 0.0, 2.0), 1);
        let truth = relative_ground_truth(0, &a.pose, 1, &b.pose, &dir).unwrap();
        let l = relative_losses(&truth, &truth).unwrap();
        assert_eq!((l.translation, l.scale, l.direction), (0.0, 0.0, 0.0));
        let mut p = truth.clone();
        p.rel_translation += Vec3::new(0.0, 2.0, 0.0);
        assert_eq!(relative_losses(&p, &truth).unwrap().translation, 4.0);
        let gt_bin = argmax(&truth.direction_prob);
        p.direction_prob = vec![0.5 / 23.0; 24];
        p.direction_prob[gt_bin] = 0.5;
        assert!((relative_losses(&p, &truth).unwrap().direction - 2f64.ln()).abs() < 1e-12);
    }

    fn scene(
        objects: Vec<GroundTruthObject>,
        unary: Vec<UnaryPrediction>,
        relative: Vec<RelativePrediction>,
    ) -> SceneInstance {
        SceneInstance { scene_id: "s".into(), camera: Camera::default(), gt_objects: objects, unary, relative }
    }

    #[test]
    fn single_object_gradient() {
        let g = gt(0, Vec3::new(1.0, 1.0, 1.0), 1);
        let mut u = perfect(&g);
        u.translation += Vec3::new(0.5, -0.25, 1.0);
        let s = scene(vec![g.clone()], vec![u.clone()], vec![]);
        for lambda in [0.5, 1.0, 3.0] {
            let config = FusionConfig { lambda, ..Default::default() };
            let grad = joint_translation_gradient(&s, &config).unwrap();
            let expected = 2.0 * (u.translation - g.pose.translation);
            assert!((grad.unary[0] - expected).norm() < 1e-12);
            assert!(grad_check_joint(&s, &config, 1e-5).unwrap() < 1e-6);
        }
    }

    #[test]
    fn zero_residual_gradient_vanishes() {
        let dir = default_direction_codebook();
        let objs: Vec<GroundTruthObject> =
            (0..3).map(|i| gt(i, Vec3::new(i as f64, 0.5 * i as f64, 3.0 - i as f64), 1)).collect();
        let unary = objs.iter().map(perfect).collect();
        let mut relative = Vec::new();
        for a in &objs {
            for b in &objs {
                if a.object_id != b.object_id {
                    relative.push(relative_ground_truth(a.object_id, &a.pose, b.object_id, &b.pose, &dir).unwrap());
                }
            }
        }
        let s = scene(objs, unary, relative);
        let grad = joint_translation_gradient(&s, &FusionConfig::default()).unwrap();
        assert!(grad.loss < 1e-20);
        for g in grad.unary.iter().chain(&grad.relative) {
            assert!(g.norm() < 1e-8);
        }
    }

    #[test]
    fn grad_check_rejects_bad_step() {
        let g = gt(0, Vec3::zeros(), 1);
        let s = scene(vec![g.clone()], vec![perfect(&g)], vec![]);
        assert!(grad_check_joint(&s, &FusionConfig::default(), 1e-2).is_err());
    }
}
