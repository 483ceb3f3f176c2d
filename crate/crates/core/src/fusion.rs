//! Fusion of unary and relative predictions into final per-object poses.
//!
//! Translations and log-scales are fused by the least-squares solution of
//! `[lambda I; A] x = [lambda u; r]`, where every relative prediction `(m, n)`
//! adds a row with `-1` at `m` and `+1` at `n`. Rotations are fused by adding a
//! direction-consistency cost to the unary negative log-likelihood of each bin.

use std::collections::HashMap;

use nalgebra::{DMatrix, Matrix3};
use serde::{Deserialize, Serialize};

use crate::binning::{quantize_direction, Codebooks, DirectionBinTable, RotationBinTable};
use crate::error::{Error, Result};
use crate::scene::{
    argmax, argmin, frame_transform_matrix, normalize_direction, Mode, ObjectId, Rotation, SceneInstance, Vec3,
    PROB_FLOOR,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    /// Weight of the unary rows.
    pub lambda: f64,
    /// Rotation messages are scaled by `min(cap / n, 1)` for `n` neighbours.
    pub rotation_rel_weight_cap: f64,
    /// In detection mode, only objects scoring at least this much influence others.
    pub score_threshold: f64,
    pub mode: Mode,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { lambda: 1.0, rotation_rel_weight_cap: 5.0, score_threshold: 0.3, mode: Mode::GtBox }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return Err(Error::invalid(format!("score threshold {} outside [0, 1]", self.score_threshold)));
        }
        if !(self.rotation_rel_weight_cap >= 0.0) {
            return Err(Error::invalid("rotation weight cap must be non-negative"));
        }
        Ok(())
    }

    pub fn rotation_weight(&self, neighbours: usize) -> f64 {
        if neighbours == 0 {
            0.0
        } else {
            (self.rotation_rel_weight_cap / neighbours as f64).min(1.0)
        }
    }
}

/// A relative constraint `x[target] - x[source] = value` between unary indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
    pub value: Vec3,
}

/// QR factorization of the stacked matrix `[lambda I; A]` for a fixed graph.
///
/// Solves for all three coordinates with one factorization and exposes the
/// adjoint map needed to back-propagate through the solve.
#[derive(Debug, Clone)]
pub struct LinearFusionSystem {
    n: usize,
    edges: Vec<(usize, usize)>,
    lambda: f64,
    matrix: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl LinearFusionSystem {
    pub fn new(n: usize, edges: &[(usize, usize)], lambda: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("fusion needs at least one object"));
        }
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
        }
        let rows = n + edges.len();
        let mut matrix = DMatrix::zeros(rows, n);
        for i in 0..n {
            matrix[(i, i)] = lambda;
        }
        for (e, &(m, k)) in edges.iter().enumerate() {
            if m >= n || k >= n || m == k {
                return Err(Error::invalid(format!("invalid relative edge ({m}, {k}) for {n} objects")));
            }
            matrix[(n + e, m)] = -1.0;
            matrix[(n + e, k)] = 1.0;
        }
        let qr = matrix.clone().qr();
        let (q, r) = (qr.q(), qr.r());
        Ok(Self { n, edges: edges.to_vec(), lambda, matrix, q, r })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// The stacked system matrix `[lambda I; A]`.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    fn rhs(&self, unary: &[Vec3], relative: &[Vec3]) -> Result<DMatrix<f64>> {
        if unary.len() != self.n || relative.len() != self.edges.len() {
            return Err(Error::invalid(format!(
                "expected {} unary and {} relative values, got {} and {}",
                self.n,
                self.edges.len(),
                unary.len(),
                relative.len()
            )));
        }
        let mut b = DMatrix::zeros(self.n + self.edges.len(), 3);
        for (i, u) in unary.iter().enumerate() {
            for c in 0..3 {
                b[(i, c)] = self.lambda * u[c];
            }
        }
        for (e, r) in relative.iter().enumerate() {
            for c in 0..3 {
                b[(self.n + e, c)] = r[c];
            }
        }
        Ok(b)
    }

    pub fn solve(&self, unary: &[Vec3], relative: &[Vec3]) -> Result<Vec<Vec3>> {
        let b = self.rhs(unary, relative)?;
        let qtb = self.q.tr_mul(&b);
        let x = self.r.solve_upper_triangular(&qtb).ok_or_else(|| Error::invalid("singular fusion system"))?;
        Ok((0..self.n).map(|i| Vec3::new(x[(i, 0)], x[(i, 1)], x[(i, 2)])).collect())
    }

    /// Given `dL/dx` for the fused values, returns `(dL/du, dL/dr)`.
    ///
    /// With `x = M b`, `M = (X^T X)^{-1} X^T` and `b = [lambda u; r]`, the
    /// gradient w.r.t. `b` is `X R^{-1} R^{-T} g`; unary entries pick up a
    /// factor `lambda`.
    pub fn backprop(&self, grad_fused: &[Vec3]) -> Result<(Vec<Vec3>, Vec<Vec3>)> {
        if grad_fused.len() != self.n {
            return Err(Error::invalid("gradient length does not match the system"));
        }
        let mut g = DMatrix::zeros(self.n, 3);
        for (i, v) in grad_fused.iter().enumerate() {
            for c in 0..3 {
                g[(i, c)] = v[c];
            }
        }
        let y = self.r.tr_solve_upper_triangular(&g).ok_or_else(|| Error::invalid("singular fusion system"))?;
        let z = self.r.solve_upper_triangular(&y).ok_or_else(|| Error::invalid("singular fusion system"))?;
        let gb = &self.matrix * z;
        let row = |i: usize| Vec3::new(gb[(i, 0)], gb[(i, 1)], gb[(i, 2)]);
        let du = (0..self.n).map(|i| row(i) * self.lambda).collect();
        let dr = (0..self.edges.len()).map(|e| row(self.n + e)).collect();
        Ok((du, dr))
    }
}

/// Minimum-norm least-squares fusion of per-object values with relative constraints.
pub fn fuse_linear(unary: &[Vec3], relatives: &[Edge], lambda: f64) -> Result<Vec<Vec3>> {
    let pairs: Vec<(usize, usize)> = relatives.iter().map(|e| (e.source, e.target)).collect();
    let values: Vec<Vec3> = relatives.iter().map(|e| e.value).collect();
    LinearFusionSystem::new(unary.len(), &pairs, lambda)?.solve(unary, &values)
}

/// A relative prediction resolved to unary indices.
#[derive(Debug, Clone, Copy)]
pub struct GatedRelative {
    pub source: usize,
    pub target: usize,
    /// Index into `scene.relative`.
    pub index: usize,
}

fn index_map(scene: &SceneInstance) -> HashMap<ObjectId, usize> {
    scene.unary.iter().enumerate().map(|(i, u)| (u.object_id, i)).collect()
}

fn resolve(scene: &SceneInstance) -> Result<Vec<GatedRelative>> {
    let ids = index_map(scene);
    scene
        .relative
        .iter()
        .enumerate()
        .map(|(index, r)| {
            let source = *ids
                .get(&r.source_id)
                .ok_or_else(|| Error::IdMismatch(format!("relative source {} has no unary", r.source_id)))?;
            let target = *ids
                .get(&r.target_id)
                .ok_or_else(|| Error::IdMismatch(format!("relative target {} has no unary", r.target_id)))?;
            if source == target {
                return Err(Error::invalid(format!("relative prediction from {} to itself", r.source_id)));
            }
            Ok(GatedRelative { source, target, index })
        })
        .collect()
}

fn is_valid(scene: &SceneInstance, config: &FusionConfig, unary: usize) -> bool {
    match config.mode {
        Mode::GtBox => true,
        Mode::Detection => scene.unary[unary].score >= config.score_threshold,
    }
}

/// Relative rows usable for translation and scale fusion: in detection mode a row
/// `(m, n)` is kept only when its source `m` is in the valid set.
pub fn gated_relatives(scene: &SceneInstance, config: &FusionConfig) -> Result<Vec<GatedRelative>> {
    Ok(resolve(scene)?.into_iter().filter(|g| is_valid(scene, config, g.source)).collect())
}

/// Neighbour messages usable for the rotation of `source`: in detection mode the
/// neighbour (the relative's target) must be in the valid set.
pub fn rotation_messages(scene: &SceneInstance, config: &FusionConfig) -> Result<Vec<GatedRelative>> {
    Ok(resolve(scene)?.into_iter().filter(|g| is_valid(scene, config, g.target)).collect())
}

fn fuse_component(
    scene: &SceneInstance,
    config: &FusionConfig,
    unary: impl Fn(usize) -> Vec3,
    relative: impl Fn(usize) -> Vec3,
) -> Result<Vec<Vec3>> {
    config.validate()?;
    let gated = gated_relatives(scene, config)?;
    let values: Vec<Vec3> = (0..scene.unary.len()).map(unary).collect();
    let edges: Vec<Edge> =
        gated.iter().map(|g| Edge { source: g.source, target: g.target, value: relative(g.index) }).collect();
    fuse_linear(&values, &edges, config.lambda)
}

pub fn fuse_translations(scene: &SceneInstance, config: &FusionConfig) -> Result<Vec<Vec3>> {
    fuse_component(scene, config, |i| scene.unary[i].translation, |e| scene.relative[e].rel_translation)
}

pub fn fuse_log_scales(scene: &SceneInstance, config: &FusionConfig) -> Result<Vec<Vec3>> {
    fuse_component(scene, config, |i| scene.unary[i].log_scale, |e| scene.relative[e].rel_log_scale)
}

/// Inconsistency of rotation `rotation` with a predicted relative direction
/// distribution and relative translation:
/// `-log p(d*) + (1 - cos(d*, R^T t_hat))`, `d*` the bin closest to `R^T t_hat`.
pub fn delta_inconsistency(
    rotation: &Matrix3<f64>,
    direction_prob: &[f64],
    rel_translation: &Vec3,
    dir_table: &DirectionBinTable,
) -> Result<f64> {
    if direction_prob.len() != dir_table.len() {
        return Err(Error::invalid(format!(
            "direction distribution has {} entries for {} bins",
            direction_prob.len(),
            dir_table.len()
        )));
    }
    let t_hat = normalize_direction(rel_translation)?;
    let v = frame_transform_matrix(rotation, &t_hat);
    let best = quantize_direction(&v, dir_table)?;
    let p = direction_prob[best].max(PROB_FLOOR);
    Ok(-p.ln() + (1.0 - dir_table.bin(best).dot(&v)))
}

/// Per-object rotation costs over the codebook and the selected bin.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationFusion {
    pub costs: Vec<f64>,
    pub best_bin: usize,
    pub neighbours: usize,
}

pub fn fuse_rotations(
    scene: &SceneInstance,
    config: &FusionConfig,
    rot_table: &RotationBinTable,
    dir_table: &DirectionBinTable,
) -> Result<Vec<RotationFusion>> {
    config.validate()?;
    let messages = rotation_messages(scene, config)?;
    let mut by_source: Vec<Vec<usize>> = vec![Vec::new(); scene.unary.len()];
    for g in &messages {
        by_source[g.source].push(g.index);
    }
    scene
        .unary
        .iter()
        .zip(&by_source)
        .map(|(u, rels)| {
            if u.rotation_prob.len() != rot_table.len() {
                return Err(Error::invalid(format!(
                    "rotation distribution of {} has {} entries for {} bins",
                    u.object_id,
                    u.rotation_prob.len(),
                    rot_table.len()
                )));
            }
            let weight = config.rotation_weight(rels.len());
            let mut costs = Vec::with_capacity(rot_table.len());
            for b in 0..rot_table.len() {
                let mut message = 0.0;
                for &e in rels {
                    let r = &scene.relative[e];
                    message +=
                        delta_inconsistency(rot_table.matrix(b), &r.direction_prob, &r.rel_translation, dir_table)?;
                }
                costs.push(-u.rotation_prob[b].max(PROB_FLOOR).ln() + weight * message);
            }
            let best_bin = argmin(&costs);
            Ok(RotationFusion { costs, best_bin, neighbours: rels.len() })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedObject {
    pub object_id: ObjectId,
    pub translation: Vec3,
    pub log_scale: Vec3,
    pub rotation_costs: Vec<f64>,
    pub rotation_bin: usize,
    pub rotation: Rotation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedScene {
    pub scene_id: String,
    pub objects: Vec<FusedObject>,
}

impl FusedScene {
    pub fn object(&self, id: ObjectId) -> Option<&FusedObject> {
        self.objects.iter().find(|o| o.object_id == id)
    }
}

/// Runs translation, scale and rotation fusion for one scene.
pub fn fuse_scene(scene: &SceneInstance, config: &FusionConfig, tables: &Codebooks) -> Result<FusedScene> {
    let translations = fuse_translations(scene, config)?;
    let log_scales = fuse_log_scales(scene, config)?;
    let rotations = fuse_rotations(scene, config, &tables.rotation, &tables.direction)?;
    let objects = scene
        .unary
        .iter()
        .zip(translations)
        .zip(log_scales)
        .zip(rotations)
        .map(|(((u, t), s), r)| FusedObject {
            object_id: u.object_id,
            translation: t,
            log_scale: s,
            rotation: *tables.rotation.bin(r.best_bin),
            rotation_bin: r.best_bin,
            rotation_costs: r.costs,
        })
        .collect();
    Ok(FusedScene { scene_id: scene.scene_id.clone(), objects })
}

/// The unary predictions of a scene in fused form (argmax rotation bin, no relatives).
pub fn unary_only(scene: &SceneInstance, tables: &Codebooks) -> FusedScene {
    let objects = scene
        .unary
        .iter()
        .map(|u| {
            let bin = argmax(&u.rotation_prob);
            FusedObject {
                object_id: u.object_id,
                translation: u.translation,
                log_scale: u.log_scale,
                rotation_costs: u.rotation_prob.iter().map(|p| -p.max(PROB_FLOOR).ln()).collect(),
                rotation_bin: bin,
                rotation: *tables.rotation.bin(bin.min(tables.rotation.len() - 1)),
            }
        })
        .collect();
    FusedScene { scene_id: scene.scene_id.clone(), objects }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binning::{default_direction_codebook, default_rotation_codebook};
    use crate::scene::{Camera, RelativePrediction, UnaryPrediction};

    fn v(x: f64) -> Vec3 {
        Vec3::new(x, 0.0, 0.0)
    }

    #[test]
    fn single_object_is_identity() {
        let out = fuse_linear(&[Vec3::new(1.0, -2.0, 3.5)], &[], 0.7).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out[0] - Vec3::new(1.0, -2.0, 3.5)).norm() < 1e-14);
    }

    #[test]
    fn consistent_relatives_are_a_fixpoint() {
        let u = [Vec3::new(0.0, 1.0, 2.0), Vec3::new(-1.0, 0.5, 4.0), Vec3::new(3.0, 3.0, 3.0)];
        let edges: Vec<Edge> = [(0, 1), (1, 2), (2, 0), (1, 0)]
            .iter()
            .map(|&(m, n)| Edge { source: m, target: n, value: u[n] - u[m] })
            .collect();
        for lambda in [0.1, 1.0, 25.0] {
            let out = fuse_linear(&u, &edges, lambda).unwrap();
            for (a, b) in out.iter().zip(&u) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn two_object_hand_example() {
        // minimize x1^2 + (x2 - 2)^2 + (x2 - x1 - 1)^2:
        // 2 x1 - x2 = -1, -x1 + 2 x2 = 3  =>  x = (1/3, 5/3)
        let out = fuse_linear(&[v(0.0), v(2.0)], &[Edge { source: 0, target: 1, value: v(1.0) }], 1.0).unwrap();
        assert!((out[0].x - 1.0 / 3.0).abs() < 1e-12);
        assert!((out[1].x - 5.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(fuse_linear(&[], &[], 1.0).is_err());
        assert!(fuse_linear(&[v(0.0)], &[], 0.0).is_err());
        assert!(fuse_linear(&[v(0.0), v(1.0)], &[Edge { source: 0, target: 2, value: v(1.0) }], 1.0).is_err());
        assert!(fuse_linear(&[v(0.0), v(1.0)], &[Edge { source: 1, target: 1, value: v(1.0) }], 1.0).is_err());
    }

    #[test]
    fn weight_cap() {
        let c = FusionConfig::default();
        assert_eq!(c.rotation_weight(10), 0.5);
        assert_eq!(c.rotation_weight(3), 1.0);
        assert_eq!(c.rotation_weight(0), 0.0);
    }

    #[test]
    fn delta_values() {
        let table = default_direction_codebook();
        let r = Matrix3::identity();
        let t = *table.bin(5) * 2.5;
        let mut p = vec![0.0; 24];
        p[5] = 1.0;
        assert!(delta_inconsistency(&r, &p, &t, &table).unwrap().abs() < 1e-15);
        let uniform = vec![1.0 / 24.0; 24];
        let d = delta_inconsistency(&r, &uniform, &t, &table).unwrap();
        assert!((d - 24f64.ln()).abs() < 1e-12);
        assert!((d - 3.178).abs() < 1e-3);
        assert!(matches!(delta_inconsistency(&r, &p, &Vec3::zeros(), &table), Err(Error::DegenerateDirection)));
    }

    fn unary(id: ObjectId, t: Vec3, prob: Vec<f64>, score: f64) -> UnaryPrediction {
        UnaryPrediction {
            object_id: id,
            category: "chair".into(),
            translation: t,
            log_scale: Vec3::zeros(),
            rotation_prob: prob,
            score,
            box2d: None,
            shape: None,
        }
    }

    #[test]
    fn rotation_without_neighbours_is_unary_argmax() {
        let rot = default_rotation_codebook();
        let dir = default_direction_codebook();
        let mut prob = vec![0.01; 24];
        prob[9] = 1.0 - 0.23;
        let scene = SceneInstance {
            scene_id: "s".into(),
            camera: Camera::default(),
            gt_objects: vec![],
            unary: vec![unary(0, Vec3::zeros(), prob, 1.0)],
            relative: vec![],
        };
        let out = fuse_rotations(&scene, &FusionConfig::default(), &rot, &dir).unwrap();
        assert_eq!(out[0].best_bin, 9);
        assert_eq!(out[0].neighbours, 0);
    }

    #[test]
    fn one_consistent_neighbour_selects_its_bin() {
        let rot = default_rotation_codebook();
        let dir = default_direction_codebook();
        // neighbour lies along direction bin 2 (azimuth 90, elevation -30) of rotation bin 7
        let true_bin = 7;
        let t = rot.bin(true_bin) * dir.bin(2) * 3.0;
        let scene = SceneInstance {
            scene_id: "s".into(),
            camera: Camera::default(),
            gt_objects: vec![],
            unary: vec![unary(0, Vec3::zeros(), vec![1.0 / 24.0; 24], 1.0), unary(1, t, vec![1.0 / 24.0; 24], 1.0)],
            relative: vec![RelativePrediction {
                source_id: 0,
                target_id: 1,
                rel_translation: t,
                rel_log_scale: Vec3::zeros(),
                direction_prob: crate::scene::one_hot(24, 2),
            }],
        };
        let out = fuse_rotations(&scene, &FusionConfig::default(), &rot, &dir).unwrap();
        // exhaustive check: the chosen bin is the unique minimum
        let costs = &out[0].costs;
        for (b, c) in costs.iter().enumerate() {
            if b != true_bin {
                assert!(*c > costs[true_bin] + 1e-6, "bin {b} cost {c} vs {}", costs[true_bin]);
            }
        }
        assert_eq!(out[0].best_bin, true_bin);
    }

    #[test]
    fn detection_gating_drops_low_score_sources() {
        let u =
            vec![unary(0, v(0.0), vec![1.0], 0.9), unary(1, v(2.0), vec![1.0], 0.2), unary(2, v(5.0), vec![1.0], 0.8)];
        let rel = |s: ObjectId, t: ObjectId, x: f64| RelativePrediction {
            source_id: s,
            target_id: t,
            rel_translation: v(x),
            rel_log_scale: Vec3::zeros(),
            direction_prob: vec![1.0],
        };
        let relatives = vec![rel(0, 1, 1.5), rel(1, 0, -3.0), rel(1, 2, 1.0), rel(2, 1, -2.5), rel(0, 2, 4.0)];
        let scene = SceneInstance {
            scene_id: "s".into(),
            camera: Camera::default(),
            gt_objects: vec![],
            unary: u.clone(),
            relative: relatives.clone(),
        };
        let det = FusionConfig { mode: Mode::Detection, ..Default::default() };
        let got = fuse_translations(&scene, &det).unwrap();
        let without: Vec<RelativePrediction> = relatives.iter().filter(|r| r.source_id != 1).cloned().collect();
        let reference = SceneInstance { relative: without, ..scene.clone() };
        let expected = fuse_translations(&reference, &FusionConfig::default()).unwrap();
        assert_eq!(got, expected);

        // gt-box mode ignores scores
        let gt_mode = fuse_translations(&scene, &FusionConfig::default()).unwrap();
        let mut ones = scene.clone();
        ones.unary.iter_mut().for_each(|u| u.score = 1.0);
        assert_eq!(gt_mode, fuse_translations(&ones, &FusionConfig::default()).unwrap());
    }
}
