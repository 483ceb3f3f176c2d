use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DVector, Matrix3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gmm::{fit_gmm, CompiledGmm, DiagGmm};
use super::lbfgs::{minimize, LbfgsConfig, Termination};
use crate::binning::RotationBinTable;
use crate::error::{Error, Result};
use crate::fusion::{FusedObject, FusedScene};
use crate::scene::{argmax, frame_transform, Rotation, SceneInstance, Vec3, PROB_FLOOR};
use crate::synthgen::splitmix64;

pub const DEFAULT_COMPONENTS: usize = 10;

/// Quantity a pairwise prior models; all are 3-vectors from object `a` to object `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    /// `t_b - t_a`.
    RelTranslation,
    /// `s_b - s_a`.
    RelLogScale,
    /// Unit direction to `b` in the frame of `a`.
    RelDirection,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::RelTranslation, Modality::RelLogScale, Modality::RelDirection];
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::RelTranslation => "rel_translation",
            Modality::RelLogScale => "rel_log_scale",
            Modality::RelDirection => "rel_direction",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PriorKey {
    pub category_a: String,
    pub category_b: String,
    pub modality: Modality,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PriorEntry {
    category_a: String,
    category_b: String,
    modality: Modality,
    #[serde(flatten)]
    model: DiagGmm,
}

/// Fitted mixtures per ordered category pair and modality. Missing cells contribute nothing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<PriorEntry>", into = "Vec<PriorEntry>")]
pub struct PriorSet {
    cells: BTreeMap<PriorKey, DiagGmm>,
}

impl From<Vec<PriorEntry>> for PriorSet {
    fn from(entries: Vec<PriorEntry>) -> Self {
        let cells = entries
            .into_iter()
            .map(|e| (PriorKey { category_a: e.category_a, category_b: e.category_b, modality: e.modality }, e.model))
            .collect();
        Self { cells }
    }
}

impl From<PriorSet> for Vec<PriorEntry> {
    fn from(set: PriorSet) -> Self {
        set.cells
            .into_iter()
            .map(|(k, model)| PriorEntry {
                category_a: k.category_a,
                category_b: k.category_b,
                modality: k.modality,
                model,
            })
            .collect()
    }
}

impl PriorSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, category_a: &str, category_b: &str, modality: Modality, model: DiagGmm) -> Result<()> {
        model.validate()?;
        let key = PriorKey { category_a: category_a.into(), category_b: category_b.into(), modality };
        self.cells.insert(key, model);
        Ok(())
    }

    pub fn get(&self, category_a: &str, category_b: &str, modality: Modality) -> Option<&DiagGmm> {
        // BTreeMap lookups need an owned key; the map is small
        self.cells
            .iter()
            .find(|(k, _)| k.modality == modality && k.category_a == category_a && k.category_b == category_b)
            .map(|(_, m)| m)
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &PriorKey> {
        self.cells.keys()
    }

    pub fn validate(&self) -> Result<()> {
        self.cells.values().try_for_each(DiagGmm::validate)
    }
}

fn relative_direction(rotation: &Rotation, v: &Vec3) -> Option<Vec3> {
    let n = v.norm();
    (n > 1e-12).then(|| frame_transform(rotation, &(v / n)))
}

/// Fits a mixture per (ordered category pair, modality) on ground-truth object pairs.
///
/// Directions are taken in the frame of the rotation bin nearest to the ground truth,
/// as the energy only ever sees binned rotations. Cells with fewer samples than
/// `components` are left out.
pub fn fit_pairwise_prior(
    scenes: &[SceneInstance],
    components: usize,
    seed: u64,
    rot_table: &RotationBinTable,
) -> Result<PriorSet> {
    if components == 0 {
        return Err(Error::invalid("prior needs at least one mixture component"));
    }
    let mut samples: BTreeMap<PriorKey, Vec<Vec3>> = BTreeMap::new();
    for scene in scenes {
        for a in &scene.gt_objects {
            for b in &scene.gt_objects {
                if a.object_id == b.object_id {
                    continue;
                }
                let key =
                    |modality| PriorKey { category_a: a.category.clone(), category_b: b.category.clone(), modality };
                let dt = b.pose.translation - a.pose.translation;
                samples.entry(key(Modality::RelTranslation)).or_default().push(dt);
                samples.entry(key(Modality::RelLogScale)).or_default().push(b.pose.log_scale - a.pose.log_scale);
                let binned = rot_table.bin(rot_table.nearest_bin(&a.pose.rotation));
                if let Some(d) = relative_direction(binned, &dt) {
                    samples.entry(key(Modality::RelDirection)).or_default().push(d);
                }
            }
        }
    }
    let cells: Vec<(PriorKey, Vec<Vec3>)> = samples.into_iter().filter(|(_, s)| s.len() >= components).collect();
    let fitted: Result<Vec<(PriorKey, DiagGmm)>> = cells
        .into_par_iter()
        .enumerate()
        .map(|(i, (key, data))| {
            let fit = fit_gmm(&data, components, splitmix64(seed.wrapping_add(i as u64)))?;
            Ok((key, fit.model))
        })
        .collect();
    Ok(PriorSet { cells: fitted?.into_iter().collect() })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrfConfig {
    /// Weight of the squared distance to the unary predictions.
    pub lambda_data: f64,
    pub max_iters: usize,
}

impl Default for CrfConfig {
    fn default() -> Self {
        Self { lambda_data: 1.0, max_iters: 1000 }
    }
}

impl CrfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_data >= 0.0) || !self.lambda_data.is_finite() {
            return Err(Error::invalid("lambda_data must be finite and non-negative"));
        }
        Ok(())
    }
}

struct PairTerms {
    a: usize,
    b: usize,
    translation: Option<CompiledGmm>,
    scale: Option<CompiledGmm>,
    direction: Option<CompiledGmm>,
}

/// CRF energy over the unary objects of one scene, with variables `[t_0, s_0, t_1, s_1, ...]`.
pub struct CrfProblem {
    unary: DVector<f64>,
    rotations: Vec<Matrix3<f64>>,
    pairs: Vec<PairTerms>,
    lambda_data: f64,
}

impl CrfProblem {
    /// Rotations are fixed at each unary's most probable bin.
    pub fn new(
        scene: &SceneInstance,
        priors: &PriorSet,
        lambda_data: f64,
        rot_table: &RotationBinTable,
    ) -> Result<Self> {
        let n = scene.unary.len();
        let mut unary = DVector::zeros(6 * n);
        let mut rotations = Vec::with_capacity(n);
        for (i, u) in scene.unary.iter().enumerate() {
            if u.rotation_prob.len() != rot_table.len() {
                return Err(Error::IncompatibleCodebook(format!(
                    "rotation_prob has {} entries, codebook has {}",
                    u.rotation_prob.len(),
                    rot_table.len()
                )));
            }
            unary.fixed_rows_mut::<3>(6 * i).copy_from(&u.translation);
            unary.fixed_rows_mut::<3>(6 * i + 3).copy_from(&u.log_scale);
            rotations.push(*rot_table.matrix(argmax(&u.rotation_prob)));
        }
        let mut pairs = Vec::new();
        for (a, ua) in scene.unary.iter().enumerate() {
            for (b, ub) in scene.unary.iter().enumerate() {
                if a == b {
                    continue;
                }
                let get = |m| priors.get(&ua.category, &ub.category, m).map(DiagGmm::compile);
                let terms = PairTerms {
                    a,
                    b,
                    translation: get(Modality::RelTranslation),
                    scale: get(Modality::RelLogScale),
                    direction: get(Modality::RelDirection),
                };
                if terms.translation.is_some() || terms.scale.is_some() || terms.direction.is_some() {
                    pairs.push(terms);
                }
            }
        }
        Ok(Self { unary, rotations, pairs, lambda_data })
    }

    /// The unary predictions as a variable vector.
    pub fn initial(&self) -> DVector<f64> {
        self.unary.clone()
    }

    pub fn dim(&self) -> usize {
        self.unary.len()
    }

    pub fn energy(&self, x: &DVector<f64>) -> f64 {
        self.energy_grad(x).0
    }

    pub fn energy_grad(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let diff = x - &self.unary;
        let mut e = self.lambda_data * diff.norm_squared();
        let mut g = diff * (2.0 * self.lambda_data);
        let t = |i: usize| Vec3::from(x.fixed_rows::<3>(6 * i));
        let s = |i: usize| Vec3::from(x.fixed_rows::<3>(6 * i + 3));
        for p in &self.pairs {
            let dt = t(p.b) - t(p.a);
            if let Some(m) = &p.translation {
                let (l, gl) = m.log_density_grad(&dt);
                e -= l;
                add3(&mut g, 6 * p.b, &(-gl));
                add3(&mut g, 6 * p.a, &gl);
            }
            if let Some(m) = &p.scale {
                let (l, gl) = m.log_density_grad(&(s(p.b) - s(p.a)));
                e -= l;
                add3(&mut g, 6 * p.b + 3, &(-gl));
                add3(&mut g, 6 * p.a + 3, &gl);
            }
            if let Some(m) = &p.direction {
                let norm = dt.norm();
                if norm > 1e-12 {
                    let u = dt / norm;
                    let r = &self.rotations[p.a];
                    let (l, gd) = m.log_density_grad(&(r.transpose() * u));
                    e -= l;
                    // d(R^T v/|v|)/dv = R^T (I - u u^T) / |v|
                    let gv = (Matrix3::identity() - u * u.transpose()) * (r * gd) / norm;
                    add3(&mut g, 6 * p.b, &(-gv));
                    add3(&mut g, 6 * p.a, &gv);
                }
            }
        }
        (e, g)
    }

    /// Largest `|analytic - numeric| / max(1, |numeric|)` over all coordinates at `x`.
    pub fn gradient_check(&self, x: &DVector<f64>, h: f64) -> Result<f64> {
        if !(1e-7..=1e-3).contains(&h) {
            return Err(Error::invalid(format!("finite-difference step {h} outside [1e-7, 1e-3]")));
        }
        let (_, analytic) = self.energy_grad(x);
        let mut worst: f64 = 0.0;
        for i in 0..x.len() {
            let mut plus = x.clone();
            let mut minus = x.clone();
            plus[i] += h;
            minus[i] -= h;
            let numeric = (self.energy(&plus) - self.energy(&minus)) / (2.0 * h);
            worst = worst.max((analytic[i] - numeric).abs() / numeric.abs().max(1.0));
        }
        Ok(worst)
    }
}

fn add3(g: &mut DVector<f64>, at: usize, v: &Vec3) {
    let mut rows = g.fixed_rows_mut::<3>(at);
    rows += v;
}

/// Energy of candidate poses; see [`CrfProblem`].
pub fn crf_energy(
    scene: &SceneInstance,
    candidate: &FusedScene,
    priors: &PriorSet,
    lambda_data: f64,
    rot_table: &RotationBinTable,
) -> Result<f64> {
    let problem = CrfProblem::new(scene, priors, lambda_data, rot_table)?;
    let mut x = DVector::zeros(problem.dim());
    for (i, u) in scene.unary.iter().enumerate() {
        let c = candidate
            .object(u.object_id)
            .ok_or_else(|| Error::IdMismatch(format!("candidate lacks object {}", u.object_id)))?;
        x.fixed_rows_mut::<3>(6 * i).copy_from(&c.translation);
        x.fixed_rows_mut::<3>(6 * i + 3).copy_from(&c.log_scale);
    }
    Ok(problem.energy(&x))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrfResult {
    pub refined: FusedScene,
    /// Energy at the unary initialization and after each accepted step.
    pub energies: Vec<f64>,
    pub termination: Termination,
}

/// Refines unary translations and log-scales with L-BFGS; rotations stay at the unary argmax.
pub fn crf_optimize(
    scene: &SceneInstance,
    priors: &PriorSet,
    config: &CrfConfig,
    rot_table: &RotationBinTable,
) -> Result<CrfResult> {
    config.validate()?;
    let problem = CrfProblem::new(scene, priors, config.lambda_data, rot_table)?;
    let lbfgs = LbfgsConfig { max_iters: config.max_iters, ..LbfgsConfig::default() };
    let result = minimize(|x| problem.energy_grad(x), problem.initial(), &lbfgs);
    if !result.value.is_finite() {
        return Err(Error::invalid(format!(
            "CRF energy is not finite at the unary initialization ({})",
            scene.scene_id
        )));
    }
    let objects = scene
        .unary
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let bin = argmax(&u.rotation_prob);
            FusedObject {
                object_id: u.object_id,
                translation: Vec3::from(result.x.fixed_rows::<3>(6 * i)),
                log_scale: Vec3::from(result.x.fixed_rows::<3>(6 * i + 3)),
                rotation_costs: u.rotation_prob.iter().map(|p| -p.max(PROB_FLOOR).ln()).collect(),
                rotation_bin: bin,
                rotation: *rot_table.bin(bin),
            }
        })
        .collect();
    Ok(CrfResult {
        refined: FusedScene { scene_id: scene.scene_id.clone(), objects },
        energies: result.values,
        termination: result.termination,
    })
}
