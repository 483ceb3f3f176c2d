use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::binning::{quantize_direction, DirectionBinTable, RotationBinTable};
use crate::error::{Error, Result};
use crate::scene::{
    argmin, frame_transform, geodesic_angle, normalize_direction, GroundTruthObject, RelativePrediction,
    UnaryPrediction, Vec3,
};

/// Error model of the simulated per-object and pairwise predictors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseProfile {
    /// Per-axis translation noise of unary predictions, meters.
    pub sigma_t_unary: f64,
    /// Per-axis log-scale noise of unary predictions.
    pub sigma_s_unary: f64,
    /// Softmax temperature (radians) over bin-to-truth geodesic distances.
    pub rotation_unary_temp: f64,
    /// Probability that the rotation distribution is centered on a random bin instead.
    pub rotation_flip_prob: f64,
    pub sigma_t_rel: f64,
    pub sigma_s_rel: f64,
    /// Concentration of `direction_prob(b) ~ exp(kappa * cos)`.
    pub direction_kappa: f64,
    /// Beta parameters of true-detection scores.
    pub score_alpha_beta: [f64; 2],
    /// Beta parameters of spurious-detection scores.
    pub fp_score_alpha_beta: [f64; 2],
    /// Expected spurious detections per scene (detection mode only).
    pub fp_rate: f64,
    /// Per-coordinate jitter of detector boxes in pixels (detection mode only).
    pub box_jitter_px: f64,
}

impl Default for NoiseProfile {
    fn default() -> Self {
        Self::benchmark()
    }
}

impl NoiseProfile {
    /// The standard benchmark profile.
    pub fn benchmark() -> Self {
        Self {
            sigma_t_unary: 0.4,
            sigma_s_unary: 0.25,
            rotation_unary_temp: 0.25,
            rotation_flip_prob: 0.15,
            sigma_t_rel: 0.1,
            sigma_s_rel: 0.08,
            direction_kappa: 8.0,
            score_alpha_beta: [8.0, 2.0],
            fp_score_alpha_beta: [2.0, 8.0],
            fp_rate: 0.0,
            box_jitter_px: 4.0,
        }
    }

    /// Exact predictions: zero noise, one-hot rotations and (numerically) one-hot directions.
    pub fn noiseless() -> Self {
        Self {
            sigma_t_unary: 0.0,
            sigma_s_unary: 0.0,
            rotation_unary_temp: 0.0,
            rotation_flip_prob: 0.0,
            sigma_t_rel: 0.0,
            sigma_s_rel: 0.0,
            direction_kappa: 1e9,
            fp_rate: 0.0,
            box_jitter_px: 0.0,
            ..Self::benchmark()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sigmas = [self.sigma_t_unary, self.sigma_s_unary, self.sigma_t_rel, self.sigma_s_rel, self.box_jitter_px];
        if sigmas.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::invalid("noise sigmas must be finite and non-negative"));
        }
        if !(self.direction_kappa > 0.0) {
            return Err(Error::invalid("direction kappa must be positive"));
        }
        if !(self.rotation_unary_temp >= 0.0) {
            return Err(Error::invalid("rotation temperature must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.rotation_flip_prob) {
            return Err(Error::invalid("rotation flip probability outside [0, 1]"));
        }
        if !(self.fp_rate >= 0.0) || !self.fp_rate.is_finite() {
            return Err(Error::invalid("fp rate must be finite and non-negative"));
        }
        for [a, b] in [self.score_alpha_beta, self.fp_score_alpha_beta] {
            if !(a > 0.0 && b > 0.0) {
                return Err(Error::invalid("beta parameters must be positive"));
            }
        }
        Ok(())
    }
}

pub(crate) fn gaussian3<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> Vec3 {
    let mut g = || -> f64 { rng.sample(StandardNormal) };
    Vec3::new(g(), g(), g()) * sigma
}

/// `softmax(-distance / temp)`; `temp = 0` gives a one-hot at the nearest entry.
fn softmin(distances: &[f64], temp: f64) -> Vec<f64> {
    if temp == 0.0 {
        return crate::scene::one_hot(distances.len(), argmin(distances));
    }
    let min = distances.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = distances.iter().map(|d| (-(d - min) / temp).exp()).collect();
    let sum: f64 = w.iter().sum();
    w.into_iter().map(|x| x / sum).collect()
}

pub(crate) fn beta_sample<R: Rng + ?Sized>(rng: &mut R, ab: [f64; 2]) -> Result<f64> {
    let beta = Beta::new(ab[0], ab[1]).map_err(|e| Error::invalid(format!("beta distribution: {e}")))?;
    Ok(beta.sample(rng).clamp(0.0, 1.0))
}

/// Simulated per-object prediction of `gt`.
pub fn corrupt_unary<R: Rng + ?Sized>(
    gt: &GroundTruthObject,
    noise: &NoiseProfile,
    rot_table: &RotationBinTable,
    rng: &mut R,
) -> Result<UnaryPrediction> {
    let translation = gt.pose.translation + gaussian3(rng, noise.sigma_t_unary);
    let log_scale = gt.pose.log_scale + gaussian3(rng, noise.sigma_s_unary);
    let center = if rng.random::<f64>() < noise.rotation_flip_prob {
        *rot_table.bin(rng.random_range(0..rot_table.len()))
    } else {
        gt.pose.rotation
    };
    let distances: Vec<f64> = rot_table.bins().iter().map(|b| geodesic_angle(b, &center)).collect();
    let rotation_prob = softmin(&distances, noise.rotation_unary_temp);
    let score = beta_sample(rng, noise.score_alpha_beta)?;
    Ok(UnaryPrediction {
        object_id: gt.object_id,
        category: gt.category.clone(),
        translation,
        log_scale,
        rotation_prob,
        score,
        box2d: Some(gt.box2d),
        shape: Some(gt.shape.clone()),
    })
}

/// Direction distribution `p(b) ~ exp(kappa * <bin_b, direction>)`.
pub fn direction_distribution(direction: &Vec3, kappa: f64, dir_table: &DirectionBinTable) -> Result<Vec<f64>> {
    let dots: Vec<f64> = dir_table.bins().iter().map(|b| b.dot(direction)).collect();
    if kappa.is_infinite() {
        return Ok(crate::scene::one_hot(dir_table.len(), quantize_direction(direction, dir_table)?));
    }
    let max = dots.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = dots.iter().map(|d| (kappa * (d - max)).exp()).collect();
    let sum: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / sum).collect())
}

/// Simulated relative prediction from `gt_m` to `gt_n`.
pub fn corrupt_relative<R: Rng + ?Sized>(
    gt_m: &GroundTruthObject,
    gt_n: &GroundTruthObject,
    noise: &NoiseProfile,
    dir_table: &DirectionBinTable,
    rng: &mut R,
) -> Result<RelativePrediction> {
    if gt_m.object_id == gt_n.object_id {
        return Err(Error::invalid("relative prediction needs two distinct objects"));
    }
    let true_t = gt_n.pose.translation - gt_m.pose.translation;
    let direction = frame_transform(&gt_m.pose.rotation, &normalize_direction(&true_t)?);
    Ok(RelativePrediction {
        source_id: gt_m.object_id,
        target_id: gt_n.object_id,
        rel_translation: true_t + gaussian3(rng, noise.sigma_t_rel),
        rel_log_scale: gt_n.pose.log_scale - gt_m.pose.log_scale + gaussian3(rng, noise.sigma_s_rel),
        direction_prob: direction_distribution(&direction, noise.direction_kappa, dir_table)?,
    })
}
