//! Synthetic indoor scenes with simulated predictor outputs.

mod layout;
mod noise;
mod voxel;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

pub use layout::{
    horizontal_distance, project_box, sample_scene, CameraModel, CategorySpec, LayoutConfig, PlacementRule, RoomBounds,
    MAX_PLACEMENT_ATTEMPTS,
};
pub use noise::{corrupt_relative, corrupt_unary, direction_distribution, NoiseProfile};
pub use voxel::{primitive_shape, voxelize_primitive, PrimitiveKind};

use crate::binning::Codebooks;
use crate::error::{Error, Result};
use crate::scene::{yaw, Box2d, GroundTruthObject, Mode, Pose, SceneInstance, Vec3};

/// First object id given to spurious detections.
pub const SPURIOUS_ID_BASE: u32 = 1000;

const PREDICTION_STREAM: u64 = 0x5052_4544_4943_5453;

/// SplitMix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Layout seed of scene `index`: `splitmix64(seed + index)`.
pub fn scene_seed(seed: u64, index: usize) -> u64 {
    splitmix64(seed.wrapping_add(index as u64))
}

/// Spurious latent object somewhere in the room, visible but unconstrained by other objects.
fn spurious_object<R: Rng + ?Sized>(
    layout: &LayoutConfig,
    camera_floor: f64,
    id: u32,
    rng: &mut R,
) -> Option<GroundTruthObject> {
    let camera = layout.camera.intrinsics;
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let spec = layout.sample_category(rng);
        let extents = layout::sample_extents(spec, rng);
        let t = Vec3::new(
            rng.random_range(layout.room.x[0]..=layout.room.x[1]),
            camera_floor - extents.y / 2.0,
            rng.random_range(layout.room.z[0]..=layout.room.z[1]),
        );
        let pose = Pose::from_extents(t, extents, yaw(rng.random_range(0.0..std::f64::consts::TAU))).ok()?;
        if !layout::in_frustum(&pose, &camera) {
            continue;
        }
        let box2d = layout::project_pose(&pose, &camera).ok()?;
        return Some(GroundTruthObject {
            object_id: id,
            category: spec.name.clone(),
            pose,
            symmetry_order: spec.symmetry_order,
            shape: primitive_shape(spec.primitive),
            box2d,
        });
    }
    None
}

fn jitter_box<R: Rng + ?Sized>(b: &Box2d, px: f64, width: f64, height: f64, rng: &mut R) -> Result<Box2d> {
    if px == 0.0 {
        return Ok(*b);
    }
    let mut j = noise::gaussian3(rng, px);
    let k = noise::gaussian3(rng, px);
    j.z = k.x;
    let (x0, y0) = ((b.xmin + j.x).clamp(0.0, width), (b.ymin + j.y).clamp(0.0, height));
    let (x1, y1) = ((b.xmax + j.z).clamp(0.0, width), (b.ymax + k.y).clamp(0.0, height));
    Box2d::new(x0.min(x1), y0.min(y1), x0.max(x1), y0.max(y1))
}

/// Ground truth plus simulated predictions for one scene.
///
/// Unary predictions are made for every ground-truth object; relatives cover every ordered pair
/// of predicted objects. In detection mode, `Poisson(fp_rate)` spurious detections with
/// low scores and ids from [`SPURIOUS_ID_BASE`] are added, and predicted boxes are jittered.
pub fn make_scene(
    layout: &LayoutConfig,
    noise: &NoiseProfile,
    codebooks: &Codebooks,
    seed: u64,
    mode: Mode,
) -> Result<SceneInstance> {
    noise.validate()?;
    let mut scene = sample_scene(layout, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ PREDICTION_STREAM));
    let camera = scene.camera;
    let mut latent: Vec<GroundTruthObject> = scene.gt_objects.clone();
    let mut scores = Vec::with_capacity(latent.len());
    for gt in &scene.gt_objects {
        let u = corrupt_unary(gt, noise, &codebooks.rotation, &mut rng)?;
        scores.push(u.score);
        scene.unary.push(u);
    }
    if mode == Mode::Detection && noise.fp_rate > 0.0 {
        let poisson = Poisson::new(noise.fp_rate).map_err(|e| Error::invalid(format!("poisson: {e}")))?;
        let count = poisson.sample(&mut rng) as u32;
        let floor = latent.first().map(|o| o.pose.translation.y + o.pose.extents().y / 2.0);
        let floor = floor.unwrap_or(layout.camera.height_range[0]);
        for k in 0..count {
            let Some(obj) = spurious_object(layout, floor, SPURIOUS_ID_BASE + k, &mut rng) else {
                continue;
            };
            let mut u = corrupt_unary(&obj, noise, &codebooks.rotation, &mut rng)?;
            u.score = noise::beta_sample(&mut rng, noise.fp_score_alpha_beta)?;
            scene.unary.push(u);
            latent.push(obj);
        }
    }
    if mode == Mode::Detection {
        for u in &mut scene.unary {
            if let Some(b) = u.box2d {
                u.box2d = Some(jitter_box(&b, noise.box_jitter_px, camera.width, camera.height, &mut rng)?);
            }
        }
    }
    for m in &latent {
        for n in &latent {
            if m.object_id != n.object_id {
                scene.relative.push(corrupt_relative(m, n, noise, &codebooks.direction, &mut rng)?);
            }
        }
    }
    Ok(scene)
}

/// `n_scenes` scenes named `scene_00000`, ... with seeds from [`scene_seed`]. Generation runs in parallel.
pub fn make_dataset(
    layout: &LayoutConfig,
    noise: &NoiseProfile,
    codebooks: &Codebooks,
    n_scenes: usize,
    seed: u64,
    mode: Mode,
) -> Result<Vec<SceneInstance>> {
    layout.validate()?;
    noise.validate()?;
    (0..n_scenes)
        .into_par_iter()
        .map(|i| {
            let mut s = make_scene(layout, noise, codebooks, scene_seed(seed, i), mode)?;
            s.scene_id = format!("scene_{i:05}");
            Ok(s)
        })
        .collect()
}
