//! Fuse a hand-built three-object scene and compare against the unary predictions.
//!
//! `cargo run --example fuse_scene`

use relfuse::binning::Codebooks;
use relfuse::fusion::{fuse_linear, fuse_scene, Edge, FusionConfig};
use relfuse::scene::{
    relative_ground_truth, rotation_to_wxyz, yaw, Box2d, Camera, GroundTruthObject, Pose, UnaryPrediction, Vec3,
    VoxelGrid,
};
use relfuse::synthgen::{primitive_shape, PrimitiveKind};
use relfuse::{Result, SceneInstance};

fn object(id: u32, category: &str, t: Vec3, extents: Vec3, yaw_deg: f64) -> Result<GroundTruthObject> {
    Ok(GroundTruthObject {
        object_id: id,
        category: category.into(),
        pose: Pose::from_extents(t, extents, yaw(yaw_deg.to_radians()))?,
        symmetry_order: 1,
        shape: primitive_shape(PrimitiveKind::Box),
        box2d: Box2d::new(0.0, 0.0, 10.0, 10.0)?,
    })
}

pub fn main() -> Result<()> {
    // the smallest case: two objects on a line, one relative measurement
    let x = fuse_linear(
        &[Vec3::zeros(), Vec3::new(2.0, 0.0, 0.0)],
        &[Edge { source: 0, target: 1, value: Vec3::x() }],
        1.0,
    )?;
    println!("1D example: fused x = {:.6}, {:.6}", x[0].x, x[1].x);

    let codebooks = Codebooks::default();
    let gts = vec![
        object(0, "table", Vec3::new(0.0, 1.2, 4.0), Vec3::new(1.2, 0.75, 0.8), 0.0)?,
        object(1, "chair", Vec3::new(0.0, 1.2, 3.1), Vec3::new(0.5, 0.9, 0.5), 180.0)?,
        object(2, "sofa", Vec3::new(-1.8, 1.2, 5.0), Vec3::new(2.0, 0.85, 0.9), 90.0)?,
    ];
    // unary estimates: translations off by a few decimeters, rotations peaked at the truth
    let offsets = [Vec3::new(0.3, -0.1, 0.4), Vec3::new(-0.35, 0.05, -0.2), Vec3::new(0.1, 0.2, -0.45)];
    let unary: Vec<UnaryPrediction> = gts
        .iter()
        .zip(offsets)
        .map(|(g, off)| {
            let mut prob = vec![0.02 / 23.0; codebooks.rotation.len()];
            prob[codebooks.rotation.nearest_bin(&g.pose.rotation)] = 0.98;
            UnaryPrediction {
                object_id: g.object_id,
                category: g.category.clone(),
                translation: g.pose.translation + off,
                log_scale: g.pose.log_scale,
                rotation_prob: prob,
                score: 1.0,
                box2d: None,
                shape: None::<std::sync::Arc<VoxelGrid>>,
            }
        })
        .collect();
    // exact relatives between every ordered pair
    let mut relative = Vec::new();
    for a in &gts {
        for b in &gts {
            if a.object_id != b.object_id {
                relative.push(relative_ground_truth(a.object_id, &a.pose, b.object_id, &b.pose, &codebooks.direction)?);
            }
        }
    }
    let scene = SceneInstance { scene_id: "hand".into(), camera: Camera::default(), gt_objects: gts, unary, relative };
    scene.validate()?;

    for lambda in [0.5, 1.0, 4.0] {
        let config = FusionConfig { lambda, ..FusionConfig::default() };
        let fused = fuse_scene(&scene, &config, &codebooks)?;
        println!("lambda = {lambda}");
        for (o, g) in fused.objects.iter().zip(&scene.gt_objects) {
            let u = &scene.unary[scene.unary_index(o.object_id).expect("unary exists")];
            println!(
                "  {:<6} unary error {:.3} m, fused error {:.3} m, rotation bin {} quat {:?}",
                g.category,
                (u.translation - g.pose.translation).norm(),
                (o.translation - g.pose.translation).norm(),
                o.rotation_bin,
                rotation_to_wxyz(&o.rotation).map(|v| (v * 1e3).round() / 1e3)
            );
        }
    }
    Ok(())
}
