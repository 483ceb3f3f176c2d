//! Training losses on a simulated scene and finite-difference checks of the
//! joint (through-the-fusion) translation gradient and the CRF energy gradient.
//!
//! `cargo run --example gradient_check`

use relfuse::crf::{fit_pairwise_prior, CrfProblem};
use relfuse::fusion::{fuse_scene, FusionConfig};
use relfuse::losses::{grad_check_joint, joint_losses, joint_translation_gradient, relative_losses, unary_losses};
use relfuse::scene::relative_ground_truth;
use relfuse::synthgen::{make_dataset, LayoutConfig, NoiseProfile};
use relfuse::{Codebooks, Mode, Result};

pub fn main() -> Result<()> {
    let codebooks = Codebooks::default();
    let (layout, noise) = (LayoutConfig::benchmark(), NoiseProfile::benchmark());
    let scenes = make_dataset(&layout, &noise, &codebooks, 200, 5, Mode::GtBox)?;
    let scene = &scenes[0];

    for (u, g) in scene.unary.iter().zip(&scene.gt_objects) {
        let l = unary_losses(u, g, &codebooks.rotation)?;
        println!(
            "unary {:<8} translation {:.4} scale {:.4} rotation {:.4} shape {:.4}",
            g.category,
            l.translation,
            l.scale,
            l.rotation,
            l.shape.unwrap_or(f64::NAN)
        );
    }
    let r = &scene.relative[0];
    let (a, b) = (scene.gt_by_id(r.source_id).expect("gt"), scene.gt_by_id(r.target_id).expect("gt"));
    let truth = relative_ground_truth(a.object_id, &a.pose, b.object_id, &b.pose, &codebooks.direction)?;
    let l = relative_losses(r, &truth)?;
    println!(
        "relative {} -> {}: translation {:.4} scale {:.4} direction {:.4}",
        r.source_id, r.target_id, l.translation, l.scale, l.direction
    );

    let config = FusionConfig::default();
    let joint = joint_losses(&fuse_scene(scene, &config, &codebooks)?, &scene.gt_objects)?;
    let grad = joint_translation_gradient(scene, &config)?;
    let norm = |v: &[relfuse::scene::Vec3]| v.iter().map(|x| x.norm_squared()).sum::<f64>().sqrt();
    println!(
        "joint loss translation {:.4} scale {:.4}; |grad unary| {:.4}, |grad relative| {:.4}",
        joint.translation,
        joint.scale,
        norm(&grad.unary),
        norm(&grad.relative)
    );
    for h in [1e-3, 1e-5, 1e-7] {
        println!("joint gradient check, h = {h:.0e}: {:.2e}", grad_check_joint(scene, &config, h)?);
    }

    let priors = fit_pairwise_prior(&scenes[1..], 4, 0, &codebooks.rotation)?;
    let problem = CrfProblem::new(scene, &priors, 1.0, &codebooks.rotation)?;
    println!("crf energy gradient check at the unary point: {:.2e}", problem.gradient_check(&problem.initial(), 1e-5)?);
    Ok(())
}
