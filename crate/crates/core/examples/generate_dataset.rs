//! Sample synthetic scenes, write them as a dataset directory and read them back.
//!
//! `cargo run --example generate_dataset -- [OUT_DIR]`

use relfuse::io::{read_dataset, verify_files, write_dataset, Generation};
use relfuse::scene::Mode;
use relfuse::synthgen::{make_dataset, project_box, sample_scene, LayoutConfig, NoiseProfile};
use relfuse::{Codebooks, Result};

fn main() -> Result<()> {
    run(&std::env::args().skip(1).collect::<Vec<_>>())
}

pub fn run(args: &[String]) -> Result<()> {
    let layout = LayoutConfig::indoor();
    let scene = sample_scene(&layout, 42)?;
    println!("scene with {} objects:", scene.gt_objects.len());
    for g in &scene.gt_objects {
        let b = project_box(g, &scene.camera)?;
        println!(
            "  {:>2} {:<8} t = ({:+.2}, {:+.2}, {:+.2}) box = [{:.0}, {:.0}, {:.0}, {:.0}]",
            g.object_id,
            g.category,
            g.pose.translation.x,
            g.pose.translation.y,
            g.pose.translation.z,
            b.xmin,
            b.ymin,
            b.xmax,
            b.ymax
        );
    }

    let noise = NoiseProfile { fp_rate: 0.5, ..NoiseProfile::benchmark() };
    let codebooks = Codebooks::default();
    let scenes = make_dataset(&layout, &noise, &codebooks, 25, 7, Mode::Detection)?;
    let spurious: usize = scenes.iter().map(|s| s.unary.len() - s.gt_objects.len()).sum();
    println!("generated {} scenes, {spurious} spurious detections", scenes.len());

    let tmp = tempfile::tempdir().map_err(|e| relfuse::Error::Io { path: "tempdir".into(), source: e })?;
    let dir = args.first().map_or_else(|| tmp.path().join("dataset"), Into::into);
    let generation = Generation { seed: 7, mode: Mode::Detection, layout, noise };
    let manifest = write_dataset(&dir, &scenes, &codebooks, Some(&generation))?;
    println!(
        "wrote {} files to {}, manifest digest {}",
        manifest.files.len(),
        dir.display(),
        &manifest.digest()?[..16]
    );

    let (read_manifest, read_back) = read_dataset(&dir)?;
    verify_files(&dir, &read_manifest.files)?;
    println!("read back {} scenes, identical: {}", read_back.len(), read_back == scenes);
    Ok(())
}
