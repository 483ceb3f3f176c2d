//! Rotation and direction codebooks: quantization, symmetry classes and a
//! direction codebook learned from relative directions.
//!
//! `cargo run --example codebooks`

use relfuse::binning::{build_direction_codebook, quantize_direction, symmetry_equivalent_bins, Codebooks};
use relfuse::io::codebooks_to_json;
use relfuse::scene::{frame_transform, normalize_direction, Mode, Vec3};
use relfuse::synthgen::{make_dataset, LayoutConfig, NoiseProfile};
use relfuse::Result;

pub fn main() -> Result<()> {
    let codebooks = Codebooks::default();
    println!("{} rotation bins, {} direction bins", codebooks.rotation.len(), codebooks.direction.len());

    let front_left = Vec3::new(-0.5, 0.0, 1.0);
    let bin = quantize_direction(&front_left, &codebooks.direction)?;
    println!("direction {:?} -> bin {bin} {:?}", front_left.as_slice(), codebooks.direction.bin(bin).as_slice());

    for order in [1, 2, 4] {
        println!("bin 1 under symmetry order {order}: {:?}", symmetry_equivalent_bins(1, order, &codebooks.rotation)?);
    }

    // learn a direction codebook from ground-truth relative directions in object frames
    let scenes = make_dataset(&LayoutConfig::indoor(), &NoiseProfile::benchmark(), &codebooks, 200, 1, Mode::GtBox)?;
    let mut samples = Vec::new();
    for s in &scenes {
        for a in &s.gt_objects {
            for b in &s.gt_objects {
                if a.object_id != b.object_id {
                    let d = normalize_direction(&(b.pose.translation - a.pose.translation))?;
                    samples.push(frame_transform(&a.pose.rotation, &d));
                }
            }
        }
    }
    let learned = build_direction_codebook(&samples, 16, 0)?;
    println!("learned {} direction bins from {} samples:", learned.len(), samples.len());
    for b in learned.bins() {
        println!("  ({:+.3}, {:+.3}, {:+.3})", b.x, b.y, b.z);
    }

    let json = codebooks_to_json(&codebooks)?;
    println!("default codebooks serialize to {} bytes of JSON", json.len());
    Ok(())
}
