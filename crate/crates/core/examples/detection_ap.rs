//! Detection mode: spurious detections, score gating and AP per criteria set.
//!
//! `cargo run --release --example detection_ap -- [N_SCENES]`

use relfuse::cli::{evaluate_predictions, run_method, Method};
use relfuse::fusion::FusionConfig;
use relfuse::io::pr_csv;
use relfuse::metrics::{CriteriaMask, Thresholds};
use relfuse::synthgen::{make_dataset, LayoutConfig, NoiseProfile};
use relfuse::{Codebooks, Mode, Result};

fn main() -> Result<()> {
    run(&std::env::args().skip(1).collect::<Vec<_>>())
}

pub fn run(args: &[String]) -> Result<()> {
    let n = args.first().and_then(|a| a.parse().ok()).unwrap_or(200);
    let codebooks = Codebooks::default();
    let noise = NoiseProfile { fp_rate: 1.0, ..NoiseProfile::benchmark() };
    let scenes = make_dataset(&LayoutConfig::benchmark(), &noise, &codebooks, n, 3, Mode::Detection)?;
    let thresholds = Thresholds::default();
    let criteria = CriteriaMask::detection_table();

    println!("{:<10} {}", "method", criteria.iter().map(|c| format!("{:>14}", c.to_string())).collect::<String>());
    let mut last = None;
    for (name, method, gate) in
        [("unary", Method::Unary, 0.3), ("fused", Method::Fused, 0.3), ("fused-nogate", Method::Fused, 0.0)]
    {
        let config = FusionConfig { mode: Mode::Detection, score_threshold: gate, ..FusionConfig::default() };
        let preds = run_method(method, &scenes, &codebooks, &config, None)?;
        let report = evaluate_predictions(&scenes, &preds, &thresholds, &criteria)?;
        println!(
            "{name:<10} {}",
            report.detection.iter().map(|a| format!("{:>14.2}", 100.0 * a.ap)).collect::<String>()
        );
        last = Some(report);
    }
    if let Some(report) = last {
        let curve = pr_csv(&report.detection[0]);
        println!("first points of the all-criteria PR curve:");
        curve.lines().take(6).for_each(|l| println!("  {l}"));
    }
    Ok(())
}
