//! Unary versus fused poses on the standard benchmark profile, as a comparison table.
//!
//! `cargo run --release --example benchmark -- [N_SCENES]`

use relfuse::cli::{evaluate_predictions, run_method, Method};
use relfuse::fusion::FusionConfig;
use relfuse::io::comparison_csv;
use relfuse::metrics::{CriteriaMask, Thresholds};
use relfuse::synthgen::{make_dataset, LayoutConfig, NoiseProfile};
use relfuse::{Codebooks, Mode, Result};

fn main() -> Result<()> {
    run(&std::env::args().skip(1).collect::<Vec<_>>())
}

pub fn run(args: &[String]) -> Result<()> {
    let n = args.first().and_then(|a| a.parse().ok()).unwrap_or(300);
    let codebooks = Codebooks::default();
    let scenes = make_dataset(&LayoutConfig::benchmark(), &NoiseProfile::benchmark(), &codebooks, n, 0, Mode::GtBox)?;
    let config = FusionConfig::default();
    let thresholds = Thresholds::default();
    let mut rows = Vec::new();
    for method in [Method::Unary, Method::Fused] {
        let preds = run_method(method, &scenes, &codebooks, &config, None)?;
        let report = evaluate_predictions(&scenes, &preds, &thresholds, &CriteriaMask::detection_table())?;
        rows.push((method.name().to_string(), report));
    }
    print!("{}", comparison_csv(&rows));
    let (u, f) = (&rows[0].1.stats, &rows[1].1.stats);
    println!(
        "median translation error reduced by {:.1}%, median scale error by {:.1}%",
        100.0 * (1.0 - f.translation.median / u.translation.median),
        100.0 * (1.0 - f.scale.median / u.scale.median)
    );
    Ok(())
}
