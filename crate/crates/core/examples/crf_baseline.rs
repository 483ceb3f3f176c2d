//! Fit pairwise mixture priors on training scenes and refine held-out unary
//! predictions with them, next to least-squares fusion.
//!
//! `cargo run --release --example crf_baseline -- [N_TRAIN] [N_TEST]`

use relfuse::cli::{evaluate_predictions, run_method, Method};
use relfuse::crf::{crf_energy, crf_optimize, fit_pairwise_prior, CrfConfig, Modality, DEFAULT_COMPONENTS};
use relfuse::fusion::{unary_only, FusionConfig};
use relfuse::metrics::Thresholds;
use relfuse::synthgen::{make_dataset, LayoutConfig, NoiseProfile};
use relfuse::{Codebooks, Mode, Result};

fn main() -> Result<()> {
    run(&std::env::args().skip(1).collect::<Vec<_>>())
}

pub fn run(args: &[String]) -> Result<()> {
    let mut args = args.iter().map(|a| a.parse::<usize>().ok());
    let n_train = args.next().flatten().unwrap_or(500);
    let n_test = args.next().flatten().unwrap_or(100);
    let codebooks = Codebooks::default();
    let (layout, noise) = (LayoutConfig::benchmark(), NoiseProfile::benchmark());
    let train = make_dataset(&layout, &noise, &codebooks, n_train, 100, Mode::GtBox)?;
    let test = make_dataset(&layout, &noise, &codebooks, n_test, 200, Mode::GtBox)?;

    let priors = fit_pairwise_prior(&train, DEFAULT_COMPONENTS, 0, &codebooks.rotation)?;
    println!("fitted {} prior cells on {n_train} scenes", priors.len());
    if let Some(gmm) = priors.get("chair", "table", Modality::RelTranslation) {
        println!("chair -> table translation prior: {} components, weights {:.3?}", gmm.components(), gmm.weights);
    }

    let crf = CrfConfig::default();
    let scene = &test[0];
    let result = crf_optimize(scene, &priors, &crf, &codebooks.rotation)?;
    let start = crf_energy(scene, &unary_only(scene, &codebooks), &priors, crf.lambda_data, &codebooks.rotation)?;
    println!(
        "scene {}: energy {:.3} -> {:.3} in {} steps ({:?})",
        scene.scene_id,
        start,
        result.energies.last().copied().unwrap_or(start),
        result.energies.len() - 1,
        result.termination
    );

    let config = FusionConfig::default();
    let thresholds = Thresholds::default();
    for method in [Method::Unary, Method::Crf, Method::Fused] {
        let preds = run_method(method, &test, &codebooks, &config, Some((&priors, &crf)))?;
        let st = evaluate_predictions(&test, &preds, &thresholds, &[])?.stats;
        println!(
            "{:<6} translation median {:.4} m, scale median {:.4}, rotation <=30deg {:.1}%",
            method.name(),
            st.translation.median,
            st.scale.median,
            st.rotation.pct_within
        );
    }
    Ok(())
}
