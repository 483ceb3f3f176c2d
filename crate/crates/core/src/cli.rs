//! The `relfuse` command line: dataset generation, fusion, evaluation,
//! method comparison, prior fitting and parameter sweeps.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use crate::binning::Codebooks;
use crate::crf::{crf_optimize, fit_pairwise_prior, CrfConfig, PriorSet, DEFAULT_COMPONENTS};
use crate::error::{Error, Result};
use crate::fusion::{fuse_scene, unary_only, FusedScene, FusionConfig};
use crate::io::{self, Generation, PredictedScene};
use crate::metrics::{evaluate, CriteriaMask, DetectionSet, EvalReport, Thresholds};
use crate::scene::{Mode, SceneInstance};
use crate::synthgen::{make_dataset, LayoutConfig, NoiseProfile};

#[derive(Debug, Parser)]
#[command(name = "relfuse", version, about = "Fuse per-object and relative 3D pose predictions")]
pub struct Cli {
    /// Worker threads (default: all cores). Outputs do not depend on this.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with simulated predictions.
    Gen(GenArgs),
    /// Fuse the predictions of every scene in a dataset.
    Fuse(FuseArgs),
    /// Evaluate predictions against a dataset's ground truth.
    Eval(EvalArgs),
    /// Evaluate several methods on one dataset and write a comparison table.
    Compare(CompareArgs),
    /// Fit pairwise mixture priors on a dataset's ground truth.
    FitPrior(FitPriorArgs),
    /// Re-run fusion and evaluation for each value of one parameter.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 100)]
    pub scenes: usize,
    #[arg(long, env = "RELFUSE_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Layout JSON (default: built-in benchmark layout).
    #[arg(long)]
    pub layout: Option<PathBuf>,
    /// Noise profile JSON; missing fields take benchmark values.
    #[arg(long)]
    pub noise: Option<PathBuf>,
    #[arg(long, default_value = "gt-box")]
    pub mode: Mode,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct FusionArgs {
    /// Weight of the unary rows.
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    /// Detection-mode gate on the scores of objects sending messages.
    #[arg(long = "score-thresh", default_value_t = 0.3)]
    pub score_thresh: f64,
    /// Codebooks JSON (default: the dataset's codebooks.json).
    #[arg(long)]
    pub codebooks: Option<PathBuf>,
    /// Override the dataset's generation mode.
    #[arg(long)]
    pub mode: Option<Mode>,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[command(flatten)]
    pub fusion: FusionArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalOptions {
    /// Thresholds JSON (default: 0.5 m, 0.2, 30 deg, IoU 0.25, box IoU 0.5).
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    /// Comma-separated criteria sets such as `all,box2d+trans`.
    #[arg(long, value_delimiter = ',')]
    pub criteria: Option<Vec<CriteriaMask>>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[command(flatten)]
    pub eval: EvalOptions,
    /// Report JSON; the CSV table and PR curves are written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, ValueEnum)]
pub enum Method {
    Unary,
    Fused,
    Crf,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Unary => "unary",
            Method::Fused => "fused",
            Method::Crf => "crf",
        }
    }
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "unary,fused")]
    pub methods: Vec<Method>,
    /// Priors JSON, required for `crf`.
    #[arg(long)]
    pub priors: Option<PathBuf>,
    #[arg(long = "lambda-data", default_value_t = 1.0)]
    pub lambda_data: f64,
    #[arg(long = "crf-iters", default_value_t = 1000)]
    pub crf_iters: usize,
    #[command(flatten)]
    pub fusion: FusionArgs,
    #[command(flatten)]
    pub eval: EvalOptions,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitPriorArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = DEFAULT_COMPONENTS)]
    pub components: usize,
    #[arg(long, env = "RELFUSE_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    Lambda,
    Kappa,
    #[value(name = "sigma_t_rel")]
    SigmaTRel,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub param: SweepParam,
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    #[command(flatten)]
    pub fusion: FusionArgs,
    #[command(flatten)]
    pub eval: EvalOptions,
    #[arg(long)]
    pub out: PathBuf,
}

/// Runs a parsed command line, on a pool of `--jobs` threads when given.
pub fn run(cli: Cli) -> Result<()> {
    match cli.jobs {
        Some(0) => Err(Error::invalid("--jobs must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?
            .install(|| dispatch(cli.command)),
        None => dispatch(cli.command),
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Gen(a) => cmd_gen(&a),
        Command::Fuse(a) => cmd_fuse(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Compare(a) => cmd_compare(&a),
        Command::FitPrior(a) => cmd_fit_prior(&a),
        Command::Sweep(a) => cmd_sweep(&a),
    }
}

// ---------------------------------------------------------------------------
// library-level building blocks shared by the commands

/// Poses of one method on every scene.
pub fn run_method(
    method: Method,
    scenes: &[SceneInstance],
    codebooks: &Codebooks,
    fusion: &FusionConfig,
    crf: Option<(&PriorSet, &CrfConfig)>,
) -> Result<Vec<PredictedScene>> {
    fusion.validate()?;
    scenes
        .par_iter()
        .map(|s| {
            let fused = match method {
                Method::Unary => unary_only(s, codebooks),
                Method::Fused => fuse_scene(s, fusion, codebooks)?,
                Method::Crf => {
                    let (priors, config) = crf.ok_or_else(|| Error::invalid("the crf method needs priors"))?;
                    crf_optimize(s, priors, config, &codebooks.rotation)?.refined
                }
            };
            PredictedScene::new(s, fused)
        })
        .collect()
}

fn diff_summary(missing: &[&str], extra: &[&str]) -> String {
    let head = |v: &[&str]| {
        let mut s = v.iter().take(5).copied().collect::<Vec<_>>().join(", ");
        if v.len() > 5 {
            s.push_str(&format!(", ... ({} total)", v.len()));
        }
        s
    };
    let mut parts = Vec::new();
    if !missing.is_empty() {
        parts.push(format!("missing predictions for [{}]", head(missing)));
    }
    if !extra.is_empty() {
        parts.push(format!("predictions without ground truth [{}]", head(extra)));
    }
    parts.join("; ")
}

/// Evaluates predictions matched to ground-truth scenes by scene id.
pub fn evaluate_predictions(
    gt: &[SceneInstance],
    preds: &[PredictedScene],
    thresholds: &Thresholds,
    criteria: &[CriteriaMask],
) -> Result<EvalReport> {
    let by_id: HashMap<&str, &PredictedScene> = preds.iter().map(|p| (p.scene_id(), p)).collect();
    let gt_ids: std::collections::HashSet<&str> = gt.iter().map(|s| s.scene_id.as_str()).collect();
    let missing: Vec<&str> = gt.iter().map(|s| s.scene_id.as_str()).filter(|id| !by_id.contains_key(id)).collect();
    let extra: Vec<&str> = preds.iter().map(|p| p.scene_id()).filter(|id| !gt_ids.contains(id)).collect();
    if !missing.is_empty() || !extra.is_empty() || by_id.len() != preds.len() {
        let mut msg = diff_summary(&missing, &extra);
        if by_id.len() != preds.len() {
            msg.push_str(if msg.is_empty() { "duplicate prediction scenes" } else { "; duplicate prediction scenes" });
        }
        return Err(Error::IdMismatch(msg));
    }
    let sets: Vec<DetectionSet<'_>> = gt
        .iter()
        .map(|s| DetectionSet { detections: &by_id[s.scene_id.as_str()].detections, ground_truth: &s.gt_objects })
        .collect();
    evaluate(&sets, thresholds, criteria)
}

/// Mean over objects of `|t* - t_unary|`.
pub fn mean_shift_from_unary(scenes: &[SceneInstance], fused: &[FusedScene]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (s, f) in scenes.iter().zip(fused) {
        for u in &s.unary {
            if let Some(o) = f.object(u.object_id) {
                total += (o.translation - u.translation).norm();
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

// ---------------------------------------------------------------------------
// commands

fn load_or_default<T: serde::de::DeserializeOwned>(path: Option<&Path>, default: impl FnOnce() -> T) -> Result<T> {
    path.map_or_else(|| Ok(default()), io::read_json)
}

pub fn cmd_gen(a: &GenArgs) -> Result<()> {
    let layout: LayoutConfig = load_or_default(a.layout.as_deref(), LayoutConfig::benchmark)?;
    let noise: NoiseProfile = load_or_default(a.noise.as_deref(), NoiseProfile::benchmark)?;
    layout.validate()?;
    noise.validate()?;
    let codebooks = Codebooks::default();
    let scenes = make_dataset(&layout, &noise, &codebooks, a.scenes, a.seed, a.mode)?;
    let generation = Generation { seed: a.seed, mode: a.mode, layout, noise };
    let manifest = io::write_dataset(&a.out, &scenes, &codebooks, Some(&generation))?;
    println!("wrote {} scenes to {} (manifest {})", scenes.len(), a.out.display(), &manifest.digest()?[..16]);
    Ok(())
}

struct LoadedDataset {
    manifest: io::DatasetManifest,
    scenes: Vec<SceneInstance>,
    codebooks: Codebooks,
    fusion: FusionConfig,
}

fn load_dataset(dir: &Path, fusion: &FusionArgs) -> Result<LoadedDataset> {
    let codebook_path = fusion.codebooks.clone().unwrap_or_else(|| dir.join(io::CODEBOOKS));
    if !codebook_path.is_file() {
        return Err(Error::invalid(format!("codebook file {} not found", codebook_path.display())));
    }
    let codebooks = io::read_codebooks(&codebook_path)?;
    let (manifest, scenes) = io::read_dataset(dir)?;
    let mode = fusion.mode.or(manifest.generation.as_ref().map(|g| g.mode)).unwrap_or(Mode::GtBox);
    let config =
        FusionConfig { lambda: fusion.lambda, score_threshold: fusion.score_thresh, mode, ..FusionConfig::default() };
    config.validate()?;
    Ok(LoadedDataset { manifest, scenes, codebooks, fusion: config })
}

pub fn cmd_fuse(a: &FuseArgs) -> Result<()> {
    let data = load_dataset(&a.input, &a.fusion)?;
    let preds = run_method(Method::Fused, &data.scenes, &data.codebooks, &data.fusion, None)?;
    let config = json!({
        "fusion": data.fusion,
        "dataset_manifest_sha256": data.manifest.digest()?,
    });
    let manifest = io::write_predictions(&a.out, Method::Fused.name(), config, &preds)?;
    println!("fused {} scenes into {} ({} files)", preds.len(), a.out.display(), manifest.files.len());
    Ok(())
}

fn eval_settings(opts: &EvalOptions) -> Result<(Thresholds, Vec<CriteriaMask>)> {
    let thresholds: Thresholds = load_or_default(opts.thresholds.as_deref(), Thresholds::default)?;
    thresholds.validate()?;
    let criteria = opts.criteria.clone().unwrap_or_else(CriteriaMask::detection_table);
    Ok((thresholds, criteria))
}

/// Report JSON, `<stem>.csv` and `<stem>_pr_<criteria>.csv` next to it.
fn write_report(out: &Path, name: &str, report: &EvalReport) -> Result<()> {
    io::write_json(out, report)?;
    io::write_file(&out.with_extension("csv"), io::comparison_csv(&[(name.to_string(), report.clone())]))?;
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    for ap in &report.detection {
        io::write_file(&out.with_file_name(format!("{stem}_{}", io::pr_file_name(ap))), io::pr_csv(ap))?;
    }
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let (thresholds, criteria) = eval_settings(&a.eval)?;
    let (_, gt) = io::read_dataset(&a.gt)?;
    let (manifest, preds) = io::read_predictions(&a.pred)?;
    let report = evaluate_predictions(&gt, &preds, &thresholds, &criteria)?;
    write_report(&a.out, &manifest.method, &report)?;
    let st = &report.stats;
    println!(
        "{}: translation median {:.4} m, rotation median {:.2} deg, scale median {:.4}",
        manifest.method, st.translation.median, st.rotation.median, st.scale.median
    );
    for ap in &report.detection {
        println!("  AP[{}] = {:.4}", ap.criteria, ap.ap);
    }
    Ok(())
}

pub fn cmd_compare(a: &CompareArgs) -> Result<()> {
    let (thresholds, criteria) = eval_settings(&a.eval)?;
    let data = load_dataset(&a.input, &a.fusion)?;
    let mut methods = Vec::new();
    for m in &a.methods {
        if !methods.contains(m) {
            methods.push(*m);
        }
    }
    let priors: Option<PriorSet> = if methods.contains(&Method::Crf) {
        let path = a.priors.as_deref().ok_or_else(|| Error::invalid("--priors is required for the crf method"))?;
        let p: PriorSet = io::read_json(path)?;
        p.validate()?;
        Some(p)
    } else {
        None
    };
    let crf_config = CrfConfig { lambda_data: a.lambda_data, max_iters: a.crf_iters };
    let mut rows = Vec::new();
    for m in methods {
        let preds =
            run_method(m, &data.scenes, &data.codebooks, &data.fusion, priors.as_ref().map(|p| (p, &crf_config)))?;
        rows.push((m.name().to_string(), evaluate_predictions(&data.scenes, &preds, &thresholds, &criteria)?));
    }
    io::write_file(&a.out, io::comparison_csv(&rows))?;
    for (name, r) in &rows {
        println!("{name}: translation median {:.4} m", r.stats.translation.median);
    }
    Ok(())
}

pub fn cmd_fit_prior(a: &FitPriorArgs) -> Result<()> {
    let (_, scenes) = io::read_dataset(&a.input)?;
    let codebooks = io::read_codebooks(&a.input.join(io::CODEBOOKS))?;
    let priors = fit_pairwise_prior(&scenes, a.components, a.seed, &codebooks.rotation)?;
    io::write_json(&a.out, &priors)?;
    println!("fitted {} prior cells to {}", priors.len(), a.out.display());
    Ok(())
}

/// One CSV row per swept value: the value, the mean fused-vs-unary translation shift, then the fused table columns.
pub fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let (thresholds, criteria) = eval_settings(&a.eval)?;
    let data = load_dataset(&a.input, &a.fusion)?;
    let generation = data.manifest.generation.as_ref();
    let mut rows = Vec::new();
    let mut shifts = Vec::new();
    for &value in &a.values {
        let mut fusion = data.fusion;
        let regenerated;
        let scenes: &[SceneInstance] = match a.param {
            SweepParam::Lambda => {
                fusion.lambda = value;
                &data.scenes
            }
            SweepParam::Kappa | SweepParam::SigmaTRel => {
                let g = generation.ok_or_else(|| {
                    Error::invalid("sweeping noise parameters needs a dataset produced by `relfuse gen`")
                })?;
                let mut noise = g.noise.clone();
                match a.param {
                    SweepParam::Kappa => noise.direction_kappa = value,
                    _ => noise.sigma_t_rel = value,
                }
                regenerated = make_dataset(&g.layout, &noise, &data.codebooks, data.scenes.len(), g.seed, g.mode)?;
                &regenerated
            }
        };
        let preds = run_method(Method::Fused, scenes, &data.codebooks, &fusion, None)?;
        let fused: Vec<FusedScene> = preds.iter().map(|p| p.fused.clone()).collect();
        shifts.push(mean_shift_from_unary(scenes, &fused));
        rows.push((format!("{value}"), evaluate_predictions(scenes, &preds, &thresholds, &criteria)?));
    }
    let table = io::comparison_csv(&rows);
    let param = match a.param {
        SweepParam::Lambda => "lambda",
        SweepParam::Kappa => "kappa",
        SweepParam::SigmaTRel => "sigma_t_rel",
    };
    let mut out = String::new();
    for (i, line) in table.lines().enumerate() {
        let rest = line.split_once(',').map_or("", |(_, r)| r);
        if i == 0 {
            out.push_str(&format!("{param},mean_shift_from_unary,{rest}\n"));
        } else {
            out.push_str(&format!("{},{},{rest}\n", rows[i - 1].0, shifts[i - 1]));
        }
    }
    io::write_file(&a.out, out)?;
    println!("swept {param} over {} values into {}", a.values.len(), a.out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flags() {
        let cli = Cli::try_parse_from([
            "relfuse",
            "--jobs",
            "2",
            "eval",
            "--pred",
            "p",
            "--gt",
            "g",
            "--criteria",
            "all,box2d+trans",
            "--out",
            "r.json",
        ])
        .unwrap();
        assert_eq!(cli.jobs, Some(2));
        let Command::Eval(a) = cli.command else { panic!("expected eval") };
        assert_eq!(
            a.eval.criteria.unwrap(),
            vec![CriteriaMask::ALL, CriteriaMask::BOX2D.union(CriteriaMask::TRANSLATION)]
        );
        let cli = Cli::try_parse_from([
            "relfuse",
            "sweep",
            "--in",
            "d",
            "--param",
            "sigma_t_rel",
            "--values",
            "0.1,0.2",
            "--out",
            "s.csv",
        ])
        .unwrap();
        let Command::Sweep(a) = cli.command else { panic!("expected sweep") };
        assert_eq!((a.param, a.values), (SweepParam::SigmaTRel, vec![0.1, 0.2]));
        assert!(Cli::try_parse_from(["relfuse", "compare", "--in", "d", "--methods", "bogus", "--out", "x"]).is_err());
    }

    #[test]
    fn default_criteria_are_the_detection_table() {
        let (_, criteria) = eval_settings(&EvalOptions { thresholds: None, criteria: None }).unwrap();
        let names: Vec<String> = criteria.iter().map(|c| c.to_string()).collect();
        assert_eq!(names, ["all", "box2d+trans", "box2d+rot", "box2d+scale"]);
    }

    #[test]
    fn id_mismatch_is_summarized() {
        let cb = Codebooks::default();
        let scenes =
            make_dataset(&LayoutConfig::benchmark(), &NoiseProfile::benchmark(), &cb, 2, 0, Mode::GtBox).unwrap();
        let preds = run_method(Method::Unary, &scenes[..1], &cb, &FusionConfig::default(), None).unwrap();
        let err = evaluate_predictions(&scenes, &preds, &Thresholds::default(), &[CriteriaMask::ALL]).unwrap_err();
        assert!(err.to_string().contains("scene_00001"), "{err}");
    }
}
