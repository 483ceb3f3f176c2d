//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed. Frozen oracle values were computed with
//! independent numpy scripts (see the comments next to each constant).

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relfuse::cli::{evaluate_predictions, run_method, Method};
use relfuse::crf::{fit_pairwise_prior, CrfConfig, CrfProblem, DEFAULT_COMPONENTS};
use relfuse::fusion::{fuse_linear, fuse_rotations, fuse_scene, Edge, FusionConfig};
use relfuse::losses::grad_check_joint;
use relfuse::metrics::{
    box2d_iou, detection_ap, is_true_positive, rotation_error, scale_error, scene_error_stats, translation_error,
    voxel_iou, CriteriaMask, Detection, DetectionSet, Thresholds,
};
use relfuse::scene::{yaw, Box2d, Camera, Pose, RelativePrediction, UnaryPrediction, Vec3, VoxelGrid};
use relfuse::synthgen::{make_dataset, LayoutConfig, NoiseProfile};
use relfuse::{Codebooks, Error, GroundTruthObject, Mode, SceneInstance};

type Outcome = Result<(bool, String), Box<dyn std::error::Error>>;
type Criterion = (&'static str, Duration, fn() -> Outcome);

// criterion 1
const ORACLE_TOL: f64 = 1e-8;
// criterion 2
const FIXPOINT_TOL: f64 = 1e-9;
// criterion 3
const GOLDEN_TOL: f64 = 1e-12;
// criterion 4: 1 - median(fused)/median(unary) of the closed-form estimate
// x* - x = (I + A^T A)^-1 (e_u + A^T e_r) with (I + A^T A)^-1 = (I + 2J)/11 for
// five objects and all 20 ordered pairs; 40000 simulated scenes.
const GLS_TRANSLATION_REDUCTION: f64 = 0.5414;
const GLS_SCALE_REDUCTION: f64 = 0.5369;
const MIN_REDUCTION: f64 = 0.20;
const REDUCTION_BAND: f64 = 0.05;
const ROTATION_SLACK_POINTS: f64 = 1.0;
// criterion 5: exhaustive argmin over all 24 bins, 20000 simulated trials with the
// same geometry and noise as below.
const ROTATION_ORACLE_RATE: f64 = 0.9897;
const ROTATION_MIN_RATE: f64 = 0.95;
const ROTATION_RATE_BAND: f64 = 0.015;
// criterion 6
const GRAD_TOL: f64 = 1e-4;
const GRAD_STEP: f64 = 1e-5;
// criterion 7
const AP_TOL: f64 = 1e-12;
// criterion 8
const AP_MARGIN_POINTS: f64 = 2.0;

fn main() {
    let criteria: [Criterion; 10] = [
        ("1 fusion matches normal equations", Duration::from_secs(5), fusion_oracle),
        ("2 exact inputs are a fixpoint", Duration::from_secs(5), consistency_fixpoint),
        ("3 golden two-object example", Duration::from_secs(5), golden_example),
        ("4 benchmark error reduction", Duration::from_secs(60), benchmark_trend),
        ("5 rotation update efficacy", Duration::from_secs(10), rotation_efficacy),
        ("6 gradient checks", Duration::from_secs(30), gradient_checks),
        ("7 metrics suite", Duration::from_secs(5), metrics_suite),
        ("8 detection AP ordering", Duration::from_secs(90), detection_ordering),
        ("9 CRF baseline ordering", Duration::from_secs(180), crf_ordering),
        ("10 CLI determinism", Duration::from_secs(30), cli_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, limit, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let (ok, detail) = match outcome {
            Ok((ok, detail)) => (ok && elapsed <= limit, detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!ok);
        println!(
            "[{}] criterion {name}: {detail}; {:.2} s (limit {} s)",
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

/// Solves a dense symmetric positive definite system by Gaussian elimination with partial pivoting.
fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            let pivot_row = a[col].clone();
            for (x, p) in a[row].iter_mut().zip(&pivot_row).skip(col) {
                *x -= f * p;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

fn fusion_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let lambda = [0.25, 1.0, 4.0][i % 3];
        let n = rng.random_range(1..=8);
        let e = if n == 1 { 0 } else { rng.random_range(0..=20) };
        let unary: Vec<Vec3> = (0..n).map(|_| Vec3::from_fn(|_, _| rng.random_range(-5.0..5.0))).collect();
        let edges: Vec<Edge> = (0..e)
            .map(|_| {
                let source = rng.random_range(0..n);
                let target = (source + rng.random_range(1..n)) % n;
                Edge { source, target, value: Vec3::from_fn(|_, _| rng.random_range(-3.0..3.0)) }
            })
            .collect();
        let fused = fuse_linear(&unary, &edges, lambda)?;
        // (lambda^2 I + A^T A) x = lambda^2 u + A^T r, per axis
        let mut normal = vec![vec![0.0; n]; n];
        for (k, row) in normal.iter_mut().enumerate() {
            row[k] = lambda * lambda;
        }
        for ed in &edges {
            normal[ed.source][ed.source] += 1.0;
            normal[ed.target][ed.target] += 1.0;
            normal[ed.source][ed.target] -= 1.0;
            normal[ed.target][ed.source] -= 1.0;
        }
        for axis in 0..3 {
            let mut rhs: Vec<f64> = unary.iter().map(|u| lambda * lambda * u[axis]).collect();
            for ed in &edges {
                rhs[ed.source] -= ed.value[axis];
                rhs[ed.target] += ed.value[axis];
            }
            let x = gauss_solve(normal.clone(), rhs);
            for (k, xk) in x.iter().enumerate() {
                worst = worst.max((fused[k][axis] - xk).abs());
            }
        }
    }
    Ok((worst <= ORACLE_TOL, format!("200 instances, max abs error {worst:.2e} (tol {ORACLE_TOL:.0e})")))
}

fn consistency_fixpoint() -> Outcome {
    let codebooks = Codebooks::default();
    let layout = LayoutConfig { yaw_step_deg: Some(15.0), ..LayoutConfig::benchmark() };
    let scenes = make_dataset(&layout, &NoiseProfile::noiseless(), &codebooks, 100, 2, Mode::GtBox)?;
    let config = FusionConfig::default();
    let mut worst: f64 = 0.0;
    let mut wrong_bins = 0;
    let mut objects = 0;
    for s in &scenes {
        let fused = fuse_scene(s, &config, &codebooks)?;
        for g in &s.gt_objects {
            let o = fused.object(g.object_id).ok_or_else(|| Error::IdMismatch(format!("object {}", g.object_id)))?;
            worst = worst.max((o.translation - g.pose.translation).amax());
            worst = worst.max((o.log_scale - g.pose.log_scale).amax());
            wrong_bins += usize::from(o.rotation_bin != codebooks.rotation.nearest_bin(&g.pose.rotation));
            objects += 1;
        }
    }
    Ok((
        worst <= FIXPOINT_TOL && wrong_bins == 0,
        format!("{objects} objects, max error {worst:.2e} (tol {FIXPOINT_TOL:.0e}), {wrong_bins} wrong rotation bins"),
    ))
}

fn golden_example() -> Outcome {
    let unary = [Vec3::zeros(), Vec3::new(2.0, 0.0, 0.0)];
    let edge = Edge { source: 0, target: 1, value: Vec3::new(1.0, 0.0, 0.0) };
    let x = fuse_linear(&unary, &[edge], 1.0)?;
    let err = (x[0].x - 1.0 / 3.0).abs().max((x[1].x - 5.0 / 3.0).abs());
    Ok((err <= GOLDEN_TOL, format!("x = ({:.15}, {:.15}), error {err:.1e} (tol {GOLDEN_TOL:.0e})", x[0].x, x[1].x)))
}

fn benchmark_trend() -> Outcome {
    let codebooks = Codebooks::default();
    let scenes =
        make_dataset(&LayoutConfig::benchmark(), &NoiseProfile::benchmark(), &codebooks, 1000, 4, Mode::GtBox)?;
    let config = FusionConfig::default();
    let thresholds = Thresholds::default();
    let unary = run_method(Method::Unary, &scenes, &codebooks, &config, None)?;
    let fused = run_method(Method::Fused, &scenes, &codebooks, &config, None)?;
    let u = evaluate_predictions(&scenes, &unary, &thresholds, &[])?.stats;
    let f = evaluate_predictions(&scenes, &fused, &thresholds, &[])?.stats;
    let t_red = 1.0 - f.translation.median / u.translation.median;
    let s_red = 1.0 - f.scale.median / u.scale.median;
    let ok = t_red >= MIN_REDUCTION
        && s_red >= MIN_REDUCTION
        && (t_red - GLS_TRANSLATION_REDUCTION).abs() <= REDUCTION_BAND
        && (s_red - GLS_SCALE_REDUCTION).abs() <= REDUCTION_BAND
        && f.rotation.pct_within >= u.rotation.pct_within - ROTATION_SLACK_POINTS;
    Ok((
        ok,
        format!(
            "translation median {:.4} -> {:.4} (reduction {:.1}%, oracle {:.1}% +/- {:.0}), scale median {:.4} -> {:.4} \
             (reduction {:.1}%, oracle {:.1}% +/- {:.0}), rotation <=30deg {:.1}% -> {:.1}%",
            u.translation.median,
            f.translation.median,
            100.0 * t_red,
            100.0 * GLS_TRANSLATION_REDUCTION,
            100.0 * REDUCTION_BAND,
            u.scale.median,
            f.scale.median,
            100.0 * s_red,
            100.0 * GLS_SCALE_REDUCTION,
            100.0 * REDUCTION_BAND,
            u.rotation.pct_within,
            f.rotation.pct_within
        ),
    ))
}

fn direction_probs(codebooks: &Codebooks, d: &Vec3, kappa: f64) -> Vec<f64> {
    let w: Vec<f64> = codebooks.direction.bins().iter().map(|b| (kappa * (b.dot(d) - 1.0)).exp()).collect();
    let sum: f64 = w.iter().sum();
    w.into_iter().map(|x| x / sum).collect()
}

fn bare_unary(id: u32, k: usize) -> UnaryPrediction {
    UnaryPrediction {
        object_id: id,
        category: "chair".into(),
        translation: Vec3::zeros(),
        log_scale: Vec3::zeros(),
        rotation_prob: vec![1.0 / k as f64; k],
        score: 1.0,
        box2d: None,
        shape: None,
    }
}

/// One object with a uniform rotation distribution and a single neighbour whose
/// canonical direction is a codebook direction, observed with kappa = 16 and
/// relative translation noise 0.1 m at 1.5 to 4 m.
fn rotation_efficacy() -> Outcome {
    let codebooks = Codebooks::default();
    let (k, kd) = (codebooks.rotation.len(), codebooks.direction.len());
    let config = FusionConfig::default();
    let noise = rand_distr::Normal::new(0.0, 0.1).expect("valid normal");
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let trials = 1000;
    let mut hits = 0;
    for i in 0..trials {
        let truth = rng.random_range(0..k);
        let canonical = *codebooks.direction.bin(rng.random_range(0..kd));
        let dist: f64 = rng.random_range(1.5..4.0);
        let jitter = Vec3::from_fn(|_, _| rng.sample(noise));
        let rel = codebooks.rotation.matrix(truth) * canonical * dist + jitter;
        let scene = SceneInstance {
            scene_id: format!("trial_{i}"),
            camera: Camera::default(),
            gt_objects: Vec::new(),
            unary: vec![bare_unary(0, k), bare_unary(1, k)],
            relative: vec![RelativePrediction {
                source_id: 0,
                target_id: 1,
                rel_translation: rel,
                rel_log_scale: Vec3::zeros(),
                direction_prob: direction_probs(&codebooks, &canonical, 16.0),
            }],
        };
        let result = fuse_rotations(&scene, &config, &codebooks.rotation, &codebooks.direction)?;
        hits += usize::from(result[0].best_bin == truth);
    }
    let rate = hits as f64 / trials as f64;
    Ok((
        rate >= ROTATION_MIN_RATE && (rate - ROTATION_ORACLE_RATE).abs() <= ROTATION_RATE_BAND,
        format!(
            "true bin selected in {hits}/{trials} = {:.1}% (min {:.0}%, oracle {:.2}% +/- {:.1})",
            100.0 * rate,
            100.0 * ROTATION_MIN_RATE,
            100.0 * ROTATION_ORACLE_RATE,
            100.0 * ROTATION_RATE_BAND
        ),
    ))
}

fn gradient_checks() -> Outcome {
    let codebooks = Codebooks::default();
    let layout = LayoutConfig::benchmark();
    let noise = NoiseProfile::benchmark();
    let scenes = make_dataset(&layout, &noise, &codebooks, 100, 6, Mode::GtBox)?;
    let mut joint: f64 = 0.0;
    for s in &scenes {
        joint = joint.max(grad_check_joint(s, &FusionConfig::default(), GRAD_STEP)?);
    }
    let train = make_dataset(&layout, &noise, &codebooks, 400, 7, Mode::GtBox)?;
    let priors = fit_pairwise_prior(&train, DEFAULT_COMPONENTS, 0, &codebooks.rotation)?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut crf: f64 = 0.0;
    for s in &scenes {
        let problem = CrfProblem::new(s, &priors, 1.0, &codebooks.rotation)?;
        let x = problem.initial() + DVector::from_fn(problem.dim(), |_, _| rng.random_range(-0.05..0.05));
        crf = crf.max(problem.gradient_check(&x, GRAD_STEP)?);
    }
    Ok((
        joint < GRAD_TOL && crf < GRAD_TOL,
        format!("100 instances each, joint {joint:.2e}, crf {crf:.2e} (tol {GRAD_TOL:.0e}, h {GRAD_STEP:.0e})"),
    ))
}

fn cube(resolution: usize, lo: [usize; 3], hi: [usize; 3]) -> VoxelGrid {
    let mut occ = vec![0.0f32; resolution.pow(3)];
    for x in lo[0]..hi[0] {
        for y in lo[1]..hi[1] {
            for z in lo[2]..hi[2] {
                occ[(x * resolution + y) * resolution + z] = 1.0;
            }
        }
    }
    VoxelGrid::new(resolution, occ).expect("valid grid")
}

fn gt_object(id: u32, t: Vec3, yaw_deg: f64, order: u8, shape: Arc<VoxelGrid>) -> GroundTruthObject {
    GroundTruthObject {
        object_id: id,
        category: "chair".into(),
        pose: Pose::from_extents(t, Vec3::new(0.5, 0.9, 0.5), yaw(yaw_deg.to_radians())).expect("valid pose"),
        symmetry_order: order,
        shape,
        box2d: Box2d::new(100.0, 100.0, 200.0, 200.0).expect("valid box"),
    }
}

fn detection_of(gt: &GroundTruthObject, id: u32, score: f64) -> Detection {
    Detection {
        object_id: id,
        category: gt.category.clone(),
        score,
        translation: gt.pose.translation,
        log_scale: gt.pose.log_scale,
        rotation: gt.pose.rotation,
        box2d: Some(gt.box2d),
        shape: Some(gt.shape.clone()),
    }
}

/// AP as the area under the interpolated precision, integrated over the distinct recall levels.
fn brute_force_ap(det: &[(f64, u32, f64)], gts: &[f64], delta_t: f64) -> f64 {
    let mut ranked = det.to_vec();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut taken = vec![false; gts.len()];
    let mut points = Vec::new();
    let mut tp = 0;
    for (k, &(_, _, x)) in ranked.iter().enumerate() {
        if let Some(j) = (0..gts.len()).find(|&j| !taken[j] && (gts[j] - x).abs() <= delta_t) {
            taken[j] = true;
            tp += 1;
        }
        points.push((tp as f64 / gts.len() as f64, tp as f64 / (k + 1) as f64));
    }
    let mut levels: Vec<f64> = points.iter().map(|p| p.0).filter(|&r| r > 0.0).collect();
    levels.dedup();
    let mut area = 0.0;
    let mut prev = 0.0;
    for r in levels {
        let p = points.iter().filter(|q| q.0 >= r).map(|q| q.1).fold(0.0, f64::max);
        area += (r - prev) * p;
        prev = r;
    }
    area
}

fn metrics_suite() -> Outcome {
    let mut failures: Vec<String> = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };
    let a = Vec3::new(1.0, 2.0, 3.0);
    check("translation identical", translation_error(&a, &a) == 0.0);
    check("translation 3-4-5", translation_error(&Vec3::new(3.0, 4.0, 0.0), &Vec3::zeros()) == 5.0);
    let ext = Vec3::new(0.5, 1.0, 2.0);
    check("scale equal", scale_error(&ext, &ext)? == 0.0);
    check("scale doubled", scale_error(&(ext * 2.0), &ext)? == 1.0);
    check("scale one axis", scale_error(&ext.component_mul(&Vec3::new(2.0, 1.0, 1.0)), &ext)? == 1.0 / 3.0);
    check("scale rejects zero", scale_error(&Vec3::zeros(), &ext).is_err());
    let q = yaw(0.3);
    check("rotation identical", rotation_error(&q, &q, 1) == 0.0);
    let quarter = yaw(0.3 + std::f64::consts::FRAC_PI_2);
    check("rotation 90 order 1", (rotation_error(&quarter, &q, 1) - 90.0).abs() < 1e-9);
    check("rotation 90 order 4", rotation_error(&quarter, &q, 4) < 1e-6);
    let full = Arc::new(cube(4, [0, 0, 0], [4, 4, 4]));
    check("voxel identical", voxel_iou(&full, &full)? == 1.0);
    let left = cube(4, [0, 0, 0], [2, 4, 4]);
    let right = cube(4, [2, 0, 0], [4, 4, 4]);
    check("voxel disjoint", voxel_iou(&left, &right)? == 0.0);
    let mid = cube(4, [1, 0, 0], [3, 4, 4]);
    let (inter, union) = left.values().iter().zip(mid.values()).fold((0, 0), |(i, u), (&p, &g)| {
        (i + usize::from(p >= 0.5 && g >= 0.5), u + usize::from(p >= 0.5 || g >= 0.5))
    });
    check("voxel half overlap", voxel_iou(&left, &mid)? == inter as f64 / union as f64);
    let unit = Box2d::new(0.0, 0.0, 1.0, 1.0)?;
    check("box identical", box2d_iou(&unit, &unit) == 1.0);
    check("box disjoint", box2d_iou(&unit, &Box2d::new(2.0, 2.0, 3.0, 3.0)?) == 0.0);
    check("box half", box2d_iou(&unit, &Box2d::new(0.5, 0.0, 1.5, 1.0)?) == 1.0 / 3.0);

    let th = Thresholds::default();
    let gt = gt_object(1, Vec3::new(0.0, 0.5, 4.0), 10.0, 2, full.clone());
    let perfect = detection_of(&gt, 1, 0.9);
    check("tp perfect", is_true_positive(&perfect, &gt, &th, CriteriaMask::ALL)?);
    let far = Detection { translation: gt.pose.translation + Vec3::new(0.6, 0.0, 0.0), ..perfect.clone() };
    check("tp translation 0.6", !is_true_positive(&far, &gt, &th, CriteriaMask::TRANSLATION)?);
    let turned = Detection { rotation: yaw((10.0f64 + 180.0 + 29.0).to_radians()), ..perfect.clone() };
    check("tp rotation 29 order 2", is_true_positive(&turned, &gt, &th, CriteriaMask::ROTATION)?);
    let no_shape = Detection { shape: None, ..perfect.clone() };
    check(
        "tp missing shape",
        matches!(is_true_positive(&no_shape, &gt, &th, CriteriaMask::SHAPE), Err(Error::MissingShape(_))),
    );

    let gts = [gt.clone()];
    let one = [perfect.clone()];
    let ap = detection_ap(&[DetectionSet { detections: &one, ground_truth: &gts }], &th, CriteriaMask::ALL)?;
    check("ap single", ap.ap == 1.0);
    let two = [perfect.clone(), Detection { object_id: 2, score: 0.8, ..far.clone() }];
    let ap = detection_ap(&[DetectionSet { detections: &two, ground_truth: &gts }], &th, CriteriaMask::ALL)?;
    check("ap tp then fp", ap.ap == 1.0);
    let empty: [GroundTruthObject; 0] = [];
    check(
        "ap empty gt",
        matches!(
            detection_ap(&[DetectionSet { detections: &one, ground_truth: &empty }], &th, CriteriaMask::ALL),
            Err(Error::EmptyGroundTruth)
        ),
    );
    let stats = scene_error_stats(&[DetectionSet { detections: &one, ground_truth: &gts }], &th)?;
    check(
        "stats perfect",
        stats.translation.median == 0.0 && stats.translation.pct_within == 100.0 && stats.scale.pct_within == 100.0,
    );
    let stats = scene_error_stats(&[DetectionSet { detections: std::slice::from_ref(&far), ground_truth: &gts }], &th)?;
    check(
        "stats single",
        (stats.translation.median - 0.6).abs() < 1e-12 && stats.translation.mean == stats.translation.median,
    );

    // randomized AP against the brute-force construction (translation criterion on a line)
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n_gt = rng.random_range(1..=4);
        let n_det = rng.random_range(0..=6);
        let gx: Vec<f64> = (0..n_gt).map(|_| rng.random_range(0.0..3.0)).collect();
        let det: Vec<(f64, u32, f64)> =
            (0..n_det).map(|i| ((rng.random_range(0..5) as f64) / 4.0, i as u32, rng.random_range(0.0..3.0))).collect();
        let gt_objs: Vec<GroundTruthObject> = gx
            .iter()
            .enumerate()
            .map(|(i, &x)| gt_object(i as u32, Vec3::new(x, 0.0, 4.0), 0.0, 1, full.clone()))
            .collect();
        let dets: Vec<Detection> = det
            .iter()
            .map(|&(score, id, x)| Detection {
                score,
                object_id: id,
                translation: Vec3::new(x, 0.0, 4.0),
                ..detection_of(&gt_objs[0], id, score)
            })
            .collect();
        let ap = detection_ap(
            &[DetectionSet { detections: &dets, ground_truth: &gt_objs }],
            &th,
            CriteriaMask::TRANSLATION,
        )?;
        worst = worst.max((ap.ap - brute_force_ap(&det, &gx, th.delta_t)).abs());
    }
    check("ap brute force", worst <= AP_TOL);
    Ok((
        failures.is_empty(),
        if failures.is_empty() {
            format!("all fixed examples exact, random AP max diff {worst:.1e} over 50 cases (tol {AP_TOL:.0e})")
        } else {
            format!("failed: {}", failures.join(", "))
        },
    ))
}

fn detection_ordering() -> Outcome {
    let codebooks = Codebooks::default();
    let noise = NoiseProfile { fp_rate: 1.0, ..NoiseProfile::benchmark() };
    let scenes = make_dataset(&LayoutConfig::benchmark(), &noise, &codebooks, 1000, 10, Mode::Detection)?;
    let config = FusionConfig { mode: Mode::Detection, ..FusionConfig::default() };
    let th = Thresholds::default();
    let ap = |m| -> Result<f64, Error> {
        let preds = run_method(m, &scenes, &codebooks, &config, None)?;
        Ok(100.0 * evaluate_predictions(&scenes, &preds, &th, &[CriteriaMask::ALL])?.detection[0].ap)
    };
    let (unary, fused) = (ap(Method::Unary)?, ap(Method::Fused)?);
    Ok((
        fused >= unary + AP_MARGIN_POINTS,
        format!("AP(all) unary {unary:.2}, fused {fused:.2} (margin {AP_MARGIN_POINTS} points)"),
    ))
}

fn crf_ordering() -> Outcome {
    let codebooks = Codebooks::default();
    let layout = LayoutConfig::benchmark();
    let noise = NoiseProfile::benchmark();
    let train = make_dataset(&layout, &noise, &codebooks, 2000, 11, Mode::GtBox)?;
    let test = make_dataset(&layout, &noise, &codebooks, 500, 12, Mode::GtBox)?;
    let priors = fit_pairwise_prior(&train, DEFAULT_COMPONENTS, 0, &codebooks.rotation)?;
    let config = FusionConfig::default();
    let crf = CrfConfig::default();
    let th = Thresholds::default();
    let median_t = |m| -> Result<f64, Error> {
        let preds = run_method(m, &test, &codebooks, &config, Some((&priors, &crf)))?;
        Ok(evaluate_predictions(&test, &preds, &th, &[])?.stats.translation.median)
    };
    let (unary, fused, crf) = (median_t(Method::Unary)?, median_t(Method::Fused)?, median_t(Method::Crf)?);
    Ok((
        crf <= unary && fused <= crf,
        format!("median translation unary {unary:.4}, crf {crf:.4}, fused {fused:.4} ({} prior cells)", priors.len()),
    ))
}

fn tree_bytes(root: &Path) -> std::io::Result<BTreeMap<String, Vec<u8>>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) -> std::io::Result<()> {
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                let rel = path.strip_prefix(root).expect("inside root").to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path)?);
            }
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out)?;
    Ok(out)
}

fn cli_determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_relfuse");
    let run_pipeline = |root: &Path| -> Result<(), Box<dyn std::error::Error>> {
        let data = root.join("data");
        let pred = root.join("pred");
        let report = root.join("eval").join("report.json");
        let steps: [Vec<&std::ffi::OsStr>; 3] = [
            vec![
                "gen".as_ref(),
                "--scenes".as_ref(),
                "50".as_ref(),
                "--seed".as_ref(),
                "3".as_ref(),
                "--out".as_ref(),
                data.as_os_str(),
            ],
            vec!["fuse".as_ref(), "--in".as_ref(), data.as_os_str(), "--out".as_ref(), pred.as_os_str()],
            vec![
                "eval".as_ref(),
                "--pred".as_ref(),
                pred.as_os_str(),
                "--gt".as_ref(),
                data.as_os_str(),
                "--out".as_ref(),
                report.as_os_str(),
            ],
        ];
        for args in steps {
            let out = Command::new(bin).args(&args).env_remove("RELFUSE_SEED").output()?;
            if !out.status.success() {
                return Err(format!("relfuse {:?} failed: {}", args, String::from_utf8_lossy(&out.stderr)).into());
            }
        }
        Ok(())
    };
    let (a, b) = (tempfile::tempdir()?, tempfile::tempdir()?);
    run_pipeline(a.path())?;
    run_pipeline(b.path())?;
    let (ta, tb) = (tree_bytes(a.path())?, tree_bytes(b.path())?);
    let differing: Vec<&String> = ta.keys().filter(|k| tb.get(*k) != ta.get(*k)).collect();
    let manifest = relfuse::io::sha256_file(&a.path().join("data").join(relfuse::io::MANIFEST))?;
    Ok((
        ta.len() == tb.len() && differing.is_empty(),
        format!("{} files compared, {} differ, dataset manifest sha256 {}", ta.len(), differing.len(), &manifest[..16]),
    ))
}
