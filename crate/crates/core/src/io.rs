//! On-disk formats: dataset and prediction directories, RLE voxel files,
//! codebooks, priors and evaluation tables.
//!
//! A dataset directory holds `scenes/<scene_id>.json`, `shapes/<hash>.rle`,
//! `codebooks.json` and a `manifest.json` written last. Prediction directories
//! have the same layout with prediction records in place of scenes.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::binning::{Codebooks, DirectionBinTable, RotationBinTable};
use crate::error::{Error, Result};
use crate::fusion::{FusedObject, FusedScene};
use crate::metrics::{ApResult, Detection, EvalReport};
use crate::scene::{
    rotation_from_wxyz, rotation_to_wxyz, Box2d, Camera, GroundTruthObject, Mode, ObjectId, Pose, RelativePrediction,
    SceneInstance, UnaryPrediction, Vec3, VoxelGrid,
};
use crate::synthgen::{LayoutConfig, NoiseProfile};

pub const DATASET_FORMAT: &str = "relfuse-dataset/1";
pub const PREDICTION_FORMAT: &str = "relfuse-predictions/1";
pub const MANIFEST: &str = "manifest.json";
pub const CODEBOOKS: &str = "codebooks.json";
const SCENES_DIR: &str = "scenes";
const SHAPES_DIR: &str = "shapes";
const RLE_MAGIC: &[u8; 4] = b"RVX1";

// ---------------------------------------------------------------------------
// generic helpers

/// Pretty JSON with a trailing newline. Floats use the shortest representation
/// that parses back to the same bits.
pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::json("<memory>", e))?;
    s.push('\n');
    Ok(s)
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    write_file(path, to_json_string(value)?)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

/// Hash of the compact JSON encoding of a value.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let s = serde_json::to_string(value).map_err(|e| Error::json("<memory>", e))?;
    Ok(sha256_hex(s.as_bytes()))
}

fn check_file_stem(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(format!("scene id {id:?} is not usable as a file name")))
    }
}

// ---------------------------------------------------------------------------
// voxel RLE

/// `RVX1`, resolution, run count, then alternating empty/occupied run lengths
/// (all u32 little-endian), starting with empty cells. Cells are stored as occupied iff >= 0.5.
pub fn encode_rle(grid: &VoxelGrid) -> Vec<u8> {
    let mut runs: Vec<u32> = Vec::new();
    let mut current = false;
    let mut len = 0u32;
    for i in 0..grid.values().len() {
        let occ = grid.is_occupied(i);
        if occ != current {
            runs.push(len);
            current = occ;
            len = 0;
        }
        len += 1;
    }
    runs.push(len);
    let mut out = Vec::with_capacity(12 + 4 * runs.len());
    out.extend_from_slice(RLE_MAGIC);
    out.extend_from_slice(&(grid.resolution() as u32).to_le_bytes());
    out.extend_from_slice(&(runs.len() as u32).to_le_bytes());
    for r in runs {
        out.extend_from_slice(&r.to_le_bytes());
    }
    out
}

pub fn decode_rle(bytes: &[u8]) -> Result<VoxelGrid> {
    let bad = |msg: &str| Error::invalid(format!("voxel file: {msg}"));
    if bytes.len() < 12 || &bytes[..4] != RLE_MAGIC {
        return Err(bad("missing RVX1 header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let res = word(4) as usize;
    let count = word(8) as usize;
    if bytes.len() != 12 + 4 * count {
        return Err(bad("run count does not match file length"));
    }
    let cells = res.checked_pow(3).ok_or_else(|| bad("resolution too large"))?;
    let mut occupancy = Vec::with_capacity(cells);
    for k in 0..count {
        let value = if k % 2 == 0 { 0.0 } else { 1.0 };
        let run = word(12 + 4 * k) as usize;
        if occupancy.len() + run > cells {
            return Err(bad("runs exceed the grid size"));
        }
        occupancy.resize(occupancy.len() + run, value);
    }
    if occupancy.len() != cells {
        return Err(bad("runs do not cover the grid"));
    }
    VoxelGrid::new(res, occupancy)
}

/// Relative paths of shape files keyed by grid allocation, built before parallel writes.
#[derive(Default)]
struct ShapeRefs {
    by_ptr: HashMap<usize, String>,
    files: BTreeMap<String, Vec<u8>>,
}

impl ShapeRefs {
    fn add(&mut self, grid: &Arc<VoxelGrid>) {
        let key = Arc::as_ptr(grid) as usize;
        if self.by_ptr.contains_key(&key) {
            return;
        }
        let bytes = encode_rle(grid);
        let path = format!("{SHAPES_DIR}/{}.rle", &sha256_hex(&bytes)[..16]);
        self.files.entry(path.clone()).or_insert(bytes);
        self.by_ptr.insert(key, path);
    }

    fn get(&self, grid: &Arc<VoxelGrid>) -> String {
        self.by_ptr[&(Arc::as_ptr(grid) as usize)].clone()
    }

    fn write(&self, root: &Path) -> Result<Vec<FileHash>> {
        self.files
            .iter()
            .map(|(rel, bytes)| {
                write_file(&root.join(rel), bytes)?;
                Ok(FileHash { path: rel.clone(), sha256: sha256_hex(bytes) })
            })
            .collect()
    }
}

/// Loads every referenced shape once so that objects sharing a file share the grid.
fn load_shapes<'a>(root: &Path, refs: impl Iterator<Item = &'a String>) -> Result<HashMap<String, Arc<VoxelGrid>>> {
    let mut out = HashMap::new();
    for r in refs {
        if !out.contains_key(r) {
            if r.contains("..") || Path::new(r).is_absolute() {
                return Err(Error::invalid(format!("shape_ref {r:?} leaves the data directory")));
            }
            let path = root.join(r);
            let grid = decode_rle(&fs::read(&path).map_err(|e| Error::io(&path, e))?)?;
            out.insert(r.clone(), Arc::new(grid));
        }
    }
    Ok(out)
}

fn shape_for(shapes: &HashMap<String, Arc<VoxelGrid>>, r: &str) -> Result<Arc<VoxelGrid>> {
    shapes.get(r).cloned().ok_or_else(|| Error::MissingShape(r.to_string()))
}

// ---------------------------------------------------------------------------
// scene records

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtObjectRecord {
    pub id: ObjectId,
    pub category: String,
    pub translation: [f64; 3],
    pub log_scale: [f64; 3],
    pub rotation_quat: [f64; 4],
    pub symmetry_order: u8,
    pub box2d: [f64; 4],
    pub shape_ref: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnaryRecord {
    pub id: ObjectId,
    pub category: String,
    pub translation: [f64; 3],
    pub log_scale: [f64; 3],
    pub rotation_prob: Vec<f64>,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub box2d: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeRecord {
    pub source: ObjectId,
    pub target: ObjectId,
    pub rel_translation: [f64; 3],
    pub rel_log_scale: [f64; 3],
    pub direction_prob: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub scene_id: String,
    pub camera: Camera,
    pub gt_objects: Vec<GtObjectRecord>,
    pub unary: Vec<UnaryRecord>,
    pub relative: Vec<RelativeRecord>,
}

fn arr3(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

impl SceneRecord {
    fn from_scene(scene: &SceneInstance, shapes: &ShapeRefs) -> Self {
        Self {
            scene_id: scene.scene_id.clone(),
            camera: scene.camera,
            gt_objects: scene
                .gt_objects
                .iter()
                .map(|g| GtObjectRecord {
                    id: g.object_id,
                    category: g.category.clone(),
                    translation: arr3(&g.pose.translation),
                    log_scale: arr3(&g.pose.log_scale),
                    rotation_quat: rotation_to_wxyz(&g.pose.rotation),
                    symmetry_order: g.symmetry_order,
                    box2d: g.box2d.to_array(),
                    shape_ref: shapes.get(&g.shape),
                })
                .collect(),
            unary: scene
                .unary
                .iter()
                .map(|u| UnaryRecord {
                    id: u.object_id,
                    category: u.category.clone(),
                    translation: arr3(&u.translation),
                    log_scale: arr3(&u.log_scale),
                    rotation_prob: u.rotation_prob.clone(),
                    score: u.score,
                    box2d: u.box2d.map(|b| b.to_array()),
                    shape_ref: u.shape.as_ref().map(|s| shapes.get(s)),
                })
                .collect(),
            relative: scene
                .relative
                .iter()
                .map(|r| RelativeRecord {
                    source: r.source_id,
                    target: r.target_id,
                    rel_translation: arr3(&r.rel_translation),
                    rel_log_scale: arr3(&r.rel_log_scale),
                    direction_prob: r.direction_prob.clone(),
                })
                .collect(),
        }
    }

    fn shape_refs(&self) -> impl Iterator<Item = &String> {
        self.gt_objects.iter().map(|g| &g.shape_ref).chain(self.unary.iter().filter_map(|u| u.shape_ref.as_ref()))
    }

    fn into_scene(self, shapes: &HashMap<String, Arc<VoxelGrid>>) -> Result<SceneInstance> {
        let gt_objects = self
            .gt_objects
            .into_iter()
            .map(|g| {
                let object = GroundTruthObject {
                    object_id: g.id,
                    category: g.category,
                    pose: Pose::new(
                        Vec3::from(g.translation),
                        Vec3::from(g.log_scale),
                        rotation_from_wxyz(g.rotation_quat)?.into_inner(),
                    )?,
                    symmetry_order: g.symmetry_order,
                    shape: shape_for(shapes, &g.shape_ref)?,
                    box2d: Box2d::from_array(g.box2d)?,
                };
                object.validate()?;
                Ok(object)
            })
            .collect::<Result<Vec<_>>>()?;
        let unary = self
            .unary
            .into_iter()
            .map(|u| {
                Ok(UnaryPrediction {
                    object_id: u.id,
                    category: u.category,
                    translation: Vec3::from(u.translation),
                    log_scale: Vec3::from(u.log_scale),
                    rotation_prob: u.rotation_prob,
                    score: u.score,
                    box2d: u.box2d.map(Box2d::from_array).transpose()?,
                    shape: u.shape_ref.map(|r| shape_for(shapes, &r)).transpose()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let relative = self
            .relative
            .into_iter()
            .map(|r| RelativePrediction {
                source_id: r.source,
                target_id: r.target,
                rel_translation: Vec3::from(r.rel_translation),
                rel_log_scale: Vec3::from(r.rel_log_scale),
                direction_prob: r.direction_prob,
            })
            .collect();
        let scene = SceneInstance { scene_id: self.scene_id, camera: self.camera, gt_objects, unary, relative };
        scene.validate()?;
        Ok(scene)
    }
}

// ---------------------------------------------------------------------------
// codebooks

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CodebooksRecord {
    rotation: Vec<[f64; 4]>,
    direction: Vec<[f64; 3]>,
}

pub fn codebooks_to_json(codebooks: &Codebooks) -> Result<String> {
    to_json_string(&CodebooksRecord {
        rotation: codebooks.rotation.to_json(),
        direction: codebooks.direction.to_json(),
    })
}

pub fn write_codebooks(path: &Path, codebooks: &Codebooks) -> Result<()> {
    write_file(path, codebooks_to_json(codebooks)?)
}

pub fn read_codebooks(path: &Path) -> Result<Codebooks> {
    let r: CodebooksRecord = read_json(path)?;
    Ok(Codebooks {
        rotation: RotationBinTable::from_json(&r.rotation)?,
        direction: DirectionBinTable::from_json(&r.direction)?,
    })
}

// ---------------------------------------------------------------------------
// manifests

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

/// How a dataset was generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub seed: u64,
    pub mode: Mode,
    pub layout: LayoutConfig,
    pub noise: NoiseProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub n_scenes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation: Option<Generation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_sha256: Option<String>,
    /// Scene files in dataset order.
    pub scenes: Vec<String>,
    /// Every data file, sorted by path.
    pub files: Vec<FileHash>,
}

impl DatasetManifest {
    /// Hash of the manifest file contents; equal hashes mean identical datasets.
    pub fn digest(&self) -> Result<String> {
        Ok(sha256_hex(to_json_string(self)?.as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionManifest {
    pub format: String,
    pub method: String,
    /// Method settings as given on the command line.
    pub config: serde_json::Value,
    pub scenes: Vec<String>,
    pub files: Vec<FileHash>,
}

fn scene_path(id: &str) -> Result<String> {
    check_file_stem(id)?;
    Ok(format!("{SCENES_DIR}/{id}.json"))
}

fn write_records<T: Serialize + Sync>(root: &Path, records: &[(String, T)]) -> Result<Vec<FileHash>> {
    records
        .par_iter()
        .map(|(rel, record)| {
            let text = to_json_string(record)?;
            write_file(&root.join(rel), &text)?;
            Ok(FileHash { path: rel.clone(), sha256: sha256_hex(text.as_bytes()) })
        })
        .collect()
}

fn check_unique(paths: &[String]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for p in paths {
        if !seen.insert(p) {
            return Err(Error::invalid(format!("duplicate scene file {p}")));
        }
    }
    Ok(())
}

/// Writes scenes, shapes and codebooks under `dir`, then the manifest.
pub fn write_dataset(
    dir: &Path,
    scenes: &[SceneInstance],
    codebooks: &Codebooks,
    generation: Option<&Generation>,
) -> Result<DatasetManifest> {
    let mut shapes = ShapeRefs::default();
    for s in scenes {
        s.validate()?;
        s.gt_objects.iter().for_each(|g| shapes.add(&g.shape));
        s.unary.iter().filter_map(|u| u.shape.as_ref()).for_each(|g| shapes.add(g));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = scenes.iter().map(|s| scene_path(&s.scene_id)).collect::<Result<Vec<_>>>()?;
    check_unique(&paths)?;
    let records: Vec<(String, SceneRecord)> =
        paths.iter().cloned().zip(scenes.iter().map(|s| SceneRecord::from_scene(s, &shapes))).collect();
    let mut files = write_records(dir, &records)?;
    files.extend(shapes.write(dir)?);
    let cb = codebooks_to_json(codebooks)?;
    write_file(&dir.join(CODEBOOKS), &cb)?;
    files.push(FileHash { path: CODEBOOKS.into(), sha256: sha256_hex(cb.as_bytes()) });
    files.sort();
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        n_scenes: scenes.len(),
        layout_sha256: generation.map(|g| config_hash(&g.layout)).transpose()?,
        noise_sha256: generation.map(|g| config_hash(&g.noise)).transpose()?,
        generation: generation.cloned(),
        scenes: paths,
        files,
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn read_dataset_manifest(dir: &Path) -> Result<DatasetManifest> {
    let m: DatasetManifest = read_json(&dir.join(MANIFEST))?;
    if m.format != DATASET_FORMAT {
        return Err(Error::invalid(format!("{}: unsupported dataset format {:?}", dir.display(), m.format)));
    }
    Ok(m)
}

/// Reads the scenes listed in a dataset manifest, in order.
pub fn read_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<SceneInstance>)> {
    let manifest = read_dataset_manifest(dir)?;
    let records: Vec<SceneRecord> =
        manifest.scenes.par_iter().map(|rel| read_json(&dir.join(rel))).collect::<Result<_>>()?;
    let shapes = load_shapes(dir, records.iter().flat_map(|r| r.shape_refs()))?;
    let scenes = records.into_par_iter().map(|r| r.into_scene(&shapes)).collect::<Result<Vec<_>>>()?;
    Ok((manifest, scenes))
}

/// Re-hashes every listed file and reports the first mismatch.
pub fn verify_files(dir: &Path, files: &[FileHash]) -> Result<()> {
    for f in files {
        let actual = sha256_file(&dir.join(&f.path))?;
        if actual != f.sha256 {
            return Err(Error::invalid(format!("{}: hash mismatch", f.path)));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// predictions

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedObjectRecord {
    pub id: ObjectId,
    pub category: String,
    pub score: f64,
    pub translation: [f64; 3],
    pub log_scale: [f64; 3],
    pub rotation_quat: [f64; 4],
    pub rotation_bin: usize,
    pub rotation_costs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub box2d: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub scene_id: String,
    pub objects: Vec<PredictedObjectRecord>,
}

/// A method's output for one scene: poses plus what evaluation needs.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedScene {
    pub fused: FusedScene,
    pub detections: Vec<Detection>,
}

impl PredictedScene {
    pub fn new(scene: &SceneInstance, fused: FusedScene) -> Result<Self> {
        let detections = crate::metrics::detections(scene, &fused)?;
        Ok(Self { fused, detections })
    }

    pub fn scene_id(&self) -> &str {
        &self.fused.scene_id
    }
}

pub fn write_predictions(
    dir: &Path,
    method: &str,
    config: serde_json::Value,
    scenes: &[PredictedScene],
) -> Result<PredictionManifest> {
    let mut shapes = ShapeRefs::default();
    for s in scenes {
        if s.fused.objects.len() != s.detections.len() {
            return Err(Error::IdMismatch(format!("{}: poses and detections differ in length", s.scene_id())));
        }
        s.detections.iter().filter_map(|d| d.shape.as_ref()).for_each(|g| shapes.add(g));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = scenes.iter().map(|s| scene_path(s.scene_id())).collect::<Result<Vec<_>>>()?;
    check_unique(&paths)?;
    let records: Vec<(String, PredictionRecord)> = paths
        .iter()
        .cloned()
        .zip(scenes.iter().map(|s| {
            PredictionRecord {
                scene_id: s.scene_id().to_string(),
                objects: s
                    .fused
                    .objects
                    .iter()
                    .zip(&s.detections)
                    .map(|(o, d)| PredictedObjectRecord {
                        id: o.object_id,
                        category: d.category.clone(),
                        score: d.score,
                        translation: arr3(&o.translation),
                        log_scale: arr3(&o.log_scale),
                        rotation_quat: rotation_to_wxyz(&o.rotation),
                        rotation_bin: o.rotation_bin,
                        rotation_costs: o.rotation_costs.clone(),
                        box2d: d.box2d.map(|b| b.to_array()),
                        shape_ref: d.shape.as_ref().map(|g| shapes.get(g)),
                    })
                    .collect(),
            }
        }))
        .collect();
    let mut files = write_records(dir, &records)?;
    files.extend(shapes.write(dir)?);
    files.sort();
    let manifest =
        PredictionManifest { format: PREDICTION_FORMAT.into(), method: method.into(), config, scenes: paths, files };
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn read_predictions(dir: &Path) -> Result<(PredictionManifest, Vec<PredictedScene>)> {
    let manifest: PredictionManifest = read_json(&dir.join(MANIFEST))?;
    if manifest.format != PREDICTION_FORMAT {
        return Err(Error::invalid(format!("{}: unsupported prediction format {:?}", dir.display(), manifest.format)));
    }
    let records: Vec<PredictionRecord> =
        manifest.scenes.par_iter().map(|rel| read_json(&dir.join(rel))).collect::<Result<_>>()?;
    let shapes = load_shapes(dir, records.iter().flat_map(|r| r.objects.iter().filter_map(|o| o.shape_ref.as_ref())))?;
    let scenes = records
        .into_iter()
        .map(|r| {
            let mut objects = Vec::with_capacity(r.objects.len());
            let mut detections = Vec::with_capacity(r.objects.len());
            for o in r.objects {
                let rotation = rotation_from_wxyz(o.rotation_quat)?;
                let shape = o.shape_ref.as_deref().map(|s| shape_for(&shapes, s)).transpose()?;
                detections.push(Detection {
                    object_id: o.id,
                    category: o.category,
                    score: o.score,
                    translation: Vec3::from(o.translation),
                    log_scale: Vec3::from(o.log_scale),
                    rotation,
                    box2d: o.box2d.map(Box2d::from_array).transpose()?,
                    shape,
                });
                objects.push(FusedObject {
                    object_id: o.id,
                    translation: Vec3::from(o.translation),
                    log_scale: Vec3::from(o.log_scale),
                    rotation_costs: o.rotation_costs,
                    rotation_bin: o.rotation_bin,
                    rotation,
                });
            }
            Ok(PredictedScene { fused: FusedScene { scene_id: r.scene_id, objects }, detections })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, scenes))
}

// ---------------------------------------------------------------------------
// tables

fn fmt_f(v: f64) -> String {
    format!("{v}")
}

/// Comparison table: one row per method with median/mean/%-within per component and AP per criteria set.
pub fn comparison_csv(rows: &[(String, EvalReport)]) -> String {
    let mut out = String::from(
        "method,trans_median,trans_mean,trans_pct,rot_median,rot_mean,rot_pct,scale_median,scale_mean,scale_pct,shape_median,shape_mean,shape_pct",
    );
    let criteria: Vec<String> =
        rows.first().map(|(_, r)| r.detection.iter().map(|a| a.criteria.to_string()).collect()).unwrap_or_default();
    for c in &criteria {
        let _ = write!(out, ",ap_{c}");
    }
    out.push('\n');
    for (name, report) in rows {
        let st = &report.stats;
        out.push_str(name);
        for c in [&st.translation, &st.rotation, &st.scale] {
            let _ = write!(out, ",{},{},{}", fmt_f(c.median), fmt_f(c.mean), fmt_f(c.pct_within));
        }
        match &st.shape {
            Some(c) => {
                let _ = write!(out, ",{},{},{}", fmt_f(c.median), fmt_f(c.mean), fmt_f(c.pct_within));
            }
            None => out.push_str(",,,"),
        }
        for a in &report.detection {
            let _ = write!(out, ",{}", fmt_f(a.ap));
        }
        out.push('\n');
    }
    out
}

pub fn pr_csv(ap: &ApResult) -> String {
    let mut out = String::from("recall,precision\n");
    for p in &ap.pr {
        let _ = writeln!(out, "{},{}", fmt_f(p.recall), fmt_f(p.precision));
    }
    out
}

/// File name of the PR curve for a criteria set, e.g. `pr_box2d+trans.csv`.
pub fn pr_file_name(ap: &ApResult) -> String {
    format!("pr_{}.csv", ap.criteria)
}
