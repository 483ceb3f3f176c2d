use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::voxel::{primitive_shape, PrimitiveKind};
use crate::error::{Error, Result};
use crate::scene::{
    check_symmetry_order, yaw, yaw_facing, Box2d, Camera, GroundTruthObject, Pose, SceneInstance, Vec3,
};

pub const MAX_PLACEMENT_ATTEMPTS: usize = 1000;
pub const MAX_LAYOUT_RESTARTS: usize = 50;

/// Minimum depth of any object corner, meters.
const MIN_DEPTH: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySpec {
    pub name: String,
    /// Per-axis extent range (width, height, depth) in meters.
    pub extent_min: [f64; 3],
    pub extent_max: [f64; 3],
    pub symmetry_order: u8,
    pub primitive: PrimitiveKind,
    /// Relative sampling frequency.
    pub weight: f64,
    /// Depth is tied to width.
    #[serde(default)]
    pub square_footprint: bool,
}

/// Places every `subject` at a horizontal center distance in `[min_dist, max_dist]`
/// from some `anchor`, optionally turned to face it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementRule {
    pub subject: String,
    pub anchor: String,
    pub min_dist: f64,
    pub max_dist: f64,
    #[serde(default)]
    pub facing: bool,
}

/// Room floor area in camera coordinates (x lateral, z depth).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoomBounds {
    pub x: [f64; 2],
    pub z: [f64; 2],
}

/// Intrinsics plus the range of camera heights above the floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub intrinsics: Camera,
    pub height_range: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutConfig {
    pub categories: Vec<CategorySpec>,
    pub rules: Vec<PlacementRule>,
    /// Inclusive range.
    pub objects_per_scene: [usize; 2],
    pub room: RoomBounds,
    pub camera: CameraModel,
    /// When set, every yaw is snapped to a multiple of this many degrees.
    #[serde(default)]
    pub yaw_step_deg: Option<f64>,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        Self::indoor()
    }
}

fn category(
    name: &str,
    extent_min: [f64; 3],
    extent_max: [f64; 3],
    symmetry_order: u8,
    primitive: PrimitiveKind,
    weight: f64,
    square_footprint: bool,
) -> CategorySpec {
    CategorySpec { name: name.into(), extent_min, extent_max, symmetry_order, primitive, weight, square_footprint }
}

impl LayoutConfig {
    /// Living/dining room layout: chairs around tables, ottomans and a TV facing a sofa.
    pub fn indoor() -> Self {
        use PrimitiveKind::{Box, Ellipsoid};
        Self {
            categories: vec![
                category("table", [0.8, 0.7, 0.8], [1.2, 0.8, 1.2], 4, Box, 1.0, true),
                category("chair", [0.4, 0.8, 0.4], [0.55, 1.0, 0.55], 1, Box, 2.0, false),
                category("sofa", [1.6, 0.7, 0.8], [2.2, 0.9, 1.0], 1, Box, 0.7, false),
                category("tv", [0.8, 0.5, 0.06], [1.2, 0.7, 0.15], 1, Box, 0.5, false),
                category("ottoman", [0.5, 0.35, 0.4], [0.9, 0.45, 0.6], 2, Box, 0.5, false),
                category("lamp", [0.3, 1.2, 0.3], [0.45, 1.7, 0.45], 4, Ellipsoid, 0.4, true),
            ],
            rules: vec![
                PlacementRule {
                    subject: "chair".into(),
                    anchor: "table".into(),
                    min_dist: 0.6,
                    max_dist: 1.3,
                    facing: true,
                },
                PlacementRule {
                    subject: "ottoman".into(),
                    anchor: "sofa".into(),
                    min_dist: 0.8,
                    max_dist: 1.5,
                    facing: true,
                },
                PlacementRule {
                    subject: "tv".into(),
                    anchor: "sofa".into(),
                    min_dist: 1.8,
                    max_dist: 3.5,
                    facing: true,
                },
            ],
            objects_per_scene: [3, 6],
            room: RoomBounds { x: [-2.5, 2.5], z: [2.0, 7.5] },
            camera: CameraModel { intrinsics: Camera::default(), height_range: [1.3, 1.7] },
            yaw_step_deg: None,
        }
    }

    /// Indoor layout with exactly five objects per scene.
    pub fn benchmark() -> Self {
        Self { objects_per_scene: [5, 5], ..Self::indoor() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.categories.is_empty() {
            return Err(Error::invalid("layout has no categories"));
        }
        for c in &self.categories {
            check_symmetry_order(c.symmetry_order)?;
            for i in 0..3 {
                if !(c.extent_min[i] > 0.0 && c.extent_min[i] <= c.extent_max[i] && c.extent_max[i].is_finite()) {
                    return Err(Error::invalid(format!("category {} has an invalid extent range", c.name)));
                }
            }
            if !(c.weight >= 0.0) {
                return Err(Error::invalid(format!("category {} has a negative weight", c.name)));
            }
        }
        if self.categories.iter().map(|c| c.weight).sum::<f64>() <= 0.0 {
            return Err(Error::invalid("category weights sum to zero"));
        }
        for r in &self.rules {
            if self.category(&r.subject).is_none() || self.category(&r.anchor).is_none() {
                return Err(Error::invalid(format!("rule {} -> {} names an unknown category", r.subject, r.anchor)));
            }
            if !(0.0 <= r.min_dist && r.min_dist <= r.max_dist && r.max_dist.is_finite()) {
                return Err(Error::invalid(format!("rule {} -> {} has an invalid interval", r.subject, r.anchor)));
            }
        }
        let [lo, hi] = self.objects_per_scene;
        if lo > hi {
            return Err(Error::invalid("objects_per_scene range is empty"));
        }
        let finite = self.room.x.iter().chain(&self.room.z).all(|v| v.is_finite());
        if !finite || self.room.x[0] >= self.room.x[1] || self.room.z[0] >= self.room.z[1] {
            return Err(Error::invalid("room bounds must be finite and non-empty"));
        }
        let [h0, h1] = self.camera.height_range;
        if !(h0 > 0.0 && h0 <= h1) {
            return Err(Error::invalid("camera height range is invalid"));
        }
        if let Some(step) = self.yaw_step_deg {
            if !(step > 0.0) {
                return Err(Error::invalid("yaw step must be positive"));
            }
        }
        Ok(())
    }

    pub fn category(&self, name: &str) -> Option<&CategorySpec> {
        self.categories.iter().find(|c| c.name == name)
    }

    fn is_anchor(&self, name: &str) -> bool {
        self.rules.iter().any(|r| r.anchor == name)
    }

    pub(crate) fn sample_category<R: Rng + ?Sized>(&self, rng: &mut R) -> &CategorySpec {
        let total: f64 = self.categories.iter().map(|c| c.weight).sum();
        let mut x = rng.random::<f64>() * total;
        for c in &self.categories {
            if x < c.weight {
                return c;
            }
            x -= c.weight;
        }
        self.categories.iter().rev().find(|c| c.weight > 0.0).expect("positive total weight")
    }

    fn snap_yaw(&self, angle: f64) -> f64 {
        match self.yaw_step_deg {
            Some(step) => {
                let step = step.to_radians();
                (angle / step).round() * step
            }
            None => angle,
        }
    }
}

pub(crate) fn sample_extents<R: Rng + ?Sized>(spec: &CategorySpec, rng: &mut R) -> Vec3 {
    let mut e = Vec3::zeros();
    for i in 0..3 {
        e[i] = if spec.extent_min[i] < spec.extent_max[i] {
            rng.random_range(spec.extent_min[i]..=spec.extent_max[i])
        } else {
            spec.extent_min[i]
        };
    }
    if spec.square_footprint {
        e.z = e.x;
    }
    e
}

/// Pinhole projection of the object's cuboid, clipped to the image.
pub fn project_box(gt: &GroundTruthObject, camera: &Camera) -> Result<Box2d> {
    project_pose(&gt.pose, camera)
}

pub(crate) fn project_pose(pose: &Pose, camera: &Camera) -> Result<Box2d> {
    let (mut xmin, mut ymin, mut xmax, mut ymax) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for c in pose.corners() {
        if !(c.z > 0.0) {
            return Err(Error::Unprojectable { z: c.z });
        }
        let (u, v) = camera.project(&c);
        xmin = xmin.min(u);
        xmax = xmax.max(u);
        ymin = ymin.min(v);
        ymax = ymax.max(v);
    }
    Box2d::new(
        xmin.clamp(0.0, camera.width),
        ymin.clamp(0.0, camera.height),
        xmax.clamp(0.0, camera.width),
        ymax.clamp(0.0, camera.height),
    )
}

/// Horizontal (x, z) half-extents of the axis-aligned footprint of a pose.
fn footprint(pose: &Pose) -> (f64, f64) {
    let corners = pose.corners();
    let (mut x0, mut x1, mut z0, mut z1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for c in corners {
        x0 = x0.min(c.x);
        x1 = x1.max(c.x);
        z0 = z0.min(c.z);
        z1 = z1.max(c.z);
    }
    ((x1 - x0) / 2.0, (z1 - z0) / 2.0)
}

fn footprints_overlap(a: &Pose, b: &Pose) -> bool {
    let (ax, az) = footprint(a);
    let (bx, bz) = footprint(b);
    (a.translation.x - b.translation.x).abs() < ax + bx && (a.translation.z - b.translation.z).abs() < az + bz
}

/// Whether the object center projects into the image and every corner is in front of the camera.
pub(crate) fn in_frustum(pose: &Pose, camera: &Camera) -> bool {
    if pose.corners().iter().any(|c| c.z < MIN_DEPTH) {
        return false;
    }
    let (u, v) = camera.project(&pose.translation);
    camera.contains_pixel(u, v)
}

/// Horizontal distance between two object centers.
pub fn horizontal_distance(a: &Vec3, b: &Vec3) -> f64 {
    ((a.x - b.x).powi(2) + (a.z - b.z).powi(2)).sqrt()
}

/// Samples a ground-truth scene (predictions left empty).
///
/// Each object gets [`MAX_PLACEMENT_ATTEMPTS`] rejection-sampling attempts; when one cannot be
/// placed the whole layout is redrawn, up to [`MAX_LAYOUT_RESTARTS`] times.
pub fn sample_scene(layout: &LayoutConfig, seed: u64) -> Result<SceneInstance> {
    layout.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last = None;
    for _ in 0..MAX_LAYOUT_RESTARTS {
        match place_objects(layout, &mut rng) {
            Ok(objects) => {
                return Ok(SceneInstance {
                    scene_id: format!("scene_{seed:016x}"),
                    camera: layout.camera.intrinsics,
                    gt_objects: objects,
                    unary: Vec::new(),
                    relative: Vec::new(),
                })
            }
            Err(e @ Error::LayoutInfeasible(_)) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

fn place_objects(layout: &LayoutConfig, rng: &mut ChaCha8Rng) -> Result<Vec<GroundTruthObject>> {
    let camera = layout.camera.intrinsics;
    let [h0, h1] = layout.camera.height_range;
    // floor plane is y = camera height (y points down)
    let floor_y = if h0 < h1 { rng.random_range(h0..=h1) } else { h0 };
    let [lo, hi] = layout.objects_per_scene;
    let n = rng.random_range(lo..=hi);
    let mut specs: Vec<&CategorySpec> = (0..n).map(|_| layout.sample_category(rng)).collect();
    specs.sort_by_key(|c| !layout.is_anchor(&c.name));

    let mut objects: Vec<GroundTruthObject> = Vec::with_capacity(n);
    for (id, spec) in specs.into_iter().enumerate() {
        let rule =
            layout.rules.iter().find(|r| r.subject == spec.name && objects.iter().any(|o| o.category == r.anchor));
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let extents = sample_extents(spec, rng);
            let (x, z, angle) = match rule {
                Some(rule) => {
                    let anchors: Vec<&GroundTruthObject> =
                        objects.iter().filter(|o| o.category == rule.anchor).collect();
                    let anchor = anchors[rng.random_range(0..anchors.len())].pose.translation;
                    let dist = rng.random_range(rule.min_dist..=rule.max_dist);
                    let phi = rng.random_range(0.0..std::f64::consts::TAU);
                    let (x, z) = (anchor.x + dist * phi.cos(), anchor.z + dist * phi.sin());
                    let angle = if rule.facing {
                        yaw_facing(&Vec3::new(anchor.x - x, 0.0, anchor.z - z))
                    } else {
                        rng.random_range(0.0..std::f64::consts::TAU)
                    };
                    (x, z, angle)
                }
                None => (
                    rng.random_range(layout.room.x[0]..=layout.room.x[1]),
                    rng.random_range(layout.room.z[0]..=layout.room.z[1]),
                    rng.random_range(0.0..std::f64::consts::TAU),
                ),
            };
            if !(layout.room.x[0]..=layout.room.x[1]).contains(&x)
                || !(layout.room.z[0]..=layout.room.z[1]).contains(&z)
            {
                continue;
            }
            let translation = Vec3::new(x, floor_y - extents.y / 2.0, z);
            let pose = Pose::from_extents(translation, extents, yaw(layout.snap_yaw(angle)))?;
            if !in_frustum(&pose, &camera) || objects.iter().any(|o| footprints_overlap(&o.pose, &pose)) {
                continue;
            }
            placed = Some(pose);
            break;
        }
        let pose = placed.ok_or_else(|| {
            Error::LayoutInfeasible(format!("could not place {} after {MAX_PLACEMENT_ATTEMPTS} attempts", spec.name))
        })?;
        let mut object = GroundTruthObject {
            object_id: id as u32,
            category: spec.name.clone(),
            pose,
            symmetry_order: spec.symmetry_order,
            shape: primitive_shape(spec.primitive),
            box2d: Box2d::new(0.0, 0.0, 0.0, 0.0)?,
        };
        object.box2d = project_box(&object, &camera)?;
        objects.push(object);
    }
    Ok(objects)
}
