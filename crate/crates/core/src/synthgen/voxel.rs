use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::scene::VoxelGrid;

/// Canonical shape primitive inscribed in the unit cube.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrimitiveKind {
    Box,
    Ellipsoid,
}

impl PrimitiveKind {
    pub fn name(self) -> &'static str {
        match self {
            PrimitiveKind::Box => "box",
            PrimitiveKind::Ellipsoid => "ellipsoid",
        }
    }
}

/// Occupies every cell whose center lies inside the primitive.
pub fn voxelize_primitive(kind: PrimitiveKind, resolution: usize) -> VoxelGrid {
    let res = resolution.max(1);
    let center = |i: usize| (i as f64 + 0.5) / res as f64 - 0.5;
    let mut occupancy = Vec::with_capacity(res.pow(3));
    for z in 0..res {
        for y in 0..res {
            for x in 0..res {
                let (px, py, pz) = (center(x), center(y), center(z));
                let inside = match kind {
                    PrimitiveKind::Box => px.abs() <= 0.5 && py.abs() <= 0.5 && pz.abs() <= 0.5,
                    PrimitiveKind::Ellipsoid => px * px + py * py + pz * pz <= 0.25,
                };
                occupancy.push(if inside { 1.0 } else { 0.0 });
            }
        }
    }
    VoxelGrid::new(res, occupancy).expect("binary occupancy is valid")
}

/// Shared 32^3 grid for a primitive, built once per process.
pub fn primitive_shape(kind: PrimitiveKind) -> Arc<VoxelGrid> {
    static BOX: OnceLock<Arc<VoxelGrid>> = OnceLock::new();
    static ELLIPSOID: OnceLock<Arc<VoxelGrid>> = OnceLock::new();
    let cell = match kind {
        PrimitiveKind::Box => &BOX,
        PrimitiveKind::Ellipsoid => &ELLIPSOID,
    };
    cell.get_or_init(|| Arc::new(voxelize_primitive(kind, VoxelGrid::DEFAULT_RESOLUTION))).clone()
}
