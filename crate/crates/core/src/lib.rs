//! Fusion of independent per-object 3D pose predictions with pairwise relative
//! predictions into globally consistent scene layouts.
//!
//! The crate is organized around the pipeline:
//!
//! - [`scene`]: poses, predictions and scene containers;
//! - [`binning`]: rotation and direction codebooks;
//! - [`fusion`]: least-squares translation/scale fusion and rotation message passing;
//! - [`losses`]: unary, relative and joint losses with gradient checks;
//! - [`metrics`]: per-component errors, detection AP and summary tables;
//! - [`synthgen`]: a synthetic indoor-scene and noisy-prediction generator;
//! - [`crf`]: a mixture-of-Gaussians pairwise prior baseline refined with L-BFGS;
//! - [`io`] and [`cli`]: file formats and the `relfuse` command line.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod binning;
pub mod cli;
pub mod crf;
pub mod error;
pub mod fusion;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod scene;
pub mod synthgen;

pub use binning::{Codebooks, DirectionBinTable, RotationBinTable};
pub use error::{Error, Result};
pub use fusion::{fuse_scene, FusedScene, FusionConfig};
pub use scene::{GroundTruthObject, Mode, Pose, RelativePrediction, SceneInstance, UnaryPrediction, VoxelGrid};
