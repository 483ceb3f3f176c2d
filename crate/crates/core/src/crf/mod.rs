//! Pairwise mixture-of-Gaussians priors between object categories and L-BFGS refinement of
//! unary predictions under them.

mod gmm;
mod lbfgs;
mod prior;

pub use gmm::{fit_gmm, CompiledGmm, DiagGmm, GmmFit, EM_TOLERANCE, MAX_EM_ITERATIONS, VARIANCE_FLOOR};
pub use lbfgs::{minimize, LbfgsConfig, LbfgsResult, Termination};
pub use prior::{
    crf_energy, crf_optimize, fit_pairwise_prior, CrfConfig, CrfProblem, CrfResult, Modality, PriorKey, PriorSet,
    DEFAULT_COMPONENTS,
};
