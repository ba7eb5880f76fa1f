//! Generalized divisive normalization (GDN).
//!
//! A linear stage followed by divisive normalization,
//!
//! ```text
//! z = H x,    y_i = z_i / (beta_i + Σ_j gamma_ij |z_j|^alpha_ij)^eps_i
//! ```
//!
//! fitted so that `y` is as close to a standard normal vector as possible.
//! Because the map is differentiable and invertible it induces a density
//! on `x`, which this crate evaluates, samples from and uses as a prior for
//! empirical-Bayes denoising.

pub mod cascade;
pub mod data;
pub mod density;
pub mod error;
pub mod linalg;
pub mod model_io;
pub mod objective;
pub mod params;
pub mod stats;
pub mod trainer;
pub mod transform;

mod kernel;

pub use cascade::{fit_cascade, forward_cascade, invert_cascade, CascadeFit, Stage};
pub use data::PatchSet;
pub use density::{denoise, log_density, psnr, sample, ssim, DenoiseConfig, ScoreMode};
pub use error::{GdnError, Result};
pub use model_io::{load_model, save_model, Model, Preprocessing};
pub use objective::{
    batch_gradient, grad_params, input_gradient, loss, BatchGradient, LossTerms, ParamGrad,
};
pub use params::{init_params, project_constraints, GdnParams, Tying, BETA_FLOOR};
pub use stats::{
    delta_j, marginal_radial_report, mutual_information, pairwise_mi_curve, EvalReport,
    MiCurveConfig, MiPoint,
};
pub use trainer::{
    fit, fit_from, fit_special_cases, EpochStats, FitConfig, FitReport, InitMode, VariantFit,
};
pub use transform::{
    check_pd, forward, inverse, inverse_report, jacobian_wrt_input, jacobian_wrt_z, InverseReport,
    PdCheck, TransformResult,
};
