//! Generalized score matching for node-conditional exponential families.
//!
//! The loss for target node j is quadratic in the parameters,
//! `(1/2n)‖V1α + V2θ‖² + (1/n)1ᵀ(U1α + U2θ)`, with design blocks built from a
//! pluggable [`ScoreModel`].

pub mod debias;
pub mod design;
pub mod fit;
pub mod model;

pub use debias::{sm_debias, SmDebiased, SmNodewise};
pub use design::{build_sm_design, sm_gradient, sm_loss, SmDesign};
pub use fit::{sm_cross_validate, sm_fit_lowdim, sm_fit_regularized, SmFit};
pub use model::{
    gaussian_score_model, nonneg_gaussian_score_model, score_model_by_name, GaussianModel,
    NonNegGaussianModel, ScoreModel,
};
