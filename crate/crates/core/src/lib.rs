//! Covariate-adjusted differential network analysis.
//!
//! Two groups of samples each carry p node measurements and q covariates.
//! For every node the conditional dependence on the other nodes is modeled
//! with coefficients that vary with the covariates through a basis expansion
//! φ(w). Networks are estimated per group by neighborhood selection (OLS or
//! group LASSO with de-biasing) or by generalized score matching, and
//! edge-wise equality of the two groups is tested with chi-squared
//! statistics and Benjamini–Yekutieli FDR control.
//!
//! ```no_run
//! use diffnet::{BasisSpec, EstimatorConfig, Group, Schema, load_dataset};
//! use diffnet::pipeline::{run_differential, Estimator};
//!
//! let schema = Schema::with_covariates(["age"]);
//! let a = load_dataset("group1.csv", Group::I, &schema)?;
//! let b = load_dataset("group2.csv", Group::II, &schema)?;
//! let basis = BasisSpec::linear(1);
//! let cfg = EstimatorConfig::default();
//! let run = run_differential(&a, &b, &basis, Estimator::NeighborhoodGl, &cfg, 0.05)?;
//! println!("{} edges rejected", run.network.rejected.len());
//! # Ok::<(), diffnet::DiffNetError>(())
//! ```

pub mod basis;
pub mod data;
pub mod debias;
pub mod error;
pub mod exec;
pub mod inference;
pub mod linalg;
pub mod neighborhood;
pub mod pipeline;
pub mod score;
pub mod selfcheck;
pub mod simulation;
pub mod solver;
pub mod special;

pub use basis::{build_design, expand, scale_columns, BasisKind, BasisSpec, DesignBundle};
pub use data::{load_dataset, read_dataset, Dataset, EstimatorConfig, Group, Schema};
pub use debias::{debias, fit_nodewise, DebiasSource, DebiasedCoefficient, NodewiseInverse};
pub use error::{DiffNetError, Result};
pub use exec::Execution;
pub use inference::{
    by_fdr, chisq_upper_tail, combine_min_p, test_adjusted, test_unadjusted, DifferentialNetwork,
    EdgeTest,
};
pub use neighborhood::{
    cross_validate, fit_adjusted_ols, fit_group_lasso, fit_unadjusted_ols, GroupLassoFit, OlsFit,
};
pub use score::{ScoreModel, SmDesign, SmFit};
