//! End-to-end two-group analysis: per-node fits in each group, directional
//! edge tests, min-p combination and FDR control.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{build_design, scale_columns, BasisKind, BasisSpec};
use crate::data::{Dataset, EstimatorConfig};
use crate::debias::fit_debiased_node;
use crate::error::{DiffNetError, Result};
use crate::exec::{try_map_indexed, Execution};
use crate::inference::{test_adjusted, test_unadjusted, DifferentialNetwork, Direction, EdgeTest};
use crate::neighborhood::{fit_adjusted_ols, fit_unadjusted_ols};
use crate::score::{
    build_sm_design, gaussian_score_model, sm_cross_validate, sm_debias, sm_fit_lowdim,
    sm_fit_regularized, ScoreModel,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Estimator {
    /// Least squares; the plain partial-correlation model when the basis has
    /// no covariates.
    NeighborhoodOls,
    /// Cross-validated group LASSO followed by de-biasing.
    NeighborhoodGl,
    /// Unregularized score matching with a sandwich covariance.
    SmLowDim,
    /// Group-penalized score matching followed by de-biasing.
    SmReg,
}

impl Estimator {
    pub fn label(self) -> &'static str {
        match self {
            Estimator::NeighborhoodOls => "ols",
            Estimator::NeighborhoodGl => "gl",
            Estimator::SmLowDim => "sm-lowdim",
            Estimator::SmReg => "sm-reg",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        match s {
            "ols" => Some(Estimator::NeighborhoodOls),
            "gl" => Some(Estimator::NeighborhoodGl),
            "sm-lowdim" => Some(Estimator::SmLowDim),
            "sm-reg" => Some(Estimator::SmReg),
            _ => None,
        }
    }
}

/// Estimate and covariance of one coefficient block.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockEstimate {
    pub k: usize,
    pub estimate: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

/// Everything recorded about one node in one group.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeFit {
    pub node: usize,
    pub lambda: Option<f64>,
    pub omega: Option<f64>,
    pub converged: bool,
    pub blocks: Vec<BlockEstimate>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DifferentialRun {
    pub estimator: Estimator,
    pub basis: BasisKind,
    pub d: usize,
    pub node_names: Vec<String>,
    /// Per-group node fits, indexed by node.
    pub fits: [Vec<NodeFit>; 2],
    pub directional: Vec<EdgeTest>,
    pub network: DifferentialNetwork,
}

impl DifferentialRun {
    pub fn write_json<W: std::io::Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }
}

pub fn check_inputs(a: &Dataset, b: &Dataset, basis: &BasisSpec) -> Result<()> {
    if a.node_names() != b.node_names() {
        return Err(DiffNetError::NodeSetMismatch(format!(
            "{} nodes vs {} nodes",
            a.p(),
            b.p()
        )));
    }
    if a.q() != b.q() {
        return Err(DiffNetError::DimensionMismatch {
            expected: a.q(),
            got: b.q(),
        });
    }
    if basis.q() != a.q() {
        return Err(DiffNetError::DimensionMismatch {
            expected: a.q(),
            got: basis.q(),
        });
    }
    if a.p() < 2 {
        return Err(DiffNetError::InvalidInput("at least two nodes are required".into()));
    }
    Ok(())
}

fn required_samples(estimator: Estimator, p: usize, d: usize) -> Option<usize> {
    match estimator {
        Estimator::NeighborhoodOls => Some((p - 1) * d + 1),
        Estimator::SmLowDim => Some((p + 1) * d),
        _ => None,
    }
}

/// Fit every node of one group.
pub fn fit_group(
    data: &Dataset,
    basis: &BasisSpec,
    estimator: Estimator,
    model: &Arc<dyn ScoreModel>,
    cfg: &EstimatorConfig,
) -> Result<Vec<NodeFit>> {
    let (n, p, d) = (data.n(), data.p(), basis.d());
    if let Some(params) = required_samples(estimator, p, d) {
        if n <= params {
            return Err(DiffNetError::InsufficientSamples { n, params });
        }
    }
    if matches!(estimator, Estimator::NeighborhoodGl | Estimator::SmReg) {
        cfg.validate(n)?;
    }
    let inner = EstimatorConfig {
        execution: Execution::Sequential,
        ..cfg.clone()
    };
    let plain = basis.q() == 0 && d == 1;
    let bundle = match estimator {
        Estimator::NeighborhoodOls | Estimator::NeighborhoodGl => {
            let raw = build_design(data, basis)?;
            Some(if estimator == Estimator::NeighborhoodGl {
                scale_columns(&raw)?
            } else {
                raw
            })
        }
        _ => None,
    };
    let fit_node = |j: usize| -> Result<NodeFit> {
        let fit = match estimator {
            Estimator::NeighborhoodOls if plain => {
                let f = fit_unadjusted_ols(data, j)?;
                NodeFit {
                    node: j,
                    lambda: None,
                    omega: None,
                    converged: true,
                    blocks: f
                        .partners
                        .iter()
                        .map(|&k| {
                            let (e, c) = f.block(k).expect("partner present");
                            BlockEstimate { k, estimate: e, covariance: c }
                        })
                        .collect(),
                }
            }
            Estimator::NeighborhoodOls => {
                let f = fit_adjusted_ols(bundle.as_ref().expect("design built"), j)?;
                NodeFit {
                    node: j,
                    lambda: None,
                    omega: None,
                    converged: true,
                    blocks: f
                        .partners
                        .iter()
                        .map(|&k| {
                            let (e, c) = f.block(k).expect("partner present");
                            BlockEstimate { k, estimate: e, covariance: c }
                        })
                        .collect(),
                }
            }
            Estimator::NeighborhoodGl => {
                let f = fit_debiased_node(bundle.as_ref().expect("design built"), j, None, &inner)?;
                NodeFit {
                    node: j,
                    lambda: Some(f.fit.lambda),
                    omega: Some(f.omega),
                    converged: f.fit.converged,
                    blocks: f
                        .debiased
                        .into_iter()
                        .map(|c| BlockEstimate {
                            k: c.k,
                            estimate: c.alpha_check,
                            covariance: c.omega_check,
                        })
                        .collect(),
                }
            }
            Estimator::SmLowDim => {
                let des = build_sm_design(data, basis, model.as_ref(), j)?;
                let f = sm_fit_lowdim(&des)?;
                NodeFit {
                    node: j,
                    lambda: None,
                    omega: None,
                    converged: true,
                    blocks: (0..p)
                        .filter(|&k| k != j)
                        .map(|k| BlockEstimate {
                            k,
                            estimate: f.block(k),
                            covariance: f.covariance_block(k).expect("low-dimensional covariance"),
                        })
                        .collect(),
                }
            }
            Estimator::SmReg => {
                let des = build_sm_design(data, basis, model.as_ref(), j)?.scaled()?;
                let cv = sm_cross_validate(&des, &inner)?;
                let f = sm_fit_regularized(&des, cv.lambda_hat, None, &inner)?;
                let omega = inner.omega_for(p * d, n);
                let db = sm_debias(&f, &des, (omega, omega), None, &inner)?;
                NodeFit {
                    node: j,
                    lambda: Some(cv.lambda_hat),
                    omega: Some(omega),
                    converged: f.converged,
                    blocks: db
                        .coefficients
                        .into_iter()
                        .map(|c| BlockEstimate {
                            k: c.k,
                            estimate: c.alpha_check,
                            covariance: c.omega_check,
                        })
                        .collect(),
                }
            }
        };
        Ok(fit)
    };
    let module = match estimator {
        Estimator::NeighborhoodOls | Estimator::NeighborhoodGl => "neighborhood",
        _ => "score_matching",
    };
    try_map_indexed(cfg.execution, p, |j| fit_node(j).map_err(|e| e.at_node(module, j)))
}

/// Directional tests of every (j, k) pair from per-group node fits.
pub fn directional_tests(
    fits_a: &[NodeFit],
    fits_b: &[NodeFit],
    unadjusted: bool,
) -> Result<Vec<EdgeTest>> {
    let mut out = Vec::new();
    for (fa, fb) in fits_a.iter().zip(fits_b) {
        for (ba, bb) in fa.blocks.iter().zip(&fb.blocks) {
            let (j, k) = (fa.node, ba.k);
            let t = if unadjusted {
                test_unadjusted(ba.estimate[0], ba.covariance[(0, 0)], bb.estimate[0], bb.covariance[(0, 0)])
            } else {
                test_adjusted(&ba.estimate, &ba.covariance, &bb.estimate, &bb.covariance)
            };
            let mut t = t.map_err(|e| e.at_edge("inference", j, k))?;
            t.j = j;
            t.k = k;
            t.direction = if j < k { Direction::JonK } else { Direction::KonJ };
            out.push(t);
        }
    }
    Ok(out)
}

/// Full analysis with the Gaussian score model for the score-matching
/// estimators.
pub fn run_differential(
    a: &Dataset,
    b: &Dataset,
    basis: &BasisSpec,
    estimator: Estimator,
    cfg: &EstimatorConfig,
    kappa: f64,
) -> Result<DifferentialRun> {
    run_differential_with_model(a, b, basis, estimator, gaussian_score_model(), cfg, kappa)
}

pub fn run_differential_with_model(
    a: &Dataset,
    b: &Dataset,
    basis: &BasisSpec,
    estimator: Estimator,
    model: Arc<dyn ScoreModel>,
    cfg: &EstimatorConfig,
    kappa: f64,
) -> Result<DifferentialRun> {
    check_inputs(a, b, basis)?;
    if !(kappa > 0.0 && kappa <= 1.0) {
        return Err(DiffNetError::InvalidConfig(format!("kappa = {kappa} outside (0, 1]")));
    }
    let fa = fit_group(a, basis, estimator, &model, cfg)?;
    let fb = fit_group(b, basis, estimator, &model, cfg)?;
    let unadjusted =
        estimator == Estimator::NeighborhoodOls && basis.q() == 0 && basis.d() == 1;
    let directional = directional_tests(&fa, &fb, unadjusted)?;
    let network = DifferentialNetwork::from_directional(&directional, kappa);
    Ok(DifferentialRun {
        estimator,
        basis: basis.kind(),
        d: basis.d(),
        node_names: a.node_names().to_vec(),
        fits: [fa, fb],
        directional,
        network,
    })
}
