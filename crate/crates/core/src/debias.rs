//! De-biased group LASSO: nodewise group LASSO for an approximate inverse of
//! the Gram matrix, the one-step corrected block α̌ⱼₖ and its covariance Ω̌ⱼₖ.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::DesignBundle;
use crate::data::EstimatorConfig;
use crate::error::{DiffNetError, Result};
use crate::exec::try_map_indexed;
use crate::linalg;
use crate::neighborhood::{
    cross_validate_design, fit_group_lasso_design, solver_options, CvResult, GroupLassoFit,
    NodeDesign,
};
use crate::solver::{BlockSolver, GroupPenalty};

/// Largest admissible condition number of C̃ⱼₖ.
pub const MAX_CONDITION: f64 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DebiasSource {
    NeighborhoodSelection,
    ScoreMatching,
}

/// Nodewise regression of V_k on the remaining blocks V_l, l ≠ j, k.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodewiseInverse {
    pub j: usize,
    pub k: usize,
    /// (l, Γ̃ⱼₖₗ) pairs, each Γ d × d.
    pub gamma: Vec<(usize, DMatrix<f64>)>,
    pub c_tilde: DMatrix<f64>,
    pub omega: f64,
    /// V_k − Σ_l V_l Γ̃ⱼₖₗ, n × d.
    pub residual_matrix: DMatrix<f64>,
    pub kkt_residual: f64,
    pub converged: bool,
    pub scaled: bool,
}

/// De-biased coefficient block in raw coordinates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DebiasedCoefficient {
    pub j: usize,
    pub k: usize,
    pub alpha_check: DVector<f64>,
    pub omega_check: DMatrix<f64>,
    pub alpha_tilde: DVector<f64>,
    pub source: DebiasSource,
}

impl DebiasedCoefficient {
    /// Components of α̌ divided by their standard errors.
    pub fn standardized(&self) -> DVector<f64> {
        DVector::from_fn(self.alpha_check.len(), |c, _| {
            self.alpha_check[c] / self.omega_check[(c, c)].sqrt()
        })
    }
}

/// Shared state for all nodewise regressions of one target node: the Gram
/// matrix of V₋ⱼ and its block eigen-decompositions.
pub struct NodewiseSolver<'a> {
    design: &'a NodeDesign,
    solver: BlockSolver<'a>,
    scaled: bool,
}

impl<'a> NodewiseSolver<'a> {
    pub fn new(design: &'a NodeDesign, scaled: bool) -> Self {
        Self {
            design,
            solver: BlockSolver::new(&design.gram, design.d),
            scaled,
        }
    }

    pub fn fit(&self, k: usize, omega: f64, cfg: &EstimatorConfig) -> Result<NodewiseInverse> {
        let design = self.design;
        let j = design.target;
        let d = design.d;
        let slot = design.partners.iter().position(|&l| l == k).ok_or_else(|| {
            DiffNetError::InvalidInput(format!("node {k} is not a partner of {j}"))
        })?;
        if !(omega > 0.0) {
            return Err(DiffNetError::InvalidInput(format!("omega must be positive, got {omega}")));
        }
        let mut pen = GroupPenalty::uniform(design.n_groups(), d);
        pen.excluded[slot] = true;
        let opts = solver_options(cfg);
        let m = design.z.ncols();
        // one vector group LASSO per column of the d × d blocks
        let mut coef = DMatrix::zeros(m, d);
        let mut kkt: f64 = 0.0;
        let mut converged = true;
        for c in 0..d {
            let b = design.gram.column(slot * d + c).clone_owned();
            let res = self.solver.solve(&b, &pen, omega, None, &opts);
            kkt = kkt.max(res.kkt_residual);
            converged &= res.converged;
            coef.set_column(c, &res.x);
        }
        let vk = design.z.columns(slot * d, d);
        let residual_matrix = vk - &design.z * &coef;
        let n = design.n() as f64;
        let c_tilde = residual_matrix.tr_mul(&vk) / n;
        let cond = linalg::condition_number(&c_tilde);
        if !(cond < MAX_CONDITION) {
            return Err(DiffNetError::IllConditionedC { j, k, cond });
        }
        let gamma = design
            .partners
            .iter()
            .enumerate()
            .filter(|&(g, _)| g != slot)
            .map(|(g, &l)| (l, coef.rows(g * d, d).clone_owned()))
            .collect();
        Ok(NodewiseInverse {
            j,
            k,
            gamma,
            c_tilde,
            omega,
            residual_matrix,
            kkt_residual: kkt,
            converged,
            scaled: self.scaled,
        })
    }
}

pub fn fit_nodewise(
    bundle: &DesignBundle,
    j: usize,
    k: usize,
    omega: f64,
    cfg: &EstimatorConfig,
) -> Result<NodewiseInverse> {
    let design = NodeDesign::new(bundle, j)?;
    NodewiseSolver::new(&design, bundle.scaled).fit(k, omega, cfg)
}

/// One-step bias correction of block k of `fit` using `nodewise`.
pub fn debias(
    fit: &GroupLassoFit,
    nodewise: &NodewiseInverse,
    bundle: &DesignBundle,
) -> Result<DebiasedCoefficient> {
    let (j, k) = (nodewise.j, nodewise.k);
    if fit.target != j {
        return Err(DiffNetError::ScaleMismatch(format!(
            "fit targets node {} but nodewise targets {j}",
            fit.target
        )));
    }
    if fit.scaled != nodewise.scaled || fit.scaled != bundle.scaled {
        return Err(DiffNetError::ScaleMismatch(
            "fit, nodewise inverse and bundle use different column scaling".into(),
        ));
    }
    let n = fit.residual.len();
    if nodewise.residual_matrix.nrows() != n || bundle.n() != n {
        return Err(DiffNetError::ScaleMismatch("row counts differ".into()));
    }
    let alpha_k = fit
        .block(k)
        .ok_or_else(|| DiffNetError::InvalidInput(format!("node {k} not in fit")))?;
    let nf = n as f64;
    let c_inv = linalg::inverse(&nodewise.c_tilde).ok_or(DiffNetError::IllConditionedC {
        j,
        k,
        cond: f64::INFINITY,
    })?;
    let r = &nodewise.residual_matrix;
    let correction = &c_inv * r.tr_mul(&fit.residual) / nf;
    let alpha_check = &alpha_k + correction;
    let middle = r.tr_mul(r);
    let omega = &c_inv * middle * c_inv.transpose() * (fit.residual_variance_tilde / (nf * nf));
    let (alpha_check, omega, alpha_tilde) = if bundle.scaled {
        let s = &bundle.column_scales[k];
        let d = s.len();
        (
            alpha_check.component_div(s),
            DMatrix::from_fn(d, d, |a, b| omega[(a, b)] / (s[a] * s[b])),
            alpha_k.component_div(s),
        )
    } else {
        (alpha_check, omega, alpha_k)
    };
    Ok(DebiasedCoefficient {
        j,
        k,
        alpha_check,
        omega_check: linalg::symmetrize(&omega),
        alpha_tilde,
        source: DebiasSource::NeighborhoodSelection,
    })
}

/// Cross-validated group LASSO for node `j` followed by de-biasing of every
/// requested partner block.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DebiasedNodeFit {
    pub fit: GroupLassoFit,
    pub cv: CvResult,
    pub omega: f64,
    pub debiased: Vec<DebiasedCoefficient>,
}

/// Fit node `j` on a scaled bundle. `partners` restricts which blocks are
/// de-biased (all partners when `None`).
pub fn fit_debiased_node(
    bundle: &DesignBundle,
    j: usize,
    partners: Option<&[usize]>,
    cfg: &EstimatorConfig,
) -> Result<DebiasedNodeFit> {
    let design = NodeDesign::new(bundle, j)?;
    let cv = cross_validate_design(&design, cfg)?;
    let fit = fit_group_lasso_design(&design, cv.lambda_hat, None, cfg, bundle.scaled)?;
    let omega = cfg.omega_for(design.z.ncols(), design.n());
    let targets: Vec<usize> = match partners {
        Some(ks) => ks.to_vec(),
        None => design.partners.clone(),
    };
    let nodewise = NodewiseSolver::new(&design, bundle.scaled);
    let debiased = try_map_indexed(cfg.execution, targets.len(), |i| {
        let k = targets[i];
        nodewise
            .fit(k, omega, cfg)
            .and_then(|nw| debias(&fit, &nw, bundle))
            .map_err(|e| e.at_edge("debiasing", j, k))
    })?;
    Ok(DebiasedNodeFit {
        fit,
        cv,
        omega,
        debiased,
    })
}
