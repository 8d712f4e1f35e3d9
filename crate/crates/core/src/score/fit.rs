use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::EstimatorConfig;
use crate::error::{DiffNetError, Result};
use crate::exec::{map_indexed, mix_seed};
use crate::linalg;
use crate::neighborhood::{argmin_prefer_first, lambda_grid, make_folds, CvResult};
use crate::solver::{prox_gradient, BlockSolver, GroupPenalty, SolverOptions};

use super::design::SmDesign;

/// Score-matching estimate for one target node, in raw coordinates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SmFit {
    pub target: usize,
    pub p: usize,
    pub d: usize,
    /// p·d stacked α blocks, the target's own block included.
    pub alpha: DVector<f64>,
    pub theta: DVector<f64>,
    /// Covariance of (α, θ); only for the unregularized fit.
    pub covariance: Option<DMatrix<f64>>,
    pub regularized: bool,
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
    pub kkt_residual: f64,
    /// (α, θ) in the coordinates of the design the fit was computed on.
    pub coef_internal: DVector<f64>,
}

impl SmFit {
    pub fn block(&self, k: usize) -> DVector<f64> {
        self.alpha.rows(k * self.d, self.d).clone_owned()
    }

    pub fn covariance_block(&self, k: usize) -> Option<DMatrix<f64>> {
        let s = k * self.d;
        self.covariance
            .as_ref()
            .map(|c| c.view((s, s), (self.d, self.d)).clone_owned())
    }
}

fn to_raw(design: &SmDesign, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let raw = x.component_div(&design.scales);
    let pd = design.p * design.d;
    (raw.rows(0, pd).clone_owned(), raw.rows(pd, design.d).clone_owned())
}

/// Penalty layout: p α groups then θ. The target's own block and θ are
/// unpenalized.
pub fn sm_penalty(design: &SmDesign) -> GroupPenalty {
    let mut pen = GroupPenalty::uniform(design.p + 1, design.d);
    pen.weights[design.target] = 0.0;
    pen.weights[design.p] = 0.0;
    pen
}

/// Rows of ξ: rᵢ·[V1 V2]ᵢ + [U1 U2]ᵢ with r = V1α + V2θ.
pub fn sm_xi(design: &SmDesign, x: &DVector<f64>) -> DMatrix<f64> {
    let v = design.v();
    let r = &v * x;
    let mut xi = design.u();
    for i in 0..xi.nrows() {
        for c in 0..xi.ncols() {
            xi[(i, c)] += r[i] * v[(i, c)];
        }
    }
    xi
}

/// Closed-form minimizer of the empirical loss with sandwich covariance.
pub fn sm_fit_lowdim(design: &SmDesign) -> Result<SmFit> {
    let n = design.n();
    let m = design.dim();
    if n <= m {
        return Err(DiffNetError::InsufficientSamples { n, params: m });
    }
    let (h, b) = design.quadratic();
    let ch = h
        .clone()
        .cholesky()
        .ok_or(DiffNetError::SingularGram { node: design.target })?;
    if linalg::condition_number(&h) > 1e14 {
        return Err(DiffNetError::SingularGram { node: design.target });
    }
    let x = ch.solve(&b);
    let a_hat = ch.inverse();
    let xi = sm_xi(design, &x);
    let b_hat = xi.tr_mul(&xi) / n as f64;
    let cov = linalg::symmetrize(&(&a_hat * b_hat * &a_hat / n as f64));
    let cov_raw = DMatrix::from_fn(m, m, |a, c| cov[(a, c)] / (design.scales[a] * design.scales[c]));
    let (alpha, theta) = to_raw(design, &x);
    let kkt = (&h * &x - &b).amax();
    Ok(SmFit {
        target: design.target,
        p: design.p,
        d: design.d,
        alpha,
        theta,
        covariance: Some(cov_raw),
        regularized: false,
        lambda: 0.0,
        iterations: 1,
        converged: true,
        kkt_residual: kkt,
        coef_internal: x,
    })
}

fn sm_options(cfg: &EstimatorConfig) -> SolverOptions {
    SolverOptions {
        tol: cfg.bcd_tol,
        max_iter: cfg.bcd_max_iter.max(1) * 5,
        kkt_tol: 0.5 * cfg.kkt_tol,
        record_objective: false,
    }
}

/// Group-penalized score matching by monotone accelerated proximal gradient.
pub fn sm_fit_regularized(
    design: &SmDesign,
    lambda: f64,
    warm: Option<&DVector<f64>>,
    cfg: &EstimatorConfig,
) -> Result<SmFit> {
    if !(lambda >= 0.0) {
        return Err(DiffNetError::NegativeLambda(lambda));
    }
    let (h, b) = design.quadratic();
    let pen = sm_penalty(design);
    let res = prox_gradient(&h, &b, &pen, lambda, warm, &sm_options(cfg));
    let (alpha, theta) = to_raw(design, &res.x);
    Ok(SmFit {
        target: design.target,
        p: design.p,
        d: design.d,
        alpha,
        theta,
        covariance: None,
        regularized: true,
        lambda,
        iterations: res.iterations,
        converged: res.converged,
        kkt_residual: res.kkt_residual,
        coef_internal: res.x,
    })
}

/// Smallest λ zeroing every penalized block: the largest penalized-group
/// gradient norm at the minimizer over the unpenalized blocks alone.
pub fn sm_lambda_max(h: &DMatrix<f64>, b: &DVector<f64>, pen: &GroupPenalty) -> f64 {
    let d = pen.group_size;
    let free: Vec<usize> = (0..pen.n_groups())
        .filter(|&g| pen.weights[g] == 0.0 && !pen.excluded[g])
        .flat_map(|g| g * d..(g + 1) * d)
        .collect();
    let mut x = DVector::zeros(h.nrows());
    if !free.is_empty() {
        let hff = DMatrix::from_fn(free.len(), free.len(), |a, c| h[(free[a], free[c])]);
        let bf = DMatrix::from_fn(free.len(), 1, |a, _| b[free[a]]);
        if let Some(sol) = linalg::spd_solve(&hff, &bf, 1e-10) {
            for (a, &i) in free.iter().enumerate() {
                x[i] = sol[(a, 0)];
            }
        }
    }
    let grad = h * &x - b;
    (0..pen.n_groups())
        .filter(|&g| pen.weights[g] > 0.0 && !pen.excluded[g])
        .map(|g| grad.rows(g * d, d).norm() / pen.weights[g])
        .fold(0.0, f64::max)
}

/// K-fold cross-validation of λ on the held-out score-matching loss.
///
/// Path fits inside the folds use block coordinate descent on the same
/// objective as [`sm_fit_regularized`].
pub fn sm_cross_validate(design: &SmDesign, cfg: &EstimatorConfig) -> Result<CvResult> {
    let n = design.n();
    cfg.validate(n)?;
    let (h, b) = design.quadratic();
    let pen = sm_penalty(design);
    let lambdas = match &cfg.lambda_grid {
        Some(g) => g.clone(),
        None => {
            let lmax = sm_lambda_max(&h, &b, &pen);
            if !(lmax > 0.0) {
                return Ok(CvResult {
                    lambda_hat: 0.0,
                    lambdas: vec![0.0],
                    cv_curve: vec![f64::NAN],
                });
            }
            lambda_grid(lmax, cfg.n_lambda, cfg.lambda_min_ratio)
        }
    };
    if lambdas.len() == 1 {
        return Ok(CvResult {
            lambda_hat: lambdas[0],
            lambdas,
            cv_curve: vec![f64::NAN],
        });
    }
    let folds = make_folds(n, cfg.cv_folds, mix_seed(cfg.seed ^ 0x5c0e, design.target as u64))?;
    let v = design.v();
    let u = design.u();
    let nf = n as f64;
    let opts = SolverOptions {
        tol: cfg.bcd_tol,
        max_iter: cfg.bcd_max_iter,
        kkt_tol: 0.5 * cfg.kkt_tol,
        record_objective: false,
    };
    let per_fold: Vec<Vec<f64>> = map_indexed(cfg.execution, folds.len(), |f| {
        let idx = &folds[f];
        let n_test = idx.len() as f64;
        let v_test = linalg::select_rows(&v, idx);
        let u_test = linalg::select_rows(&u, idx);
        let h_test = v_test.tr_mul(&v_test) / n_test;
        let b_test = -u_test.row_sum().transpose() / n_test;
        let n_train = nf - n_test;
        let h_train = (&h * nf - &h_test * n_test) / n_train;
        let b_train = (&b * nf - &b_test * n_test) / n_train;
        let solver = BlockSolver::new(&h_train, design.d);
        let mut warm: Option<DVector<f64>> = None;
        lambdas
            .iter()
            .map(|&lambda| {
                let res = solver.solve(&b_train, &pen, lambda, warm.as_ref(), &opts);
                let loss = 0.5 * res.x.dot(&(&h_test * &res.x)) - b_test.dot(&res.x);
                warm = Some(res.x);
                loss
            })
            .collect()
    });
    let cv_curve: Vec<f64> = (0..lambdas.len())
        .map(|i| per_fold.iter().map(|e| e[i]).sum::<f64>() / folds.len() as f64)
        .collect();
    let best = argmin_prefer_first(&cv_curve);
    Ok(CvResult {
        lambda_hat: lambdas[best],
        lambdas,
        cv_curve,
    })
}
