//! Node-conditional regressions: unadjusted OLS, varying-coefficient OLS and
//! the group LASSO with K-fold cross-validation.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::{population_sd, unscale_coefficients, DesignBundle};
use crate::data::{Dataset, EstimatorConfig};
use crate::error::{DiffNetError, Result};
use crate::exec::{map_indexed, mix_seed};
use crate::linalg;
use crate::solver::{BlockSolver, GroupPenalty, SolverOptions};

/// Least-squares fit of one node on the others.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OlsFit {
    pub target: usize,
    pub partners: Vec<usize>,
    /// Block size (1 for the unadjusted model).
    pub d: usize,
    pub coefficients: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub residual_variance: f64,
}

impl OlsFit {
    /// Coefficient block and covariance block for partner node `k`.
    pub fn block(&self, k: usize) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let slot = self.partners.iter().position(|&l| l == k)?;
        let s = slot * self.d;
        Some((
            self.coefficients.rows(s, self.d).clone_owned(),
            self.covariance.view((s, s), (self.d, self.d)).clone_owned(),
        ))
    }
}

fn ols_solve(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    dof: usize,
    j: usize,
) -> Result<(DVector<f64>, DMatrix<f64>, f64)> {
    let gram = z.transpose() * z;
    let ch = gram
        .clone()
        .cholesky()
        .ok_or(DiffNetError::SingularDesign { node: j })?;
    if linalg::condition_number(&gram) > 1e14 {
        return Err(DiffNetError::SingularDesign { node: j });
    }
    let coef = ch.solve(&(z.transpose() * y));
    let resid = y - z * &coef;
    let sigma2 = resid.norm_squared() / dof as f64;
    let cov = linalg::symmetrize(&(ch.inverse() * sigma2));
    Ok((coef, cov, sigma2))
}

/// Regress node `j` on the other nodes after removing column means.
pub fn fit_unadjusted_ols(data: &Dataset, j: usize) -> Result<OlsFit> {
    let (n, p) = (data.n(), data.p());
    if j >= p {
        return Err(DiffNetError::InvalidInput(format!("node {j} out of range")));
    }
    if n <= p {
        return Err(DiffNetError::InsufficientSamples { n, params: p });
    }
    let mut x = data.x().clone();
    for mut col in x.column_iter_mut() {
        let m = col.mean();
        col.add_scalar_mut(-m);
    }
    let partners: Vec<usize> = (0..p).filter(|&k| k != j).collect();
    let z = DMatrix::from_fn(n, p - 1, |i, c| x[(i, partners[c])]);
    let y = x.column(j).clone_owned();
    let (coef, cov, s2) = ols_solve(&z, &y, n - (p - 1), j)?;
    Ok(OlsFit {
        target: j,
        partners,
        d: 1,
        coefficients: coef,
        covariance: cov,
        residual_variance: s2,
    })
}

/// Stacked least squares of the conditionally centered node `j` on all other
/// interaction blocks. Coefficients are reported in raw V coordinates.
pub fn fit_adjusted_ols(bundle: &DesignBundle, j: usize) -> Result<OlsFit> {
    let (n, p, d) = (bundle.n(), bundle.p(), bundle.d());
    if j >= p {
        return Err(DiffNetError::InvalidInput(format!("node {j} out of range")));
    }
    let params = (p - 1) * d;
    if n <= params {
        return Err(DiffNetError::InsufficientSamples { n, params });
    }
    let z = bundle.stacked_without(j);
    let y = bundle.xc.column(j).clone_owned();
    let partners = bundle.partners(j);
    let (coef, cov, s2) = ols_solve(&z, &y, n - params, j)?;
    let (coef, cov) = if bundle.scaled {
        let inv = DVector::from_fn(params, |i, _| {
            1.0 / bundle.column_scales[partners[i / d]][i % d]
        });
        let c = unscale_coefficients(bundle, &partners, &coef);
        let cov = DMatrix::from_fn(params, params, |a, b| cov[(a, b)] * inv[a] * inv[b]);
        (c, cov)
    } else {
        (coef, cov)
    };
    Ok(OlsFit {
        target: j,
        partners,
        d,
        coefficients: coef,
        covariance: cov,
        residual_variance: s2,
    })
}

/// Regression problem for one target node in Gram form.
#[derive(Debug, Clone)]
pub struct NodeDesign {
    pub target: usize,
    pub partners: Vec<usize>,
    pub d: usize,
    /// n × (p−1)d stacked predictors.
    pub z: DMatrix<f64>,
    pub y: DVector<f64>,
    /// (1/n) ZᵀZ
    pub gram: DMatrix<f64>,
    /// (1/n) Zᵀy
    pub zty: DVector<f64>,
}

impl NodeDesign {
    pub fn new(bundle: &DesignBundle, j: usize) -> Result<Self> {
        if j >= bundle.p() {
            return Err(DiffNetError::InvalidInput(format!("node {j} out of range")));
        }
        let z = bundle.stacked_without(j);
        let y = bundle.xc.column(j).clone_owned();
        Ok(Self::from_parts(j, bundle.partners(j), bundle.d(), z, y))
    }

    pub fn from_parts(
        target: usize,
        partners: Vec<usize>,
        d: usize,
        z: DMatrix<f64>,
        y: DVector<f64>,
    ) -> Self {
        let n = z.nrows() as f64;
        let gram = z.tr_mul(&z) / n;
        let zty = z.tr_mul(&y) / n;
        Self {
            target,
            partners,
            d,
            z,
            y,
            gram,
            zty,
        }
    }

    pub fn n(&self) -> usize {
        self.z.nrows()
    }

    pub fn n_groups(&self) -> usize {
        self.partners.len()
    }

    /// Smallest λ at which every group is zero: maxₖ ‖(1/n)V_kᵀy‖₂.
    pub fn lambda_max(&self) -> f64 {
        group_norms(&self.zty, self.d).into_iter().fold(0.0, f64::max)
    }
}

fn group_norms(v: &DVector<f64>, d: usize) -> Vec<f64> {
    (0..v.len() / d).map(|g| v.rows(g * d, d).norm()).collect()
}

/// Result of a group LASSO fit for one target node, in the coordinates of the
/// bundle it was fit on.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupLassoFit {
    pub target: usize,
    pub partners: Vec<usize>,
    pub d: usize,
    pub lambda: f64,
    pub alpha_tilde: DVector<f64>,
    pub active_set: Vec<usize>,
    pub df_hat: f64,
    pub residual_variance_tilde: f64,
    pub residual: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub kkt_residual: f64,
    /// Whether the design was column-scaled.
    pub scaled: bool,
}

impl GroupLassoFit {
    /// α̃ⱼₖ for partner node `k`.
    pub fn block(&self, k: usize) -> Option<DVector<f64>> {
        let slot = self.partners.iter().position(|&l| l == k)?;
        Some(self.alpha_tilde.rows(slot * self.d, self.d).clone_owned())
    }

    /// Coefficients mapped back to raw V coordinates.
    pub fn alpha_raw(&self, bundle: &DesignBundle) -> DVector<f64> {
        unscale_coefficients(bundle, &self.partners, &self.alpha_tilde)
    }
}

pub(crate) fn solver_options(cfg: &EstimatorConfig) -> SolverOptions {
    SolverOptions {
        tol: cfg.bcd_tol,
        max_iter: cfg.bcd_max_iter,
        kkt_tol: 0.5 * cfg.kkt_tol,
        record_objective: false,
    }
}

/// Group-LASSO degrees of freedom, unclamped:
/// Σ_active [1 + (d−1)‖α̃_k‖/‖z̃_k‖] with z̃_k = b_k − (Hα)_k + H_kk α_k.
fn breheny_huang_df(
    gram: &DMatrix<f64>,
    zty: &DVector<f64>,
    hx: &DVector<f64>,
    x: &DVector<f64>,
    d: usize,
) -> f64 {
    let mut df = 0.0;
    for g in 0..x.len() / d {
        let a = x.rows(g * d, d);
        let an = a.norm();
        if an > 0.0 {
            let hgg = gram.view((g * d, g * d), (d, d));
            let zn = (zty.rows(g * d, d) - hx.rows(g * d, d) + hgg * a).norm();
            df += 1.0 + (d as f64 - 1.0) * if zn > 0.0 { an / zn } else { 1.0 };
        }
    }
    df
}

fn finish_fit(
    design: &NodeDesign,
    lambda: f64,
    res: crate::solver::SolverResult,
    scaled: bool,
) -> GroupLassoFit {
    let d = design.d;
    let n = design.n();
    let x = res.x;
    let residual = &design.y - &design.z * &x;
    let active = (0..design.n_groups())
        .filter(|&g| x.rows(g * d, d).norm() > 0.0)
        .map(|g| design.partners[g])
        .collect();
    let df = breheny_huang_df(&design.gram, &design.zty, &res.hx, &x, d).min(n as f64 - 1.0);
    let tau = residual.norm_squared() / (n as f64 - df);
    GroupLassoFit {
        target: design.target,
        partners: design.partners.clone(),
        d,
        lambda,
        alpha_tilde: x,
        active_set: active,
        df_hat: df,
        residual_variance_tilde: tau,
        residual,
        iterations: res.iterations,
        converged: res.converged,
        kkt_residual: res.kkt_residual,
        scaled,
    }
}

/// Group LASSO for target node `j` at a single λ.
pub fn fit_group_lasso(
    bundle: &DesignBundle,
    j: usize,
    lambda: f64,
    cfg: &EstimatorConfig,
) -> Result<GroupLassoFit> {
    let design = NodeDesign::new(bundle, j)?;
    fit_group_lasso_design(&design, lambda, None, cfg, bundle.scaled)
}

pub fn fit_group_lasso_design(
    design: &NodeDesign,
    lambda: f64,
    warm: Option<&DVector<f64>>,
    cfg: &EstimatorConfig,
    scaled: bool,
) -> Result<GroupLassoFit> {
    if !(lambda >= 0.0) {
        return Err(DiffNetError::NegativeLambda(lambda));
    }
    let solver = BlockSolver::new(&design.gram, design.d);
    let pen = GroupPenalty::uniform(design.n_groups(), design.d);
    let res = solver.solve(&design.zty, &pen, lambda, warm, &solver_options(cfg));
    Ok(finish_fit(design, lambda, res, scaled))
}

/// Warm-started fits along a descending λ path.
pub fn fit_group_lasso_path(
    design: &NodeDesign,
    lambdas: &[f64],
    cfg: &EstimatorConfig,
    scaled: bool,
) -> Result<Vec<GroupLassoFit>> {
    let solver = BlockSolver::new(&design.gram, design.d);
    let pen = GroupPenalty::uniform(design.n_groups(), design.d);
    let opts = solver_options(cfg);
    let mut warm: Option<DVector<f64>> = None;
    let mut out = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        if !(lambda >= 0.0) {
            return Err(DiffNetError::NegativeLambda(lambda));
        }
        let res = solver.solve(&design.zty, &pen, lambda, warm.as_ref(), &opts);
        warm = Some(res.x.clone());
        out.push(finish_fit(design, lambda, res, scaled));
    }
    Ok(out)
}

/// `n` log-spaced points from `max` down to `ratio · max`.
pub fn lambda_grid(max: f64, n: usize, ratio: f64) -> Vec<f64> {
    if n <= 1 {
        return vec![max];
    }
    let (hi, lo) = (max.ln(), (max * ratio).ln());
    (0..n)
        .map(|i| (hi + (lo - hi) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvResult {
    pub lambda_hat: f64,
    pub lambdas: Vec<f64>,
    /// Mean held-out squared error per λ.
    pub cv_curve: Vec<f64>,
}

/// Seeded random permutation cut into `k` contiguous folds.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let folds: Vec<Vec<usize>> = (0..k)
        .map(|f| idx[f * n / k..(f + 1) * n / k].to_vec())
        .collect();
    for (f, fold) in folds.iter().enumerate() {
        if fold.len() < 2 {
            return Err(DiffNetError::FoldTooSmall {
                fold: f,
                size: fold.len(),
            });
        }
    }
    Ok(folds)
}

/// Index of the smallest non-NaN error; on ties the earliest (largest λ)
/// wins. Returns 0 when every entry is NaN.
pub(crate) fn argmin_prefer_first(errs: &[f64]) -> usize {
    let mut best: Option<usize> = None;
    for (i, &e) in errs.iter().enumerate() {
        if !e.is_nan() && best.is_none_or(|b| e < errs[b]) {
            best = Some(i);
        }
    }
    best.unwrap_or(0)
}

/// Training-row Gram pieces for one fold, rescaled by training-row column sds.
struct FoldProblem {
    gram: DMatrix<f64>,
    zty: DVector<f64>,
    inv_scale: DVector<f64>,
    z_test: DMatrix<f64>,
    y_test: DVector<f64>,
}

fn fold_problem(design: &NodeDesign, fold: &[usize]) -> FoldProblem {
    let n = design.n();
    let m = design.z.ncols();
    let n_train = (n - fold.len()) as f64;
    let z_test = linalg::select_rows(&design.z, fold);
    let y_test = linalg::select_rows_vec(&design.y, fold);
    let nf = n as f64;
    let gram_train = (&design.gram * nf - z_test.tr_mul(&z_test)) / n_train;
    let zty_train = (&design.zty * nf - z_test.tr_mul(&y_test)) / n_train;
    let mut in_fold = vec![false; n];
    for &i in fold {
        in_fold[i] = true;
    }
    let inv_scale = DVector::from_fn(m, |c, _| {
        let col = design
            .z
            .column(c)
            .iter()
            .enumerate()
            .filter(|(i, _)| !in_fold[*i])
            .map(|(_, &v)| v)
            .collect::<Vec<_>>();
        let sd = population_sd(col.iter().copied());
        if sd > 0.0 {
            1.0 / sd
        } else {
            1.0
        }
    });
    let gram = DMatrix::from_fn(m, m, |a, b| gram_train[(a, b)] * inv_scale[a] * inv_scale[b]);
    let zty = zty_train.component_mul(&inv_scale);
    FoldProblem {
        gram,
        zty,
        inv_scale,
        z_test,
        y_test,
    }
}

/// K-fold cross-validation of λ for target node `j`.
///
/// A fold's path stops at the first λ whose training fit is saturated
/// (df̂ ≥ n_train − 1); grid points past that have a NaN CV error and are
/// never selected.
pub fn cross_validate(
    bundle: &DesignBundle,
    j: usize,
    cfg: &EstimatorConfig,
) -> Result<CvResult> {
    let design = NodeDesign::new(bundle, j)?;
    cross_validate_design(&design, cfg)
}

pub fn cross_validate_design(design: &NodeDesign, cfg: &EstimatorConfig) -> Result<CvResult> {
    let n = design.n();
    cfg.validate(n)?;
    let lambdas = match &cfg.lambda_grid {
        Some(g) => g.clone(),
        None => {
            let lmax = design.lambda_max();
            if !(lmax > 0.0) {
                return Ok(CvResult {
                    lambda_hat: 0.0,
                    lambdas: vec![0.0],
                    cv_curve: vec![design.y.norm_squared() / n as f64],
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
    let folds = make_folds(n, cfg.cv_folds, mix_seed(cfg.seed, design.target as u64))?;
    let opts = solver_options(cfg);
    let pen = GroupPenalty::uniform(design.n_groups(), design.d);
    let per_fold: Vec<Vec<f64>> = map_indexed(cfg.execution, folds.len(), |f| {
        let fp = fold_problem(design, &folds[f]);
        let solver = BlockSolver::new(&fp.gram, design.d);
        let n_train = (n - folds[f].len()) as f64;
        let mut warm: Option<DVector<f64>> = None;
        let mut errs = vec![f64::NAN; lambdas.len()];
        for (i, &lambda) in lambdas.iter().enumerate() {
            let res = solver.solve(&fp.zty, &pen, lambda, warm.as_ref(), &opts);
            // the path stops once the training fit saturates
            if breheny_huang_df(&fp.gram, &fp.zty, &res.hx, &res.x, design.d) >= n_train - 1.0 {
                break;
            }
            let beta = res.x.component_mul(&fp.inv_scale);
            errs[i] = (&fp.y_test - &fp.z_test * beta).norm_squared() / fp.y_test.len() as f64;
            warm = Some(res.x);
        }
        errs
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
