use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::EstimatorConfig;
use crate::debias::{DebiasSource, DebiasedCoefficient, MAX_CONDITION};
use crate::error::{DiffNetError, Result};
use crate::exec::try_map_indexed;
use crate::linalg;
use crate::neighborhood::solver_options;
use crate::solver::{BlockSolver, GroupPenalty};

use super::design::SmDesign;
use super::fit::{sm_xi, SmFit};

/// Nodewise pieces for one α block: the stacked regression coefficients
/// (Γ̃ blocks and Δ̃, zero at the block itself) and C̃.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SmNodewise {
    pub k: usize,
    /// (p+1)d × d; rows of block k are zero.
    pub coef: DMatrix<f64>,
    pub c_tilde: DMatrix<f64>,
    pub kkt_residual: f64,
}

/// De-biased score-matching blocks with the pieces needed to reproduce them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SmDebiased {
    pub coefficients: Vec<DebiasedCoefficient>,
    pub nodewise: Vec<SmNodewise>,
    /// D̃ from the θ-on-α regression.
    pub d_tilde: DMatrix<f64>,
    pub omegas: (f64, f64),
}

fn regress_block(
    solver: &BlockSolver,
    h: &DMatrix<f64>,
    group: usize,
    d: usize,
    omega: f64,
    excluded: &[usize],
    cfg: &EstimatorConfig,
) -> (DMatrix<f64>, f64) {
    let m = h.nrows();
    let mut pen = GroupPenalty::uniform(m / d, d);
    pen.excluded[group] = true;
    for &g in excluded {
        pen.excluded[g] = true;
    }
    let opts = solver_options(cfg);
    let mut coef = DMatrix::zeros(m, d);
    let mut kkt: f64 = 0.0;
    for c in 0..d {
        let b = h.column(group * d + c).clone_owned();
        let res = solver.solve(&b, &pen, omega, None, &opts);
        kkt = kkt.max(res.kkt_residual);
        coef.set_column(c, &res.x);
    }
    (coef, kkt)
}

/// `E_g − coef`: the (p+1)d × d matrix whose transpose is the row block of M̃
/// before the C̃⁻¹ factor.
fn contrast(coef: &DMatrix<f64>, group: usize, d: usize) -> DMatrix<f64> {
    let mut g = -coef.clone();
    for c in 0..d {
        g[(group * d + c, c)] += 1.0;
    }
    g
}

/// De-bias the α blocks of a regularized fit.
///
/// Each block k is regressed on all other α blocks and on the θ block with
/// penalty ω₁; the θ block is regressed on the α blocks with penalty ω₂.
/// Returns blocks for `partners` (all k ≠ j when `None`) in raw coordinates.
pub fn sm_debias(
    fit: &SmFit,
    design: &SmDesign,
    omegas: (f64, f64),
    partners: Option<&[usize]>,
    cfg: &EstimatorConfig,
) -> Result<SmDebiased> {
    let (p, d, j) = (design.p, design.d, design.target);
    if fit.target != j || fit.coef_internal.len() != design.dim() {
        return Err(DiffNetError::ScaleMismatch(
            "score-matching fit and design disagree".into(),
        ));
    }
    if !(omegas.0 > 0.0 && omegas.1 > 0.0) {
        return Err(DiffNetError::InvalidInput("omegas must be positive".into()));
    }
    let n = design.n() as f64;
    let (h, b) = design.quadratic();
    let solver = BlockSolver::new(&h, d);
    let x = &fit.coef_internal;
    let grad = &h * x - &b;
    let xi = sm_xi(design, x);
    let s = xi.tr_mul(&xi);

    let (lcoef, _) = regress_block(&solver, &h, p, d, omegas.1, &[], cfg);
    let g_theta = contrast(&lcoef, p, d);
    let d_tilde = g_theta.tr_mul(&h.columns(p * d, d).clone_owned()).transpose();
    let cond = linalg::condition_number(&d_tilde);
    if !(cond < MAX_CONDITION) {
        return Err(DiffNetError::IllConditionedD { j, cond });
    }

    let targets: Vec<usize> = match partners {
        Some(ks) => ks.to_vec(),
        None => (0..p).filter(|&k| k != j).collect(),
    };
    let results = try_map_indexed(cfg.execution, targets.len(), |i| {
        let k = targets[i];
        if k >= p {
            return Err(DiffNetError::InvalidInput(format!("node {k} out of range")));
        }
        let (coef, kkt) = regress_block(&solver, &h, k, d, omegas.0, &[], cfg);
        let g = contrast(&coef, k, d);
        // C̃ = (1/n) V_kᵀ R_k = H[k rows, :] · G
        let c_tilde = h.rows(k * d, d) * &g;
        let cond = linalg::condition_number(&c_tilde);
        if !(cond < MAX_CONDITION) {
            return Err(DiffNetError::IllConditionedC { j, k, cond }.at_edge("score_matching", j, k));
        }
        let c_inv = linalg::inverse(&c_tilde).ok_or(DiffNetError::IllConditionedC {
            j,
            k,
            cond: f64::INFINITY,
        })?;
        let alpha_k = x.rows(k * d, d).clone_owned();
        let alpha_check = &alpha_k - &c_inv * g.tr_mul(&grad);
        let omega = &c_inv * (g.tr_mul(&s) * &g) * c_inv.transpose() / (n * n);
        let sc = design.scales.rows(k * d, d);
        let omega_raw = DMatrix::from_fn(d, d, |a, c| omega[(a, c)] / (sc[a] * sc[c]));
        Ok((
            DebiasedCoefficient {
                j,
                k,
                alpha_check: alpha_check.component_div(&sc),
                omega_check: linalg::symmetrize(&omega_raw),
                alpha_tilde: alpha_k.component_div(&sc),
                source: DebiasSource::ScoreMatching,
            },
            SmNodewise {
                k,
                coef,
                c_tilde,
                kkt_residual: kkt,
            },
        ))
    })?;
    let (coefficients, nodewise) = results.into_iter().unzip();
    Ok(SmDebiased {
        coefficients,
        nodewise,
        d_tilde,
        omegas,
    })
}

/// Reconstruct α̌ for block k from stored pieces (internal coordinates).
pub fn reconstruct_alpha_check(
    fit: &SmFit,
    design: &SmDesign,
    nodewise: &SmNodewise,
) -> Option<DVector<f64>> {
    let d = design.d;
    let k = nodewise.k;
    let (h, b) = design.quadratic();
    let grad = &h * &fit.coef_internal - b;
    let g = contrast(&nodewise.coef, k, d);
    let c_inv = linalg::inverse(&nodewise.c_tilde)?;
    let a = fit.coef_internal.rows(k * d, d) - c_inv * g.tr_mul(&grad);
    Some(a.component_div(&design.scales.rows(k * d, d)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::BasisSpec;
    use crate::data::{Dataset, Group};
    use crate::score::design::build_sm_design;
    use crate::score::fit::{sm_fit_lowdim, sm_fit_regularized};
    use crate::score::model::GaussianModel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn design(n: usize, seed: u64) -> SmDesign {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = DMatrix::from_fn(n, 4, |_, _| rng.sample::<f64, _>(StandardNormal));
        let w = DMatrix::from_fn(n, 1, |_, _| rng.random_range(-1.0..1.0));
        for i in 0..n {
            x[(i, 0)] = 0.5 * x[(i, 1)] + rng.sample::<f64, _>(StandardNormal);
        }
        let data = Dataset::from_matrices(Group::I, x, w).unwrap();
        build_sm_design(&data, &BasisSpec::linear(1), &GaussianModel, 0)
            .unwrap()
            .scaled()
            .unwrap()
    }

    #[test]
    fn low_dimensional_limit() {
        let des = design(2000, 1);
        let cfg = EstimatorConfig {
            bcd_tol: 1e-12,
            kkt_tol: 1e-10,
            ..Default::default()
        };
        let low = sm_fit_lowdim(&des).unwrap();
        let reg = sm_fit_regularized(&des, 1e-8, None, &cfg).unwrap();
        let db = sm_debias(&reg, &des, (1e-9, 1e-9), None, &cfg).unwrap();
        for c in &db.coefficients {
            assert!((&c.alpha_check - low.block(c.k)).amax() < 1e-4);
            let cov = low.covariance_block(c.k).unwrap();
            let rel = (&c.omega_check - &cov).amax() / cov.amax();
            assert!(rel < 1e-5, "{rel}");
        }
    }

    #[test]
    fn stored_pieces_reproduce_estimate() {
        let des = design(150, 2);
        let cfg = EstimatorConfig::default();
        let reg = sm_fit_regularized(&des, 0.05, None, &cfg).unwrap();
        let db = sm_debias(&reg, &des, (0.1, 0.1), None, &cfg).unwrap();
        for (c, nw) in db.coefficients.iter().zip(&db.nodewise) {
            let again = reconstruct_alpha_check(&reg, &des, nw).unwrap();
            assert!((again - &c.alpha_check).amax() < 1e-10);
            assert!(linalg::min_eigenvalue(&c.omega_check) > 0.0);
        }
    }
}
