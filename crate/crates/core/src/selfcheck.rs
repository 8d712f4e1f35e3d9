//! Fast invariant checks run by `diffnet selfcheck`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::basis::{build_design, scale_columns, BasisSpec};
use crate::data::{Dataset, EstimatorConfig, Group};
use crate::inference::{by_fdr, chisq_upper_tail, test_adjusted, test_unadjusted};
use crate::neighborhood::{fit_adjusted_ols, fit_group_lasso_design, NodeDesign};
use crate::score::{
    build_sm_design, model::derivative_check, sm_fit_lowdim, sm_fit_regularized, GaussianModel,
    NonNegGaussianModel,
};
use crate::simulation::{build_sigma, sample_power_law_graph, unit_rng};
use crate::solver::kkt_residual;
use crate::linalg;
use crate::solver::GroupPenalty;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

fn check(name: &'static str, value: f64, limit: f64) -> Check {
    Check {
        name,
        pass: value <= limit,
        detail: format!("{value:.3e} (limit {limit:.0e})"),
    }
}

fn dataset(n: usize, p: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let w = DMatrix::from_fn(n, 1, |_, _| rng.random_range(-1.0..1.0));
    for i in 0..n {
        x[(i, 0)] += 0.5 * (1.0 + w[(i, 0)]) * x[(i, 1)];
    }
    Dataset::from_matrices(Group::I, x, w).expect("valid synthetic data")
}

pub fn run_all() -> Vec<Check> {
    let mut out = Vec::new();

    let worst = [(2.0 * 20f64.ln(), 2), (14.0671, 7), (3.84146, 1)]
        .iter()
        .map(|&(x, dof)| chisq_upper_tail(x, dof).map_or(f64::INFINITY, |p| (p - 0.05).abs()))
        .fold(0.0, f64::max);
    out.push(check("chi-square reference values", worst, 1e-4));

    let (q, rej) = by_fdr(&[0.001, 0.2, 0.9], 0.05);
    out.push(Check {
        name: "BY reference example",
        pass: rej == [true, false, false] && (q[0] - 0.0055).abs() < 1e-12,
        detail: format!("q = {q:.4?}"),
    });

    let s1 = test_unadjusted(0.3, 0.02, 0.1, 0.03).map(|t| t.statistic);
    let s2 = test_adjusted(
        &DVector::from_element(1, 0.3),
        &DMatrix::from_element(1, 1, 0.02),
        &DVector::from_element(1, 0.1),
        &DMatrix::from_element(1, 1, 0.03),
    )
    .map(|t| t.statistic);
    let diff = match (s1, s2) {
        (Ok(a), Ok(b)) => (a - b).abs() / a.abs().max(1.0),
        _ => f64::INFINITY,
    };
    out.push(check("adjusted test collapses to unadjusted at d = 1", diff, 1e-9));

    let pts: Vec<(f64, f64, f64)> = (0..20)
        .map(|i| (0.3 + 0.1 * i as f64, 1.7 - 0.05 * i as f64, -0.5 + 0.07 * i as f64))
        .collect();
    let dc = derivative_check(&GaussianModel, &pts).max(derivative_check(&NonNegGaussianModel, &pts));
    out.push(check("score model derivatives vs finite differences", dc, 1e-5));

    let cfg = EstimatorConfig {
        bcd_tol: 1e-12,
        kkt_tol: 1e-11,
        bcd_max_iter: 100_000,
        ..Default::default()
    };
    let data = dataset(400, 5, 1);
    let basis = BasisSpec::linear(1);
    let gl_vs_ols = build_design(&data, &basis)
        .and_then(|raw| {
            let b = scale_columns(&raw)?;
            let d = NodeDesign::new(&b, 0)?;
            let gl = fit_group_lasso_design(&d, 0.0, None, &cfg, true)?;
            let ols = fit_adjusted_ols(&raw, 0)?;
            Ok((gl.alpha_raw(&b) - ols.coefficients).amax())
        })
        .unwrap_or(f64::INFINITY);
    out.push(check("group LASSO at zero penalty equals OLS", gl_vs_ols, 1e-6));

    let kkt = build_design(&data, &basis)
        .and_then(|raw| scale_columns(&raw))
        .and_then(|b| {
            let d = NodeDesign::new(&b, 0)?;
            let fit = fit_group_lasso_design(&d, 0.1, None, &EstimatorConfig::default(), true)?;
            let hx = &d.gram * &fit.alpha_tilde;
            let pen = GroupPenalty::uniform(d.n_groups(), d.d);
            Ok(kkt_residual(&hx, &d.zty, &pen, 0.1, &fit.alpha_tilde))
        })
        .unwrap_or(f64::INFINITY);
    out.push(check("group LASSO KKT at lambda = 0.1", kkt, 1e-6));

    let sm = build_sm_design(&data, &basis, &GaussianModel, 0)
        .and_then(|d| d.scaled())
        .and_then(|d| {
            let low = sm_fit_lowdim(&d)?;
            let reg = sm_fit_regularized(&d, 0.0, None, &cfg)?;
            Ok((&low.alpha - &reg.alpha).amax().max((&low.theta - &reg.theta).amax()))
        })
        .unwrap_or(f64::INFINITY);
    out.push(check("score matching at zero penalty equals closed form", sm, 1e-6));

    let mut rng = unit_rng(7, 0);
    let gerr = match sample_power_law_graph(39, 15, 5.0, &mut rng) {
        Ok(e) if e.len() == 15 => {
            let g = build_sigma(&e, 39, &mut rng);
            linalg::spd_inverse(&g.sigma)
                .map_or(f64::INFINITY, |prec| (linalg::min_eigenvalue(&prec) - 0.1).abs())
        }
        _ => f64::INFINITY,
    };
    out.push(check("simulation graph: 15 edges, precision floor 0.1", gerr, 1e-8));

    out
}
