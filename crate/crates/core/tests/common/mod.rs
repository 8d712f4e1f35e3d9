#![allow(dead_code)]

use diffnet::basis::{build_design, scale_columns, BasisSpec, DesignBundle};
use diffnet::debias::NodewiseInverse;
use diffnet::neighborhood::NodeDesign;
use diffnet::score::SmDesign;
use diffnet::{Dataset, Group};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Gaussian nodes with a few planted dependencies and uniform covariates.
pub fn random_dataset(n: usize, p: usize, q: usize, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let mut x = DMatrix::from_fn(n, p, |_, _| r.sample::<f64, _>(StandardNormal));
    let w = DMatrix::from_fn(n, q, |_, _| r.random_range(-1.0..1.0));
    for i in 0..n {
        for k in 1..p {
            let coef = if k % 2 == 1 { 0.4 } else { 0.0 };
            let wk = if q > 0 { w[(i, 0)] } else { 0.0 };
            x[(i, 0)] += coef * (1.0 + 0.5 * wk) * x[(i, k)];
        }
    }
    Dataset::from_matrices(Group::I, x, w).unwrap()
}

pub fn scaled_bundle(data: &Dataset, basis: &BasisSpec) -> DesignBundle {
    scale_columns(&build_design(data, basis).unwrap()).unwrap()
}

/// Stationarity residual of (1/2n)‖y − Zx‖² + λΣ‖x_g‖ from the raw design,
/// with group `skip` (if any) pinned at zero and ignored.
pub fn group_lasso_kkt(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    x: &DVector<f64>,
    lambda: f64,
    d: usize,
    skip: Option<usize>,
) -> f64 {
    let n = z.nrows() as f64;
    let r = y - z * x;
    let g = z.tr_mul(&r) / n;
    let mut worst: f64 = 0.0;
    for grp in 0..x.len() / d {
        if Some(grp) == skip {
            continue;
        }
        let xg = x.rows(grp * d, d);
        let gg = g.rows(grp * d, d);
        let v = if xg.norm() > 0.0 {
            (gg - xg * (lambda / xg.norm())).norm()
        } else {
            (gg.norm() - lambda).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

/// KKT residual of every column of a nodewise regression.
pub fn nodewise_kkt(design: &NodeDesign, nw: &NodewiseInverse) -> f64 {
    let d = design.d;
    let slot = design.partners.iter().position(|&l| l == nw.k).unwrap();
    let mut x = DMatrix::zeros(design.z.ncols(), d);
    for (l, g) in &nw.gamma {
        let s = design.partners.iter().position(|m| m == l).unwrap();
        x.view_mut((s * d, 0), (d, d)).copy_from(g);
    }
    (0..d)
        .map(|c| {
            let y = design.z.column(slot * d + c).clone_owned();
            group_lasso_kkt(&design.z, &y, &x.column(c).clone_owned(), nw.omega, d, Some(slot))
        })
        .fold(0.0, f64::max)
}

/// KKT residual of penalized score matching, with the target block and θ
/// unpenalized.
pub fn sm_kkt(design: &SmDesign, x: &DVector<f64>, lambda: f64) -> f64 {
    let d = design.d;
    let n = design.n() as f64;
    let v = design.v();
    let u = design.u();
    let grad = (v.tr_mul(&(&v * x)) + u.row_sum().transpose()) / n;
    let mut worst: f64 = 0.0;
    for g in 0..=design.p {
        let gg = grad.rows(g * d, d);
        let xg = x.rows(g * d, d);
        let penalized = g != design.target && g != design.p;
        let r = if !penalized {
            gg.norm()
        } else if xg.norm() > 0.0 {
            (gg + xg * (lambda / xg.norm())).norm()
        } else {
            (gg.norm() - lambda).max(0.0)
        };
        worst = worst.max(r);
    }
    worst
}

/// Step-up BY by exhaustive search over the rejection count.
pub fn brute_force_by(p: &[f64], kappa: f64) -> Vec<bool> {
    let m = p.len();
    let cm: f64 = (1..=m).map(|i| 1.0 / i as f64).sum();
    let mut best = 0;
    for r in 1..=m {
        // the r-th smallest value
        let pr = {
            let mut s = p.to_vec();
            s.sort_by(|a, b| a.total_cmp(b));
            s[r - 1]
        };
        if pr <= r as f64 * kappa / (m as f64 * cm) {
            best = r;
        }
    }
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
    let mut out = vec![false; m];
    for &i in &idx[..best] {
        out[i] = true;
    }
    out
}
