mod common;

use diffnet::basis::{build_design, BasisSpec};
use diffnet::neighborhood::{cross_validate_design, fit_adjusted_ols, make_folds, NodeDesign};
use diffnet::pipeline::{run_differential, Estimator};
use diffnet::simulation::{
    default_graph, eta_true, generate_replicate, sample_covariates, sample_power_law_graph,
    unit_rng, EtaSetting, SimScenario,
};
use diffnet::{
    chisq_upper_tail, load_dataset, Dataset, DiffNetError, EstimatorConfig, Group, Schema,
};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

#[test]
fn covariate_means_match_beta_moments() {
    let n = 100_000;
    for (group, target) in [(Group::I, 0.2), (Group::II, -0.2)] {
        let w = sample_covariates(group, n, &mut unit_rng(3, group as u64));
        let m1 = w.column(0).mean();
        let m2 = w.column(1).mean();
        assert!((m1 - target).abs() < 0.01, "{group:?}: {m1}");
        assert!(m2.abs() < 0.01, "{group:?}: {m2}");
        assert!(w.iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}

#[test]
fn power_law_graphs_have_light_tails() {
    let mut light = 0;
    for s in 0..200 {
        let edges = sample_power_law_graph(39, 15, 5.0, &mut unit_rng(s, 0)).unwrap();
        assert_eq!(edges.len(), 15);
        let mut deg = [0usize; 39];
        for &(a, b) in &edges {
            assert_ne!(a, b);
            deg[a] += 1;
            deg[b] += 1;
        }
        if deg.iter().max().copied().unwrap_or(0) <= 8 {
            light += 1;
        }
    }
    assert!(light >= 190, "{light}/200 graphs with max degree <= 8");
}

fn residual_variance(setting: EtaSetting, seed: u64) -> f64 {
    let graph = default_graph(40, 9).unwrap();
    let (a, _) = generate_replicate(&SimScenario::new(240, setting, seed), &graph).unwrap();
    let (x, w) = (a.x(), a.w());
    let mut ss = 0.0;
    for i in 0..a.n() {
        let wi = [w[(i, 0)], w[(i, 1)]];
        let fitted: f64 = (1..40)
            .map(|k| eta_true(setting, Group::I, k, &wi) * x[(i, k - 1)])
            .sum();
        ss += (x[(i, 39)] - fitted).powi(2);
    }
    ss / a.n() as f64
}

#[test]
fn residual_variance_on_truth_is_one() {
    for setting in [EtaSetting::LinearEta, EtaSetting::CubicEta] {
        let vars: Vec<f64> = (0..40).map(|s| residual_variance(setting, s)).collect();
        let mean = vars.iter().sum::<f64>() / vars.len() as f64;
        assert!((mean - 1.0).abs() < 0.1 / 40f64.sqrt() * 3.0, "{setting:?}: {mean}");
        let within = vars.iter().filter(|v| (*v - 1.0).abs() < 0.2).count();
        assert!(within >= 36, "{within}/40");
    }
}

#[test]
fn adjusted_ols_recovers_varying_coefficients() {
    let (n, p) = (2000, 5);
    let mut r = common::rng(77);
    let mut x = DMatrix::from_fn(n, p, |_, _| r.sample::<f64, _>(StandardNormal));
    let w = DMatrix::from_fn(n, 2, |_, _| r.random_range(-1.0..1.0));
    // node 0 = Σ_k (a_k + b_k w1 + c_k w2) x_k + ε
    let truth = [[0.5, 0.25, 0.0], [0.0, 0.0, 0.0], [-0.4, 0.0, 0.3], [0.2, -0.2, 0.1]];
    for i in 0..n {
        let mut v = r.sample::<f64, _>(StandardNormal);
        for (k, t) in truth.iter().enumerate() {
            v += (t[0] + t[1] * w[(i, 0)] + t[2] * w[(i, 1)]) * x[(i, k + 1)];
        }
        x[(i, 0)] = v;
    }
    let data = Dataset::from_matrices(Group::I, x, w).unwrap();
    let raw = build_design(&data, &BasisSpec::linear(2)).unwrap();
    let fit = fit_adjusted_ols(&raw, 0).unwrap();
    let mut worst: f64 = 0.0;
    for (slot, t) in truth.iter().enumerate() {
        for c in 0..3 {
            worst = worst.max((fit.coefficients[slot * 3 + c] - t[c]).abs());
        }
    }
    assert!(worst < 0.1, "{worst}");
}

#[test]
fn wide_shape_with_one_covariate_fits() {
    let data = common::random_dataset(806, 145, 1, 4);
    assert_eq!((data.p(), data.q()), (145, 1));
    let raw = build_design(&data, &BasisSpec::linear(1)).unwrap();
    let fit = fit_adjusted_ols(&raw, 0).unwrap();
    assert_eq!(fit.coefficients.len(), 144 * 2);
}

#[test]
fn csv_round_trip_with_145_nodes() {
    let data = common::random_dataset(30, 145, 1, 5);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("wide.csv");
    data.write_csv_path(&path).unwrap();
    let back = load_dataset(&path, Group::I, &Schema::with_covariates(["W1"])).unwrap();
    assert_eq!((back.n(), back.p(), back.q()), (30, 145, 1));
    assert!((back.x() - data.x()).amax() < 1e-12);
    assert!((back.w() - data.w()).amax() < 1e-12);
}

#[test]
fn ten_folds_on_eighty_rows_have_eight_each() {
    let folds = make_folds(80, 10, 1).unwrap();
    assert!(folds.iter().all(|f| f.len() == 8));
}

#[test]
fn pure_noise_prefers_large_lambda() {
    let cfg = EstimatorConfig {
        n_lambda: 50,
        ..Default::default()
    };
    let mut upper = 0;
    for s in 0..50 {
        let mut r = common::rng(900 + s);
        let x = DMatrix::from_fn(100, 6, |_, _| r.sample::<f64, _>(StandardNormal));
        let w = DMatrix::from_fn(100, 1, |_, _| r.random_range(-1.0..1.0));
        let data = Dataset::from_matrices(Group::I, x, w).unwrap();
        let bundle = common::scaled_bundle(&data, &BasisSpec::linear(1));
        let design = NodeDesign::new(&bundle, 0).unwrap();
        let cv = cross_validate_design(&design, &cfg).unwrap();
        let pos = cv.lambdas.iter().position(|&l| l == cv.lambda_hat).unwrap();
        if pos < 25 {
            upper += 1;
        }
    }
    assert!(upper >= 40, "{upper}/50 in the upper half");
}

#[test]
fn chi_square_critical_values() {
    for (x, dof) in [(3.84146, 1), (7.8147, 3), (14.0671, 7)] {
        let p = chisq_upper_tail(x, dof).unwrap();
        assert!((p - 0.05).abs() < 1e-4, "dof {dof}: {p}");
    }
    assert_eq!(chisq_upper_tail(0.0, 4).unwrap(), 1.0);
}

fn relabel(data: &Dataset, group: Group) -> Dataset {
    Dataset::new(
        group,
        data.x().clone(),
        data.w().clone(),
        data.node_names().to_vec(),
        data.covariate_names().to_vec(),
    )
    .unwrap()
}

#[test]
fn identical_groups_give_no_rejections() {
    let cfg = EstimatorConfig {
        n_lambda: 10,
        ..Default::default()
    };
    for s in 0..5 {
        let a = common::random_dataset(120, 5, 1, 300 + s);
        let b = relabel(&a, Group::II);
        let run =
            run_differential(&a, &b, &BasisSpec::linear(1), Estimator::NeighborhoodGl, &cfg, 0.05)
                .unwrap();
        assert!(run.network.rejected.is_empty());
        assert!(run.network.edges.iter().all(|e| e.statistic.abs() < 1e-9));
    }
}

#[test]
fn kappa_one_rejects_everything() {
    let a = common::random_dataset(120, 5, 1, 11);
    let b = relabel(&common::random_dataset(120, 5, 1, 12), Group::II);
    let run = run_differential(
        &a,
        &b,
        &BasisSpec::linear(1),
        Estimator::NeighborhoodOls,
        &EstimatorConfig::default(),
        1.0,
    )
    .unwrap();
    assert_eq!(run.network.rejected.len(), 10);
}

#[test]
fn ols_guard_fires_before_fitting() {
    let a = common::random_dataset(20, 12, 2, 1);
    let b = relabel(&a, Group::II);
    let err = run_differential(
        &a,
        &b,
        &BasisSpec::linear(2),
        Estimator::NeighborhoodOls,
        &EstimatorConfig::default(),
        0.05,
    )
    .unwrap_err();
    assert!(format!("{err}").contains("insufficient samples"), "{err}");
    assert!(matches!(err, DiffNetError::InsufficientSamples { .. }) || format!("{err:?}").contains("InsufficientSamples"));
}

#[test]
fn every_node_gets_p_minus_one_blocks() {
    let graph = default_graph(8, 3).unwrap();
    let scen = SimScenario {
        n: 150,
        p: 8,
        setting: EtaSetting::LinearEta,
        replicate_seed: 2,
    };
    let (a, b) = generate_replicate(&scen, &graph).unwrap();
    let cfg = EstimatorConfig {
        n_lambda: 10,
        ..Default::default()
    };
    let run =
        run_differential(&a, &b, &BasisSpec::linear(2), Estimator::NeighborhoodGl, &cfg, 0.05)
            .unwrap();
    for group in &run.fits {
        assert_eq!(group.len(), 8);
        for node in group {
            assert_eq!(node.blocks.len(), 7);
            assert!(node.blocks.iter().all(|b| b.estimate.len() == 3));
        }
    }
    assert_eq!(run.network.edges.len(), 28);
}
