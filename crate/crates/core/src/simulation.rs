//! Synthetic two-group data with covariate-dependent edges and the Monte
//! Carlo harness for rejection-rate tables and estimation-error curves.
//!
//! Nodes 1..p−1 are jointly Gaussian with a sparse power-law precision
//! structure; node p depends on nodes 1–3 through coefficients that vary
//! with two covariates. Internally nodes are 0-based, so node p is column
//! p−1 and partner k (1-based) is column k−1.

use std::collections::BTreeSet;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::basis::{build_design, scale_columns, BasisSpec};
use crate::data::{Dataset, EstimatorConfig, Group};
use crate::debias::{fit_debiased_node, DebiasedCoefficient};
use crate::error::{DiffNetError, Result};
use crate::exec::{map_indexed, mix_seed, Execution};
use crate::inference::{test_adjusted, test_unadjusted};
use crate::linalg;
use crate::neighborhood::fit_unadjusted_ols;

pub type SimRng = ChaCha8Rng;

/// RNG for unit `index` derived from `base`.
pub fn unit_rng(base: u64, index: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(mix_seed(base, index))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EtaSetting {
    LinearEta,
    CubicEta,
}

impl EtaSetting {
    pub fn label(self) -> &'static str {
        match self {
            EtaSetting::LinearEta => "linear",
            EtaSetting::CubicEta => "cubic",
        }
    }

    /// The basis in which this setting's coefficient functions are exact.
    pub fn basis(self) -> BasisSpec {
        match self {
            EtaSetting::LinearEta => BasisSpec::linear(2),
            EtaSetting::CubicEta => BasisSpec::cubic(2),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphSpec {
    pub num_nodes: usize,
    pub edges: Vec<(usize, usize)>,
    pub theta: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub a_star: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimScenario {
    pub n: usize,
    pub p: usize,
    pub setting: EtaSetting,
    pub replicate_seed: u64,
}

impl SimScenario {
    pub fn new(n: usize, setting: EtaSetting, replicate_seed: u64) -> Self {
        Self {
            n,
            p: 40,
            setting,
            replicate_seed,
        }
    }
}

fn power_law_degree(num_nodes: usize, power: f64, rng: &mut SimRng) -> usize {
    let max = num_nodes.saturating_sub(1).max(1);
    let weights: Vec<f64> = (1..=max).map(|k| (k as f64).powf(-power)).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i + 1;
        }
        u -= w;
    }
    max
}

/// Random simple graph: truncated power-law degrees realized by the
/// configuration model, then edges removed or added uniformly at random to
/// reach exactly `target_edges`.
pub fn sample_power_law_graph(
    num_nodes: usize,
    target_edges: usize,
    power: f64,
    rng: &mut SimRng,
) -> Result<Vec<(usize, usize)>> {
    let max_edges = num_nodes * num_nodes.saturating_sub(1) / 2;
    if target_edges > max_edges {
        return Err(DiffNetError::InvalidInput(format!(
            "{target_edges} edges requested on {num_nodes} nodes"
        )));
    }
    if target_edges == 0 || num_nodes < 2 {
        return Ok(vec![]);
    }
    const RETRIES: usize = 1000;
    let mut edges: Option<BTreeSet<(usize, usize)>> = None;
    for _ in 0..RETRIES {
        let mut degrees: Vec<usize> = (0..num_nodes)
            .map(|_| power_law_degree(num_nodes, power, rng))
            .collect();
        if degrees.iter().sum::<usize>() % 2 == 1 {
            let i = rng.random_range(0..num_nodes);
            degrees[i] = power_law_degree(num_nodes, power, rng);
            if degrees.iter().sum::<usize>() % 2 == 1 {
                continue;
            }
        }
        let mut stubs: Vec<usize> = degrees
            .iter()
            .enumerate()
            .flat_map(|(i, &k)| std::iter::repeat_n(i, k))
            .collect();
        stubs.shuffle(rng);
        let mut set = BTreeSet::new();
        let mut simple = true;
        for pair in stubs.chunks(2) {
            let (a, b) = (pair[0].min(pair[1]), pair[0].max(pair[1]));
            if a == b || !set.insert((a, b)) {
                simple = false;
                break;
            }
        }
        if simple {
            edges = Some(set);
            break;
        }
    }
    let mut set = edges.ok_or(DiffNetError::InfeasibleDegreeSequence(RETRIES))?;
    while set.len() > target_edges {
        let i = rng.random_range(0..set.len());
        let e = *set.iter().nth(i).expect("index in range");
        set.remove(&e);
    }
    while set.len() < target_edges {
        let a = rng.random_range(0..num_nodes);
        let b = rng.random_range(0..num_nodes);
        if a != b {
            set.insert((a.min(b), a.max(b)));
        }
    }
    Ok(set.into_iter().collect())
}

/// Θ with ±0.5 (fair signs) on the edges and Σ = (Θ − (a* − 0.1)I)⁻¹.
pub fn build_sigma(edges: &[(usize, usize)], num_nodes: usize, rng: &mut SimRng) -> GraphSpec {
    let mut theta = DMatrix::zeros(num_nodes, num_nodes);
    for &(a, b) in edges {
        let v = if rng.random::<bool>() { 0.5 } else { -0.5 };
        theta[(a, b)] = v;
        theta[(b, a)] = v;
    }
    let a_star = if num_nodes > 0 { linalg::min_eigenvalue(&theta) } else { 0.0 };
    let mut shifted = theta.clone();
    for i in 0..num_nodes {
        shifted[(i, i)] -= a_star - 0.1;
    }
    let sigma = linalg::symmetrize(&linalg::spd_inverse(&shifted).expect("shifted Θ is PD"));
    GraphSpec {
        num_nodes,
        edges: edges.to_vec(),
        theta,
        sigma,
        a_star,
    }
}

/// The fixed graph used across all replicates of an experiment.
pub fn default_graph(p: usize, seed: u64) -> Result<GraphSpec> {
    let mut rng = unit_rng(seed, u64::MAX);
    let edges = sample_power_law_graph(p - 1, 15.min((p - 1) * (p - 2) / 2), 5.0, &mut rng)?;
    Ok(build_sigma(&edges, p - 1, &mut rng))
}

/// n × 2 covariates: a Beta draw mapped to (−1, 1) by 2u − 1 and a
/// Uniform(−1, 1) draw.
pub fn sample_covariates(group: Group, n: usize, rng: &mut SimRng) -> DMatrix<f64> {
    let beta = match group {
        Group::I => Beta::new(1.5, 1.0),
        Group::II => Beta::new(1.0, 1.5),
    }
    .expect("valid Beta parameters");
    let mut w = DMatrix::zeros(n, 2);
    for i in 0..n {
        w[(i, 0)] = 2.0 * beta.sample(rng) - 1.0;
        w[(i, 1)] = rng.random_range(-1.0..1.0);
    }
    w
}

/// True coefficient function η_{p,k}(w) for partner k (1-based).
pub fn eta_true(setting: EtaSetting, group: Group, k: usize, w: &[f64]) -> f64 {
    let (w1, w2) = (w[0], w[1]);
    let (f1, f2) = match setting {
        EtaSetting::LinearEta => (w1, w2),
        EtaSetting::CubicEta => (w1 + w1 * w1 + w1 * w1 * w1, w2 + w2 * w2 * w2),
    };
    match (k, group) {
        (1, _) => 0.5 + 0.5 * f1,
        (2, Group::I) => 0.5 + 0.25 * f2,
        (2, Group::II) => 0.5 + 0.75 * f2,
        (3, Group::I) => 0.0,
        (3, Group::II) => 0.5,
        _ => 0.0,
    }
}

/// Coefficients of η_{p,k} in the setting's own basis, so that
/// η(w) = φ(w)ᵀα.
pub fn alpha_true(setting: EtaSetting, group: Group, k: usize) -> DVector<f64> {
    let d = setting.basis().d();
    let mut a = DVector::zeros(d);
    let w2_slots: &[usize] = match setting {
        EtaSetting::LinearEta => &[2],
        EtaSetting::CubicEta => &[4, 6],
    };
    let w1_slots: &[usize] = match setting {
        EtaSetting::LinearEta => &[1],
        EtaSetting::CubicEta => &[1, 2, 3],
    };
    match (k, group) {
        (1, _) => {
            a[0] = 0.5;
            for &s in w1_slots {
                a[s] = 0.5;
            }
        }
        (2, g) => {
            a[0] = 0.5;
            let c = if g == Group::I { 0.25 } else { 0.75 };
            for &s in w2_slots {
                a[s] = c;
            }
        }
        (3, Group::II) => a[0] = 0.5,
        _ => {}
    }
    a
}

fn generate_group(
    scenario: &SimScenario,
    chol: &DMatrix<f64>,
    group: Group,
    noise: bool,
    rng: &mut SimRng,
) -> Result<Dataset> {
    let (n, p) = (scenario.n, scenario.p);
    let m = p - 1;
    let z = DMatrix::from_fn(n, m, |_, _| rng.sample::<f64, _>(StandardNormal));
    let nodes = z * chol.transpose();
    let w = sample_covariates(group, n, rng);
    let mut x = DMatrix::zeros(n, p);
    x.columns_mut(0, m).copy_from(&nodes);
    for i in 0..n {
        let wi = [w[(i, 0)], w[(i, 1)]];
        let mut v = 0.0;
        for k in 1..=3.min(m) {
            v += eta_true(scenario.setting, group, k, &wi) * nodes[(i, k - 1)];
        }
        let eps: f64 = rng.sample(StandardNormal);
        x[(i, m)] = v + if noise { eps } else { 0.0 };
    }
    let names = (1..=p).map(|k| format!("X{k}")).collect();
    Dataset::new(group, x, w, names, vec!["W1".into(), "W2".into()])
}

/// One replicate: a dataset for each group from the fixed graph.
pub fn generate_replicate(scenario: &SimScenario, graph: &GraphSpec) -> Result<(Dataset, Dataset)> {
    generate_replicate_with(scenario, graph, true)
}

/// As [`generate_replicate`]; `noise = false` drops ε from node p.
pub fn generate_replicate_with(
    scenario: &SimScenario,
    graph: &GraphSpec,
    noise: bool,
) -> Result<(Dataset, Dataset)> {
    if graph.num_nodes + 1 != scenario.p {
        return Err(DiffNetError::DimensionMismatch {
            expected: scenario.p - 1,
            got: graph.num_nodes,
        });
    }
    let chol = graph
        .sigma
        .clone()
        .cholesky()
        .ok_or_else(|| DiffNetError::InvalidInput("Σ is not positive definite".into()))?
        .l();
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.replicate_seed);
    let a = generate_group(scenario, &chol, Group::I, noise, &mut rng)?;
    let b = generate_group(scenario, &chol, Group::II, noise, &mut rng)?;
    Ok((a, b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    Unadjusted,
    LinearAdj,
    CubicAdj,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Unadjusted, Method::LinearAdj, Method::CubicAdj];

    pub fn label(self) -> &'static str {
        match self {
            Method::Unadjusted => "unadjusted",
            Method::LinearAdj => "linear-adjusted",
            Method::CubicAdj => "cubic-adjusted",
        }
    }

    fn basis(self) -> Option<BasisSpec> {
        match self {
            Method::Unadjusted => None,
            Method::LinearAdj => Some(BasisSpec::linear(2)),
            Method::CubicAdj => Some(BasisSpec::cubic(2)),
        }
    }
}

/// Tests of node p against every partner for one method on one replicate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub method: Method,
    /// p-value for partner k at index k−1.
    pub p_values: Vec<f64>,
    /// De-biased blocks per group (empty for the unadjusted method).
    pub debiased: [Vec<DebiasedCoefficient>; 2],
}

/// Fit node p in both groups and test every partner edge.
pub fn analyze_replicate(
    a: &Dataset,
    b: &Dataset,
    method: Method,
    partners: Option<&[usize]>,
    cfg: &EstimatorConfig,
) -> Result<MethodOutcome> {
    let p = a.p();
    let j = p - 1;
    match method.basis() {
        None => {
            let fa = fit_unadjusted_ols(a, j).map_err(|e| e.at_node("simulation", j))?;
            let fb = fit_unadjusted_ols(b, j).map_err(|e| e.at_node("simulation", j))?;
            let p_values = (0..j)
                .map(|k| {
                    let (ba, va) = fa.block(k).expect("partner present");
                    let (bb, vb) = fb.block(k).expect("partner present");
                    test_unadjusted(ba[0], va[(0, 0)], bb[0], vb[(0, 0)]).map(|t| t.p_value)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(MethodOutcome {
                method,
                p_values,
                debiased: [vec![], vec![]],
            })
        }
        Some(basis) => {
            let fit = |data: &Dataset| -> Result<Vec<DebiasedCoefficient>> {
                let bundle = scale_columns(&build_design(data, &basis)?)?;
                Ok(fit_debiased_node(&bundle, j, partners, cfg)
                    .map_err(|e| e.at_node("simulation", j))?
                    .debiased)
            };
            let da = fit(a)?;
            let db = fit(b)?;
            let p_values = da
                .iter()
                .zip(&db)
                .map(|(x, y)| {
                    test_adjusted(&x.alpha_check, &x.omega_check, &y.alpha_check, &y.omega_check)
                        .map(|t| t.p_value)
                        .map_err(|e| e.at_edge("simulation", j, x.k))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(MethodOutcome {
                method,
                p_values,
                debiased: [da, db],
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum KCategory {
    K1,
    K2,
    K3,
    K4Plus,
}

impl KCategory {
    pub const ALL: [KCategory; 4] = [KCategory::K1, KCategory::K2, KCategory::K3, KCategory::K4Plus];

    pub fn of(k: usize) -> Self {
        match k {
            1 => KCategory::K1,
            2 => KCategory::K2,
            3 => KCategory::K3,
            _ => KCategory::K4Plus,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            KCategory::K1 => "1",
            KCategory::K2 => "2",
            KCategory::K3 => "3",
            KCategory::K4Plus => ">=4",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Table1Config {
    pub settings: Vec<EtaSetting>,
    pub methods: Vec<Method>,
    pub ns: Vec<usize>,
    pub reps: usize,
    pub p: usize,
    pub kappa: f64,
    pub seed: u64,
    pub estimator: EstimatorConfig,
}

impl Default for Table1Config {
    fn default() -> Self {
        Self {
            settings: vec![EtaSetting::LinearEta, EtaSetting::CubicEta],
            methods: Method::ALL.to_vec(),
            ns: vec![80, 160, 240],
            reps: 400,
            p: 40,
            kappa: 0.05,
            seed: 2021,
            estimator: EstimatorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Table1Cell {
    pub setting: EtaSetting,
    pub method: Method,
    pub k: KCategory,
    pub n: usize,
    pub rejection_rate: f64,
    pub mc_se: f64,
    pub tests: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Table1 {
    pub cells: Vec<Table1Cell>,
    pub reps: usize,
    pub kappa: f64,
}

impl Table1 {
    pub fn cell(&self, setting: EtaSetting, method: Method, k: KCategory, n: usize) -> Option<&Table1Cell> {
        self.cells
            .iter()
            .find(|c| c.setting == setting && c.method == method && c.k == k && c.n == n)
    }

    /// One row per (setting, method, k) with a rate and SE column per n.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut ns: Vec<usize> = self.cells.iter().map(|c| c.n).collect();
        ns.sort_unstable();
        ns.dedup();
        write!(out, "setting\tmethod\tk")?;
        for n in &ns {
            write!(out, "\tn={n}\tse_n={n}")?;
        }
        writeln!(out)?;
        let mut keys: Vec<(EtaSetting, Method, KCategory)> =
            self.cells.iter().map(|c| (c.setting, c.method, c.k)).collect();
        keys.sort();
        keys.dedup();
        for (s, m, k) in keys {
            write!(out, "{}\t{}\t{}", s.label(), m.label(), k.label())?;
            for &n in &ns {
                match self.cell(s, m, k, n) {
                    Some(c) => write!(out, "\t{:.4}\t{:.4}", c.rejection_rate, c.mc_se)?,
                    None => write!(out, "\tNA\tNA")?,
                }
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Config used for fits inside one replicate when replicates run in parallel.
fn inner_config(cfg: &EstimatorConfig, rep_seed: u64) -> EstimatorConfig {
    EstimatorConfig {
        execution: Execution::Sequential,
        seed: rep_seed,
        ..cfg.clone()
    }
}

/// Per-replicate outcomes of every method for one (setting, n) cell.
///
/// Replicate r uses the seed `mix_seed(seed ^ n ^ setting, r)`, so cells
/// computed separately agree with those of a full table run.
pub fn simulate_outcomes(
    graph: &GraphSpec,
    setting: EtaSetting,
    n: usize,
    reps: usize,
    methods: &[Method],
    seed: u64,
    cfg: &EstimatorConfig,
) -> Result<Vec<Vec<MethodOutcome>>> {
    let p = graph.num_nodes + 1;
    map_indexed(cfg.execution, reps, |r| {
        let rs = mix_seed(seed ^ n as u64 ^ ((setting as u64) << 32), r as u64);
        let scen = SimScenario {
            n,
            p,
            setting,
            replicate_seed: rs,
        };
        let (a, b) = generate_replicate(&scen, graph)?;
        let inner = inner_config(cfg, rs);
        methods
            .iter()
            .map(|&m| analyze_replicate(&a, &b, m, None, &inner))
            .collect()
    })
    .into_iter()
    .collect()
}

/// Rejection rate at level κ over all tests of `method` whose partner falls
/// in `cat`, with its binomial Monte Carlo standard error and test count.
pub fn rejection_rate(
    outcomes: &[Vec<MethodOutcome>],
    method: Method,
    cat: KCategory,
    kappa: f64,
) -> (f64, f64, usize) {
    let mut tests = 0usize;
    let mut rejections = 0usize;
    for rep in outcomes {
        for out in rep.iter().filter(|o| o.method == method) {
            for (idx, &pv) in out.p_values.iter().enumerate() {
                if KCategory::of(idx + 1) == cat {
                    tests += 1;
                    if pv <= kappa {
                        rejections += 1;
                    }
                }
            }
        }
    }
    let rate = if tests > 0 { rejections as f64 / tests as f64 } else { f64::NAN };
    (rate, (rate * (1.0 - rate) / tests.max(1) as f64).sqrt(), tests)
}

/// Rejection-rate table at level κ without multiplicity correction.
pub fn run_table1(cfg: &Table1Config) -> Result<Table1> {
    if cfg.reps == 0 {
        return Err(DiffNetError::InvalidConfig("reps must be positive".into()));
    }
    let graph = default_graph(cfg.p, cfg.seed)?;
    let mut cells = Vec::new();
    for &setting in &cfg.settings {
        for &n in &cfg.ns {
            let outcomes =
                simulate_outcomes(&graph, setting, n, cfg.reps, &cfg.methods, cfg.seed, &cfg.estimator)?;
            for &method in &cfg.methods {
                for cat in KCategory::ALL {
                    let (rate, se, tests) = rejection_rate(&outcomes, method, cat, cfg.kappa);
                    cells.push(Table1Cell {
                        setting,
                        method,
                        k: cat,
                        n,
                        rejection_rate: rate,
                        mc_se: se,
                        tests,
                    });
                }
            }
        }
    }
    Ok(Table1 {
        cells,
        reps: cfg.reps,
        kappa: cfg.kappa,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Figure2Point {
    pub setting: EtaSetting,
    pub n: usize,
    /// Partner node, 1-based.
    pub k: usize,
    /// Mean of ‖α̌ − α*‖₂ / d over replicates and both groups.
    pub mean_error: f64,
    pub se: f64,
}

/// Estimation error of de-biased blocks for partners 1..=max_k of node p,
/// each setting fit with its own (correctly specified) basis.
pub fn figure2(
    settings: &[EtaSetting],
    ns: &[usize],
    reps: usize,
    max_k: usize,
    seed: u64,
    estimator: &EstimatorConfig,
) -> Result<Vec<Figure2Point>> {
    let p = 40;
    let graph = default_graph(p, seed)?;
    let partners: Vec<usize> = (0..max_k.min(p - 1)).collect();
    let mut out = Vec::new();
    for &setting in settings {
        let method = match setting {
            EtaSetting::LinearEta => Method::LinearAdj,
            EtaSetting::CubicEta => Method::CubicAdj,
        };
        let d = setting.basis().d() as f64;
        for &n in ns {
            let errs: Vec<Result<Vec<f64>>> = map_indexed(estimator.execution, reps, |r| {
                let rs = mix_seed(seed ^ 0xf16 ^ n as u64 ^ ((setting as u64) << 32), r as u64);
                let scen = SimScenario {
                    n,
                    p,
                    setting,
                    replicate_seed: rs,
                };
                let (a, b) = generate_replicate(&scen, &graph)?;
                let res = analyze_replicate(&a, &b, method, Some(&partners), &inner_config(estimator, rs))?;
                let mut e = vec![0.0; partners.len()];
                for (gi, group) in [Group::I, Group::II].into_iter().enumerate() {
                    for (slot, c) in res.debiased[gi].iter().enumerate() {
                        let truth = alpha_true(setting, group, c.k + 1);
                        e[slot] += (&c.alpha_check - truth).norm() / d / 2.0;
                    }
                }
                Ok(e)
            });
            let errs = errs.into_iter().collect::<Result<Vec<_>>>()?;
            for (slot, &k) in partners.iter().enumerate() {
                let vals: Vec<f64> = errs.iter().map(|e| e[slot]).collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                    / (vals.len().max(2) - 1) as f64;
                out.push(Figure2Point {
                    setting,
                    n,
                    k: k + 1,
                    mean_error: mean,
                    se: (var / vals.len() as f64).sqrt(),
                });
            }
        }
    }
    Ok(out)
}

pub fn write_figure2_tsv<W: Write>(points: &[Figure2Point], mut out: W) -> Result<()> {
    writeln!(out, "setting\tn\tk\tmean_l2_error\tse")?;
    for pt in points {
        writeln!(
            out,
            "{}\t{}\t{}\t{:.6}\t{:.6}",
            pt.setting.label(),
            pt.n,
            pt.k,
            pt.mean_error,
            pt.se
        )?;
    }
    Ok(())
}
