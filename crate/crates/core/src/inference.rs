//! Edge-wise chi-squared tests, min-p combination and Benjamini–Yekutieli
//! FDR control.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{DiffNetError, Result};
use crate::linalg;
use crate::special::gamma_q;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestKind {
    UnadjustedT,
    AdjustedS,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// Node j regressed on node k.
    JonK,
    KonJ,
    MinP,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeTest {
    pub j: usize,
    pub k: usize,
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub kind: TestKind,
    pub direction: Direction,
}

/// P(χ²_dof > x).
pub fn chisq_upper_tail(x: f64, dof: usize) -> Result<f64> {
    if dof == 0 {
        return Err(DiffNetError::InvalidInput("chi-squared dof must be ≥ 1".into()));
    }
    if x.is_nan() || x < 0.0 {
        return Err(DiffNetError::InvalidInput(format!(
            "chi-squared statistic must be ≥ 0, got {x}"
        )));
    }
    if x == f64::INFINITY {
        return Ok(0.0);
    }
    Ok(gamma_q(dof as f64 / 2.0, x / 2.0).clamp(0.0, 1.0))
}

/// T = (β̂ᴵ − β̂ᴵᴵ)² / (τ̂ᴵ + τ̂ᴵᴵ) on one degree of freedom.
pub fn test_unadjusted(beta1: f64, tau1: f64, beta2: f64, tau2: f64) -> Result<EdgeTest> {
    let var = tau1 + tau2;
    if !(var > 0.0) || !var.is_finite() {
        return Err(DiffNetError::DegenerateVariance);
    }
    let t = (beta1 - beta2).powi(2) / var;
    Ok(EdgeTest {
        j: 0,
        k: 0,
        statistic: t,
        dof: 1,
        p_value: chisq_upper_tail(t, 1)?,
        kind: TestKind::UnadjustedT,
        direction: Direction::JonK,
    })
}

/// Relative diagonal jitter applied to the summed covariance before inversion.
pub const COVARIANCE_JITTER: f64 = 1e-12;

/// S = (aᴵ − aᴵᴵ)ᵀ (Ωᴵ + Ωᴵᴵ)⁻¹ (aᴵ − aᴵᴵ) on d degrees of freedom.
pub fn test_adjusted(
    a1: &DVector<f64>,
    o1: &DMatrix<f64>,
    a2: &DVector<f64>,
    o2: &DMatrix<f64>,
) -> Result<EdgeTest> {
    let d = a1.len();
    if d == 0 || a2.len() != d || o1.shape() != (d, d) || o2.shape() != (d, d) {
        return Err(DiffNetError::ShapeMismatch(format!(
            "test_adjusted expects d-vectors and d×d matrices (d = {d})"
        )));
    }
    let sum = linalg::add_trace_jitter(&linalg::symmetrize(&(o1 + o2)), COVARIANCE_JITTER);
    let diff = a1 - a2;
    let s = linalg::inverse_quadratic_form(&sum, &diff).ok_or(DiffNetError::SingularCovariance)?;
    if !s.is_finite() {
        return Err(DiffNetError::SingularCovariance);
    }
    let s = s.max(0.0);
    Ok(EdgeTest {
        j: 0,
        k: 0,
        statistic: s,
        dof: d,
        p_value: chisq_upper_tail(s, d)?,
        kind: TestKind::AdjustedS,
        direction: Direction::JonK,
    })
}

/// Smaller of the two directional p-values; a missing direction passes the
/// other through. Anti-conservative by construction.
pub fn combine_min_p(p_jk: Option<f64>, p_kj: Option<f64>) -> Option<f64> {
    match (p_jk, p_kj) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    }
}

/// Harmonic correction c(m) = Σ_{i ≤ m} 1/i.
pub fn harmonic(m: usize) -> f64 {
    (1..=m).map(|i| 1.0 / i as f64).sum()
}

/// Benjamini–Yekutieli adjusted p-values (q-values) and rejection flags.
pub fn by_fdr(p_values: &[f64], kappa: f64) -> (Vec<f64>, Vec<bool>) {
    let m = p_values.len();
    if m == 0 {
        return (vec![], vec![]);
    }
    let cm = harmonic(m);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]).then(a.cmp(&b)));
    let mut q = vec![0.0; m];
    let mut running = f64::INFINITY;
    for rank in (1..=m).rev() {
        let i = order[rank - 1];
        let adj = (p_values[i] * m as f64 * cm / rank as f64).min(1.0);
        running = running.min(adj);
        q[i] = running;
    }
    // step-up: reject the r* smallest, r* the largest rank with p ≤ rκ/(m·c(m))
    let cutoff = (1..=m)
        .rev()
        .find(|&r| p_values[order[r - 1]] <= r as f64 * kappa / (m as f64 * cm))
        .unwrap_or(0);
    // q-values are capped at 1, so κ ≥ 1 rejects every edge
    let cutoff = if kappa >= 1.0 { m } else { cutoff };
    let mut rejected = vec![false; m];
    for &i in &order[..cutoff] {
        rejected[i] = true;
    }
    (q, rejected)
}

/// Min-p edge tests with BY q-values and the rejection set at level κ.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DifferentialNetwork {
    pub edges: Vec<EdgeTest>,
    pub q_values: Vec<f64>,
    /// Indices into `edges`.
    pub rejected: Vec<usize>,
    pub kappa: f64,
    /// The min-p rule does not preserve the nominal level of either
    /// directional test.
    pub anti_conservative: bool,
}

impl DifferentialNetwork {
    /// Assemble from directional tests keyed by (target, partner).
    ///
    /// Edges are reported once with j < k, sorted lexicographically.
    pub fn from_directional(tests: &[EdgeTest], kappa: f64) -> Self {
        use std::collections::BTreeMap;
        let mut by_edge: BTreeMap<(usize, usize), (Option<&EdgeTest>, Option<&EdgeTest>)> =
            BTreeMap::new();
        for t in tests {
            let key = (t.j.min(t.k), t.j.max(t.k));
            let slot = by_edge.entry(key).or_default();
            if t.j < t.k {
                slot.0 = Some(t);
            } else {
                slot.1 = Some(t);
            }
        }
        let edges: Vec<EdgeTest> = by_edge
            .into_iter()
            .filter_map(|((j, k), (a, b))| {
                let p = combine_min_p(a.map(|t| t.p_value), b.map(|t| t.p_value))?;
                let src = match (a, b) {
                    (Some(x), Some(y)) => {
                        if x.p_value <= y.p_value {
                            x
                        } else {
                            y
                        }
                    }
                    (Some(x), None) | (None, Some(x)) => x,
                    (None, None) => unreachable!(),
                };
                Some(EdgeTest {
                    j,
                    k,
                    statistic: src.statistic,
                    dof: src.dof,
                    p_value: p,
                    kind: src.kind,
                    direction: Direction::MinP,
                })
            })
            .collect();
        Self::from_edges(edges, kappa)
    }

    pub fn from_edges(edges: Vec<EdgeTest>, kappa: f64) -> Self {
        let p: Vec<f64> = edges.iter().map(|e| e.p_value).collect();
        let (q_values, flags) = by_fdr(&p, kappa);
        let rejected = flags
            .iter()
            .enumerate()
            .filter(|(_, &r)| r)
            .map(|(i, _)| i)
            .collect();
        Self {
            edges,
            q_values,
            rejected,
            kappa,
            anti_conservative: true,
        }
    }

    /// TSV with columns j, k, statistic, dof, p, q, rejected. Node labels are
    /// taken from `names` when given.
    pub fn write_tsv<W: Write>(&self, mut out: W, names: Option<&[String]>) -> Result<()> {
        writeln!(out, "j\tk\tS\tdof\tp\tq\trejected")?;
        let label = |i: usize| match names {
            Some(ns) => ns[i].clone(),
            None => i.to_string(),
        };
        let mut flags = vec![false; self.edges.len()];
        for &i in &self.rejected {
            flags[i] = true;
        }
        for (i, e) in self.edges.iter().enumerate() {
            writeln!(
                out,
                "{}\t{}\t{:.10e}\t{}\t{:.10e}\t{:.10e}\t{}",
                label(e.j),
                label(e.k),
                e.statistic,
                e.dof,
                e.p_value,
                self.q_values[i],
                flags[i]
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chisq_reference_points() {
        assert_eq!(chisq_upper_tail(0.0, 3).unwrap(), 1.0);
        let x = 2.0 * 20f64.ln();
        assert!((chisq_upper_tail(x, 2).unwrap() - 0.05).abs() < 1e-14);
        assert!((chisq_upper_tail(14.0671, 7).unwrap() - 0.05).abs() < 1e-4);
        assert!(chisq_upper_tail(-1.0, 1).is_err());
        assert!(chisq_upper_tail(1.0, 0).is_err());
    }

    #[test]
    fn unadjusted_examples() {
        let t = test_unadjusted(0.3, 0.1, 0.3, 0.2).unwrap();
        assert_eq!(t.statistic, 0.0);
        assert_eq!(t.p_value, 1.0);
        let t = test_unadjusted(3.84146f64.sqrt(), 0.5, 0.0, 0.5).unwrap();
        assert!((t.p_value - 0.05).abs() < 1e-4);
        assert!(matches!(
            test_unadjusted(1.0, 0.0, 0.0, 0.0),
            Err(DiffNetError::DegenerateVariance)
        ));
    }

    #[test]
    fn adjusted_collapses_to_unadjusted() {
        let a = DVector::from_element(1, 1.2);
        let b = DVector::from_element(1, 0.1);
        let s = test_adjusted(
            &a,
            &DMatrix::from_element(1, 1, 0.3),
            &b,
            &DMatrix::from_element(1, 1, 0.2),
        )
        .unwrap();
        let t = test_unadjusted(1.2, 0.3, 0.1, 0.2).unwrap();
        assert!((s.statistic - t.statistic).abs() < 1e-10);
        assert!((s.p_value - t.p_value).abs() < 1e-12);
    }

    #[test]
    fn adjusted_three_dof_reference() {
        let s = 7.8147f64;
        let a = DVector::from_vec(vec![s.sqrt(), 0.0, 0.0]);
        let t = test_adjusted(&a, &DMatrix::identity(3, 3), &DVector::zeros(3), &DMatrix::zeros(3, 3))
            .unwrap();
        assert!((t.p_value - 0.05).abs() < 1e-4);
    }

    #[test]
    fn min_p_rules() {
        assert_eq!(combine_min_p(Some(0.2), Some(0.6)), Some(0.2));
        assert_eq!(combine_min_p(Some(1.0), Some(1.0)), Some(1.0));
        assert_eq!(combine_min_p(None, Some(0.3)), Some(0.3));
        assert_eq!(combine_min_p(None, None), None);
    }

    #[test]
    fn by_examples() {
        let (q, r) = by_fdr(&[0.04], 0.05);
        assert_eq!(q, vec![0.04]);
        assert_eq!(r, vec![true]);
        let (q, r) = by_fdr(&[0.001, 0.2, 0.9], 0.05);
        assert!((q[0] - 0.0055).abs() < 1e-12);
        assert_eq!(r, vec![true, false, false]);
        let (_, r) = by_fdr(&[1.0, 1.0, 1.0], 0.05);
        assert!(r.iter().all(|&x| !x));
    }

    #[test]
    fn network_from_directions() {
        let mk = |j, k, p| EdgeTest {
            j,
            k,
            statistic: 1.0,
            dof: 1,
            p_value: p,
            kind: TestKind::UnadjustedT,
            direction: Direction::JonK,
        };
        let net = DifferentialNetwork::from_directional(
            &[mk(0, 1, 0.3), mk(1, 0, 0.01), mk(2, 0, 0.5)],
            1.0,
        );
        assert_eq!(net.edges.len(), 2);
        assert_eq!((net.edges[0].j, net.edges[0].k), (0, 1));
        assert_eq!(net.edges[0].p_value, 0.01);
        assert_eq!(net.rejected, vec![0, 1]);
    }
}
