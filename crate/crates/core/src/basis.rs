//! Basis expansions φ(w) and the interaction design matrices built from them.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{DiffNetError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BasisKind {
    Linear,
    CubicPolynomial,
    Custom,
}

pub type BasisFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// The expansion φ: ℝ^q → ℝ^d. The first coordinate is always the constant 1.
#[derive(Clone)]
pub struct BasisSpec {
    kind: BasisKind,
    q: usize,
    d: usize,
    custom: Option<BasisFn>,
}

impl fmt::Debug for BasisSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BasisSpec")
            .field("kind", &self.kind)
            .field("q", &self.q)
            .field("d", &self.d)
            .finish()
    }
}

impl BasisSpec {
    /// φ(w) = (1, w₁, …, w_q).
    pub fn linear(q: usize) -> Self {
        Self {
            kind: BasisKind::Linear,
            q,
            d: q + 1,
            custom: None,
        }
    }

    /// φ(w) = (1, w₁, w₁², w₁³, …, w_q, w_q², w_q³).
    pub fn cubic(q: usize) -> Self {
        Self {
            kind: BasisKind::CubicPolynomial,
            q,
            d: 3 * q + 1,
            custom: None,
        }
    }

    /// User-supplied expansion. The evaluator must return `d` values with a
    /// leading 1; this is checked at `w = 0`.
    pub fn custom(q: usize, d: usize, f: BasisFn) -> Result<Self> {
        if d == 0 {
            return Err(DiffNetError::InvalidInput("basis dimension must be ≥ 1".into()));
        }
        let at_zero = f(&vec![0.0; q]);
        if at_zero.len() != d {
            return Err(DiffNetError::DimensionMismatch {
                expected: d,
                got: at_zero.len(),
            });
        }
        if at_zero[0] != 1.0 {
            return Err(DiffNetError::InvalidInput(
                "custom basis must have a constant first coordinate equal to 1".into(),
            ));
        }
        Ok(Self {
            kind: BasisKind::Custom,
            q,
            d,
            custom: Some(f),
        })
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }
    pub fn q(&self) -> usize {
        self.q
    }
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn expand(&self, w: &[f64]) -> Result<Vec<f64>> {
        if w.len() != self.q {
            return Err(DiffNetError::DimensionMismatch {
                expected: self.q,
                got: w.len(),
            });
        }
        let mut out = Vec::with_capacity(self.d);
        match self.kind {
            BasisKind::Linear => {
                out.push(1.0);
                out.extend_from_slice(w);
            }
            BasisKind::CubicPolynomial => {
                out.push(1.0);
                for &x in w {
                    out.extend_from_slice(&[x, x * x, x * x * x]);
                }
            }
            BasisKind::Custom => {
                let f = self.custom.as_ref().expect("custom basis without evaluator");
                out = f(w);
                if out.len() != self.d {
                    return Err(DiffNetError::DimensionMismatch {
                        expected: self.d,
                        got: out.len(),
                    });
                }
            }
        }
        Ok(out)
    }

    /// n × d matrix whose rows are φ(Wᵢ).
    pub fn expand_rows(&self, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if w.ncols() != self.q {
            return Err(DiffNetError::DimensionMismatch {
                expected: self.q,
                got: w.ncols(),
            });
        }
        let n = w.nrows();
        let mut phi = DMatrix::zeros(n, self.d);
        let mut row = vec![0.0; self.q];
        for i in 0..n {
            for (r, slot) in row.iter_mut().enumerate() {
                *slot = w[(i, r)];
            }
            let e = self.expand(&row)?;
            for (c, v) in e.into_iter().enumerate() {
                phi[(i, c)] = v;
            }
        }
        Ok(phi)
    }
}

/// Free-function form of [`BasisSpec::expand`].
pub fn expand(w: &[f64], spec: &BasisSpec) -> Result<Vec<f64>> {
    spec.expand(w)
}

/// Interaction design for one group.
///
/// `v[k]` has row i equal to `x[i,k] · φ(Wᵢ)`. When `scaled` is set, every
/// column of every `v[k]` has been divided by the matching entry of
/// `column_scales[k]`.
#[derive(Debug, Clone)]
pub struct DesignBundle {
    pub phi: DMatrix<f64>,
    pub v: Vec<DMatrix<f64>>,
    pub xc: DMatrix<f64>,
    pub column_scales: Vec<DVector<f64>>,
    pub scaled: bool,
}

impl DesignBundle {
    pub fn n(&self) -> usize {
        self.phi.nrows()
    }
    pub fn d(&self) -> usize {
        self.phi.ncols()
    }
    pub fn p(&self) -> usize {
        self.v.len()
    }

    /// n × (p−1)d matrix [V₁, …, V_p] without block `j`, in node order.
    pub fn stacked_without(&self, j: usize) -> DMatrix<f64> {
        let n = self.n();
        let d = self.d();
        let mut out = DMatrix::zeros(n, (self.p() - 1) * d);
        for (slot, k) in (0..self.p()).filter(|&k| k != j).enumerate() {
            out.view_mut((0, slot * d), (n, d)).copy_from(&self.v[k]);
        }
        out
    }

    /// Node indices of the predictor blocks for target `j`, in stacking order.
    pub fn partners(&self, j: usize) -> Vec<usize> {
        (0..self.p()).filter(|&k| k != j).collect()
    }
}

/// Population standard deviation (divide by n).
pub(crate) fn population_sd(col: impl Iterator<Item = f64> + Clone) -> f64 {
    let (mut n, mut sum) = (0usize, 0.0);
    for v in col.clone() {
        n += 1;
        sum += v;
    }
    if n == 0 {
        return 0.0;
    }
    let mean = sum / n as f64;
    let ss: f64 = col.map(|v| (v - mean) * (v - mean)).sum();
    (ss / n as f64).sqrt()
}

const CENTERING_RIDGE: f64 = 1e-10;

pub fn build_design(data: &Dataset, spec: &BasisSpec) -> Result<DesignBundle> {
    if spec.q() != data.q() {
        return Err(DiffNetError::DimensionMismatch {
            expected: data.q(),
            got: spec.q(),
        });
    }
    let phi = spec.expand_rows(data.w())?;
    let n = data.n();
    let d = spec.d();
    let x = data.x();

    let v: Vec<DMatrix<f64>> = (0..data.p())
        .map(|k| DMatrix::from_fn(n, d, |i, c| x[(i, k)] * phi[(i, c)]))
        .collect();

    // Conditional-mean centering: residual of X on Phi by ridge-stabilized LS.
    let gram = phi.transpose() * &phi;
    let mut ridged = gram.clone();
    let shift = CENTERING_RIDGE * gram.trace();
    for i in 0..d {
        ridged[(i, i)] += shift;
    }
    let ch = ridged.cholesky().ok_or(DiffNetError::RankDeficientBasis)?;
    let coef = ch.solve(&(phi.transpose() * x));
    let xc = x - &phi * coef;

    let column_scales = v
        .iter()
        .map(|vk| DVector::from_fn(d, |c, _| population_sd(vk.column(c).iter().copied())))
        .collect();

    Ok(DesignBundle {
        phi,
        v,
        xc,
        column_scales,
        scaled: false,
    })
}

/// Divide every V column by its population standard deviation.
///
/// Scales are recomputed from the bundle's current columns, so applying this
/// to an already-unit-scale bundle is the identity. Recorded scales compose:
/// the returned `column_scales` map scaled coefficients back to the raw V
/// coordinates via `α_raw = α_scaled / scale`.
pub fn scale_columns(bundle: &DesignBundle) -> Result<DesignBundle> {
    let d = bundle.d();
    let mut v = Vec::with_capacity(bundle.p());
    let mut scales = Vec::with_capacity(bundle.p());
    for (k, vk) in bundle.v.iter().enumerate() {
        let sd = DVector::from_fn(d, |c, _| population_sd(vk.column(c).iter().copied()));
        let prev = if bundle.scaled {
            bundle.column_scales[k].clone()
        } else {
            DVector::from_element(d, 1.0)
        };
        let mut out = vk.clone();
        for c in 0..d {
            let s = sd[c];
            if !(s > 0.0) || s < 1e-12 * vk.column(c).amax().max(1e-300) {
                return Err(DiffNetError::ZeroVarianceColumn { node: k, column: c });
            }
            out.column_mut(c).scale_mut(1.0 / s);
        }
        v.push(out);
        scales.push(sd.component_mul(&prev));
    }
    Ok(DesignBundle {
        phi: bundle.phi.clone(),
        v,
        xc: bundle.xc.clone(),
        column_scales: scales,
        scaled: true,
    })
}

/// Map a stacked coefficient vector fit on a scaled bundle back to raw V
/// coordinates. `partners` lists the node of each d-block in stacking order.
pub fn unscale_coefficients(
    bundle: &DesignBundle,
    partners: &[usize],
    coef: &DVector<f64>,
) -> DVector<f64> {
    if !bundle.scaled {
        return coef.clone();
    }
    let d = bundle.d();
    DVector::from_fn(coef.len(), |i, _| {
        let (slot, c) = (i / d, i % d);
        coef[i] / bundle.column_scales[partners[slot]][c]
    })
}
