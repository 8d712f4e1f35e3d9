use nalgebra::{DMatrix, DVector};

use crate::basis::BasisSpec;
use crate::data::Dataset;
use crate::error::{DiffNetError, Result};

use super::model::ScoreModel;

/// Score-matching design matrices for one target node.
///
/// Column layout of `v1`/`u1`: p blocks of d columns in node order, the
/// target's own block included. `scales` (length (p+1)d, α blocks then θ)
/// records the column scaling applied, all ones for a raw design.
#[derive(Debug, Clone)]
pub struct SmDesign {
    pub target: usize,
    pub p: usize,
    pub d: usize,
    pub v1: DMatrix<f64>,
    pub v2: DMatrix<f64>,
    pub u1: DMatrix<f64>,
    pub u2: DMatrix<f64>,
    pub scales: DVector<f64>,
}

pub fn build_sm_design(
    data: &Dataset,
    spec: &BasisSpec,
    model: &dyn ScoreModel,
    j: usize,
) -> Result<SmDesign> {
    let (n, p) = (data.n(), data.p());
    if j >= p {
        return Err(DiffNetError::InvalidInput(format!("node {j} out of range")));
    }
    if spec.q() != data.q() {
        return Err(DiffNetError::DimensionMismatch {
            expected: data.q(),
            got: spec.q(),
        });
    }
    let x = data.x();
    for i in 0..n {
        for k in 0..p {
            if !model.in_support(x[(i, k)]) {
                return Err(DiffNetError::SupportViolation { row: i, node: k });
            }
        }
    }
    let phi = spec.expand_rows(data.w())?;
    let d = spec.d();
    let mut v1 = DMatrix::zeros(n, p * d);
    let mut u1 = DMatrix::zeros(n, p * d);
    let mut v2 = DMatrix::zeros(n, d);
    let mut u2 = DMatrix::zeros(n, d);
    for i in 0..n {
        let xj = x[(i, j)];
        let (v, vd) = (model.v(xj), model.v_dot(xj));
        let vs = v.sqrt();
        for k in 0..p {
            let (pd, pdd) = if k == j {
                (model.self_dot(xj), model.self_ddot(xj))
            } else {
                (model.psi_dot(xj, x[(i, k)]), model.psi_ddot(xj, x[(i, k)]))
            };
            for c in 0..d {
                v1[(i, k * d + c)] = vs * pd * phi[(i, c)];
                u1[(i, k * d + c)] = (vd * pd + v * pdd) * phi[(i, c)];
            }
        }
        for c in 0..d {
            let zd = model.zeta_dot(xj, phi[(i, c)]);
            let zdd = model.zeta_ddot(xj, phi[(i, c)]);
            v2[(i, c)] = vs * zd;
            u2[(i, c)] = v * zdd + vd * zd;
        }
    }
    let design = SmDesign {
        target: j,
        p,
        d,
        v1,
        v2,
        u1,
        u2,
        scales: DVector::from_element((p + 1) * d, 1.0),
    };
    if design.v1.iter().chain(design.u1.iter()).any(|v| !v.is_finite()) {
        return Err(DiffNetError::InvalidInput(format!(
            "non-finite score-matching design for node {j}"
        )));
    }
    Ok(design)
}

impl SmDesign {
    pub fn n(&self) -> usize {
        self.v1.nrows()
    }

    /// Total coefficient count (p+1)d.
    pub fn dim(&self) -> usize {
        (self.p + 1) * self.d
    }

    /// [V1 V2], n × (p+1)d.
    pub fn v(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n(), self.dim());
        out.columns_mut(0, self.p * self.d).copy_from(&self.v1);
        out.columns_mut(self.p * self.d, self.d).copy_from(&self.v2);
        out
    }

    /// [U1 U2], n × (p+1)d.
    pub fn u(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n(), self.dim());
        out.columns_mut(0, self.p * self.d).copy_from(&self.u1);
        out.columns_mut(self.p * self.d, self.d).copy_from(&self.u2);
        out
    }

    /// Quadratic form of the loss: L(x) = ½xᵀHx − bᵀx with H = (1/n)VᵀV and
    /// b = −(1/n)Uᵀ1.
    pub fn quadratic(&self) -> (DMatrix<f64>, DVector<f64>) {
        let v = self.v();
        let n = self.n() as f64;
        let h = v.tr_mul(&v) / n;
        let b = -self.u().row_sum().transpose() / n;
        (h, b)
    }

    /// Divide every column of V and U by the root mean square of the V column.
    /// Coefficients fit on the result map back via `x_raw = x / scales`.
    pub fn scaled(&self) -> Result<SmDesign> {
        let mut out = self.clone();
        let pd = self.p * self.d;
        for col in 0..self.dim() {
            let vc = if col < pd {
                self.v1.column(col)
            } else {
                self.v2.column(col - pd)
            };
            let s = (vc.norm_squared() / self.n() as f64).sqrt();
            if !(s > 1e-12 * vc.amax().max(1e-300)) {
                let node = if col < pd { col / self.d } else { self.p };
                return Err(DiffNetError::ZeroVarianceColumn {
                    node,
                    column: col % self.d,
                });
            }
            if col < pd {
                out.v1.column_mut(col).scale_mut(1.0 / s);
                out.u1.column_mut(col).scale_mut(1.0 / s);
            } else {
                let c = col - pd;
                out.v2.column_mut(c).scale_mut(1.0 / s);
                out.u2.column_mut(c).scale_mut(1.0 / s);
            }
            out.scales[col] = self.scales[col] * s;
        }
        Ok(out)
    }

    fn check_shapes(&self, alpha: &DVector<f64>, theta: &DVector<f64>) -> Result<()> {
        if alpha.len() != self.p * self.d || theta.len() != self.d {
            return Err(DiffNetError::ShapeMismatch(format!(
                "expected alpha of length {} and theta of length {}, got {} and {}",
                self.p * self.d,
                self.d,
                alpha.len(),
                theta.len()
            )));
        }
        Ok(())
    }

    /// Row-wise V1α + V2θ.
    pub fn fitted(&self, alpha: &DVector<f64>, theta: &DVector<f64>) -> DVector<f64> {
        &self.v1 * alpha + &self.v2 * theta
    }
}

/// (1/2n)‖V1α + V2θ‖² + (1/n)1ᵀ(U1α + U2θ).
pub fn sm_loss(design: &SmDesign, alpha: &DVector<f64>, theta: &DVector<f64>) -> Result<f64> {
    design.check_shapes(alpha, theta)?;
    let n = design.n() as f64;
    let r = design.fitted(alpha, theta);
    let lin = (&design.u1 * alpha + &design.u2 * theta).sum();
    Ok(0.5 * r.norm_squared() / n + lin / n)
}

/// Gradient of [`sm_loss`] as (∂α, ∂θ).
pub fn sm_gradient(
    design: &SmDesign,
    alpha: &DVector<f64>,
    theta: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    design.check_shapes(alpha, theta)?;
    let n = design.n() as f64;
    let r = design.fitted(alpha, theta);
    let ga = (design.v1.tr_mul(&r) + design.u1.row_sum().transpose()) / n;
    let gt = (design.v2.tr_mul(&r) + design.u2.row_sum().transpose()) / n;
    Ok((ga, gt))
}
