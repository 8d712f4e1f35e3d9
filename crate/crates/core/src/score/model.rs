use std::sync::Arc;

/// Node-conditional exponential family used by generalized score matching.
///
/// Derivatives are with respect to the target node value `xj`. The self
/// terms describe ψ(x, x) as a function of the single argument x, with total
/// derivatives, since the target's own block enters the conditional density
/// through both arguments.
pub trait ScoreModel: Send + Sync {
    fn name(&self) -> &str;

    fn psi(&self, xj: f64, xk: f64) -> f64;
    fn psi_dot(&self, xj: f64, xk: f64) -> f64;
    fn psi_ddot(&self, xj: f64, xk: f64) -> f64;

    fn self_psi(&self, x: f64) -> f64 {
        self.psi(x, x)
    }
    fn self_dot(&self, x: f64) -> f64;
    fn self_ddot(&self, x: f64) -> f64;

    fn zeta(&self, xj: f64, phi_c: f64) -> f64;
    fn zeta_dot(&self, xj: f64, phi_c: f64) -> f64;
    fn zeta_ddot(&self, xj: f64, phi_c: f64) -> f64;

    /// Weight function v and its derivative.
    fn v(&self, z: f64) -> f64;
    fn v_dot(&self, z: f64) -> f64;

    fn in_support(&self, x: f64) -> bool;
}

/// ψ(xⱼ, xₖ) = −xⱼxₖ, ζ(xⱼ, φ) = −xⱼφ and v ≡ 1 on ℝ.
#[derive(Debug, Clone, Copy, Default)]
pub struct GaussianModel;

/// Gaussian sufficient statistics on ℝ₊ with v(z) = log(1 + z).
#[derive(Debug, Clone, Copy, Default)]
pub struct NonNegGaussianModel;

macro_rules! gaussian_statistics {
    () => {
        fn psi(&self, xj: f64, xk: f64) -> f64 {
            -xj * xk
        }
        fn psi_dot(&self, _xj: f64, xk: f64) -> f64 {
            -xk
        }
        fn psi_ddot(&self, _xj: f64, _xk: f64) -> f64 {
            0.0
        }
        fn self_dot(&self, x: f64) -> f64 {
            -2.0 * x
        }
        fn self_ddot(&self, _x: f64) -> f64 {
            -2.0
        }
        fn zeta(&self, xj: f64, phi_c: f64) -> f64 {
            -xj * phi_c
        }
        fn zeta_dot(&self, _xj: f64, phi_c: f64) -> f64 {
            -phi_c
        }
        fn zeta_ddot(&self, _xj: f64, _phi_c: f64) -> f64 {
            0.0
        }
    };
}

impl ScoreModel for GaussianModel {
    fn name(&self) -> &str {
        "gaussian"
    }
    gaussian_statistics!();
    fn v(&self, _z: f64) -> f64 {
        1.0
    }
    fn v_dot(&self, _z: f64) -> f64 {
        0.0
    }
    fn in_support(&self, x: f64) -> bool {
        x.is_finite()
    }
}

impl ScoreModel for NonNegGaussianModel {
    fn name(&self) -> &str {
        "nonneg-gaussian"
    }
    gaussian_statistics!();
    fn v(&self, z: f64) -> f64 {
        z.ln_1p()
    }
    fn v_dot(&self, z: f64) -> f64 {
        1.0 / (1.0 + z)
    }
    fn in_support(&self, x: f64) -> bool {
        x.is_finite() && x >= 0.0
    }
}

pub fn gaussian_score_model() -> Arc<dyn ScoreModel> {
    Arc::new(GaussianModel)
}

pub fn nonneg_gaussian_score_model() -> Arc<dyn ScoreModel> {
    Arc::new(NonNegGaussianModel)
}

/// Look up a shipped model by name ("gaussian", "nonneg-gaussian").
pub fn score_model_by_name(name: &str) -> Option<Arc<dyn ScoreModel>> {
    match name {
        "gaussian" => Some(gaussian_score_model()),
        "nonneg-gaussian" => Some(nonneg_gaussian_score_model()),
        _ => None,
    }
}

/// Largest discrepancy between analytic and central finite-difference
/// derivatives over the given points `(xj, xk, phi)`.
pub fn derivative_check(model: &dyn ScoreModel, points: &[(f64, f64, f64)]) -> f64 {
    let h = 1e-5;
    let fd = |f: &dyn Fn(f64) -> f64, x: f64| (f(x + h) - f(x - h)) / (2.0 * h);
    let mut worst: f64 = 0.0;
    for &(xj, xk, ph) in points {
        let checks = [
            (fd(&|x| model.psi(x, xk), xj), model.psi_dot(xj, xk)),
            (fd(&|x| model.psi_dot(x, xk), xj), model.psi_ddot(xj, xk)),
            (fd(&|x| model.self_psi(x), xj), model.self_dot(xj)),
            (fd(&|x| model.self_dot(x), xj), model.self_ddot(xj)),
            (fd(&|x| model.zeta(x, ph), xj), model.zeta_dot(xj, ph)),
            (fd(&|x| model.zeta_dot(x, ph), xj), model.zeta_ddot(xj, ph)),
            (fd(&|x| model.v(x), xj), model.v_dot(xj)),
        ];
        for (num, exact) in checks {
            worst = worst.max((num - exact).abs());
        }
    }
    worst
}
