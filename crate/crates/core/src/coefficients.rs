//! Coefficients `(f, σ, g, h)` of the fast-slow system and the built-in
//! presets.
//!
//! Shapes: `f: (ξ, φ) -> R^m`, `σ: ξ -> R^{m x d}`, `g: (ξ, φ) -> R^n`,
//! `h: (ξ, φ) -> R^{n x d'}`, matrices row-major.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::central_jacobian;
use crate::scalar::Real;

/// Dimensions `(m, n, d, d')`: slow state, fast state, fBm, Bm.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub m: usize,
    pub n: usize,
    pub d: usize,
    pub d_fast: usize,
}

impl Dims {
    pub const SCALAR: Dims = Dims { m: 1, n: 1, d: 1, d_fast: 1 };
}

/// Declared regularity of a coefficient set. Nothing here is verified; the
/// flags record what the caller asserts about `f, σ, g, h`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Regularity {
    /// `σ` is C³ with bounded derivatives, `f` globally Lipschitz.
    pub smooth_slow: bool,
    /// `g, h` regular enough for the Itô form of the fast equation.
    pub smooth_fast: bool,
    /// `g, h` bounded in `φ` growth (linear growth in `ξ`).
    pub growth: bool,
    /// Dissipativity of the frozen dynamics with contraction rate `beta1`:
    /// `2<φ-φ', g̃(ξ,φ)-g̃(ξ,φ')> + |h(ξ,φ)-h(ξ,φ')|² ≤ -beta1 |φ-φ'|²`.
    pub dissipative: bool,
    pub beta1: Option<f64>,
}

impl Regularity {
    pub fn all(beta1: f64) -> Self {
        Self { smooth_slow: true, smooth_fast: true, growth: true, dissipative: true, beta1: Some(beta1) }
    }
}

pub trait CoefficientSet<T: Real>: Send + Sync {
    fn dims(&self) -> Dims;
    fn f(&self, xi: &[T], phi: &[T], out: &mut [T]);
    fn sigma(&self, xi: &[T], out: &mut [T]);
    fn g(&self, xi: &[T], phi: &[T], out: &mut [T]);
    fn h(&self, xi: &[T], phi: &[T], out: &mut [T]);

    /// `out[(i * d + j) * m + k] = ∂σ_{ij}/∂ξ_k`.
    fn sigma_jacobian(&self, xi: &[T], out: &mut [T]) {
        let dims = self.dims();
        central_jacobian(xi, dims.m * dims.d, |u, o| self.sigma(u, o), out);
    }

    /// `out[(l * d' + j) * n + k] = ∂h_{lj}/∂φ_k`.
    fn h_jacobian(&self, xi: &[T], phi: &[T], out: &mut [T]) {
        let dims = self.dims();
        central_jacobian(phi, dims.n * dims.d_fast, |u, o| self.h(xi, u, o), out);
    }

    fn regularity(&self) -> Regularity {
        Regularity::default()
    }
}

impl<T: Real, C: CoefficientSet<T> + ?Sized> CoefficientSet<T> for &C {
    fn dims(&self) -> Dims {
        (**self).dims()
    }
    fn f(&self, xi: &[T], phi: &[T], out: &mut [T]) {
        (**self).f(xi, phi, out)
    }
    fn sigma(&self, xi: &[T], out: &mut [T]) {
        (**self).sigma(xi, out)
    }
    fn g(&self, xi: &[T], phi: &[T], out: &mut [T]) {
        (**self).g(xi, phi, out)
    }
    fn h(&self, xi: &[T], phi: &[T], out: &mut [T]) {
        (**self).h(xi, phi, out)
    }
    fn sigma_jacobian(&self, xi: &[T], out: &mut [T]) {
        (**self).sigma_jacobian(xi, out)
    }
    fn h_jacobian(&self, xi: &[T], phi: &[T], out: &mut [T]) {
        (**self).h_jacobian(xi, phi, out)
    }
    fn regularity(&self) -> Regularity {
        (**self).regularity()
    }
}

/// Built-in scalar (`m = n = d = d' = 1`) coefficient sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// `f = φ/(1+ξ²) + sin ξ`, `σ = (1+ξ²)^{-1/2}`, `g = ξ - 8φ`,
    /// `h = sin ξ + sin φ`.
    Nonlinear,
    /// As `Nonlinear` but with additive fast noise `h ≡ 1`, so the frozen
    /// dynamics are Ornstein-Uhlenbeck with law `N(ξ/8, 1/16)`.
    Ou,
    /// Linear oracle system: `f = φ`, `σ ≡ 0`, `g = ξ - 8φ`, `h ≡ 1`.
    OuLinear,
    /// `f = sin ξ` does not depend on the fast variable, so `f̄ = f`.
    Degenerate,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::Nonlinear, Preset::Ou, Preset::OuLinear, Preset::Degenerate];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Nonlinear => "nonlinear",
            Preset::Ou => "ou",
            Preset::OuLinear => "ou-linear",
            Preset::Degenerate => "degenerate",
        }
    }

    /// Closed-form averaged drift, when the frozen law is Gaussian.
    pub fn exact_fbar(self, xi: f64) -> Option<f64> {
        match self {
            Preset::Nonlinear => None,
            Preset::Ou => Some(xi / (8.0 * (1.0 + xi * xi)) + xi.sin()),
            Preset::OuLinear => Some(xi / 8.0),
            Preset::Degenerate => Some(xi.sin()),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| {
            let known: Vec<_> = Preset::ALL.iter().map(|p| p.name()).collect();
            Error::config(format!("unknown preset {s:?} (known: {})", known.join(", ")))
        })
    }
}

impl<T: Real> CoefficientSet<T> for Preset {
    fn dims(&self) -> Dims {
        Dims::SCALAR
    }

    fn f(&self, xi: &[T], phi: &[T], out: &mut [T]) {
        let (x, y) = (xi[0], phi[0]);
        out[0] = match self {
            Preset::Nonlinear | Preset::Ou => y / (T::one() + x * x) + x.sin(),
            Preset::OuLinear => y,
            Preset::Degenerate => x.sin(),
        };
    }

    fn sigma(&self, xi: &[T], out: &mut [T]) {
        let x = xi[0];
        out[0] = match self {
            Preset::OuLinear => T::zero(),
            _ => (T::one() + x * x).sqrt().recip(),
        };
    }

    fn g(&self, xi: &[T], phi: &[T], out: &mut [T]) {
        out[0] = xi[0] - T::lit(8.0) * phi[0];
    }

    fn h(&self, xi: &[T], phi: &[T], out: &mut [T]) {
        out[0] = match self {
            Preset::Nonlinear => xi[0].sin() + phi[0].sin(),
            _ => T::one(),
        };
    }

    fn sigma_jacobian(&self, xi: &[T], out: &mut [T]) {
        let x = xi[0];
        out[0] = match self {
            Preset::OuLinear => T::zero(),
            _ => -x / (T::one() + x * x).powf(T::lit(1.5)),
        };
    }

    fn h_jacobian(&self, _xi: &[T], phi: &[T], out: &mut [T]) {
        out[0] = match self {
            Preset::Nonlinear => phi[0].cos(),
            _ => T::zero(),
        };
    }

    fn regularity(&self) -> Regularity {
        match self {
            // g̃ = ξ - 8φ + ½(sin ξ + sin φ)cos φ has ∂_φ g̃ ≤ -8 + 3/2 and
            // |∂_φ h| ≤ 1, giving a contraction rate of at least 12.
            Preset::Nonlinear => Regularity::all(12.0),
            _ => Regularity::all(16.0),
        }
    }
}

type Map<T> = Arc<dyn Fn(&[T], &[T], &mut [T]) + Send + Sync>;
type SlowMap<T> = Arc<dyn Fn(&[T], &mut [T]) + Send + Sync>;

/// Coefficient set assembled from closures; Jacobians by central
/// differences.
#[derive(Clone)]
pub struct FnCoefficients<T> {
    dims: Dims,
    f: Map<T>,
    sigma: SlowMap<T>,
    g: Map<T>,
    h: Map<T>,
    regularity: Regularity,
}

impl<T: Real> FnCoefficients<T> {
    pub fn new(
        dims: Dims,
        f: impl Fn(&[T], &[T], &mut [T]) + Send + Sync + 'static,
        sigma: impl Fn(&[T], &mut [T]) + Send + Sync + 'static,
        g: impl Fn(&[T], &[T], &mut [T]) + Send + Sync + 'static,
        h: impl Fn(&[T], &[T], &mut [T]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            dims,
            f: Arc::new(f),
            sigma: Arc::new(sigma),
            g: Arc::new(g),
            h: Arc::new(h),
            regularity: Regularity::default(),
        }
    }

    pub fn with_regularity(mut self, regularity: Regularity) -> Self {
        self.regularity = regularity;
        self
    }
}

impl<T: Real> CoefficientSet<T> for FnCoefficients<T> {
    fn dims(&self) -> Dims {
        self.dims
    }
    fn f(&self, xi: &[T], phi: &[T], out: &mut [T]) {
        (self.f)(xi, phi, out)
    }
    fn sigma(&self, xi: &[T], out: &mut [T]) {
        (self.sigma)(xi, out)
    }
    fn g(&self, xi: &[T], phi: &[T], out: &mut [T]) {
        (self.g)(xi, phi, out)
    }
    fn h(&self, xi: &[T], phi: &[T], out: &mut [T]) {
        (self.h)(xi, phi, out)
    }
    fn regularity(&self) -> Regularity {
        self.regularity
    }
}

/// Checks that `beta1` is declared, as required by the ergodic estimators.
pub fn require_beta1<T: Real>(coeffs: &dyn CoefficientSet<T>) -> Result<f64> {
    let reg = coeffs.regularity();
    match reg.beta1 {
        Some(b) if reg.dissipative && b > 0.0 => Ok(b),
        _ => Err(Error::config("coefficients do not declare a dissipative fast equation (beta1 > 0)")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_names_roundtrip() {
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
        assert!("nope".parse::<Preset>().is_err());
    }

    #[test]
    fn analytic_jacobians_match_differences() {
        for p in Preset::ALL {
            for &x in &[-1.3, 0.0, 0.7, 2.5] {
                let (xi, phi) = ([x], [0.4 - x]);
                let mut analytic = [0.0];
                let mut numeric = [0.0];
                CoefficientSet::<f64>::sigma_jacobian(&p, &xi, &mut analytic);
                central_jacobian(&xi, 1, |u, o| CoefficientSet::<f64>::sigma(&p, u, o), &mut numeric);
                assert!((analytic[0] - numeric[0]).abs() < 1e-8);
                CoefficientSet::<f64>::h_jacobian(&p, &xi, &phi, &mut analytic);
                central_jacobian(&phi, 1, |u, o| CoefficientSet::<f64>::h(&p, &xi, u, o), &mut numeric);
                assert!((analytic[0] - numeric[0]).abs() < 1e-8);
            }
        }
    }
}
