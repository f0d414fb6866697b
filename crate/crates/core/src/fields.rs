//! Evaluable coefficient maps and their Jacobians.
//!
//! Matrices are row-major. Jacobians of a matrix field `M: R^k -> R^{r x c}`
//! are stored as `jac[(i * c + j) * k + l] = ∂M_{ij} / ∂u_l`.

use std::sync::Arc;

use crate::scalar::Real;

/// Relative step of the central differences used when no analytic Jacobian
/// is supplied: `h_l = FD_REL_STEP * (1 + |u_l|)`.
pub const FD_REL_STEP: f64 = 1e-5;

/// Central-difference Jacobian of `eval: R^k -> R^p` at `u`; `out` has
/// length `p * k`.
pub fn central_jacobian<T: Real>(u: &[T], p: usize, mut eval: impl FnMut(&[T], &mut [T]), out: &mut [T]) {
    let k = u.len();
    debug_assert_eq!(out.len(), p * k);
    let mut probe = u.to_vec();
    let mut plus = vec![T::zero(); p];
    let mut minus = vec![T::zero(); p];
    for l in 0..k {
        let h = T::lit(FD_REL_STEP) * (T::one() + u[l].abs());
        probe[l] = u[l] + h;
        eval(&probe, &mut plus);
        probe[l] = u[l] - h;
        eval(&probe, &mut minus);
        probe[l] = u[l];
        let inv = T::one() / (h + h);
        for q in 0..p {
            out[q * k + l] = (plus[q] - minus[q]) * inv;
        }
    }
}

/// `u ↦ a(u) ∈ R^dim`.
pub trait VectorField<T: Real>: Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, u: &[T], out: &mut [T]);
}

/// `u ↦ M(u) ∈ R^{rows x cols}`, `u ∈ R^dim_in`.
pub trait MatrixField<T: Real>: Send + Sync {
    fn dim_in(&self) -> usize;
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn eval(&self, u: &[T], out: &mut [T]);

    /// `∂M_{ij}/∂u_l`; central differences unless overridden.
    fn jacobian(&self, u: &[T], out: &mut [T]) {
        central_jacobian(u, self.rows() * self.cols(), |v, o| self.eval(v, o), out);
    }
}

type VecFn<T> = Arc<dyn Fn(&[T], &mut [T]) + Send + Sync>;

/// Vector field from a closure.
#[derive(Clone)]
pub struct FnVectorField<T> {
    dim: usize,
    f: VecFn<T>,
}

impl<T: Real> FnVectorField<T> {
    pub fn new(dim: usize, f: impl Fn(&[T], &mut [T]) + Send + Sync + 'static) -> Self {
        Self { dim, f: Arc::new(f) }
    }

    pub fn zero(dim: usize) -> Self {
        Self::new(dim, |_, out: &mut [T]| out.iter_mut().for_each(|v| *v = T::zero()))
    }
}

impl<T: Real> VectorField<T> for FnVectorField<T> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, u: &[T], out: &mut [T]) {
        (self.f)(u, out)
    }
}

/// Matrix field from a closure, with an optional analytic Jacobian.
#[derive(Clone)]
pub struct FnMatrixField<T> {
    dim_in: usize,
    rows: usize,
    cols: usize,
    f: VecFn<T>,
    jac: Option<VecFn<T>>,
}

impl<T: Real> FnMatrixField<T> {
    pub fn new(dim_in: usize, rows: usize, cols: usize, f: impl Fn(&[T], &mut [T]) + Send + Sync + 'static) -> Self {
        Self { dim_in, rows, cols, f: Arc::new(f), jac: None }
    }

    pub fn with_jacobian(mut self, jac: impl Fn(&[T], &mut [T]) + Send + Sync + 'static) -> Self {
        self.jac = Some(Arc::new(jac));
        self
    }

    pub fn constant(dim_in: usize, rows: usize, cols: usize, value: Vec<T>) -> Self {
        assert_eq!(value.len(), rows * cols);
        Self::new(dim_in, rows, cols, move |_, out: &mut [T]| out.copy_from_slice(&value))
            .with_jacobian(|_, out: &mut [T]| out.iter_mut().for_each(|v| *v = T::zero()))
    }
}

impl<T: Real> MatrixField<T> for FnMatrixField<T> {
    fn dim_in(&self) -> usize {
        self.dim_in
    }

    fn rows(&self) -> usize {
        self.rows
    }

    fn cols(&self) -> usize {
        self.cols
    }

    fn eval(&self, u: &[T], out: &mut [T]) {
        (self.f)(u, out)
    }

    fn jacobian(&self, u: &[T], out: &mut [T]) {
        match &self.jac {
            Some(j) => j(u, out),
            None => central_jacobian(u, self.rows * self.cols, |v, o| (self.f)(v, o), out),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_differences_match_analytic() {
        let field = FnMatrixField::<f64>::new(2, 1, 2, |u, out| {
            out[0] = u[0].sin() * u[1];
            out[1] = (u[0] * u[1]).exp();
        });
        let u = [0.3, -0.7];
        let mut jac = vec![0.0; 4];
        field.jacobian(&u, &mut jac);
        let exact = [u[0].cos() * u[1], u[0].sin(), u[1] * (u[0] * u[1]).exp(), u[0] * (u[0] * u[1]).exp()];
        for (a, b) in jac.iter().zip(exact) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }
}
