//! Time steppers.
//!
//! * [`solve_rde`]: explicit second-order (Milstein-type) rough Euler for
//!   `du = a(u) dt + V(u) dZ` against any [`Driver`].
//! * [`solve_frozen`] and [`solve_fast_ito`]: Euler-Maruyama for the Itô form
//!   of the fast equation with the corrected drift [`ito_correction`].
//! * [`solve_fast_slow`]: the coupled system, slow part by rough Euler on a
//!   coarse grid, fast part by Euler-Maruyama on a sub-grid that consumes the
//!   same Brownian increments as the lift.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::coefficients::{CoefficientSet, Dims};
use crate::error::{Error, Result};
use crate::fields::{MatrixField, VectorField};
use crate::gaussian_paths::{sample_bm, sample_fbm, GaussianPath, PathKind};
use crate::grid::Grid;
use crate::rng::{self, normal, StreamRng};
use crate::rough_lift::{Driver, LiftOptions, RoughLift};
use crate::scalar::Real;

/// A vector-valued path on a grid, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct StatePath<T: Real> {
    pub grid: Grid<T>,
    pub dim: usize,
    pub values: Vec<T>,
}

impl<T: Real> StatePath<T> {
    pub fn point(&self, i: usize) -> &[T] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn last(&self) -> &[T] {
        self.point(self.grid.n_steps)
    }

    pub fn coordinate(&self, k: usize) -> Vec<T> {
        self.values.iter().skip(k).step_by(self.dim).copied().collect()
    }

    /// CSV with columns `t, u_1, ..., u_dim`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim).map(|k| format!("u_{k}")));
        out.write_record(&header)?;
        for i in 0..self.grid.len() {
            let mut row = vec![self.grid.time(i).to_string()];
            row.extend(self.point(i).iter().map(|v| v.to_string()));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Sup-norm distance between two paths on the same grid.
pub fn sup_distance<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |m, (x, y)| m.max((*x - *y).abs()))
}

fn divergence(step: usize, what: &str) -> Error {
    Error::Divergence { step, reason: format!("{what} is not finite") }
}

fn all_finite<T: Real>(u: &[T]) -> bool {
    u.iter().all(|v| v.is_finite())
}

/// `out += Σ_j V_j dz_j + Σ_{l,j} (Σ_k ∂_k V_{ij} V_{kl}) dz2_{lj}` for
/// `V` of shape `e x dd` and its Jacobian `∂_k V_{ij}` at `[(i*dd + j)*e + k]`.
pub(crate) fn add_rough_increment<T: Real>(
    e: usize,
    dd: usize,
    v: &[T],
    jac: &[T],
    dz: &[T],
    dz2: &[T],
    out: &mut [T],
) {
    for i in 0..e {
        let mut s = T::zero();
        for j in 0..dd {
            s += v[i * dd + j] * dz[j];
            for l in 0..dd {
                let z2 = dz2[l * dd + j];
                if z2 == T::zero() {
                    continue;
                }
                let dv: T = (0..e).map(|k| jac[(i * dd + j) * e + k] * v[k * dd + l]).sum();
                s += dv * z2;
            }
        }
        out[i] += s;
    }
}

/// Rough Euler solution of `u_t = u_0 + ∫ a(u) ds + ∫ V(u) dZ` on the
/// driver's grid.
pub fn solve_rde<T: Real, D: Driver<T> + ?Sized>(
    a: &dyn VectorField<T>,
    v: &dyn MatrixField<T>,
    driver: &D,
    u0: &[T],
    grid: &Grid<T>,
) -> Result<StatePath<T>> {
    if grid != driver.grid() {
        return Err(Error::config("solver grid differs from the driver grid"));
    }
    let e = u0.len();
    let dd = driver.dim();
    if a.dim() != e || v.dim_in() != e || v.rows() != e || v.cols() != dd {
        return Err(Error::dim(format!(
            "state dimension {e}, driver dimension {dd}: drift or diffusion has the wrong shape"
        )));
    }
    let dt = grid.dt();
    let len = grid.len();
    let mut values = Vec::with_capacity(len * e);
    values.extend_from_slice(u0);
    let mut u = u0.to_vec();
    let mut drift = vec![T::zero(); e];
    let mut vv = vec![T::zero(); e * dd];
    let mut jac = vec![T::zero(); e * dd * e];
    let mut dz = vec![T::zero(); dd];
    let mut dz2 = vec![T::zero(); dd * dd];
    for k in 0..grid.n_steps {
        a.eval(&u, &mut drift);
        v.eval(&u, &mut vv);
        v.jacobian(&u, &mut jac);
        driver.increment(k, k + 1, &mut dz);
        driver.level_two(k, k + 1, &mut dz2);
        let mut next = u.clone();
        for i in 0..e {
            next[i] += drift[i] * dt;
        }
        add_rough_increment(e, dd, &vv, &jac, &dz, &dz2, &mut next);
        if !all_finite(&next) {
            return Err(divergence(k + 1, "RDE state"));
        }
        u = next;
        values.extend_from_slice(&u);
    }
    Ok(StatePath { grid: *grid, dim: e, values })
}

/// Corrected fast drift `g̃_l = g_l + ½ Σ_j Σ_k h_{kj} ∂_{φ_k} h_{lj}`.
pub fn ito_correction<T: Real, C: CoefficientSet<T> + ?Sized>(coeffs: &C, xi: &[T], phi: &[T], out: &mut [T]) {
    let dims = coeffs.dims();
    let mut h = vec![T::zero(); dims.n * dims.d_fast];
    let mut jac = vec![T::zero(); dims.n * dims.d_fast * dims.n];
    corrected_drift(coeffs, dims, xi, phi, &mut h, &mut jac, out);
}

fn corrected_drift<T: Real, C: CoefficientSet<T> + ?Sized>(
    coeffs: &C,
    dims: Dims,
    xi: &[T],
    phi: &[T],
    h: &mut [T],
    jac: &mut [T],
    out: &mut [T],
) {
    let (n, dp) = (dims.n, dims.d_fast);
    coeffs.g(xi, phi, out);
    coeffs.h(xi, phi, h);
    coeffs.h_jacobian(xi, phi, jac);
    let half = T::lit(0.5);
    for l in 0..n {
        let mut c = T::zero();
        for j in 0..dp {
            for k in 0..n {
                c += h[k * dp + j] * jac[(l * dp + j) * n + k];
            }
        }
        out[l] += half * c;
    }
}

/// Euler-Maruyama step for `dφ = g̃(ξ, φ)/ε dt + h(ξ, φ)/√ε dW`.
pub(crate) struct FastStepper<'a, T: Real, C: CoefficientSet<T> + ?Sized> {
    coeffs: &'a C,
    dims: Dims,
    inv_eps: T,
    inv_sqrt_eps: T,
    drift: Vec<T>,
    h: Vec<T>,
    jac: Vec<T>,
}

impl<'a, T: Real, C: CoefficientSet<T> + ?Sized> FastStepper<'a, T, C> {
    pub(crate) fn new(coeffs: &'a C, eps: T) -> Self {
        let dims = coeffs.dims();
        Self {
            coeffs,
            dims,
            inv_eps: eps.recip(),
            inv_sqrt_eps: eps.sqrt().recip(),
            drift: vec![T::zero(); dims.n],
            h: vec![T::zero(); dims.n * dims.d_fast],
            jac: vec![T::zero(); dims.n * dims.d_fast * dims.n],
        }
    }

    pub(crate) fn step(&mut self, xi: &[T], phi: &mut [T], dt: T, dw: &[T]) {
        corrected_drift(self.coeffs, self.dims, xi, phi, &mut self.h, &mut self.jac, &mut self.drift);
        let dp = self.dims.d_fast;
        for l in 0..self.dims.n {
            let noise: T = (0..dp).map(|j| self.h[l * dp + j] * dw[j]).sum();
            phi[l] += self.drift[l] * self.inv_eps * dt + noise * self.inv_sqrt_eps;
        }
    }
}

fn check_eps<T: Real>(eps: T) -> Result<()> {
    if !(eps > T::zero() && eps <= T::one()) {
        return Err(Error::domain(format!("eps = {eps} outside (0, 1]")));
    }
    Ok(())
}

/// Euler-Maruyama run of the frozen equation (ε = 1) that calls `visit`
/// with `(step index, state)` after every step, without storing the path.
pub(crate) fn run_frozen<T: Real, C: CoefficientSet<T> + ?Sized>(
    coeffs: &C,
    xi: &[T],
    phi0: &[T],
    dt: T,
    n_steps: usize,
    rng: &mut StreamRng,
    mut visit: impl FnMut(usize, &[T]),
) -> Result<()> {
    let dims = coeffs.dims();
    let mut stepper = FastStepper::new(coeffs, T::one());
    let mut phi = phi0.to_vec();
    let mut dw = vec![T::zero(); dims.d_fast];
    let sd = dt.sqrt();
    for k in 0..n_steps {
        for v in dw.iter_mut() {
            *v = sd * normal::<T>(rng);
        }
        stepper.step(xi, &mut phi, dt, &dw);
        if !all_finite(&phi) {
            return Err(divergence(k + 1, "frozen fast state"));
        }
        visit(k + 1, &phi);
    }
    Ok(())
}

fn check_frozen_args<T: Real>(dims: Dims, xi: &[T], phi0: &[T]) -> Result<()> {
    if xi.len() != dims.m || phi0.len() != dims.n {
        return Err(Error::dim(format!("frozen equation expects ξ ∈ R^{} and φ ∈ R^{}", dims.m, dims.n)));
    }
    Ok(())
}

/// Euler-Maruyama path of the frozen equation
/// `dY = g̃(ξ, Y) dt + h(ξ, Y) dW`, `Y_0 = φ_0`, with `ξ` held fixed.
pub fn solve_frozen<T: Real, C: CoefficientSet<T> + ?Sized>(
    xi: &[T],
    phi0: &[T],
    coeffs: &C,
    horizon: T,
    n_steps: usize,
    seed: u64,
) -> Result<StatePath<T>> {
    let dims = coeffs.dims();
    check_frozen_args(dims, xi, phi0)?;
    let grid = Grid::horizon(horizon, n_steps)?;
    let mut rng = rng::stream(seed, &[rng::tag::FROZEN]);
    let mut values = Vec::with_capacity(grid.len() * dims.n);
    values.extend_from_slice(phi0);
    run_frozen(coeffs, xi, phi0, grid.dt(), n_steps, &mut rng, |_, phi| values.extend_from_slice(phi))?;
    Ok(StatePath { grid, dim: dims.n, values })
}

/// Itô Euler-Maruyama solution of the fast equation with `ξ` fixed, driven
/// by a given Brownian path (`w` sampled on `grid`).
pub fn solve_fast_ito<T: Real, C: CoefficientSet<T> + ?Sized>(
    coeffs: &C,
    xi: &[T],
    eps: T,
    phi0: &[T],
    w: &GaussianPath<T>,
) -> Result<StatePath<T>> {
    check_eps(eps)?;
    let dims = coeffs.dims();
    check_frozen_args(dims, xi, phi0)?;
    if w.dim != dims.d_fast {
        return Err(Error::dim("Brownian path dimension differs from d'"));
    }
    let grid = w.grid;
    let dt = grid.dt();
    let mut stepper = FastStepper::new(coeffs, eps);
    let mut phi = phi0.to_vec();
    let mut values = Vec::with_capacity(grid.len() * dims.n);
    values.extend_from_slice(phi0);
    let mut dw = vec![T::zero(); dims.d_fast];
    for k in 0..grid.n_steps {
        for (j, v) in dw.iter_mut().enumerate() {
            *v = w.point(k + 1)[j] - w.point(k)[j];
        }
        stepper.step(xi, &mut phi, dt, &dw);
        if !all_finite(&phi) {
            return Err(divergence(k + 1, "fast state"));
        }
        values.extend_from_slice(&phi);
    }
    Ok(StatePath { grid, dim: dims.n, values })
}

/// One realization of the mixed noise: fine-grid samples of `B` and `W`
/// and the lift built from them on the coarse grid.
#[derive(Clone, Debug)]
pub struct MixedNoise<T: Real> {
    pub lift: RoughLift<T>,
    pub b: GaussianPath<T>,
    pub w: GaussianPath<T>,
    pub seed: u64,
}

impl<T: Real> MixedNoise<T> {
    /// Samples `B` (fBm, dimension `d`) and `W` (Bm, dimension `d'`) on the
    /// refinement of `coarse` by `fine_factor`. The two use disjoint streams
    /// of `seed`.
    pub fn sample(hurst: T, dims: Dims, coarse: Grid<T>, fine_factor: usize, seed: u64) -> Result<Self> {
        let fine = coarse.refine(fine_factor)?;
        let b = sample_fbm(hurst, dims.d, fine, seed)?;
        let w = sample_bm(dims.d_fast, fine, seed);
        Self::from_paths(b, w, coarse, fine_factor, seed)
    }

    pub fn from_paths(
        b: GaussianPath<T>,
        w: GaussianPath<T>,
        coarse: Grid<T>,
        fine_factor: usize,
        seed: u64,
    ) -> Result<Self> {
        let lift = RoughLift::mixed(&b, &w, coarse, fine_factor, LiftOptions::default())?;
        Ok(Self { lift, b, w, seed })
    }

    pub fn coarse_grid(&self) -> &Grid<T> {
        &self.lift.coarse_grid
    }

    pub fn fine_factor(&self) -> usize {
        self.lift.fine_factor
    }

    /// `W` increment between fine indices `i < j`.
    pub fn w_increment(&self, i: usize, j: usize, out: &mut [T]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.w.point(j)[k] - self.w.point(i)[k];
        }
    }

    pub fn hurst(&self) -> Option<T> {
        match self.b.kind {
            PathKind::Fbm { hurst } => Some(hurst),
            PathKind::Bm => None,
        }
    }
}

/// Paired slow/fast paths of the coupled system on the coarse grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct FastSlowSolution<T: Real> {
    pub grid: Grid<T>,
    pub x: StatePath<T>,
    pub y: StatePath<T>,
    pub eps: T,
    pub seed: u64,
    pub substep_factor: usize,
}

impl<T: Real> FastSlowSolution<T> {
    /// CSV with columns `t, x_1.., y_1..`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.x.dim).map(|k| format!("x_{k}")));
        header.extend((1..=self.y.dim).map(|k| format!("y_{k}")));
        out.write_record(&header)?;
        for i in 0..self.grid.len() {
            let mut row = vec![self.grid.time(i).to_string()];
            row.extend(self.x.point(i).iter().map(|v| v.to_string()));
            row.extend(self.y.point(i).iter().map(|v| v.to_string()));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Validates the fast sub-grid: `substep_factor` must divide the lift's
/// fine factor and the substep `Δt / substep_factor` must not exceed `ε/4`.
pub fn check_substeps<T: Real>(grid: &Grid<T>, fine_factor: usize, substep_factor: usize, eps: T) -> Result<()> {
    check_eps(eps)?;
    if substep_factor == 0 || !fine_factor.is_multiple_of(substep_factor) {
        return Err(Error::config(format!(
            "substep_factor = {substep_factor} must be a positive divisor of the lift fine_factor = {fine_factor}"
        )));
    }
    let required = required_substeps(grid.dt(), eps);
    if substep_factor < required {
        return Err(Error::config(format!(
            "substep {} exceeds eps/4 = {}; substep_factor must be at least {required}",
            grid.dt() / T::from_count(substep_factor),
            eps / T::lit(4.0)
        )));
    }
    Ok(())
}

/// Smallest substep factor with `Δt / factor ≤ ε/4`.
pub fn required_substeps<T: Real>(dt: T, eps: T) -> usize {
    let ratio = (T::lit(4.0) * dt / eps).to_f64_lossy();
    // Guard against 4Δt/ε landing a rounding error above an integer.
    (ratio * (1.0 - 1e-12)).ceil().max(1.0) as usize
}

pub(crate) fn check_initial<T: Real>(dims: Dims, x0: &[T], y0: &[T]) -> Result<()> {
    if x0.len() != dims.m || y0.len() != dims.n {
        return Err(Error::dim(format!("initial values must lie in R^{} x R^{}", dims.m, dims.n)));
    }
    Ok(())
}

/// Slow-step helper: `σ(ξ)`, its Jacobian and the B-block increments.
pub(crate) struct SlowStepper<'a, T: Real, C: CoefficientSet<T> + ?Sized> {
    coeffs: &'a C,
    dims: Dims,
    sigma: Vec<T>,
    jac: Vec<T>,
    dz: Vec<T>,
    dz2_full: Vec<T>,
    dz2: Vec<T>,
    f: Vec<T>,
}

impl<'a, T: Real, C: CoefficientSet<T> + ?Sized> SlowStepper<'a, T, C> {
    pub(crate) fn new(coeffs: &'a C) -> Self {
        let dims = coeffs.dims();
        let e = dims.d + dims.d_fast;
        Self {
            coeffs,
            dims,
            sigma: vec![T::zero(); dims.m * dims.d],
            jac: vec![T::zero(); dims.m * dims.d * dims.m],
            dz: vec![T::zero(); e],
            dz2_full: vec![T::zero(); e * e],
            dz2: vec![T::zero(); dims.d * dims.d],
            f: vec![T::zero(); dims.m],
        }
    }

    /// `out += σ(ξ) B_{k,k+1} + Σ (∂σ_j σ_l)(ξ) B²^{lj}_{k,k+1}`.
    pub(crate) fn add_noise(&mut self, lift: &RoughLift<T>, k: usize, xi: &[T], out: &mut [T]) {
        let d = self.dims.d;
        let e = lift.dim();
        lift.increment(k, k + 1, &mut self.dz);
        lift.level_two(k, k + 1, &mut self.dz2_full);
        for a in 0..d {
            for c in 0..d {
                self.dz2[a * d + c] = self.dz2_full[a * e + c];
            }
        }
        self.coeffs.sigma(xi, &mut self.sigma);
        self.coeffs.sigma_jacobian(xi, &mut self.jac);
        add_rough_increment(self.dims.m, d, &self.sigma, &self.jac, &self.dz[..d], &self.dz2, out);
    }

    /// `out += w f(ξ, φ)`.
    pub(crate) fn add_drift(&mut self, xi: &[T], phi: &[T], w: T, out: &mut [T]) {
        self.coeffs.f(xi, phi, &mut self.f);
        for (o, f) in out.iter_mut().zip(&self.f) {
            *o += w * *f;
        }
    }
}

/// Advances the fast state over coarse step `k` with the slow argument
/// frozen at `xi`, adding the trapezoid rule of `∫ f(ξ_f, Y) dt` to
/// `slow_acc` when given (`ξ_f` = `drift_xi`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn fast_coarse_step<T: Real, C: CoefficientSet<T> + ?Sized>(
    fast: &mut FastStepper<'_, T, C>,
    slow: &mut SlowStepper<'_, T, C>,
    noise: &MixedNoise<T>,
    k: usize,
    substep_factor: usize,
    xi: &[T],
    drift_xi: &[T],
    phi: &mut [T],
    slow_acc: &mut [T],
    dw: &mut [T],
) {
    let grid = noise.coarse_grid();
    let ff = noise.fine_factor();
    let r = ff / substep_factor;
    let dt = grid.dt();
    let h = dt / T::from_count(substep_factor);
    let half = T::lit(0.5) * h;
    slow.add_drift(drift_xi, phi, half, slow_acc);
    for s in 0..substep_factor {
        let i0 = k * ff + s * r;
        noise.w_increment(i0, i0 + r, dw);
        fast.step(xi, phi, h, dw);
        let w = if s + 1 == substep_factor { half } else { h };
        slow.add_drift(drift_xi, phi, w, slow_acc);
    }
}

/// Solves the coupled system on the lift's coarse grid.
///
/// Over each coarse step the slow state is frozen while the fast state takes
/// `substep_factor` Euler-Maruyama steps with drift `g̃/ε` and diffusion
/// `h/√ε`, driven by the fine `W` increments of the lift. The slow state then
/// advances by `∫ f(X_k, Y) dt` (trapezoid over the substeps) plus the rough
/// Euler term against the B-block.
pub fn solve_fast_slow<T: Real, C: CoefficientSet<T> + ?Sized>(
    coeffs: &C,
    eps: T,
    noise: &MixedNoise<T>,
    x0: &[T],
    y0: &[T],
    substep_factor: usize,
) -> Result<FastSlowSolution<T>> {
    let dims = coeffs.dims();
    check_initial(dims, x0, y0)?;
    if noise.lift.block_dims != (dims.d, dims.d_fast) {
        return Err(Error::dim(format!(
            "lift blocks {:?} do not match (d, d') = ({}, {})",
            noise.lift.block_dims, dims.d, dims.d_fast
        )));
    }
    let grid = *noise.coarse_grid();
    check_substeps(&grid, noise.fine_factor(), substep_factor, eps)?;
    let mut fast = FastStepper::new(coeffs, eps);
    let mut slow = SlowStepper::new(coeffs);
    let len = grid.len();
    let mut xs = Vec::with_capacity(len * dims.m);
    let mut ys = Vec::with_capacity(len * dims.n);
    xs.extend_from_slice(x0);
    ys.extend_from_slice(y0);
    let mut x = x0.to_vec();
    let mut y = y0.to_vec();
    let mut dw = vec![T::zero(); dims.d_fast];
    for k in 0..grid.n_steps {
        let mut next = x.clone();
        fast_coarse_step(&mut fast, &mut slow, noise, k, substep_factor, &x, &x, &mut y, &mut next, &mut dw);
        slow.add_noise(&noise.lift, k, &x, &mut next);
        if !all_finite(&y) {
            return Err(divergence(k + 1, "fast state"));
        }
        if !all_finite(&next) {
            return Err(divergence(k + 1, "slow state"));
        }
        x = next;
        xs.extend_from_slice(&x);
        ys.extend_from_slice(&y);
    }
    Ok(FastSlowSolution {
        x: StatePath { grid, dim: dims.m, values: xs },
        y: StatePath { grid, dim: dims.n, values: ys },
        grid,
        eps,
        seed: noise.seed,
        substep_factor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{FnCoefficients, Preset};

    #[test]
    fn correction_vanishes_for_constant_h() {
        let mut out = [0.0f64];
        ito_correction(&Preset::Ou, &[0.7], &[0.2], &mut out);
        assert!((out[0] - (0.7 - 1.6)).abs() < 1e-15);
    }

    #[test]
    fn correction_of_linear_h() {
        let c = FnCoefficients::<f64>::new(
            Dims::SCALAR,
            |_, _, o| o[0] = 0.0,
            |_, o| o[0] = 0.0,
            |_, _, o| o[0] = 0.0,
            |_, p, o| o[0] = p[0],
        );
        let mut out = [0.0f64];
        ito_correction(&c, &[0.0], &[0.8], &mut out);
        assert!((out[0] - 0.4).abs() < 1e-9);
    }

    #[test]
    fn correction_of_sine_h() {
        let (x, p) = (0.3f64, -1.1f64);
        let mut out = [0.0f64];
        ito_correction(&Preset::Nonlinear, &[x], &[p], &mut out);
        let expect = x - 8.0 * p + 0.5 * (x.sin() + p.sin()) * p.cos();
        assert!((out[0] - expect).abs() < 1e-14);
    }

    #[test]
    fn required_substeps_rounds_up() {
        assert_eq!(required_substeps(1.0 / 256.0, 0.01), 2);
        assert_eq!(required_substeps(0.01, 0.04), 1);
        assert_eq!(required_substeps(0.01, 0.01), 4);
    }

    #[test]
    fn substep_violation_names_requirement() {
        let grid = Grid::<f64>::horizon(1.0, 100).unwrap();
        let err = check_substeps(&grid, 8, 2, 0.01).unwrap_err().to_string();
        assert!(err.contains("at least 4"), "{err}");
        assert!(check_substeps(&grid, 8, 3, 0.5).is_err());
        assert!(check_substeps(&grid, 8, 4, 0.01).is_ok());
    }
}
