//! Rough integrals against a level-2 driver.
//!
//! Two independent schemes are provided: compensated Riemann sums
//! ([`rough_integral`]) and the fractional-calculus integral
//! ([`frac_integral`]), which is much more expensive and exists to
//! cross-check the first.

mod fractional;

pub use fractional::{admissible_alpha, frac_integral, FracOptions, DEFAULT_LAMBDA};

use crate::error::{Error, Result};
use crate::fields::MatrixField;
use crate::grid::Grid;
use crate::rough_lift::Driver;
use crate::scalar::Real;

/// Matrix-valued controlled integrand `Y: grid -> R^{m x d}` with Gubinelli
/// derivative `Y†: grid -> R^{m x d x d}`, so that
/// `Y_t - Y_s ≈ Σ_l Y†_s[.., .., l] X^l_{s,t}`.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlledPath<T: Real> {
    grid: Grid<T>,
    rows: usize,
    cols: usize,
    /// `(n + 1) * m * d`.
    values: Vec<T>,
    /// `(n + 1) * m * d * d`, index `((i * m + r) * d + c) * d + l`.
    derivative: Vec<T>,
}

impl<T: Real> ControlledPath<T> {
    pub fn new(grid: Grid<T>, rows: usize, cols: usize, values: Vec<T>, derivative: Vec<T>) -> Result<Self> {
        let len = grid.len();
        if values.len() != len * rows * cols {
            return Err(Error::dim(format!(
                "controlled path values: expected {} entries, got {}",
                len * rows * cols,
                values.len()
            )));
        }
        if derivative.len() != len * rows * cols * cols {
            return Err(Error::dim(format!(
                "Gubinelli derivative: expected {} entries, got {}",
                len * rows * cols * cols,
                derivative.len()
            )));
        }
        Ok(Self { grid, rows, cols, values, derivative })
    }

    /// Constant integrand `C` (zero derivative).
    pub fn constant(grid: Grid<T>, rows: usize, cols: usize, c: &[T]) -> Result<Self> {
        if c.len() != rows * cols {
            return Err(Error::dim("constant integrand has the wrong shape"));
        }
        let len = grid.len();
        let values = c.iter().copied().cycle().take(len * rows * cols).collect();
        Self::new(grid, rows, cols, values, vec![T::zero(); len * rows * cols * cols])
    }

    /// `Y = σ(x)` for a path `x` controlled by the driver with derivative
    /// `x†` (`(n + 1) * k * d`); `Y† = ∇σ(x) x†`.
    pub fn compose(grid: Grid<T>, x: &[T], x_dagger: &[T], sigma: &dyn MatrixField<T>) -> Result<Self> {
        let (k, m, d) = (sigma.dim_in(), sigma.rows(), sigma.cols());
        let len = grid.len();
        if x.len() != len * k || x_dagger.len() != len * k * d {
            return Err(Error::dim("controlled path and coefficient dimensions disagree"));
        }
        let mut values = vec![T::zero(); len * m * d];
        let mut derivative = vec![T::zero(); len * m * d * d];
        let mut jac = vec![T::zero(); m * d * k];
        for i in 0..len {
            let xi = &x[i * k..(i + 1) * k];
            sigma.eval(xi, &mut values[i * m * d..(i + 1) * m * d]);
            sigma.jacobian(xi, &mut jac);
            let xd = &x_dagger[i * k * d..(i + 1) * k * d];
            let out = &mut derivative[i * m * d * d..(i + 1) * m * d * d];
            for rc in 0..m * d {
                for l in 0..d {
                    out[rc * d + l] = (0..k).map(|q| jac[rc * k + q] * xd[q * d + l]).sum();
                }
            }
        }
        Self::new(grid, m, d, values, derivative)
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn value(&self, i: usize) -> &[T] {
        let s = self.rows * self.cols;
        &self.values[i * s..(i + 1) * s]
    }

    pub fn derivative(&self, i: usize) -> &[T] {
        let s = self.rows * self.cols * self.cols;
        &self.derivative[i * s..(i + 1) * s]
    }
}

fn check_partition<T: Real>(grid: &Grid<T>, ia: usize, ib: usize, stride: usize) -> Result<()> {
    if ia > ib || ib >= grid.len() {
        return Err(Error::config(format!("integration bounds {ia}..{ib} outside the grid ({} points)", grid.len())));
    }
    if stride == 0 || !(ib - ia).is_multiple_of(stride) {
        return Err(Error::config(format!("stride {stride} does not divide the index span {}", ib - ia)));
    }
    Ok(())
}

fn check_aligned<T: Real, D: Driver<T> + ?Sized>(cp: &ControlledPath<T>, driver: &D) -> Result<()> {
    if cp.grid != *driver.grid() {
        return Err(Error::config("integrand and driver live on different grids"));
    }
    if cp.cols != driver.dim() {
        return Err(Error::dim(format!(
            "integrand has {} columns but the driver has dimension {}",
            cp.cols,
            driver.dim()
        )));
    }
    Ok(())
}

fn riemann<T: Real, D: Driver<T> + ?Sized>(
    cp: &ControlledPath<T>,
    driver: &D,
    ia: usize,
    ib: usize,
    stride: usize,
    compensated: bool,
) -> Result<Vec<T>> {
    check_aligned(cp, driver)?;
    check_partition(&cp.grid, ia, ib, stride)?;
    let (m, d) = (cp.rows, cp.cols);
    let mut dz = vec![T::zero(); d];
    let mut dz2 = vec![T::zero(); d * d];
    let mut terms: Vec<Vec<T>> = vec![Vec::new(); m];
    let mut k = ia;
    while k < ib {
        driver.increment(k, k + stride, &mut dz);
        if compensated {
            driver.level_two(k, k + stride, &mut dz2);
        }
        let y = cp.value(k);
        let yd = cp.derivative(k);
        for (r, acc) in terms.iter_mut().enumerate() {
            let mut s = T::zero();
            for c in 0..d {
                s += y[r * d + c] * dz[c];
                if compensated {
                    for l in 0..d {
                        s += yd[(r * d + c) * d + l] * dz2[l * d + c];
                    }
                }
            }
            acc.push(s);
        }
        k += stride;
    }
    Ok(terms.iter().map(|t| crate::stats::tree_sum(t)).collect())
}

/// Compensated Riemann sum over the grid points of `[a, b]`:
/// `Σ_k Y_k Z_{k,k+1} + Σ_k Σ_l Y†_k[.., c, l] Z²^{lc}_{k,k+1}`.
pub fn rough_integral<T: Real, D: Driver<T> + ?Sized>(
    cp: &ControlledPath<T>,
    driver: &D,
    a: T,
    b: T,
) -> Result<Vec<T>> {
    let ia = cp.grid.index_of(a)?;
    let ib = cp.grid.index_of(b)?;
    riemann(cp, driver, ia, ib, 1, true)
}

/// [`rough_integral`] on the sub-partition `ia, ia + stride, ..., ib`.
pub fn rough_integral_indices<T: Real, D: Driver<T> + ?Sized>(
    cp: &ControlledPath<T>,
    driver: &D,
    ia: usize,
    ib: usize,
    stride: usize,
) -> Result<Vec<T>> {
    riemann(cp, driver, ia, ib, stride, true)
}

/// Plain left-point sums without the second-level correction.
pub fn left_point_sum<T: Real, D: Driver<T> + ?Sized>(
    cp: &ControlledPath<T>,
    driver: &D,
    ia: usize,
    ib: usize,
    stride: usize,
) -> Result<Vec<T>> {
    riemann(cp, driver, ia, ib, stride, false)
}

/// A triplet `(x, ω, v)`: a path `x ∈ R^m`, a driver `ω ∈ R^d` and the
/// second-level object `v_{s,t} ∈ R^{m x d}` (morally `∫_s^t (x_u - x_s) ⊗ dω_u`).
///
/// Only the adjacent-step values `v_{k,k+1}` are stored; other pairs follow
/// from `v_{s,t} = v_{s,u} + v_{u,t} + (x_u - x_s) ⊗ (ω_t - ω_u)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TripletView<T: Real> {
    grid: Grid<T>,
    m: usize,
    d: usize,
    x: Vec<T>,
    omega: Vec<T>,
    v_step: Vec<T>,
    /// Hölder exponent the triplet is assumed to have.
    pub beta: T,
}

impl<T: Real> TripletView<T> {
    /// From adjacent-step values `v_step` (`n * m * d`).
    pub fn from_steps(
        grid: Grid<T>,
        m: usize,
        d: usize,
        x: Vec<T>,
        omega: Vec<T>,
        v_step: Vec<T>,
        beta: T,
    ) -> Result<Self> {
        let len = grid.len();
        if x.len() != len * m || omega.len() != len * d || v_step.len() != grid.n_steps * m * d {
            return Err(Error::dim("triplet arrays do not match the grid and (m, d)"));
        }
        if !(beta > T::zero() && beta <= T::one()) {
            return Err(Error::domain(format!("Hölder exponent {beta} outside (0, 1]")));
        }
        Ok(Self { grid, m, d, x, omega, v_step, beta })
    }

    /// From a closure giving `v` on arbitrary index pairs. The Chen-type
    /// relation is checked on a sample of triples and must hold within
    /// `tol` relative to the magnitude of the terms.
    #[allow(clippy::too_many_arguments)]
    pub fn from_pairs(
        grid: Grid<T>,
        m: usize,
        d: usize,
        x: Vec<T>,
        omega: Vec<T>,
        v: impl Fn(usize, usize, &mut [T]),
        beta: T,
        tol: T,
    ) -> Result<Self> {
        let n = grid.n_steps;
        let mut v_step = vec![T::zero(); n * m * d];
        for k in 0..n {
            v(k, k + 1, &mut v_step[k * m * d..(k + 1) * m * d]);
        }
        let view = Self::from_steps(grid, m, d, x, omega, v_step, beta)?;
        let residual = view.chen_residual_against(&v, 40);
        if !(residual <= tol) {
            return Err(Error::domain(format!(
                "second-level values violate the Chen-type relation (relative residual {:e})",
                residual.to_f64_lossy()
            )));
        }
        Ok(view)
    }

    /// Self-triplet `x = ω = Z`, `v = Z²` of a driver.
    pub fn from_driver<D: Driver<T> + ?Sized>(driver: &D, beta: T) -> Result<Self> {
        let grid = *driver.grid();
        let e = driver.dim();
        let len = grid.len();
        let mut z = vec![T::zero(); len * e];
        for i in 1..len {
            driver.increment(0, i, &mut z[i * e..(i + 1) * e]);
        }
        let mut v_step = vec![T::zero(); grid.n_steps * e * e];
        for k in 0..grid.n_steps {
            driver.level_two(k, k + 1, &mut v_step[k * e * e..(k + 1) * e * e]);
        }
        Self::from_steps(grid, e, e, z.clone(), z, v_step, beta)
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.m, self.d)
    }

    pub fn x(&self, i: usize) -> &[T] {
        &self.x[i * self.m..(i + 1) * self.m]
    }

    pub fn omega(&self, i: usize) -> &[T] {
        &self.omega[i * self.d..(i + 1) * self.d]
    }

    pub fn v_step(&self, k: usize) -> &[T] {
        let s = self.m * self.d;
        &self.v_step[k * s..(k + 1) * s]
    }

    /// `v_{t_i, t_j}` for `i ≤ j`.
    pub fn v(&self, i: usize, j: usize, out: &mut [T]) {
        out.iter_mut().for_each(|o| *o = T::zero());
        for s in i..j {
            self.extend(i, s, out);
        }
    }

    /// `v_{i,s} -> v_{i,s+1}` in place.
    pub(crate) fn extend(&self, i: usize, s: usize, acc: &mut [T]) {
        let (m, d) = (self.m, self.d);
        let step = self.v_step(s);
        for r in 0..m {
            let dx = self.x[s * m + r] - self.x[i * m + r];
            for c in 0..d {
                let dw = self.omega[(s + 1) * d + c] - self.omega[s * d + c];
                acc[r * d + c] += step[r * d + c] + dx * dw;
            }
        }
    }

    /// Largest relative Chen residual of `v` over triples drawn from about
    /// `points` evenly spaced grid indices.
    pub fn chen_residual_against(&self, v: &impl Fn(usize, usize, &mut [T]), points: usize) -> T {
        let n = self.grid.n_steps;
        let stride = (n / points.max(2)).max(1);
        let idx: Vec<usize> = (0..=n).step_by(stride).collect();
        let md = self.m * self.d;
        let (mut vst, mut vsu, mut vut) = (vec![T::zero(); md], vec![T::zero(); md], vec![T::zero(); md]);
        let mut worst = T::zero();
        for (p, &s) in idx.iter().enumerate() {
            for (q, &u) in idx.iter().enumerate().skip(p + 1) {
                v(s, u, &mut vsu);
                for &t in &idx[q + 1..] {
                    v(s, t, &mut vst);
                    v(u, t, &mut vut);
                    for r in 0..self.m {
                        let dx = self.x[u * self.m + r] - self.x[s * self.m + r];
                        for c in 0..self.d {
                            let dw = self.omega[t * self.d + c] - self.omega[u * self.d + c];
                            let k = r * self.d + c;
                            let cross = dx * dw;
                            let res = (vst[k] - vsu[k] - vut[k] - cross).abs();
                            let scale = vst[k].abs().max(vsu[k].abs()).max(vut[k].abs()).max(cross.abs());
                            worst = worst.max(if scale > T::zero() { res / scale } else { res });
                        }
                    }
                }
            }
        }
        worst
    }
}

/// Compensated Riemann sum for `∫ σ(x) dω` over a triplet:
/// `Σ_k σ(x_k) ω_{k,k'} + Σ_k Σ_{j,q} ∂_q σ_{ij}(x_k) v^{qj}_{k,k'}`.
pub fn triplet_riemann_sum<T: Real>(
    tv: &TripletView<T>,
    sigma: &dyn MatrixField<T>,
    ia: usize,
    ib: usize,
    stride: usize,
) -> Result<Vec<T>> {
    check_partition(&tv.grid, ia, ib, stride)?;
    let (m, d) = (tv.m, tv.d);
    if sigma.dim_in() != m || sigma.rows() != m || sigma.cols() != d {
        return Err(Error::dim("σ must map R^m to m x d matrices of the triplet"));
    }
    let mut s = vec![T::zero(); m * d];
    let mut jac = vec![T::zero(); m * d * m];
    let mut v = vec![T::zero(); m * d];
    let mut terms: Vec<Vec<T>> = vec![Vec::new(); m];
    let mut k = ia;
    while k < ib {
        let next = k + stride;
        let xk = tv.x(k);
        sigma.eval(xk, &mut s);
        sigma.jacobian(xk, &mut jac);
        tv.v(k, next, &mut v);
        for (i, acc) in terms.iter_mut().enumerate() {
            let mut total = T::zero();
            for j in 0..d {
                let dw = tv.omega(next)[j] - tv.omega(k)[j];
                total += s[i * d + j] * dw;
                for q in 0..m {
                    total += jac[(i * d + j) * m + q] * v[q * d + j];
                }
            }
            acc.push(total);
        }
        k = next;
    }
    Ok(terms.iter().map(|t| crate::stats::tree_sum(t)).collect())
}
