//! Fractional-calculus form of `∫_a^b σ(x_r) dω_r` for a triplet `(x, ω, v)`.
//!
//! With `A = 1/(Γ(1-α)Γ(α))`, `B = 1/(Γ(2-2α)Γ(α))` the integral reads
//!
//! ```text
//! A ∫ [σ(x_r)(r-a)^{-α} + α ∫_a^r N_r(θ)(r-θ)^{-α-1} dθ] · G(r) dr
//! + B ∫ [∇σ(x_r)(r-a)^{1-2α} + (2α-1) ∫_a^r (∇σ(x_r)-∇σ(x_θ))(r-θ)^{-2α} dθ] : E(r) dr
//! ```
//!
//! where `N_r(θ) = σ(x_r) - σ(x_θ) - ∇σ(x_θ)(x_r - x_θ)`,
//! `G(r) = (ω_b-ω_r)(b-r)^{α-1} + (1-α) ∫_r^b (ω_θ-ω_r)(θ-r)^{α-2} dθ`,
//! `F(r) = (1/Γ(α)) [v_{r,b}(b-r)^{α-1} + (1-α) ∫_r^b v_{r,s}(s-r)^{α-2} ds]`,
//! `E(r) = F(r)(b-r)^{α-1} + (1-α) ∫_r^b (F(r)-F(θ))(θ-r)^{α-2} dθ`, and
//! `∇σ : E` contracts `Σ_{j,q} ∂_q σ_{ij} E_{qj}`. The complex phases
//! `(-1)^α` of the Weyl derivatives have been multiplied out.
//!
//! Every singular integral is evaluated by product integration on the
//! quadrature nodes: the smooth factor is interpolated linearly on each
//! cell and integrated exactly against the power kernel.

use rayon::prelude::*;
use statrs::function::gamma::gamma;

use super::TripletView;
use crate::error::{Error, Result};
use crate::fields::MatrixField;
use crate::scalar::Real;

/// Default for the auxiliary exponent `λ` of the admissibility window.
pub const DEFAULT_LAMBDA: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FracOptions {
    /// `None` picks the midpoint of the admissible window.
    pub alpha: Option<f64>,
    pub lambda: f64,
    /// Number of quadrature cells on `[a, b]`; must divide the index span.
    pub quad_points: usize,
}

impl Default for FracOptions {
    fn default() -> Self {
        Self { alpha: None, lambda: DEFAULT_LAMBDA, quad_points: 1024 }
    }
}

/// Open interval of admissible `α` for Hölder exponent `beta`:
/// `1 - β < α < min(2β, (λβ + 1)/2)`, which needs `(2 + λ)β > 1`.
pub fn admissible_alpha(beta: f64, lambda: f64) -> Result<(f64, f64)> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::domain(format!("Hölder exponent {beta} outside (0, 1]")));
    }
    if !((2.0 + lambda) * beta > 1.0) {
        return Err(Error::domain(format!("(2 + λ)β > 1 violated for β = {beta}, λ = {lambda}")));
    }
    let lo = 1.0 - beta;
    let hi = (2.0 * beta).min((lambda * beta + 1.0) / 2.0).min(1.0);
    if lo >= hi {
        return Err(Error::domain(format!("empty α window ({lo}, {hi}) for β = {beta}")));
    }
    Ok((lo, hi))
}

fn check_alpha(alpha: f64, beta: f64, lambda: f64) -> Result<()> {
    admissible_alpha(beta, lambda)?;
    if !(alpha > 1.0 - beta) {
        return Err(Error::domain(format!("α > 1 - β violated: α = {alpha}, β = {beta}")));
    }
    if !(alpha < 2.0 * beta) {
        return Err(Error::domain(format!("α < 2β violated: α = {alpha}, β = {beta}")));
    }
    if !(alpha < (lambda * beta + 1.0) / 2.0) {
        return Err(Error::domain(format!("α < (λβ + 1)/2 violated: α = {alpha}, β = {beta}, λ = {lambda}")));
    }
    Ok(())
}

/// Product-integration weights for `∫_{u0}^{u0+h} ℓ(u) u^{-γ} du` with `ℓ`
/// linear, `u0 = j h`: entry `j` holds the weights of `ℓ(u0)` and
/// `ℓ(u0 + h)`. On the first cell with `γ ≥ 1` the factor must vanish at
/// `u = 0`, so only the far weight is kept.
fn kernel_weights(h: f64, gamma_exp: f64, cells: usize) -> Vec<(f64, f64)> {
    let antiderivative = |u: f64, p: f64| {
        // ∫ u^{-p}
        if (1.0 - p).abs() < 1e-12 {
            u.ln()
        } else {
            u.powf(1.0 - p) / (1.0 - p)
        }
    };
    (0..cells)
        .map(|j| {
            let u0 = j as f64 * h;
            let u1 = u0 + h;
            let m1 = if j == 0 {
                u1.powf(2.0 - gamma_exp) / (2.0 - gamma_exp)
            } else {
                antiderivative(u1, gamma_exp - 1.0) - antiderivative(u0, gamma_exp - 1.0)
            };
            if j == 0 && gamma_exp >= 1.0 {
                return (0.0, m1 / h);
            }
            let m0 = if j == 0 {
                u1.powf(1.0 - gamma_exp) / (1.0 - gamma_exp)
            } else {
                antiderivative(u1, gamma_exp) - antiderivative(u0, gamma_exp)
            };
            ((u1 * m0 - m1) / h, (m1 - u0 * m0) / h)
        })
        .collect()
}

/// `∫_a^{r_k} F(θ) (r_k - θ)^{-γ} dθ` from node values `f(l)`.
fn left_integral(k: usize, len: usize, w: &[(f64, f64)], f: impl Fn(usize) -> Vec<f64>, acc: &mut [f64]) {
    acc.iter_mut().for_each(|a| *a = 0.0);
    for l in 0..k {
        let (near, far) = w[k - l - 1];
        let (fa, fb) = (f(l), f(l + 1));
        for q in 0..len {
            acc[q] += far * fa[q] + near * fb[q];
        }
    }
}

/// `∫_{r_k}^b F(θ) (θ - r_k)^{-γ} dθ` from node values `f(l)`.
fn right_integral(
    k: usize,
    nodes: usize,
    len: usize,
    w: &[(f64, f64)],
    f: impl Fn(usize) -> Vec<f64>,
    acc: &mut [f64],
) {
    acc.iter_mut().for_each(|a| *a = 0.0);
    for l in k..nodes - 1 {
        let (near, far) = w[l - k];
        let (fa, fb) = (f(l), f(l + 1));
        for q in 0..len {
            acc[q] += near * fa[q] + far * fb[q];
        }
    }
}

/// Fractional-calculus value of `∫_a^b σ(x_r) dω_r`.
pub fn frac_integral<T: Real>(
    tv: &TripletView<T>,
    sigma: &dyn MatrixField<T>,
    a: T,
    b: T,
    options: FracOptions,
) -> Result<Vec<T>> {
    let beta = tv.beta.to_f64_lossy();
    let alpha = match options.alpha {
        Some(alpha) => alpha,
        None => {
            let (lo, hi) = admissible_alpha(beta, options.lambda)?;
            0.5 * (lo + hi)
        }
    };
    check_alpha(alpha, beta, options.lambda)?;

    let (m, d) = tv.dims();
    if sigma.dim_in() != m || sigma.rows() != m || sigma.cols() != d {
        return Err(Error::dim("σ must map R^m to m x d matrices of the triplet"));
    }
    let grid = tv.grid();
    let ia = grid.index_of(a)?;
    let ib = grid.index_of(b)?;
    if ib <= ia {
        return Ok(vec![T::zero(); m]);
    }
    let cells = options.quad_points;
    if cells == 0 || (ib - ia) % cells != 0 {
        return Err(Error::config(format!("quad_points = {cells} must divide the {} grid steps of [a, b]", ib - ia)));
    }
    let stride = (ib - ia) / cells;
    let nodes = cells + 1;
    let node = |k: usize| ia + k * stride;
    let h = (b - a).to_f64_lossy() / cells as f64;
    let (md, mdm) = (m * d, m * d * m);

    // Node data in f64.
    let to64 = |s: &[T]| s.iter().map(|v| v.to_f64_lossy()).collect::<Vec<f64>>();
    let xs: Vec<Vec<f64>> = (0..nodes).map(|k| to64(tv.x(node(k)))).collect();
    let ws: Vec<Vec<f64>> = (0..nodes).map(|k| to64(tv.omega(node(k)))).collect();
    let (sig, dsig): (Vec<Vec<f64>>, Vec<Vec<f64>>) = (0..nodes)
        .map(|k| {
            let mut s = vec![T::zero(); md];
            let mut j = vec![T::zero(); mdm];
            sigma.eval(tv.x(node(k)), &mut s);
            sigma.jacobian(tv.x(node(k)), &mut j);
            (to64(&s), to64(&j))
        })
        .unzip();
    // v over adjacent quadrature cells.
    let v_cell: Vec<Vec<f64>> = (0..cells)
        .map(|k| {
            let mut out = vec![T::zero(); md];
            tv.v(node(k), node(k + 1), &mut out);
            to64(&out)
        })
        .collect();

    let w_alpha = kernel_weights(h, alpha, cells);
    let w_inner_left = kernel_weights(h, alpha + 1.0, cells);
    let w_right = kernel_weights(h, 2.0 - alpha, cells);
    let w_grad_left = kernel_weights(h, 2.0 * alpha, cells);
    let w_outer2 = kernel_weights(h, 2.0 * alpha - 1.0, cells);
    let g_alpha = gamma(alpha);
    let tail = |k: usize| ((cells - k) as f64 * h).powf(alpha - 1.0);

    // G(r_k), d-vector; zero at b.
    let g_vals: Vec<Vec<f64>> = (0..nodes)
        .into_par_iter()
        .map(|k| {
            let mut out = vec![0.0; d];
            if k == cells {
                return out;
            }
            right_integral(k, nodes, d, &w_right, |l| (0..d).map(|c| ws[l][c] - ws[k][c]).collect(), &mut out);
            for c in 0..d {
                out[c] = (ws[cells][c] - ws[k][c]) * tail(k) + (1.0 - alpha) * out[c];
            }
            out
        })
        .collect();

    // ∫_a^r N_r(θ)(r-θ)^{-α-1} dθ, m x d.
    let j_vals: Vec<Vec<f64>> = (0..nodes)
        .into_par_iter()
        .map(|k| {
            let mut out = vec![0.0; md];
            left_integral(
                k,
                md,
                &w_inner_left,
                |l| {
                    (0..md)
                        .map(|rc| {
                            let lin: f64 = (0..m).map(|q| dsig[l][rc * m + q] * (xs[k][q] - xs[l][q])).sum();
                            sig[k][rc] - sig[l][rc] - lin
                        })
                        .collect()
                },
                &mut out,
            );
            out
        })
        .collect();

    // First term.
    let dot =
        |s: &[f64], g: &[f64]| -> Vec<f64> { (0..m).map(|i| (0..d).map(|j| s[i * d + j] * g[j]).sum()).collect() };
    let mut term1 = vec![0.0; m];
    for k in 0..cells {
        let (near, far) = w_alpha[k];
        let (p0, p1) = (dot(&sig[k], &g_vals[k]), dot(&sig[k + 1], &g_vals[k + 1]));
        let (q0, q1) = (dot(&j_vals[k], &g_vals[k]), dot(&j_vals[k + 1], &g_vals[k + 1]));
        for i in 0..m {
            term1[i] += near * p0[i] + far * p1[i] + alpha * 0.5 * h * (q0[i] + q1[i]);
        }
    }
    let c1 = 1.0 / (gamma(1.0 - alpha) * g_alpha);

    // F(r_k), m x d, with v_{r_k, r_l} built row by row.
    let f_vals: Vec<Vec<f64>> = (0..nodes)
        .into_par_iter()
        .map(|k| {
            let mut out = vec![0.0; md];
            if k == cells {
                return out;
            }
            let mut row = vec![vec![0.0; md]; nodes];
            for l in k..cells {
                for r in 0..m {
                    let dx = xs[l][r] - xs[k][r];
                    for c in 0..d {
                        let rc = r * d + c;
                        row[l + 1][rc] = row[l][rc] + v_cell[l][rc] + dx * (ws[l + 1][c] - ws[l][c]);
                    }
                }
            }
            right_integral(k, nodes, md, &w_right, |l| row[l].clone(), &mut out);
            for rc in 0..md {
                out[rc] = (row[cells][rc] * tail(k) + (1.0 - alpha) * out[rc]) / g_alpha;
            }
            out
        })
        .collect();

    let e_vals: Vec<Vec<f64>> = (0..nodes)
        .into_par_iter()
        .map(|k| {
            let mut out = vec![0.0; md];
            if k == cells {
                return out;
            }
            right_integral(
                k,
                nodes,
                md,
                &w_right,
                |l| (0..md).map(|rc| f_vals[k][rc] - f_vals[l][rc]).collect(),
                &mut out,
            );
            for rc in 0..md {
                out[rc] = f_vals[k][rc] * tail(k) + (1.0 - alpha) * out[rc];
            }
            out
        })
        .collect();

    let k_vals: Vec<Vec<f64>> = (0..nodes)
        .into_par_iter()
        .map(|k| {
            let mut out = vec![0.0; mdm];
            left_integral(k, mdm, &w_grad_left, |l| (0..mdm).map(|q| dsig[k][q] - dsig[l][q]).collect(), &mut out);
            out
        })
        .collect();

    let contract = |t: &[f64], e: &[f64]| -> Vec<f64> {
        (0..m)
            .map(|i| {
                let mut s = 0.0;
                for j in 0..d {
                    for q in 0..m {
                        s += t[(i * d + j) * m + q] * e[q * d + j];
                    }
                }
                s
            })
            .collect()
    };
    let mut term2 = vec![0.0; m];
    for k in 0..cells {
        let (near, far) = w_outer2[k];
        let (p0, p1) = (contract(&dsig[k], &e_vals[k]), contract(&dsig[k + 1], &e_vals[k + 1]));
        let (q0, q1) = (contract(&k_vals[k], &e_vals[k]), contract(&k_vals[k + 1], &e_vals[k + 1]));
        for i in 0..m {
            term2[i] += near * p0[i] + far * p1[i] + (2.0 * alpha - 1.0) * 0.5 * h * (q0[i] + q1[i]);
        }
    }
    let c2 = 1.0 / (gamma(2.0 - 2.0 * alpha) * g_alpha);

    Ok((0..m).map(|i| T::lit(c1 * term1[i] + c2 * term2[i])).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_matches_constraints() {
        let (lo, hi) = admissible_alpha(0.4, 1.0).unwrap();
        assert!((lo - 0.6).abs() < 1e-15 && (hi - 0.7).abs() < 1e-15);
        let (lo, hi) = admissible_alpha(0.5, 1.0).unwrap();
        assert!((lo - 0.5).abs() < 1e-15 && (hi - 0.75).abs() < 1e-15);
        assert!(admissible_alpha(0.3, 1.0).is_err());
    }

    #[test]
    fn violated_constraint_is_named() {
        let err = check_alpha(0.55, 0.4, 1.0).unwrap_err().to_string();
        assert!(err.contains("1 - β"), "{err}");
        let err = check_alpha(0.72, 0.4, 1.0).unwrap_err().to_string();
        assert!(err.contains("(λβ + 1)/2"), "{err}");
        let err = check_alpha(0.75, 0.36, 3.0).unwrap_err().to_string();
        assert!(err.contains("2β"), "{err}");
    }

    #[test]
    fn kernel_weights_integrate_polynomials() {
        // ∫_0^1 u^{-γ} du and ∫_0^1 u · u^{-γ} du, γ < 1.
        let g = 0.6;
        let w = kernel_weights(0.01, g, 100);
        let (mut c, mut lin) = (0.0, 0.0);
        for (j, (a, b)) in w.iter().enumerate() {
            c += a + b;
            lin += a * (j as f64 * 0.01) + b * ((j + 1) as f64 * 0.01);
        }
        assert!((c - 1.0 / (1.0 - g)).abs() < 1e-12);
        assert!((lin - 1.0 / (2.0 - g)).abs() < 1e-12);
    }
}
