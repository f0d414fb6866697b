//! Level-2 lift of the joint path `Z = (B, W)`.
//!
//! The second level is stored as a `(d + d') x (d + d')` tensor per coarse
//! pair, in block form
//!
//! ```text
//!     | B²        I[B,W] |
//!     | I[W,B]    W²     |
//! ```
//!
//! `B²` is the lift of the piecewise-linear interpolation of the fine fBm
//! sample, `W²` uses Stratonovich (mid-point) sums, `I[B,W]` left-point sums
//! against the W increments and `I[W,B] = W ⊗ B - I[B,W]ᵀ`. Every adjacent
//! coarse block is a genuine iterated sum over the fine grid, and longer pairs
//! are composed with Chen's relation, so the algebraic identities hold up to
//! rounding.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian_paths::{GaussianPath, PathKind};
use crate::grid::Grid;
use crate::scalar::Real;

/// Coarse grids up to this many points store the full upper triangle.
pub const FULL_TRIANGLE_MAX_POINTS: usize = 512;
/// Band width used above [`FULL_TRIANGLE_MAX_POINTS`].
pub const DEFAULT_BAND: usize = 64;
/// Default tolerance for the algebraic identities (relative).
pub const DEFAULT_IDENTITY_TOL: f64 = 1e-10;

/// How the W² block is accumulated over fine steps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LevelTwoScheme {
    /// Mid-point sums: the geometric (Stratonovich) Brownian rough path.
    #[default]
    Stratonovich,
    /// Left-point sums. Not geometric; kept to exercise the diagnostics.
    Ito,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LiftOptions {
    pub w_scheme: LevelTwoScheme,
    /// Largest `j - i` stored explicitly; `None` picks the default policy.
    pub window: Option<usize>,
}

/// Something that provides first- and second-level increments on a grid.
pub trait Driver<T: Real> {
    fn grid(&self) -> &Grid<T>;
    fn dim(&self) -> usize;
    /// `Z_j - Z_i`.
    fn increment(&self, i: usize, j: usize, out: &mut [T]);
    /// `Z²_{t_i, t_j}` row-major, `dim x dim`.
    fn level_two(&self, i: usize, j: usize, out: &mut [T]);
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct RoughLift<T: Real> {
    pub coarse_grid: Grid<T>,
    pub fine_factor: usize,
    /// `(d, d')`: dimensions of the B and W blocks.
    pub block_dims: (usize, usize),
    pub hurst: Option<T>,
    window: usize,
    /// First level, `(n + 1) * e` row-major.
    z: Vec<T>,
    /// Second level for stored pairs; see [`RoughLift::slot`].
    z2: Vec<T>,
    row_offsets: Vec<usize>,
}

impl<T: Real> RoughLift<T> {
    /// Lift of a fBm sample `b` and a Brownian sample `w` given on the same
    /// fine grid, which must refine `coarse_grid` by `fine_factor`.
    pub fn mixed(
        b: &GaussianPath<T>,
        w: &GaussianPath<T>,
        coarse_grid: Grid<T>,
        fine_factor: usize,
        options: LiftOptions,
    ) -> Result<Self> {
        if !matches!(b.kind, PathKind::Fbm { .. }) {
            return Err(Error::config("B must be a fractional Brownian path"));
        }
        if !matches!(w.kind, PathKind::Bm) {
            return Err(Error::config("W must be a Brownian path"));
        }
        if b.grid != w.grid {
            return Err(Error::config("B and W are sampled on different grids"));
        }
        let mut lift =
            Self::from_fine_values(&b.values, b.dim, &w.values, w.dim, &b.grid, coarse_grid, fine_factor, options)?;
        lift.hurst = b.hurst();
        Ok(lift)
    }

    /// Geometric lift of a single path (the piecewise-linear lift on the
    /// fine grid), stored with block dims `(dim, 0)`.
    pub fn geometric(path: &GaussianPath<T>, coarse_grid: Grid<T>, fine_factor: usize) -> Result<Self> {
        let mut lift = Self::from_fine_values(
            &path.values,
            path.dim,
            &[],
            0,
            &path.grid,
            coarse_grid,
            fine_factor,
            LiftOptions::default(),
        )?;
        lift.hurst = path.hurst();
        Ok(lift)
    }

    /// Builds the lift from raw fine-grid values (row-major, `d` and `d'`
    /// columns). Either block may be empty.
    #[allow(clippy::too_many_arguments)]
    pub fn from_fine_values(
        b: &[T],
        d: usize,
        w: &[T],
        dw: usize,
        fine_grid: &Grid<T>,
        coarse_grid: Grid<T>,
        fine_factor: usize,
        options: LiftOptions,
    ) -> Result<Self> {
        if fine_factor == 0 {
            return Err(Error::config("fine_factor must be >= 1"));
        }
        let factor = coarse_grid.refinement_factor(fine_grid)?;
        if factor != fine_factor {
            return Err(Error::config(format!(
                "fine grid refines the coarse grid by {factor}, but fine_factor is {fine_factor}"
            )));
        }
        let nf = fine_grid.len();
        if b.len() != nf * d || w.len() != nf * dw {
            return Err(Error::dim(format!(
                "expected {} B values and {} W values on {nf} fine points, got {} and {}",
                nf * d,
                nf * dw,
                b.len(),
                w.len()
            )));
        }
        let e = d + dw;
        if e == 0 {
            return Err(Error::dim("lift needs at least one driver component"));
        }
        let n = coarse_grid.n_steps;
        let window = options.window.unwrap_or(if n < FULL_TRIANGLE_MAX_POINTS { n } else { DEFAULT_BAND });
        let window = window.clamp(1, n);

        let fine_point = |u: usize, out: &mut [T]| {
            out[..d].copy_from_slice(&b[u * d..(u + 1) * d]);
            out[d..].copy_from_slice(&w[u * dw..(u + 1) * dw]);
        };

        let mut z = vec![T::zero(); (n + 1) * e];
        for i in 0..=n {
            fine_point(i * fine_factor, &mut z[i * e..(i + 1) * e]);
        }

        let half = T::lit(0.5);
        let scheme = options.w_scheme;
        // Adjacent coarse blocks, each an independent fine-grid accumulation.
        let adjacent: Vec<Vec<T>> = (0..n)
            .into_par_iter()
            .map(|k| {
                let mut s = vec![T::zero(); e * e];
                let mut start = vec![T::zero(); e];
                let mut cur = vec![T::zero(); e];
                let mut next = vec![T::zero(); e];
                fine_point(k * fine_factor, &mut start);
                cur.copy_from_slice(&start);
                for u in k * fine_factor..(k + 1) * fine_factor {
                    fine_point(u + 1, &mut next);
                    for i in 0..e {
                        let loc = cur[i] - start[i];
                        let di = next[i] - cur[i];
                        for j in 0..e {
                            let dj = next[j] - cur[j];
                            let in_b = i < d && j < d;
                            let in_w = i >= d && j >= d;
                            let correction = if in_b || (in_w && scheme == LevelTwoScheme::Stratonovich) {
                                half * di * dj
                            } else {
                                T::zero()
                            };
                            // I[W,B] is filled from the identity below.
                            if !(i >= d && j < d) {
                                s[i * e + j] += loc * dj + correction;
                            }
                        }
                    }
                    std::mem::swap(&mut cur, &mut next);
                }
                for i in d..e {
                    for j in 0..d {
                        s[i * e + j] = (cur[i] - start[i]) * (cur[j] - start[j]) - s[j * e + i];
                    }
                }
                s
            })
            .collect();

        let mut row_offsets = Vec::with_capacity(n + 1);
        let mut total = 0usize;
        for i in 0..n {
            row_offsets.push(total);
            total += window.min(n - i) * e * e;
        }
        row_offsets.push(total);

        let rows: Vec<Vec<T>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let len = window.min(n - i);
                let mut row = vec![T::zero(); len * e * e];
                let mut acc = vec![T::zero(); e * e];
                for step in 0..len {
                    let j = i + step; // extend [i, j] to [i, j + 1]
                    let adj = &adjacent[j];
                    for a in 0..e {
                        let zij_a = z[j * e + a] - z[i * e + a];
                        for c in 0..e {
                            let inc = z[(j + 1) * e + c] - z[j * e + c];
                            acc[a * e + c] += adj[a * e + c] + zij_a * inc;
                        }
                    }
                    row[step * e * e..(step + 1) * e * e].copy_from_slice(&acc);
                }
                row
            })
            .collect();
        let mut z2 = Vec::with_capacity(total);
        for r in rows {
            z2.extend(r);
        }

        Ok(Self { coarse_grid, fine_factor, block_dims: (d, dw), hurst: None, window, z, z2, row_offsets })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.block_dims.0 + self.block_dims.1
    }

    pub fn window(&self) -> usize {
        self.window
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[T] {
        let e = self.dim();
        &self.z[i * e..(i + 1) * e]
    }

    /// Whether `Z²_{i,j}` is stored explicitly.
    #[inline]
    pub fn is_stored(&self, i: usize, j: usize) -> bool {
        i < j && j <= self.coarse_grid.n_steps && j - i <= self.window
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> std::ops::Range<usize> {
        let ee = self.dim() * self.dim();
        let start = self.row_offsets[i] + (j - i - 1) * ee;
        start..start + ee
    }

    /// Stored second-level entry, if `(i, j)` is within the window.
    pub fn stored(&self, i: usize, j: usize) -> Option<&[T]> {
        self.is_stored(i, j).then(|| &self.z2[self.slot(i, j)])
    }

    /// Mutable access to a stored entry (fault injection in diagnostics tests).
    pub fn stored_mut(&mut self, i: usize, j: usize) -> Option<&mut [T]> {
        if self.is_stored(i, j) {
            let r = self.slot(i, j);
            Some(&mut self.z2[r])
        } else {
            None
        }
    }

    /// `Z²_{t_i, t_j}`, composing stored pieces with Chen's relation when the
    /// pair lies outside the stored window.
    pub fn z2(&self, i: usize, j: usize) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim() * self.dim()];
        Driver::level_two(self, i, j, &mut out);
        out
    }

    /// Restricts to a contiguous block of driver components (`0..d` for the
    /// fBm block, `d..d+d'` for the Brownian block).
    pub fn block(&self, range: std::ops::Range<usize>) -> Result<BlockView<'_, T>> {
        if range.start >= range.end || range.end > self.dim() {
            return Err(Error::dim(format!("invalid block {range:?} of a {}-dim lift", self.dim())));
        }
        Ok(BlockView { lift: self, range })
    }

    pub fn b_block(&self) -> Result<BlockView<'_, T>> {
        self.block(0..self.block_dims.0)
    }

    pub fn w_block(&self) -> Result<BlockView<'_, T>> {
        self.block(self.block_dims.0..self.dim())
    }

    /// Writes the first level as CSV (`t, z_1, ..., z_e`).
    pub fn write_first_level_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim()).map(|k| format!("z_{k}")));
        wtr.write_record(&header)?;
        for i in 0..self.coarse_grid.len() {
            let mut row = vec![self.coarse_grid.time(i).to_string()];
            row.extend(self.point(i).iter().map(|v| v.to_string()));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Writes stored second-level entries as `(i, j, flattened tensor)` rows.
    pub fn write_second_level_csv<W: Write>(&self, w: W) -> Result<()> {
        let e = self.dim();
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["i".to_string(), "j".to_string()];
        for a in 1..=e {
            for c in 1..=e {
                header.push(format!("z2_{a}_{c}"));
            }
        }
        wtr.write_record(&header)?;
        let n = self.coarse_grid.n_steps;
        for i in 0..n {
            for j in i + 1..=(i + self.window).min(n) {
                let mut row = vec![i.to_string(), j.to_string()];
                row.extend(self.z2[self.slot(i, j)].iter().map(|v| v.to_string()));
                wtr.write_record(&row)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn header(&self) -> LiftHeader<T> {
        LiftHeader {
            coarse_grid: self.coarse_grid,
            fine_factor: self.fine_factor,
            block_dims: self.block_dims,
            window: self.window,
            hurst: self.hurst,
        }
    }
}

/// JSON header accompanying the lift CSV bundle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct LiftHeader<T: Real> {
    pub coarse_grid: Grid<T>,
    pub fine_factor: usize,
    pub block_dims: (usize, usize),
    pub window: usize,
    pub hurst: Option<T>,
}

impl<T: Real> Driver<T> for RoughLift<T> {
    fn grid(&self) -> &Grid<T> {
        &self.coarse_grid
    }

    fn dim(&self) -> usize {
        RoughLift::dim(self)
    }

    fn increment(&self, i: usize, j: usize, out: &mut [T]) {
        let e = RoughLift::dim(self);
        for k in 0..e {
            out[k] = self.z[j * e + k] - self.z[i * e + k];
        }
    }

    fn level_two(&self, i: usize, j: usize, out: &mut [T]) {
        let e = RoughLift::dim(self);
        out.iter_mut().for_each(|v| *v = T::zero());
        if i >= j {
            return;
        }
        let mut start = i;
        while start < j {
            let stop = (start + self.window).min(j);
            let piece = &self.z2[self.slot(start, stop)];
            // out <- out + piece + Z_{i,start} ⊗ Z_{start,stop}
            for a in 0..e {
                let left = self.z[start * e + a] - self.z[i * e + a];
                for c in 0..e {
                    let right = self.z[stop * e + c] - self.z[start * e + c];
                    out[a * e + c] += piece[a * e + c] + left * right;
                }
            }
            start = stop;
        }
    }
}

/// A contiguous block of driver components of a [`RoughLift`].
#[derive(Clone, Debug)]
pub struct BlockView<'a, T: Real> {
    lift: &'a RoughLift<T>,
    range: std::ops::Range<usize>,
}

impl<T: Real> BlockView<'_, T> {
    pub fn lift(&self) -> &RoughLift<T> {
        self.lift
    }
}

impl<T: Real> Driver<T> for BlockView<'_, T> {
    fn grid(&self) -> &Grid<T> {
        &self.lift.coarse_grid
    }

    fn dim(&self) -> usize {
        self.range.len()
    }

    fn increment(&self, i: usize, j: usize, out: &mut [T]) {
        let e = self.lift.dim();
        for (o, k) in out.iter_mut().zip(self.range.clone()) {
            *o = self.lift.z[j * e + k] - self.lift.z[i * e + k];
        }
    }

    fn level_two(&self, i: usize, j: usize, out: &mut [T]) {
        let e = self.lift.dim();
        let full = self.lift.z2(i, j);
        let m = self.range.len();
        for (a, ga) in self.range.clone().enumerate() {
            for (c, gc) in self.range.clone().enumerate() {
                out[a * m + c] = full[ga * e + gc];
            }
        }
    }
}

/// Builds the mixed lift from a fBm sample `B` and a Brownian sample `W`.
pub fn lift_mixed<T: Real>(
    b: &GaussianPath<T>,
    w: &GaussianPath<T>,
    coarse_grid: Grid<T>,
    fine_factor: usize,
) -> Result<RoughLift<T>> {
    RoughLift::mixed(b, w, coarse_grid, fine_factor, LiftOptions::default())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiftDiagnostics<T> {
    /// Largest absolute Chen residual over inspected coarse triples.
    pub chen_residual_max: T,
    /// Same, divided by the second-level scale of the lift.
    pub chen_residual_rel: T,
    /// Largest `|Z²ᵢⱼ + Z²ⱼᵢ - Zⁱ Zʲ|` over stored pairs.
    pub symmetry_residual_max: T,
    pub symmetry_residual_rel: T,
    pub holder_beta: T,
    /// `max |Z_{st}| / |t - s|^β` over stored pairs.
    pub first_level_norm: T,
    /// `max |Z²_{st}| / |t - s|^{2β}` over stored pairs.
    pub second_level_norm: T,
    pub triples_inspected: usize,
    pub tol: T,
    pub passed: bool,
}

/// Triples inspected by [`check_chen`] before switching to a strided sample.
pub const DEFAULT_TRIPLE_BUDGET: usize = 2_000_000;

struct Scan<T> {
    chen_abs: T,
    sym_abs: T,
    scale: T,
    first: T,
    second: T,
    triples: usize,
}

fn scan<T: Real>(lift: &RoughLift<T>, beta: T, triple_budget: usize, with_chen: bool) -> Scan<T> {
    let e = lift.dim();
    let n = lift.coarse_grid.n_steps;
    let dt = lift.coarse_grid.dt();
    let mut zi = vec![T::zero(); e];
    let mut out = Scan {
        chen_abs: T::zero(),
        sym_abs: T::zero(),
        scale: T::min_positive_value(),
        first: T::zero(),
        second: T::zero(),
        triples: 0,
    };
    for i in 0..n {
        for j in i + 1..=(i + lift.window).min(n) {
            let s = lift.stored(i, j).expect("stored pair");
            lift.increment(i, j, &mut zi);
            let h = dt * T::from_count(j - i);
            let mut n1 = T::zero();
            let mut n2 = T::zero();
            for a in 0..e {
                n1 += zi[a] * zi[a];
                for c in 0..e {
                    n2 += s[a * e + c] * s[a * e + c];
                    let r = (s[a * e + c] + s[c * e + a] - zi[a] * zi[c]).abs();
                    out.sym_abs = out.sym_abs.max(r);
                    out.scale = out.scale.max(s[a * e + c].abs()).max((zi[a] * zi[c]).abs());
                }
            }
            out.first = out.first.max(n1.sqrt() / h.powf(beta));
            out.second = out.second.max(n2.sqrt() / h.powf(beta + beta));
        }
    }
    if !with_chen {
        return out;
    }
    // Triples (i < j < k) whose three pairs are all stored.
    let mut count = 0usize;
    for i in 0..n {
        for k in i + 2..=(i + lift.window).min(n) {
            count += k - i - 1;
        }
    }
    let stride = count.div_ceil(triple_budget.max(1)).max(1);
    let mut zij = vec![T::zero(); e];
    let mut zjk = vec![T::zero(); e];
    let mut idx = 0usize;
    for i in 0..n {
        for k in i + 2..=(i + lift.window).min(n) {
            let sik = lift.stored(i, k).expect("stored");
            for j in i + 1..k {
                idx += 1;
                if !(idx - 1).is_multiple_of(stride) {
                    continue;
                }
                let sij = lift.stored(i, j).expect("stored");
                let sjk = lift.stored(j, k).expect("stored");
                lift.increment(i, j, &mut zij);
                lift.increment(j, k, &mut zjk);
                for a in 0..e {
                    for c in 0..e {
                        let r = sik[a * e + c] - sij[a * e + c] - sjk[a * e + c] - zij[a] * zjk[c];
                        out.chen_abs = out.chen_abs.max(r.abs());
                    }
                }
                out.triples += 1;
            }
        }
    }
    out
}

fn default_beta<T: Real>(lift: &RoughLift<T>) -> T {
    lift.hurst.map(|h| h - T::lit(0.05)).unwrap_or(T::lit(0.45))
}

/// Chen-relation check over all (or a strided sample of) coarse triples.
pub fn check_chen<T: Real>(lift: &RoughLift<T>, tol: T) -> LiftDiagnostics<T> {
    let beta = default_beta(lift);
    let s = scan(lift, beta, DEFAULT_TRIPLE_BUDGET, true);
    let chen_rel = s.chen_abs / s.scale;
    LiftDiagnostics {
        chen_residual_max: s.chen_abs,
        chen_residual_rel: chen_rel,
        symmetry_residual_max: s.sym_abs,
        symmetry_residual_rel: s.sym_abs / s.scale,
        holder_beta: beta,
        first_level_norm: s.first,
        second_level_norm: s.second,
        triples_inspected: s.triples,
        tol,
        passed: chen_rel <= tol,
    }
}

/// Geometricity check: the symmetric part of `Z²` must be `½ Z ⊗ Z`.
pub fn check_geometric<T: Real>(lift: &RoughLift<T>, tol: T) -> LiftDiagnostics<T> {
    let beta = default_beta(lift);
    let s = scan(lift, beta, 0, false);
    let sym_rel = s.sym_abs / s.scale;
    LiftDiagnostics {
        chen_residual_max: T::zero(),
        chen_residual_rel: T::zero(),
        symmetry_residual_max: s.sym_abs,
        symmetry_residual_rel: sym_rel,
        holder_beta: beta,
        first_level_norm: s.first,
        second_level_norm: s.second,
        triples_inspected: 0,
        tol,
        passed: sym_rel <= tol,
    }
}

/// Both checks at once; passes only if both identities hold.
pub fn check_lift<T: Real>(lift: &RoughLift<T>, tol: T) -> LiftDiagnostics<T> {
    let mut d = check_chen(lift, tol);
    d.passed = d.chen_residual_rel <= tol && d.symmetry_residual_rel <= tol;
    d
}
