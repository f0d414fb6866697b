//! Averaged drift, averaged equation, Khasminskii auxiliary processes and
//! the ε → 0 convergence experiment.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::{require_beta1, CoefficientSet, Dims};
use crate::error::{Error, Result};
use crate::gaussian_paths::check_hurst;
use crate::grid::Grid;
use crate::rde_solver::{
    check_initial, check_substeps, fast_coarse_step, required_substeps, run_frozen, solve_fast_slow, sup_distance,
    FastSlowSolution, FastStepper, MixedNoise, SlowStepper, StatePath,
};
use crate::rng::{self, derive_seed};
use crate::scalar::Real;
use crate::stats::{mean, tree_sum, Estimate};

/// Parameters of the ergodic estimator of `f̄(ξ)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FbarParams {
    pub burn_in: f64,
    pub horizon: f64,
    pub replicas: usize,
    /// Euler-Maruyama step of the frozen equation.
    pub dt: f64,
}

impl FbarParams {
    /// Burn-in `5/β₁`, then 50 time units.
    pub fn for_rate(beta1: f64) -> Self {
        let burn_in = 5.0 / beta1;
        Self { burn_in, horizon: burn_in + 50.0, replicas: 32, dt: 1e-3 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.burn_in >= 0.0 && self.horizon > self.burn_in) {
            return Err(Error::config(format!(
                "burn_in = {} must be nonnegative and below horizon = {}",
                self.burn_in, self.horizon
            )));
        }
        if self.replicas == 0 {
            return Err(Error::config("replicas must be positive"));
        }
        if !(self.dt > 0.0 && self.dt < self.horizon - self.burn_in) {
            return Err(Error::config(format!("frozen step dt = {} out of range", self.dt)));
        }
        Ok(())
    }

    fn steps(&self) -> (usize, usize) {
        let total = (self.horizon / self.dt).round() as usize;
        let burn = (self.burn_in / self.dt).round() as usize;
        (burn, total)
    }
}

/// Estimate of `f̄(ξ)` with per-component standard errors over replicas.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct FbarEstimate<T: Real> {
    pub value: Vec<T>,
    pub std_error: Vec<T>,
    pub replicas: usize,
}

/// Time average of `f(ξ, Y_t)` over `(burn_in, horizon]` for one replica.
/// Replica streams depend on `(seed, replica)` only, so estimates at
/// different `ξ` share their noise.
fn replica_average<T: Real, C: CoefficientSet<T> + ?Sized>(
    coeffs: &C,
    xi: &[T],
    params: &FbarParams,
    seed: u64,
    replica: usize,
) -> Result<Vec<T>> {
    let dims = coeffs.dims();
    let (burn, total) = params.steps();
    let mut rng = rng::stream(seed, &[rng::tag::FBAR, replica as u64]);
    let phi0 = vec![T::zero(); dims.n];
    let mut f = vec![T::zero(); dims.m];
    let mut sums: Vec<Vec<T>> = vec![Vec::with_capacity(total - burn); dims.m];
    run_frozen(coeffs, xi, &phi0, T::lit(params.dt), total, &mut rng, |k, phi| {
        if k > burn {
            coeffs.f(xi, phi, &mut f);
            for (s, v) in sums.iter_mut().zip(&f) {
                s.push(*v);
            }
        }
    })?;
    Ok(sums.iter().map(|s| mean(s)).collect())
}

/// Ergodic estimate of `f̄(ξ) = ∫ f(ξ, φ) μ^ξ(dφ)`: time average along the
/// frozen equation after burn-in, averaged over independent replicas.
pub fn estimate_fbar<T: Real, C: CoefficientSet<T> + ?Sized>(
    coeffs: &C,
    xi: &[T],
    params: &FbarParams,
    seed: u64,
) -> Result<FbarEstimate<T>> {
    params.validate()?;
    let dims = coeffs.dims();
    if xi.len() != dims.m {
        return Err(Error::dim(format!("ξ must lie in R^{}", dims.m)));
    }
    let per_replica: Vec<Vec<T>> = (0..params.replicas)
        .into_par_iter()
        .map(|r| replica_average(coeffs, xi, params, seed, r))
        .collect::<Result<_>>()?;
    let mut value = Vec::with_capacity(dims.m);
    let mut std_error = Vec::with_capacity(dims.m);
    for c in 0..dims.m {
        let xs: Vec<T> = per_replica.iter().map(|v| v[c]).collect();
        let est = Estimate::from_samples(&xs);
        value.push(est.mean);
        std_error.push(if params.replicas > 1 { est.std_error } else { T::nan() });
    }
    Ok(FbarEstimate { value, std_error, replicas: params.replicas })
}

/// Frozen-equation states after burn-in, pooled over replicas: an
/// empirical stand-in for `μ^ξ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct FrozenEnsemble<T: Real> {
    pub xi: Vec<T>,
    pub n: usize,
    /// `samples.len() / n` states, row-major.
    pub samples: Vec<T>,
    pub burn_in: f64,
    pub horizon: f64,
    pub replicas: usize,
}

impl<T: Real> FrozenEnsemble<T> {
    pub fn len(&self) -> usize {
        self.samples.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Empirical mean of `g` over the ensemble.
    pub fn expectation(&self, g: impl Fn(&[T]) -> T) -> T {
        let vals: Vec<T> = self.samples.chunks(self.n).map(g).collect();
        mean(&vals)
    }
}

/// Collects every `thin`-th frozen state after burn-in.
pub fn frozen_ensemble<T: Real, C: CoefficientSet<T> + ?Sized>(
    coeffs: &C,
    xi: &[T],
    params: &FbarParams,
    thin: usize,
    seed: u64,
) -> Result<FrozenEnsemble<T>> {
    params.validate()?;
    let dims = coeffs.dims();
    let (burn, total) = params.steps();
    let thin = thin.max(1);
    let chunks: Vec<Vec<T>> = (0..params.replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream(seed, &[rng::tag::FROZEN, r as u64]);
            let mut out = Vec::new();
            run_frozen(coeffs, xi, &vec![T::zero(); dims.n], T::lit(params.dt), total, &mut rng, |k, phi| {
                if k > burn && (k - burn) % thin == 0 {
                    out.extend_from_slice(phi);
                }
            })?;
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(FrozenEnsemble {
        xi: xi.to_vec(),
        n: dims.n,
        samples: chunks.concat(),
        burn_in: params.burn_in,
        horizon: params.horizon,
        replicas: params.replicas,
    })
}

/// `f̄` tabulated on a uniform lattice over a box, evaluated by multilinear
/// interpolation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct FbarTable<T: Real> {
    pub lo: Vec<T>,
    pub hi: Vec<T>,
    /// Lattice points per dimension.
    pub points: usize,
    /// `points^m` nodes (first coordinate slowest) times `m` components.
    pub values: Vec<T>,
    pub std_errors: Vec<T>,
    pub params: FbarParams,
    pub seed: u64,
}

impl<T: Real> FbarTable<T> {
    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    fn node_point(&self, mut idx: usize) -> Vec<T> {
        let m = self.dim();
        let mut xi = vec![T::zero(); m];
        for c in (0..m).rev() {
            let i = idx % self.points;
            idx /= self.points;
            let h = (self.hi[c] - self.lo[c]) / T::from_count(self.points - 1);
            xi[c] = self.lo[c] + h * T::from_count(i);
        }
        xi
    }

    /// Lattice coordinates of every node, in storage order.
    pub fn nodes(&self) -> Vec<Vec<T>> {
        (0..self.points.pow(self.dim() as u32)).map(|i| self.node_point(i)).collect()
    }

    pub fn contains(&self, xi: &[T]) -> bool {
        xi.iter().zip(self.lo.iter().zip(&self.hi)).all(|(x, (l, h))| *x >= *l && *x <= *h)
    }

    pub fn eval(&self, xi: &[T], out: &mut [T]) -> Result<()> {
        let m = self.dim();
        if !self.contains(xi) {
            return Err(Error::domain(format!(
                "ξ = {:?} outside the tabulated box {:?}..{:?}",
                xi.iter().map(|v| v.to_f64_lossy()).collect::<Vec<_>>(),
                self.lo.iter().map(|v| v.to_f64_lossy()).collect::<Vec<_>>(),
                self.hi.iter().map(|v| v.to_f64_lossy()).collect::<Vec<_>>()
            )));
        }
        let mut cell = vec![0usize; m];
        let mut frac = vec![T::zero(); m];
        for c in 0..m {
            let h = (self.hi[c] - self.lo[c]) / T::from_count(self.points - 1);
            let pos = (xi[c] - self.lo[c]) / h;
            let i = pos.floor().to_usize().unwrap_or(0).min(self.points - 2);
            cell[c] = i;
            frac[c] = pos - T::from_count(i);
        }
        out.iter_mut().for_each(|o| *o = T::zero());
        for corner in 0..(1usize << m) {
            let mut weight = T::one();
            let mut idx = 0;
            for c in 0..m {
                let up = (corner >> c) & 1 == 1;
                weight *= if up { frac[c] } else { T::one() - frac[c] };
                idx = idx * self.points + cell[c] + usize::from(up);
            }
            if weight == T::zero() {
                continue;
            }
            for (o, v) in out.iter_mut().zip(&self.values[idx * m..(idx + 1) * m]) {
                *o += weight * *v;
            }
        }
        Ok(())
    }
}

/// Tabulates `f̄` on `points` nodes per dimension over `[lo, hi]`.
pub fn tabulate_fbar<T: Real, C: CoefficientSet<T> + ?Sized>(
    coeffs: &C,
    lo: &[T],
    hi: &[T],
    points: usize,
    params: &FbarParams,
    seed: u64,
) -> Result<FbarTable<T>> {
    let m = coeffs.dims().m;
    if lo.len() != m || hi.len() != m {
        return Err(Error::dim(format!("lattice box must be given in R^{m}")));
    }
    if points < 2 {
        return Err(Error::config("lattice needs at least 2 points per dimension"));
    }
    if lo.iter().zip(hi).any(|(l, h)| !(l < h)) {
        return Err(Error::config("lattice box has an empty side"));
    }
    params.validate()?;
    let mut table = FbarTable {
        lo: lo.to_vec(),
        hi: hi.to_vec(),
        points,
        values: Vec::new(),
        std_errors: Vec::new(),
        params: *params,
        seed,
    };
    let estimates: Vec<FbarEstimate<T>> =
        table.nodes().into_par_iter().map(|xi| estimate_fbar(coeffs, &xi, params, seed)).collect::<Result<_>>()?;
    for e in estimates {
        table.values.extend(e.value);
        table.std_errors.extend(e.std_error);
    }
    Ok(table)
}

/// Default lattice points per slow dimension.
pub const DEFAULT_LATTICE_POINTS: usize = 64;

/// How `f̄` is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FbarStrategy {
    OnTheFly,
    Tabulated,
    Exact,
}

type ExactFn<T> = Arc<dyn Fn(&[T], &mut [T]) + Send + Sync>;

/// Fresh ergodic estimates per query, memoised by the exact query point.
pub struct OnTheFly<T: Real> {
    coeffs: Arc<dyn CoefficientSet<T>>,
    params: FbarParams,
    seed: u64,
    cache: Mutex<HashMap<Vec<u64>, Vec<T>>>,
}

/// The averaged drift used by [`solve_averaged`].
pub enum AveragedDrift<T: Real> {
    Tabulated(FbarTable<T>),
    OnTheFly(OnTheFly<T>),
    /// A closed-form `f̄`, for oracle tests.
    Exact(ExactFn<T>),
}

impl<T: Real> AveragedDrift<T> {
    pub fn on_the_fly(coeffs: Arc<dyn CoefficientSet<T>>, params: FbarParams, seed: u64) -> Result<Self> {
        params.validate()?;
        Ok(Self::OnTheFly(OnTheFly { coeffs, params, seed, cache: Mutex::new(HashMap::new()) }))
    }

    pub fn exact(f: impl Fn(&[T], &mut [T]) + Send + Sync + 'static) -> Self {
        Self::Exact(Arc::new(f))
    }

    pub fn strategy(&self) -> FbarStrategy {
        match self {
            Self::Tabulated(_) => FbarStrategy::Tabulated,
            Self::OnTheFly(_) => FbarStrategy::OnTheFly,
            Self::Exact(_) => FbarStrategy::Exact,
        }
    }

    pub fn eval(&self, xi: &[T], out: &mut [T]) -> Result<()> {
        match self {
            Self::Tabulated(t) => t.eval(xi, out),
            Self::Exact(f) => {
                f(xi, out);
                Ok(())
            }
            Self::OnTheFly(o) => {
                let key: Vec<u64> = xi.iter().map(|v| v.to_f64_lossy().to_bits()).collect();
                if let Some(v) = o.cache.lock().expect("cache poisoned").get(&key) {
                    out.copy_from_slice(v);
                    return Ok(());
                }
                let est = estimate_fbar(o.coeffs.as_ref(), xi, &o.params, o.seed)?;
                out.copy_from_slice(&est.value);
                o.cache.lock().expect("cache poisoned").insert(key, est.value);
                Ok(())
            }
        }
    }
}

/// Rough Euler solution of the averaged equation
/// `X̄_t = X₀ + ∫ f̄(X̄) ds + ∫ σ(X̄) dB` on the lift's coarse grid, using
/// only its B-block.
pub fn solve_averaged<T: Real, C: CoefficientSet<T> + ?Sized>(
    fbar: &AveragedDrift<T>,
    coeffs: &C,
    lift: &crate::rough_lift::RoughLift<T>,
    x0: &[T],
) -> Result<StatePath<T>> {
    let dims = coeffs.dims();
    if x0.len() != dims.m {
        return Err(Error::dim(format!("X₀ must lie in R^{}", dims.m)));
    }
    if lift.block_dims.0 != dims.d {
        return Err(Error::dim(format!("lift B-block has dimension {} but σ expects {}", lift.block_dims.0, dims.d)));
    }
    let grid = lift.coarse_grid;
    let dt = grid.dt();
    let mut slow = SlowStepper::new(coeffs);
    let mut values = Vec::with_capacity(grid.len() * dims.m);
    values.extend_from_slice(x0);
    let mut x = x0.to_vec();
    let mut drift = vec![T::zero(); dims.m];
    for k in 0..grid.n_steps {
        fbar.eval(&x, &mut drift).map_err(|e| Error::Divergence { step: k, reason: e.to_string() })?;
        let mut next = x.clone();
        for (n, f) in next.iter_mut().zip(&drift) {
            *n += *f * dt;
        }
        slow.add_noise(lift, k, &x, &mut next);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: k + 1, reason: "averaged state is not finite".into() });
        }
        x = next;
        values.extend_from_slice(&x);
    }
    Ok(StatePath { grid, dim: dims.m, values })
}

/// Nearest breakpoint `⌊s/δ⌋δ` at or before `s`. A relative slack absorbs
/// rounding when `s` is itself (numerically) a breakpoint.
pub fn breakpoint<T: Real>(s: T, delta: T) -> T {
    let slack = T::lit(1e-9).max(T::epsilon() * T::lit(16.0));
    ((s / delta) + slack).floor() * delta
}

/// The Khasminskii auxiliary pair on the grid of a solved system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct KhasminskiiPaths<T: Real> {
    pub x_hat: StatePath<T>,
    pub y_hat: StatePath<T>,
    pub delta: T,
}

/// Builds `Ŷ` (fast equation with the slow argument frozen at the
/// preceding breakpoint `s(δ)`, same `W`) and `X̂` (drift `f(X^ε_{s(δ)}, Ŷ)`,
/// rough term `σ(X^ε)` against `B`).
///
/// Breakpoints are mapped to the coarse grid point at or before them, so
/// `δ` should be a multiple of the coarse step for an exact freeze.
pub fn khasminskii_auxiliary<T: Real, C: CoefficientSet<T> + ?Sized>(
    coeffs: &C,
    eps: T,
    delta: T,
    noise: &MixedNoise<T>,
    solution: &FastSlowSolution<T>,
) -> Result<KhasminskiiPaths<T>> {
    let dims = coeffs.dims();
    let grid = *noise.coarse_grid();
    if solution.grid != grid {
        return Err(Error::config("solution and noise live on different grids"));
    }
    let dt = grid.dt();
    let slack = T::one() - T::lit(1e-9);
    if !(delta >= dt * slack) {
        return Err(Error::config(format!("delta = {delta} is below the grid step {dt}")));
    }
    let substeps = solution.substep_factor;
    check_substeps(&grid, noise.fine_factor(), substeps, eps)?;
    let x_eps = &solution.x;
    let mut fast = FastStepper::new(coeffs, eps);
    let mut slow = SlowStepper::new(coeffs);
    let len = grid.len();
    let mut xh = Vec::with_capacity(len * dims.m);
    let mut yh = Vec::with_capacity(len * dims.n);
    let mut x = x_eps.point(0).to_vec();
    let mut y = solution.y.point(0).to_vec();
    xh.extend_from_slice(&x);
    yh.extend_from_slice(&y);
    let mut dw = vec![T::zero(); dims.d_fast];
    let tol = T::lit(1e-9).max(T::epsilon() * T::lit(16.0));
    for k in 0..grid.n_steps {
        let s = grid.time(k) - grid.t_start;
        let bp = breakpoint(s, delta);
        let j = ((bp / dt) + tol).floor().to_usize().unwrap_or(0).min(k);
        let frozen = x_eps.point(j);
        let mut next = x.clone();
        fast_coarse_step(&mut fast, &mut slow, noise, k, substeps, frozen, frozen, &mut y, &mut next, &mut dw);
        slow.add_noise(&noise.lift, k, x_eps.point(k), &mut next);
        if y.iter().chain(&next).any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: k + 1, reason: "auxiliary state is not finite".into() });
        }
        x = next;
        xh.extend_from_slice(&x);
        yh.extend_from_slice(&y);
    }
    Ok(KhasminskiiPaths {
        x_hat: StatePath { grid, dim: dims.m, values: xh },
        y_hat: StatePath { grid, dim: dims.n, values: yh },
        delta,
    })
}

/// Empirical autocovariance of `f_0(ξ, Y_t)` along the frozen flow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixingReport {
    pub xi: Vec<f64>,
    /// Lags in time units; the first entry is always 0.
    pub lags: Vec<f64>,
    pub autocovariance: Vec<f64>,
    /// `-d log C(lag) / d lag` from a least-squares fit; `None` when the
    /// autocovariance vanishes.
    pub fitted_rate: Option<f64>,
    /// `β₁/2` as declared by the coefficients.
    pub reference_rate: Option<f64>,
    pub replicas: usize,
}

/// Autocovariance of the first component of `f(ξ, Y_t)` at the given lags,
/// with an exponential rate fitted on the positive values.
pub fn mixing_probe<T: Real, C: CoefficientSet<T> + ?Sized>(
    coeffs: &C,
    xi: &[T],
    lags: &[f64],
    params: &FbarParams,
    seed: u64,
) -> Result<MixingReport> {
    params.validate()?;
    let dims = coeffs.dims();
    if xi.len() != dims.m {
        return Err(Error::dim(format!("ξ must lie in R^{}", dims.m)));
    }
    let mut all_lags = vec![0.0];
    all_lags.extend(lags.iter().copied().filter(|l| *l > 0.0));
    let steps: Vec<usize> = all_lags.iter().map(|l| (l / params.dt).round() as usize).collect();
    let (burn, total) = params.steps();
    if steps.iter().any(|&s| s >= total - burn) {
        return Err(Error::config("a lag exceeds the recorded window horizon - burn_in"));
    }
    let per_replica: Vec<Vec<f64>> = (0..params.replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream(seed, &[rng::tag::PROBE, r as u64]);
            let mut f = vec![T::zero(); dims.m];
            let mut series = Vec::with_capacity(total - burn);
            run_frozen(coeffs, xi, &vec![T::zero(); dims.n], T::lit(params.dt), total, &mut rng, |k, phi| {
                if k > burn {
                    coeffs.f(xi, phi, &mut f);
                    series.push(f[0].to_f64_lossy());
                }
            })?;
            let mu = mean(&series);
            Ok(steps
                .iter()
                .map(|&lag| {
                    let prods: Vec<f64> = series.iter().zip(&series[lag..]).map(|(a, b)| (a - mu) * (b - mu)).collect();
                    mean(&prods)
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let autocovariance: Vec<f64> =
        (0..steps.len()).map(|i| mean(&per_replica.iter().map(|v| v[i]).collect::<Vec<_>>())).collect();
    let floor = 1e-12 * autocovariance[0].abs().max(f64::MIN_POSITIVE);
    let (fl, fc): (Vec<f64>, Vec<f64>) = all_lags
        .iter()
        .zip(&autocovariance)
        .filter(|(_, c)| **c > floor && autocovariance[0] > 1e-20)
        .map(|(l, c)| (*l, c.ln()))
        .unzip();
    let fitted_rate = (fl.len() >= 2).then(|| -crate::stats::linear_fit(&fl, &fc).0);
    let reference_rate = coeffs.regularity().beta1.map(|b| b / 2.0);
    Ok(MixingReport {
        xi: xi.iter().map(|v| v.to_f64_lossy()).collect(),
        lags: all_lags,
        autocovariance,
        fitted_rate,
        reference_rate,
        replicas: params.replicas,
    })
}

/// `δ(ε) = ε √(-ln ε)`.
pub fn delta_schedule(eps: f64) -> f64 {
    eps * (-eps.ln()).sqrt()
}

/// Setup shared by the convergence and Khasminskii experiments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSetup {
    pub hurst: f64,
    pub horizon: f64,
    pub coarse_steps: usize,
    /// Fast substep is at most `ε / fast_resolution` (at least 4).
    pub fast_resolution: f64,
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
    pub replicas: usize,
    pub seed: u64,
}

impl ExperimentSetup {
    pub fn validate(&self, dims: Dims) -> Result<()> {
        check_hurst(self.hurst)?;
        if !(self.horizon > 0.0) || self.coarse_steps == 0 {
            return Err(Error::config("horizon and coarse_steps must be positive"));
        }
        if !(self.fast_resolution >= 4.0) {
            return Err(Error::config(format!(
                "fast_resolution = {} must be at least 4 (substep <= eps/4)",
                self.fast_resolution
            )));
        }
        if self.replicas < 2 {
            return Err(Error::config("replicas must be at least 2"));
        }
        check_initial(dims, &self.x0, &self.y0)
    }

    pub fn grid<T: Real>(&self) -> Result<Grid<T>> {
        Grid::horizon(T::lit(self.horizon), self.coarse_steps)
    }

    /// Substeps per coarse step for `eps`.
    pub fn substep_factor(&self, eps: f64) -> usize {
        let dt = self.horizon / self.coarse_steps as f64;
        required_substeps(dt, 4.0 * eps / self.fast_resolution)
    }

    fn noise<T: Real>(&self, dims: Dims, eps: f64, replica_seed: u64) -> Result<MixedNoise<T>> {
        let s = self.substep_factor(eps);
        MixedNoise::sample(T::lit(self.hurst), dims, self.grid()?, s, replica_seed)
    }
}

/// One ε row of the convergence report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub eps: f64,
    pub delta: f64,
    /// Replicas that finished.
    pub replicas: usize,
    pub excluded: usize,
    pub mean_sup_error: f64,
    pub std_error: f64,
    /// `sup_t` of the replica mean of `|Y^ε_t|²`.
    pub fast_second_moment: f64,
    pub substep_factor: usize,
    /// Wall-clock seconds; not serialized so that reports are reproducible
    /// byte for byte.
    #[serde(skip)]
    pub runtime_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    /// `"eps*sqrt(-ln eps)"` or `"override"`.
    pub schedule: String,
    pub setup: ExperimentSetup,
    pub fbar_strategy: FbarStrategy,
    pub rows: Vec<ConvergenceRow>,
    /// One line per excluded replica.
    pub warnings: Vec<String>,
}

impl ConvergenceReport {
    pub fn total_excluded(&self) -> usize {
        self.rows.iter().map(|r| r.excluded).sum()
    }

    pub fn exclusion_fraction(&self) -> f64 {
        let total: usize = self.rows.iter().map(|r| r.replicas + r.excluded).sum();
        if total == 0 {
            0.0
        } else {
            self.total_excluded() as f64 / total as f64
        }
    }
}

fn check_eps_list(eps_list: &[f64]) -> Result<()> {
    if eps_list.is_empty() {
        return Err(Error::config("eps_schedule is empty"));
    }
    if eps_list.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
        return Err(Error::config("eps_schedule values must lie in (0, 1)"));
    }
    if eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::config("eps_schedule must be strictly decreasing"));
    }
    Ok(())
}

enum ReplicaOutcome {
    Done { sup_error: f64, fast_sq: Vec<f64> },
    Excluded(String),
}

/// For each ε: per replica sample `(B, W)`, build the lift, solve `X^ε` and
/// `X̄` on the same B-block, record `sup_t |X^ε_t - X̄_t|`; aggregate mean
/// and standard error in a fixed order. Replicas whose solve diverges are
/// excluded and listed in `warnings`.
pub fn convergence_experiment<T: Real, C: CoefficientSet<T> + ?Sized>(
    coeffs: &C,
    eps_list: &[f64],
    setup: &ExperimentSetup,
    fbar: &AveragedDrift<T>,
    delta_override: Option<f64>,
) -> Result<ConvergenceReport> {
    let dims = coeffs.dims();
    check_eps_list(eps_list)?;
    setup.validate(dims)?;
    let x0: Vec<T> = setup.x0.iter().map(|v| T::lit(*v)).collect();
    let y0: Vec<T> = setup.y0.iter().map(|v| T::lit(*v)).collect();
    let mut rows = Vec::with_capacity(eps_list.len());
    let mut warnings = Vec::new();
    for (ei, &eps) in eps_list.iter().enumerate() {
        let start = Instant::now();
        let substeps = setup.substep_factor(eps);
        let outcomes: Vec<ReplicaOutcome> = (0..setup.replicas)
            .into_par_iter()
            .map(|r| {
                let seed = derive_seed(setup.seed, &[rng::tag::CONVERGE, ei as u64, r as u64]);
                let noise = setup.noise::<T>(dims, eps, seed)?;
                let run = solve_fast_slow(coeffs, T::lit(eps), &noise, &x0, &y0, substeps)
                    .and_then(|sol| solve_averaged(fbar, coeffs, &noise.lift, &x0).map(|bar| (sol, bar)));
                match run {
                    Ok((sol, bar)) => Ok(ReplicaOutcome::Done {
                        sup_error: sup_distance(&sol.x.values, &bar.values).to_f64_lossy(),
                        fast_sq: sol
                            .y
                            .values
                            .chunks(dims.n)
                            .map(|y| y.iter().map(|v| (*v * *v).to_f64_lossy()).sum())
                            .collect(),
                    }),
                    Err(e) if e.is_divergence() => {
                        Ok(ReplicaOutcome::Excluded(format!("eps = {eps}, replica {r} (seed {seed}): {e}")))
                    }
                    Err(e) => Err(e),
                }
            })
            .collect::<Result<_>>()?;
        let mut errors = Vec::new();
        let mut sq_sum: Vec<Vec<f64>> = Vec::new();
        let mut excluded = 0;
        for o in outcomes {
            match o {
                ReplicaOutcome::Done { sup_error, fast_sq } => {
                    errors.push(sup_error);
                    sq_sum.push(fast_sq);
                }
                ReplicaOutcome::Excluded(w) => {
                    excluded += 1;
                    warnings.push(w);
                }
            }
        }
        let fast_second_moment = if sq_sum.is_empty() {
            f64::NAN
        } else {
            (0..sq_sum[0].len())
                .map(|t| tree_sum(&sq_sum.iter().map(|s| s[t]).collect::<Vec<_>>()) / sq_sum.len() as f64)
                .fold(0.0, f64::max)
        };
        let est = Estimate::from_samples(&errors);
        rows.push(ConvergenceRow {
            eps,
            delta: delta_override.unwrap_or_else(|| delta_schedule(eps)),
            replicas: errors.len(),
            excluded,
            mean_sup_error: est.mean,
            std_error: est.std_error,
            fast_second_moment,
            substep_factor: substeps,
            runtime_secs: start.elapsed().as_secs_f64(),
        });
    }
    Ok(ConvergenceReport {
        schedule: if delta_override.is_some() { "override".into() } else { "eps*sqrt(-ln eps)".into() },
        setup: setup.clone(),
        fbar_strategy: fbar.strategy(),
        rows,
        warnings,
    })
}

/// `sup_t E|Y^ε_t - Ŷ^ε_t|²` for one δ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KhasminskiiRow {
    pub eps: f64,
    pub delta: f64,
    pub replicas: usize,
    pub sup_mean_sq: f64,
}

/// Measures `sup_t E|Y^ε_t - Ŷ^ε_t|²` for each `δ` on shared replicas
/// (the same `(B, W)` and `Y^ε` serve every δ).
pub fn khasminskii_scaling<T: Real, C: CoefficientSet<T> + ?Sized>(
    coeffs: &C,
    eps: f64,
    deltas: &[f64],
    setup: &ExperimentSetup,
) -> Result<Vec<KhasminskiiRow>> {
    let dims = coeffs.dims();
    setup.validate(dims)?;
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::config("eps must lie in (0, 1)"));
    }
    let x0: Vec<T> = setup.x0.iter().map(|v| T::lit(*v)).collect();
    let y0: Vec<T> = setup.y0.iter().map(|v| T::lit(*v)).collect();
    let substeps = setup.substep_factor(eps);
    // Per replica, per δ, per time: |Y - Ŷ|².
    let per_replica: Vec<Vec<Vec<f64>>> = (0..setup.replicas)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(setup.seed, &[rng::tag::KHAS, r as u64]);
            let noise = setup.noise::<T>(dims, eps, seed)?;
            let sol = solve_fast_slow(coeffs, T::lit(eps), &noise, &x0, &y0, substeps)?;
            deltas
                .iter()
                .map(|&delta| {
                    let aux = khasminskii_auxiliary(coeffs, T::lit(eps), T::lit(delta), &noise, &sol)?;
                    Ok(sol
                        .y
                        .values
                        .chunks(dims.n)
                        .zip(aux.y_hat.values.chunks(dims.n))
                        .map(|(a, b)| a.iter().zip(b).map(|(u, v)| ((*u - *v) * (*u - *v)).to_f64_lossy()).sum())
                        .collect())
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let len = setup.coarse_steps + 1;
    Ok(deltas
        .iter()
        .enumerate()
        .map(|(di, &delta)| {
            let sup = (0..len)
                .map(|t| tree_sum(&per_replica.iter().map(|r| r[di][t]).collect::<Vec<_>>()) / setup.replicas as f64)
                .fold(0.0, f64::max);
            KhasminskiiRow { eps, delta, replicas: setup.replicas, sup_mean_sq: sup }
        })
        .collect())
}

/// Convenience: `β₁` declared by the coefficients, for defaults.
pub fn default_params<T: Real>(coeffs: &dyn CoefficientSet<T>) -> Result<FbarParams> {
    Ok(FbarParams::for_rate(require_beta1(coeffs)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn breakpoint_floors() {
        assert!((breakpoint(0.37f64, 0.1) - 0.3).abs() < 1e-15);
        assert!((breakpoint(0.3f64, 0.1) - 0.3).abs() < 1e-15);
        assert_eq!(breakpoint(0.05f64, 0.1), 0.0);
    }

    #[test]
    fn delta_schedule_value() {
        assert!((delta_schedule(0.01) - 0.021460).abs() < 1e-6);
    }

    #[test]
    fn eps_schedule_validation_names_field() {
        let err = check_eps_list(&[]).unwrap_err().to_string();
        assert!(err.contains("eps_schedule"));
        assert!(check_eps_list(&[0.1, 0.2]).is_err());
        assert!(check_eps_list(&[0.1, 1.0]).is_err());
        assert!(check_eps_list(&[0.1, 0.03, 0.01]).is_ok());
    }

    #[test]
    fn multilinear_table_reproduces_affine_functions() {
        let table = FbarTable {
            lo: vec![-1.0, 0.0],
            hi: vec![1.0, 2.0],
            points: 5,
            values: {
                let mut t = FbarTable::<f64> {
                    lo: vec![-1.0, 0.0],
                    hi: vec![1.0, 2.0],
                    points: 5,
                    values: vec![],
                    std_errors: vec![],
                    params: FbarParams::for_rate(16.0),
                    seed: 0,
                };
                t.values = t.nodes().iter().flat_map(|p| vec![2.0 * p[0] - p[1], p[1] + 1.0]).collect();
                t.values
            },
            std_errors: vec![],
            params: FbarParams::for_rate(16.0),
            seed: 0,
        };
        let mut out = [0.0; 2];
        table.eval(&[0.3, 1.7], &mut out).unwrap();
        assert!((out[0] - (0.6 - 1.7)).abs() < 1e-12 && (out[1] - 2.7).abs() < 1e-12);
        table.eval(&[1.0, 2.0], &mut out).unwrap();
        assert!((out[0] - 0.0).abs() < 1e-12);
        assert!(table.eval(&[1.1, 0.0], &mut out).is_err());
    }
}
