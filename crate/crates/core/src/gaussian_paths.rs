//! Fractional and standard Brownian motion on uniform grids.
//!
//! fBm increments (fractional Gaussian noise) are drawn exactly in law by
//! circulant embedding of the increment covariance; if the embedding is not
//! positive semi-definite the sampler falls back to a dense Cholesky factor.

use std::io::{Read, Write};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::rng::{self, normal, StreamRng};
use crate::scalar::Real;

/// Admissible Hurst range for the driving fBm: `(1/3, 1/2]`.
pub fn check_hurst<T: Real>(hurst: T) -> Result<()> {
    let third = T::one() / T::lit(3.0);
    if hurst > third && hurst <= T::lit(0.5) {
        Ok(())
    } else {
        Err(Error::domain(format!("Hurst index {hurst} outside the supported range (1/3, 1/2]")))
    }
}

/// `R_H(s, t) = (t^{2H} + s^{2H} - |t - s|^{2H}) / 2`.
pub fn fbm_covariance<T: Real>(s: T, t: T, hurst: T) -> Result<T> {
    if !(s >= T::zero()) || !(t >= T::zero()) {
        return Err(Error::domain(format!("negative time in covariance ({s}, {t})")));
    }
    if !(hurst > T::zero() && hurst < T::one()) {
        return Err(Error::domain(format!("Hurst index {hurst} outside (0, 1)")));
    }
    let two_h = hurst + hurst;
    Ok(T::lit(0.5) * (t.powf(two_h) + s.powf(two_h) - (t - s).abs().powf(two_h)))
}

/// Autocovariance of unit-step fractional Gaussian noise at lag `k`.
fn fgn_autocovariance<T: Real>(k: usize, hurst: T) -> T {
    let two_h = hurst + hurst;
    let k = T::from_count(k);
    let one = T::one();
    T::lit(0.5) * ((k + one).powf(two_h) - T::lit(2.0) * k.powf(two_h) + (k - one).abs().powf(two_h))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PathKind<T> {
    Fbm { hurst: T },
    Bm,
}

/// Which exact sampler produced a path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    CirculantEmbedding,
    Cholesky,
    Independent,
    /// Values supplied by the caller rather than sampled.
    External,
}

/// A sampled `dim`-dimensional path on a uniform grid, stored row-major
/// (`values[i * dim + k]` is coordinate `k` at grid point `i`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct GaussianPath<T: Real> {
    pub grid: Grid<T>,
    pub dim: usize,
    pub values: Vec<T>,
    pub kind: PathKind<T>,
    pub seed: u64,
    pub sampler: Sampler,
}

impl<T: Real> GaussianPath<T> {
    /// Wraps caller-provided values (e.g. a deterministic test path).
    pub fn from_values(grid: Grid<T>, dim: usize, values: Vec<T>, kind: PathKind<T>) -> Result<Self> {
        if values.len() != grid.len() * dim {
            return Err(Error::dim(format!(
                "expected {} values for {} points of dimension {dim}, got {}",
                grid.len() * dim,
                grid.len(),
                values.len()
            )));
        }
        Ok(Self { grid, dim, values, kind, seed: 0, sampler: Sampler::External })
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[T] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Coordinate `k` as its own vector.
    pub fn coordinate(&self, k: usize) -> Vec<T> {
        (0..self.len()).map(|i| self.values[i * self.dim + k]).collect()
    }

    pub fn hurst(&self) -> Option<T> {
        match self.kind {
            PathKind::Fbm { hurst } => Some(hurst),
            PathKind::Bm => None,
        }
    }

    pub fn header(&self) -> PathHeader<T> {
        PathHeader { kind: self.kind, seed: self.seed, grid: self.grid, dim: self.dim, sampler: self.sampler }
    }

    /// Columnar CSV: `t, x_1, ..., x_d`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim).map(|k| format!("x_{k}")));
        wtr.write_record(&header)?;
        for i in 0..self.len() {
            let mut row = vec![self.grid.time(i).to_string()];
            row.extend(self.point(i).iter().map(|v| v.to_string()));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads the CSV written by [`GaussianPath::write_csv`] back, using the
    /// JSON header for the metadata.
    pub fn read_csv<R: Read>(header: PathHeader<T>, r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut values = Vec::with_capacity(header.grid.len() * header.dim);
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != header.dim + 1 {
                return Err(Error::dim(format!("csv row has {} columns, expected {}", rec.len(), header.dim + 1)));
            }
            for field in rec.iter().skip(1) {
                let v: f64 = field.trim().parse().map_err(|e| Error::config(format!("bad number {field:?}: {e}")))?;
                values.push(T::lit(v));
            }
        }
        let mut path = Self::from_values(header.grid, header.dim, values, header.kind)?;
        path.seed = header.seed;
        path.sampler = header.sampler;
        Ok(path)
    }
}

/// Self-describing metadata written next to a path CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct PathHeader<T: Real> {
    #[serde(flatten)]
    pub kind: PathKind<T>,
    pub seed: u64,
    pub grid: Grid<T>,
    pub dim: usize,
    pub sampler: Sampler,
}

enum FgnFactor<T: Real> {
    /// Square roots of the circulant eigenvalues divided by `sqrt(2n)`.
    Circulant { sqrt_eig: Vec<T>, fft: Arc<dyn Fft<T>> },
    /// Lower Cholesky factor of the `n x n` Toeplitz increment covariance.
    Cholesky { lower: DMatrix<f64> },
    /// `H = 1/2`: increments are already independent.
    Independent,
}

/// Reusable exact sampler of fBm on a fixed grid. Building it costs one FFT;
/// every draw after that costs one more.
pub struct FbmSampler<T: Real> {
    hurst: T,
    grid: Grid<T>,
    scale: T,
    factor: FgnFactor<T>,
}

impl<T: Real> FbmSampler<T> {
    pub fn new(hurst: T, grid: Grid<T>) -> Result<Self> {
        check_hurst(hurst)?;
        let scale = grid.dt().powf(hurst);
        let n = grid.n_steps;
        if hurst == T::lit(0.5) {
            return Ok(Self { hurst, grid, scale, factor: FgnFactor::Independent });
        }
        let factor = match circulant_factor(n, hurst) {
            Some(f) => f,
            None => cholesky_factor(n, hurst)?,
        };
        Ok(Self { hurst, grid, scale, factor })
    }

    /// Forces the dense Cholesky route (used to cross-check the FFT route).
    pub fn new_cholesky(hurst: T, grid: Grid<T>) -> Result<Self> {
        check_hurst(hurst)?;
        let scale = grid.dt().powf(hurst);
        let factor = cholesky_factor(grid.n_steps, hurst)?;
        Ok(Self { hurst, grid, scale, factor })
    }

    pub fn method(&self) -> Sampler {
        match self.factor {
            FgnFactor::Circulant { .. } => Sampler::CirculantEmbedding,
            FgnFactor::Cholesky { .. } => Sampler::Cholesky,
            FgnFactor::Independent => Sampler::Independent,
        }
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    /// Scaled fractional Gaussian noise (grid increments) for one coordinate.
    pub fn increments(&self, rng: &mut StreamRng) -> Vec<T> {
        let n = self.grid.n_steps;
        let mut out: Vec<T> = match &self.factor {
            FgnFactor::Independent => (0..n).map(|_| normal(rng)).collect(),
            FgnFactor::Circulant { sqrt_eig, fft } => {
                let mut buf: Vec<Complex<T>> = sqrt_eig
                    .iter()
                    .map(|&s| {
                        let re: T = normal(rng);
                        let im: T = normal(rng);
                        Complex::new(s * re, s * im)
                    })
                    .collect();
                fft.process(&mut buf);
                buf.iter().take(n).map(|c| c.re).collect()
            }
            FgnFactor::Cholesky { lower } => {
                let z = DVector::from_iterator(n, (0..n).map(|_| normal::<f64>(rng)));
                (lower * z).iter().map(|&v| T::lit(v)).collect()
            }
        };
        for v in &mut out {
            *v *= self.scale;
        }
        out
    }

    /// Draws a `dim`-dimensional fBm path; coordinates use independent streams.
    pub fn sample(&self, dim: usize, seed: u64) -> GaussianPath<T> {
        let len = self.grid.len();
        let mut values = vec![T::zero(); len * dim];
        for k in 0..dim {
            let mut rng = rng::stream(seed, &[rng::tag::FBM, k as u64]);
            let inc = self.increments(&mut rng);
            let mut acc = T::zero();
            for (i, d) in inc.into_iter().enumerate() {
                acc += d;
                values[(i + 1) * dim + k] = acc;
            }
        }
        GaussianPath {
            grid: self.grid,
            dim,
            values,
            kind: PathKind::Fbm { hurst: self.hurst },
            seed,
            sampler: self.method(),
        }
    }
}

fn circulant_factor<T: Real>(n: usize, hurst: T) -> Option<FgnFactor<T>> {
    let m = 2 * n;
    let mut row: Vec<Complex<T>> = (0..m)
        .map(|j| {
            let lag = if j <= n { j } else { m - j };
            Complex::new(fgn_autocovariance(lag, hurst), T::zero())
        })
        .collect();
    let mut planner = FftPlanner::<T>::new();
    let fft = planner.plan_fft_forward(m);
    fft.process(&mut row);
    let max = row.iter().fold(T::zero(), |a, c| a.max(c.re.abs()));
    let tol = T::lit(1e-10).max(T::epsilon() * T::lit(64.0)) * max;
    let two_m = T::from_count(m);
    let mut sqrt_eig = Vec::with_capacity(m);
    for c in &row {
        if c.re < -tol {
            return None;
        }
        sqrt_eig.push((c.re.max(T::zero()) / two_m).sqrt());
    }
    Some(FgnFactor::Circulant { sqrt_eig, fft })
}

fn cholesky_factor<T: Real>(n: usize, hurst: T) -> Result<FgnFactor<T>> {
    let h = hurst.to_f64_lossy();
    let acov: Vec<f64> = (0..n).map(|k| fgn_autocovariance(k, h)).collect();
    let cov = DMatrix::from_fn(n, n, |i, j| acov[i.abs_diff(j)]);
    let chol = cov.cholesky().ok_or_else(|| Error::domain("fGn covariance is not positive definite"))?;
    Ok(FgnFactor::Cholesky { lower: chol.l() })
}

/// One exact-in-law fBm sample of dimension `dim`.
pub fn sample_fbm<T: Real>(hurst: T, dim: usize, grid: Grid<T>, seed: u64) -> Result<GaussianPath<T>> {
    Ok(FbmSampler::new(hurst, grid)?.sample(dim, seed))
}

/// Standard Brownian motion with independent coordinates.
pub fn sample_bm<T: Real>(dim: usize, grid: Grid<T>, seed: u64) -> GaussianPath<T> {
    let len = grid.len();
    let sd = grid.dt().sqrt();
    let mut values = vec![T::zero(); len * dim];
    for k in 0..dim {
        let mut rng = rng::stream(seed, &[rng::tag::BM, k as u64]);
        let mut acc = T::zero();
        for i in 1..len {
            let z: T = normal(&mut rng);
            acc += sd * z;
            values[i * dim + k] = acc;
        }
    }
    GaussianPath { grid, dim, values, kind: PathKind::Bm, seed, sampler: Sampler::Independent }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderEstimate<T> {
    pub beta: T,
    pub value: T,
    pub pair_budget: usize,
}

/// Lower bound on the `beta`-Hölder seminorm from pairs at dyadic separations
/// `1, 2, 4, ...` grid steps, inspected in that order until `pair_budget`
/// pairs have been seen.
pub fn holder_norm_estimate<T: Real>(path: &GaussianPath<T>, beta: T, pair_budget: usize) -> Result<HolderEstimate<T>> {
    if !(beta > T::zero() && beta <= T::one()) {
        return Err(Error::domain(format!("Hölder exponent {beta} outside (0, 1]")));
    }
    let n = path.grid.n_steps;
    let dt = path.grid.dt();
    let mut value = T::zero();
    let mut seen = 0usize;
    let mut lag = 1usize;
    'outer: while lag <= n {
        let denom = (dt * T::from_count(lag)).powf(beta);
        for i in 0..=(n - lag) {
            if seen >= pair_budget {
                break 'outer;
            }
            let a = path.point(i);
            let b = path.point(i + lag);
            let dist = a.iter().zip(b).map(|(&x, &y)| (y - x) * (y - x)).sum::<T>().sqrt();
            value = value.max(dist / denom);
            seen += 1;
        }
        lag *= 2;
    }
    Ok(HolderEstimate { beta, value, pair_budget })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariance_examples() {
        let t = 0.7_f64;
        assert!((fbm_covariance(t, t, 0.4).unwrap() - t.powf(0.8)).abs() < 1e-15);
        assert_eq!(fbm_covariance(1.0, 2.0, 0.5).unwrap(), 1.0);
        let v = fbm_covariance(1.0_f64, 2.0, 0.4).unwrap();
        assert!((v - 0.870_551).abs() < 1e-6, "{v}");
        assert!(fbm_covariance(-1.0, 1.0, 0.4).is_err());
        assert!(fbm_covariance(1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn fgn_autocovariance_matches_covariance_differences() {
        let h = 0.4;
        for k in 0..6usize {
            let k_f = k as f64;
            let r = |s: f64, t: f64| fbm_covariance(s, t, h).unwrap();
            let direct = r(k_f + 1.0, 1.0) - r(k_f, 1.0) - r(k_f + 1.0, 0.0) + r(k_f, 0.0);
            assert!((fgn_autocovariance(k, h) - direct).abs() < 1e-12, "lag {k}");
        }
    }

    #[test]
    fn hurst_guard() {
        assert!(check_hurst(0.6).is_err());
        assert!(check_hurst(1.0 / 3.0).is_err());
        assert!(check_hurst(0.5).is_ok());
        let g = Grid::horizon(1.0, 8).unwrap();
        assert!(sample_fbm(0.3, 1, g, 1).is_err());
    }

    #[test]
    fn paths_start_at_origin_and_are_deterministic() {
        let g = Grid::horizon(1.0, 64).unwrap();
        let a = sample_fbm(0.4, 2, g, 11).unwrap();
        let b = sample_fbm(0.4, 2, g, 11).unwrap();
        assert_eq!(a.values.len(), 65 * 2);
        assert!(a.point(0).iter().all(|&v| v == 0.0));
        assert_eq!(a, b);
        assert_eq!(a.sampler, Sampler::CirculantEmbedding);
        let w = sample_bm(3, g, 5);
        assert_eq!(w, sample_bm(3, g, 5));
        assert_ne!(w, sample_bm(3, g, 6));
    }

    #[test]
    fn holder_simple_paths() {
        let g = Grid::horizon(1.0, 32).unwrap();
        let constant = GaussianPath::from_values(g, 1, vec![2.0; 33], PathKind::Bm).unwrap();
        assert_eq!(holder_norm_estimate(&constant, 0.4, 1000).unwrap().value, 0.0);
        let line: Vec<f64> = g.times().iter().map(|t| -3.0 * t).collect();
        let line = GaussianPath::from_values(g, 1, line, PathKind::Bm).unwrap();
        let est = holder_norm_estimate(&line, 1.0, 1000).unwrap();
        assert!((est.value - 3.0).abs() < 1e-12);
        assert!(holder_norm_estimate(&line, 0.0, 10).is_err());
    }

    #[test]
    fn csv_roundtrip_with_header() {
        let g = Grid::horizon(1.0, 16).unwrap();
        let p = sample_fbm(0.45, 2, g, 3).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,x_1,x_2\n"));
        let header_json = serde_json::to_string(&p.header()).unwrap();
        assert!(header_json.contains("\"kind\":\"fbm\""));
        let header: PathHeader<f64> = serde_json::from_str(&header_json).unwrap();
        let back = GaussianPath::read_csv(header, buf.as_slice()).unwrap();
        assert_eq!(back, p);
    }
}
