use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Uniform time grid `t_start = t_0 < t_1 < ... < t_n = t_end`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Grid<T: Real> {
    pub t_start: T,
    pub t_end: T,
    pub n_steps: usize,
}

impl<T: Real> Grid<T> {
    pub fn new(t_start: T, t_end: T, n_steps: usize) -> Result<Self> {
        if !(t_start >= T::zero()) || !t_start.is_finite() {
            return Err(Error::domain(format!("grid start must be >= 0, got {t_start}")));
        }
        if !(t_end > t_start) || !t_end.is_finite() {
            return Err(Error::domain(format!("grid end {t_end} must exceed start {t_start}")));
        }
        if n_steps == 0 {
            return Err(Error::domain("grid needs at least one step"));
        }
        Ok(Self { t_start, t_end, n_steps })
    }

    /// `[0, horizon]` with `n_steps` steps.
    pub fn horizon(horizon: T, n_steps: usize) -> Result<Self> {
        Self::new(T::zero(), horizon, n_steps)
    }

    #[inline]
    pub fn dt(&self) -> T {
        (self.t_end - self.t_start) / T::from_count(self.n_steps)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn time(&self, i: usize) -> T {
        if i == self.n_steps {
            self.t_end
        } else {
            self.t_start + self.dt() * T::from_count(i)
        }
    }

    pub fn times(&self) -> Vec<T> {
        (0..self.len()).map(|i| self.time(i)).collect()
    }

    pub fn duration(&self) -> T {
        self.t_end - self.t_start
    }

    /// The grid obtained by splitting every step into `factor` sub-steps.
    pub fn refine(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::config("refinement factor must be >= 1"));
        }
        Ok(Self { n_steps: self.n_steps * factor, ..*self })
    }

    /// Ratio `fine.n_steps / self.n_steps` if `fine` refines `self`.
    pub fn refinement_factor(&self, fine: &Grid<T>) -> Result<usize> {
        let same_span = (self.t_start - fine.t_start).abs() <= T::epsilon() * T::lit(16.0)
            && (self.t_end - fine.t_end).abs() <= T::epsilon() * T::lit(16.0) * (T::one() + self.t_end.abs());
        if !same_span || !fine.n_steps.is_multiple_of(self.n_steps) {
            return Err(Error::config(format!(
                "grid with {} steps on [{}, {}] is not nested in grid with {} steps on [{}, {}]",
                self.n_steps, self.t_start, self.t_end, fine.n_steps, fine.t_start, fine.t_end
            )));
        }
        Ok(fine.n_steps / self.n_steps)
    }

    /// Index of the grid point equal to `t` (within a small relative tolerance).
    pub fn index_of(&self, t: T) -> Result<usize> {
        let q = (t - self.t_start) / self.dt();
        let k = q.round();
        let tol = T::lit(1e-6).max(T::epsilon() * T::lit(64.0) * q.abs());
        if (q - k).abs() > tol || k < T::zero() || k > T::from_count(self.n_steps) {
            return Err(Error::config(format!("time {t} is not a point of the grid")));
        }
        Ok(k.to_usize().unwrap_or(0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_grids() {
        assert!(Grid::<f64>::new(-1.0, 1.0, 4).is_err());
        assert!(Grid::<f64>::new(1.0, 1.0, 4).is_err());
        assert!(Grid::<f64>::new(0.0, 1.0, 0).is_err());
    }

    #[test]
    fn points_are_uniform_and_end_exactly() {
        let g = Grid::<f64>::new(0.5, 1.5, 10).unwrap();
        assert_eq!(g.len(), 11);
        assert_eq!(g.time(10), 1.5);
        let ts = g.times();
        assert!(ts.windows(2).all(|w| w[1] > w[0]));
        assert!((g.dt() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn nesting() {
        let c = Grid::<f64>::horizon(1.0, 8).unwrap();
        assert_eq!(c.refinement_factor(&c.refine(4).unwrap()).unwrap(), 4);
        assert!(c.refinement_factor(&Grid::horizon(1.0, 12).unwrap()).is_err());
        assert!(c.refinement_factor(&Grid::horizon(2.0, 16).unwrap()).is_err());
        assert_eq!(c.index_of(0.375).unwrap(), 3);
        assert!(c.index_of(0.3).is_err());
    }
}
