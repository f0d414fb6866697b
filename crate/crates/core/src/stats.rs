//! Small statistics helpers with a fixed reduction order.

use crate::scalar::Real;

/// Pairwise (tree) summation. The reduction order depends only on the
/// length of the slice, so results are reproducible bit-for-bit.
pub fn tree_sum<T: Real>(xs: &[T]) -> T {
    match xs.len() {
        0 => T::zero(),
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let mid = n / 2;
            tree_sum(&xs[..mid]) + tree_sum(&xs[mid..])
        }
    }
}

pub fn mean<T: Real>(xs: &[T]) -> T {
    if xs.is_empty() {
        return T::nan();
    }
    tree_sum(xs) / T::from_count(xs.len())
}

/// Unbiased sample variance.
pub fn variance<T: Real>(xs: &[T]) -> T {
    if xs.len() < 2 {
        return T::nan();
    }
    let m = mean(xs);
    let sq: Vec<T> = xs.iter().map(|&x| (x - m) * (x - m)).collect();
    tree_sum(&sq) / T::from_count(xs.len() - 1)
}

/// Standard error of the mean.
pub fn std_error<T: Real>(xs: &[T]) -> T {
    (variance(xs) / T::from_count(xs.len())).sqrt()
}

/// Mean and standard error in one pass over the data.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate<T> {
    pub mean: T,
    pub std_error: T,
    pub n: usize,
}

impl<T: Real> Estimate<T> {
    pub fn from_samples(xs: &[T]) -> Self {
        Self { mean: mean(xs), std_error: std_error(xs), n: xs.len() }
    }
}

/// Least-squares slope and intercept of `y` against `x`.
pub fn linear_fit<T: Real>(x: &[T], y: &[T]) -> (T, T) {
    assert_eq!(x.len(), y.len(), "linear_fit: length mismatch");
    let mx = mean(x);
    let my = mean(y);
    let sxy: Vec<T> = x.iter().zip(y).map(|(&a, &b)| (a - mx) * (b - my)).collect();
    let sxx: Vec<T> = x.iter().map(|&a| (a - mx) * (a - mx)).collect();
    let slope = tree_sum(&sxy) / tree_sum(&sxx);
    (slope, my - slope * mx)
}

/// Slope of `log y` against `log x`.
pub fn loglog_slope<T: Real>(x: &[T], y: &[T]) -> T {
    let lx: Vec<T> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<T> = y.iter().map(|v| v.ln()).collect();
    linear_fit(&lx, &ly).0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_moments() {
        let xs: [f64; 4] = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(tree_sum(&xs), 10.0);
        assert_eq!(mean(&xs), 2.5);
        assert!((variance(&xs) - 5.0 / 3.0).abs() < 1e-15);
        assert!(mean::<f64>(&[]).is_nan());
    }

    #[test]
    fn fits_power_law() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-0.5)).collect();
        assert!((loglog_slope(&x, &y) + 0.5).abs() < 1e-12);
    }
}
