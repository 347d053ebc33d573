//! Small dense complex matrix helpers shared by the channel and estimation code.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

pub type CMat = DMatrix<Complex64>;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn scaled_identity(n: usize, s: f64) -> CMat {
    CMat::from_diagonal_element(n, n, Complex64::new(s, 0.0))
}

/// Squared Frobenius norm.
pub fn frobenius_sq(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

/// Largest entry magnitude.
pub fn max_abs(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Ratio of largest to smallest singular value; infinite for a singular matrix.
pub fn condition_number(m: &CMat) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Circularly-symmetric complex Gaussian sample with total variance `variance`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}

pub fn complex_gaussian_matrix<R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    variance: f64,
) -> CMat {
    // column-major fill keeps the draw order fixed
    CMat::from_fn(rows, cols, |_, _| complex_gaussian(rng, variance))
}

/// Exponential correlation matrix with entries `r^|i-j|`.
pub fn exponential_correlation(n: usize, r: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| r.powi((i as i32 - j as i32).abs()))
}

/// Symmetric square root of a real symmetric positive semi-definite matrix.
pub fn symmetric_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose()
}

pub fn to_complex(m: &DMatrix<f64>) -> CMat {
    m.map(|v| Complex64::new(v, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sqrt_squares_back() {
        let r = exponential_correlation(4, 0.7);
        let s = symmetric_sqrt(&r);
        let back = &s * &s;
        assert!((back - r).abs().max() < 1e-12);
    }

    #[test]
    fn condition_of_identity_is_one() {
        assert!((condition_number(&scaled_identity(3, 5.0)) - 1.0).abs() < 1e-12);
    }
}
