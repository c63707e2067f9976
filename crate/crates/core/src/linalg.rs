//! Small dense helpers over `faer` used throughout the crate.

use faer::linalg::solvers::{DenseSolveCore, Solve};
use faer::{Mat, Side};
pub use num_complex::Complex64 as C64;

use crate::error::{HomogError, Result};

pub type CMat = Mat<C64>;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };
pub const I: C64 = C64 { re: 0.0, im: 1.0 };

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn zeros(r: usize, c: usize) -> CMat {
    Mat::zeros(r, c)
}

pub fn identity(n: usize) -> CMat {
    Mat::from_fn(n, n, |i, j| if i == j { ONE } else { ZERO })
}

pub fn scalar(v: C64) -> CMat {
    Mat::from_fn(1, 1, |_, _| v)
}

pub fn real_scalar(v: f64) -> CMat {
    scalar(c(v, 0.0))
}

pub fn from_rows(rows: &[Vec<C64>]) -> CMat {
    let r = rows.len();
    let cols = if r == 0 { 0 } else { rows[0].len() };
    Mat::from_fn(r, cols, |i, j| rows[i][j])
}

pub fn from_real_rows(rows: &[Vec<f64>]) -> CMat {
    let r = rows.len();
    let cols = if r == 0 { 0 } else { rows[0].len() };
    Mat::from_fn(r, cols, |i, j| c(rows[i][j], 0.0))
}

pub fn adjoint(a: &CMat) -> CMat {
    a.adjoint().to_owned()
}

pub fn mul(a: &CMat, b: &CMat) -> CMat {
    a * b
}

pub fn add(a: &CMat, b: &CMat) -> CMat {
    a + b
}

pub fn sub(a: &CMat, b: &CMat) -> CMat {
    a - b
}

pub fn scale(a: &CMat, s: C64) -> CMat {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * s)
}

pub fn scale_re(a: &CMat, s: f64) -> CMat {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * s)
}

pub fn hermitize(a: &CMat) -> CMat {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| (a[(i, j)] + a[(j, i)].conj()) * 0.5)
}

pub fn fro_norm(a: &CMat) -> f64 {
    let mut s = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            s += a[(i, j)].norm_sqr();
        }
    }
    s.sqrt()
}

pub fn max_abs(a: &CMat) -> f64 {
    let mut m: f64 = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max(a[(i, j)].norm());
        }
    }
    m
}

pub fn is_finite(a: &CMat) -> bool {
    (0..a.ncols()).all(|j| (0..a.nrows()).all(|i| a[(i, j)].re.is_finite() && a[(i, j)].im.is_finite()))
}

pub fn is_real(a: &CMat) -> bool {
    (0..a.ncols()).all(|j| (0..a.nrows()).all(|i| a[(i, j)].im == 0.0))
}

/// Ascending eigenvalues of the Hermitian part of `a`.
pub fn herm_eigenvalues(a: &CMat) -> Result<Vec<f64>> {
    let h = hermitize(a);
    if a.nrows() == 1 {
        return Ok(vec![h[(0, 0)].re]);
    }
    let mut ev: Vec<f64> = if is_real(&h) {
        let r = Mat::<f64>::from_fn(h.nrows(), h.ncols(), |i, j| h[(i, j)].re);
        r.self_adjoint_eigenvalues(Side::Lower).map_err(|_| HomogError::EigFailure)?
    } else {
        h.self_adjoint_eigenvalues(Side::Lower).map_err(|_| HomogError::EigFailure)?
    };
    ev.sort_by(|x, y| x.total_cmp(y));
    Ok(ev)
}

/// Eigen-decomposition of the Hermitian part: ascending eigenvalues and unitary eigenvectors.
pub fn herm_eigen(a: &CMat) -> Result<(Vec<f64>, CMat)> {
    let h = hermitize(a);
    let n = h.nrows();
    if n == 1 {
        return Ok((vec![h[(0, 0)].re], identity(1)));
    }
    if is_real(&h) {
        let r = Mat::<f64>::from_fn(n, n, |i, j| h[(i, j)].re);
        let e = r.self_adjoint_eigen(Side::Lower).map_err(|_| HomogError::EigFailure)?;
        let s = e.S().column_vector();
        let vals: Vec<f64> = (0..n).map(|i| s[i]).collect();
        let u = e.U();
        Ok((vals, Mat::from_fn(n, n, |i, j| c(u[(i, j)], 0.0))))
    } else {
        let e = h.self_adjoint_eigen(Side::Lower).map_err(|_| HomogError::EigFailure)?;
        let s = e.S().column_vector();
        let vals: Vec<f64> = (0..n).map(|i| s[i].re).collect();
        Ok((vals, e.U().to_owned()))
    }
}

/// f(H) for Hermitian H through its eigen-decomposition.
pub fn herm_function(a: &CMat, f: impl Fn(f64) -> f64) -> Result<CMat> {
    let (vals, u) = herm_eigen(a)?;
    let n = vals.len();
    let fu = Mat::from_fn(n, n, |i, j| u[(i, j)] * f(vals[j]));
    Ok(hermitize(&(&fu * u.adjoint())))
}

/// Q^{-1/2} for Hermitian positive definite Q.
pub fn herm_inv_sqrt(a: &CMat) -> Result<CMat> {
    let ev = herm_eigenvalues(a)?;
    if ev[0] <= 0.0 {
        return Err(HomogError::NotPositiveDefinite(ev[0]));
    }
    herm_function(a, |x| 1.0 / x.sqrt())
}

pub fn inverse(a: &CMat) -> CMat {
    if a.nrows() == 1 {
        return scalar(ONE / a[(0, 0)]);
    }
    a.partial_piv_lu().inverse()
}

pub fn solve(a: &CMat, b: &CMat) -> CMat {
    a.partial_piv_lu().solve(b)
}

pub fn singular_values(a: &CMat) -> Result<Vec<f64>> {
    if a.nrows() == 1 && a.ncols() == 1 {
        return Ok(vec![a[(0, 0)].norm()]);
    }
    let mut s = a.singular_values().map_err(|_| HomogError::EigFailure)?;
    s.sort_by(|x, y| y.total_cmp(x));
    Ok(s)
}

/// Spectral norm.
pub fn norm2(a: &CMat) -> Result<f64> {
    Ok(singular_values(a)?.first().copied().unwrap_or(0.0))
}

/// 2-norm condition number (infinite when singular).
pub fn condition(a: &CMat) -> Result<f64> {
    let s = singular_values(a)?;
    let smin = *s.last().unwrap();
    Ok(if smin == 0.0 { f64::INFINITY } else { s[0] / smin })
}

pub fn dot(x: &[C64], y: &[C64]) -> C64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

pub fn vnorm(x: &[C64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

pub fn axpy(alpha: C64, x: &[C64], y: &mut [C64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Matrix–vector product with a small matrix acting on a slice.
pub fn matvec(a: &CMat, x: &[C64], out: &mut [C64]) {
    for i in 0..a.nrows() {
        let mut s = ZERO;
        for j in 0..a.ncols() {
            s += a[(i, j)] * x[j];
        }
        out[i] = s;
    }
}

pub fn matvec_adjoint(a: &CMat, x: &[C64], out: &mut [C64]) {
    for j in 0..a.ncols() {
        let mut s = ZERO;
        for i in 0..a.nrows() {
            s += a[(i, j)].conj() * x[i];
        }
        out[j] = s;
    }
}

pub fn to_rows(a: &CMat) -> Vec<Vec<[f64; 2]>> {
    (0..a.nrows()).map(|i| (0..a.ncols()).map(|j| [a[(i, j)].re, a[(i, j)].im]).collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inv_sqrt_squares_to_inverse() {
        let q = from_real_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]);
        let f = herm_inv_sqrt(&q).unwrap();
        let p = &(&f * &q) * &f;
        assert!(fro_norm(&(&p - &identity(2))) < 1e-12);
    }

    #[test]
    fn complex_eigen_reconstructs() {
        let a = from_rows(&[vec![c(2.0, 0.0), c(0.0, 1.0)], vec![c(0.0, -1.0), c(3.0, 0.0)]]);
        let (vals, u) = herm_eigen(&a).unwrap();
        let d = Mat::from_fn(2, 2, |i, j| if i == j { c(vals[i], 0.0) } else { ZERO });
        let r = &(&u * &d) * u.adjoint();
        assert!(fro_norm(&(&r - &a)) < 1e-12);
        assert!(vals[0] <= vals[1]);
    }

    #[test]
    fn condition_of_diagonal() {
        let a = from_real_rows(&[vec![1.0, 0.0], vec![0.0, 1e-3]]);
        assert!((condition(&a).unwrap() - 1e3).abs() < 1e-6);
    }
}
