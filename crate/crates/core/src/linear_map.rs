//! Matrix-free linear maps, a small CSR type and a Lanczos estimate of the spectral norm.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{HomogError, Result};
use crate::linalg::{self, CMat, C64, ZERO};

pub trait LinearMap: Send + Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    fn apply(&self, x: &[C64]) -> Vec<C64>;
    fn apply_adjoint(&self, y: &[C64]) -> Vec<C64>;

    /// Dense materialisation, column by column.
    fn to_dense(&self) -> CMat {
        let (r, c) = (self.nrows(), self.ncols());
        let mut out = CMat::zeros(r, c);
        let mut e = vec![ZERO; c];
        for j in 0..c {
            e[j] = C64::new(1.0, 0.0);
            let col = self.apply(&e);
            for i in 0..r {
                out[(i, j)] = col[i];
            }
            e[j] = ZERO;
        }
        out
    }
}

pub type MapRef = Arc<dyn LinearMap>;

// ─── CSR ───

#[derive(Clone, Debug)]
pub struct Csr {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<C64>,
}

impl Csr {
    /// Builds from (row, col, value) triplets; duplicates are summed, exact zeros dropped.
    pub fn from_triplets(nrows: usize, ncols: usize, mut trip: Vec<(usize, usize, C64)>) -> Self {
        trip.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0; nrows + 1];
        let mut indices = Vec::with_capacity(trip.len());
        let mut values: Vec<C64> = Vec::with_capacity(trip.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in trip {
            assert!(r < nrows && c < ncols, "triplet ({r},{c}) outside {nrows}×{ncols}");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..nrows {
            indptr[r + 1] += indptr[r];
        }
        let mut m = Csr { nrows, ncols, indptr, indices, values };
        m.prune();
        m
    }

    fn prune(&mut self) {
        let mut indptr = vec![0; self.nrows + 1];
        let mut indices = Vec::with_capacity(self.indices.len());
        let mut values = Vec::with_capacity(self.values.len());
        for r in 0..self.nrows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                if self.values[k] != ZERO {
                    indices.push(self.indices[k]);
                    values.push(self.values[k]);
                }
            }
            indptr[r + 1] = indices.len();
        }
        self.indptr = indptr;
        self.indices = indices;
        self.values = values;
    }

    pub fn identity(n: usize) -> Self {
        Csr::from_triplets(n, n, (0..n).map(|i| (i, i, C64::new(1.0, 0.0))).collect())
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterates (row, col, value).
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.nrows).flat_map(move |r| (self.indptr[r]..self.indptr[r + 1]).map(move |k| (r, self.indices[k], self.values[k])))
    }

    pub fn scale(&self, s: C64) -> Csr {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out.prune();
        out
    }

    pub fn add(&self, other: &Csr) -> Csr {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        Csr::from_triplets(self.nrows, self.ncols, self.triplets().chain(other.triplets()).collect())
    }

    /// Sparse product self · other.
    pub fn matmul(&self, other: &Csr) -> Csr {
        assert_eq!(self.ncols, other.nrows);
        let mut trip = Vec::new();
        let mut acc = vec![ZERO; other.ncols];
        let mut touched: Vec<usize> = Vec::new();
        let mut mark = vec![false; other.ncols];
        for r in 0..self.nrows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                let (c, v) = (self.indices[k], self.values[k]);
                for kk in other.indptr[c]..other.indptr[c + 1] {
                    let cc = other.indices[kk];
                    if !mark[cc] {
                        mark[cc] = true;
                        touched.push(cc);
                    }
                    acc[cc] += v * other.values[kk];
                }
            }
            touched.sort_unstable();
            for &cc in &touched {
                trip.push((r, cc, acc[cc]));
                acc[cc] = ZERO;
                mark[cc] = false;
            }
            touched.clear();
        }
        Csr::from_triplets(self.nrows, other.ncols, trip)
    }

    pub fn adjoint(&self) -> Csr {
        Csr::from_triplets(self.ncols, self.nrows, self.triplets().map(|(r, c, v)| (c, r, v.conj())).collect())
    }

    /// Block-diagonal matrix from per-node blocks.
    pub fn block_diagonal(blocks: &[CMat]) -> Csr {
        let (br, bc) = if blocks.is_empty() { (0, 0) } else { (blocks[0].nrows(), blocks[0].ncols()) };
        let mut trip = Vec::with_capacity(blocks.len() * br * bc);
        for (k, b) in blocks.iter().enumerate() {
            for i in 0..br {
                for j in 0..bc {
                    trip.push((k * br + i, k * bc + j, b[(i, j)]));
                }
            }
        }
        Csr::from_triplets(blocks.len() * br, blocks.len() * bc, trip)
    }
}

impl LinearMap for Csr {
    fn nrows(&self) -> usize {
        self.nrows
    }

    fn ncols(&self) -> usize {
        self.ncols
    }

    fn apply(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|r| (self.indptr[r]..self.indptr[r + 1]).map(|k| self.values[k] * x[self.indices[k]]).sum())
            .collect()
    }

    fn apply_adjoint(&self, y: &[C64]) -> Vec<C64> {
        assert_eq!(y.len(), self.nrows);
        let mut out = vec![ZERO; self.ncols];
        for r in 0..self.nrows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                out[self.indices[k]] += self.values[k].conj() * y[r];
            }
        }
        out
    }
}

// ─── Dense and factored maps ───

pub struct DenseMap(pub CMat);

impl LinearMap for DenseMap {
    fn nrows(&self) -> usize {
        self.0.nrows()
    }

    fn ncols(&self) -> usize {
        self.0.ncols()
    }

    fn apply(&self, x: &[C64]) -> Vec<C64> {
        let mut out = vec![ZERO; self.0.nrows()];
        linalg::matvec(&self.0, x, &mut out);
        out
    }

    fn apply_adjoint(&self, y: &[C64]) -> Vec<C64> {
        let mut out = vec![ZERO; self.0.ncols()];
        linalg::matvec_adjoint(&self.0, y, &mut out);
        out
    }
}

/// L·diag(w)·R* using the first `w.len()` columns of L and R.
pub struct FactoredMap {
    pub left: Arc<CMat>,
    pub right: Arc<CMat>,
    pub weights: Vec<C64>,
}

impl FactoredMap {
    fn project(m: &CMat, k: usize, x: &[C64]) -> Vec<C64> {
        (0..k).map(|j| (0..m.nrows()).map(|i| m[(i, j)].conj() * x[i]).sum()).collect()
    }

    fn expand(m: &CMat, coef: &[C64]) -> Vec<C64> {
        let mut out = vec![ZERO; m.nrows()];
        for (j, cj) in coef.iter().enumerate() {
            if *cj == ZERO {
                continue;
            }
            let col = m.col(j);
            for (i, o) in out.iter_mut().enumerate() {
                *o += col[i] * cj;
            }
        }
        out
    }
}

impl LinearMap for FactoredMap {
    fn nrows(&self) -> usize {
        self.left.nrows()
    }

    fn ncols(&self) -> usize {
        self.right.nrows()
    }

    fn apply(&self, x: &[C64]) -> Vec<C64> {
        let k = self.weights.len();
        let mut c = Self::project(&self.right, k, x);
        c.iter_mut().zip(&self.weights).for_each(|(v, w)| *v *= w);
        Self::expand(&self.left, &c)
    }

    fn apply_adjoint(&self, y: &[C64]) -> Vec<C64> {
        let k = self.weights.len();
        let mut c = Self::project(&self.left, k, y);
        c.iter_mut().zip(&self.weights).for_each(|(v, w)| *v *= w.conj());
        Self::expand(&self.right, &c)
    }
}

/// outer ∘ inner.
pub struct Compose {
    pub outer: MapRef,
    pub inner: MapRef,
}

impl Compose {
    pub fn new(outer: MapRef, inner: MapRef) -> Self {
        assert_eq!(outer.ncols(), inner.nrows(), "composition shape mismatch");
        Compose { outer, inner }
    }
}

impl LinearMap for Compose {
    fn nrows(&self) -> usize {
        self.outer.nrows()
    }

    fn ncols(&self) -> usize {
        self.inner.ncols()
    }

    fn apply(&self, x: &[C64]) -> Vec<C64> {
        self.outer.apply(&self.inner.apply(x))
    }

    fn apply_adjoint(&self, y: &[C64]) -> Vec<C64> {
        self.inner.apply_adjoint(&self.outer.apply_adjoint(y))
    }
}

/// Σ c_k T_k.
pub struct LinComb {
    pub terms: Vec<(C64, MapRef)>,
}

impl LinComb {
    pub fn new(terms: Vec<(C64, MapRef)>) -> Self {
        assert!(!terms.is_empty());
        let (r, c) = (terms[0].1.nrows(), terms[0].1.ncols());
        assert!(terms.iter().all(|(_, t)| t.nrows() == r && t.ncols() == c), "linear combination shape mismatch");
        LinComb { terms }
    }

    pub fn difference(a: MapRef, b: MapRef) -> Self {
        LinComb::new(vec![(C64::new(1.0, 0.0), a), (C64::new(-1.0, 0.0), b)])
    }
}

impl LinearMap for LinComb {
    fn nrows(&self) -> usize {
        self.terms[0].1.nrows()
    }

    fn ncols(&self) -> usize {
        self.terms[0].1.ncols()
    }

    fn apply(&self, x: &[C64]) -> Vec<C64> {
        let mut out = vec![ZERO; self.nrows()];
        for (c, t) in &self.terms {
            linalg::axpy(*c, &t.apply(x), &mut out);
        }
        out
    }

    fn apply_adjoint(&self, y: &[C64]) -> Vec<C64> {
        let mut out = vec![ZERO; self.ncols()];
        for (c, t) in &self.terms {
            linalg::axpy(c.conj(), &t.apply_adjoint(y), &mut out);
        }
        out
    }
}

// ─── Spectral norm ───

/// Problems with at most this many columns are handled by a dense SVD.
pub const DENSE_NORM_LIMIT: usize = 160;

/// Largest singular value of `a`: dense SVD for small maps, otherwise restarted Lanczos on A*A
/// with full reorthogonalisation and a seeded start vector.
pub fn spectral_norm(a: &dyn LinearMap, rel_tol: f64, seed: u64) -> Result<f64> {
    let n = a.ncols();
    if n == 0 || a.nrows() == 0 {
        return Ok(0.0);
    }
    if n.min(a.nrows()) <= DENSE_NORM_LIMIT {
        return linalg::norm2(&a.to_dense());
    }
    let op = |x: &[C64]| a.apply_adjoint(&a.apply(x));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut start: Vec<C64> = (0..n).map(|_| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)).collect();
    let kmax = n.min(60);
    let mut prev = f64::NAN;
    for _restart in 0..50 {
        let nrm = linalg::vnorm(&start);
        if nrm == 0.0 {
            return Ok(0.0);
        }
        start.iter_mut().for_each(|v| *v /= nrm);
        let mut basis: Vec<Vec<C64>> = vec![start.clone()];
        let mut alpha: Vec<f64> = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        let mut last_beta = 0.0;
        for k in 0..kmax {
            let mut w = op(&basis[k]);
            let ak = linalg::dot(&basis[k], &w).re;
            alpha.push(ak);
            // full reorthogonalisation, twice
            for _ in 0..2 {
                for q in &basis {
                    let p = linalg::dot(q, &w);
                    linalg::axpy(-p, q, &mut w);
                }
            }
            let bk = linalg::vnorm(&w);
            last_beta = bk;
            if k + 1 == kmax || bk <= 1e-14 * ak.abs().max(1e-300) {
                break;
            }
            beta.push(bk);
            w.iter_mut().for_each(|v| *v /= bk);
            basis.push(w);
        }
        let k = alpha.len();
        let t = CMat::from_fn(k, k, |i, j| {
            if i == j {
                C64::new(alpha[i], 0.0)
            } else if i + 1 == j || j + 1 == i {
                C64::new(beta[i.min(j)], 0.0)
            } else {
                ZERO
            }
        });
        let (vals, vecs) = linalg::herm_eigen(&t)?;
        let theta = *vals.last().unwrap();
        if theta <= 0.0 {
            return Ok(0.0);
        }
        let s_last = vecs[(k - 1, k - 1)].norm();
        let resid = last_beta * s_last;
        let converged = resid <= rel_tol * theta || k == n;
        if converged || (prev.is_finite() && (theta - prev).abs() <= 1e-3 * rel_tol * theta) {
            return Ok(theta.sqrt());
        }
        prev = theta;
        // restart from the top Ritz vector
        let mut next = vec![ZERO; n];
        for (j, q) in basis.iter().enumerate().take(k) {
            linalg::axpy(vecs[(j, k - 1)], q, &mut next);
        }
        start = next;
    }
    Err(HomogError::NonConvergedSVD(prev))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::c;

    #[test]
    fn csr_product_and_adjoint() {
        let a = Csr::from_triplets(2, 3, vec![(0, 0, c(1.0, 0.0)), (0, 2, c(0.0, 2.0)), (1, 1, c(3.0, 0.0)), (1, 1, c(1.0, 0.0))]);
        let b = Csr::from_triplets(3, 2, vec![(0, 1, c(1.0, 0.0)), (2, 0, c(1.0, 1.0)), (1, 0, c(2.0, 0.0))]);
        let p = a.matmul(&b).to_dense();
        let pd = &a.to_dense() * &b.to_dense();
        assert!(linalg::fro_norm(&(&p - &pd)) < 1e-15);
        let x = vec![c(1.0, 2.0), c(-1.0, 0.5)];
        let ya = a.apply_adjoint(&x);
        let yd = a.adjoint().apply(&x);
        assert!(ya.iter().zip(&yd).all(|(u, v)| (u - v).norm() < 1e-15));
    }

    #[test]
    fn lanczos_matches_dense() {
        let n = 300;
        let d: Vec<C64> = (0..n).map(|i| c(1.0 + (i as f64 * 0.37).sin(), 0.0)).collect();
        let diag = Csr::from_triplets(n, n, (0..n).map(|i| (i, i, d[i])).collect());
        let best = d.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let s = spectral_norm(&diag, 1e-6, 7).unwrap();
        assert!((s - best).abs() < 1e-6 * best, "{s} vs {best}");
        let s2 = spectral_norm(&diag, 1e-6, 7).unwrap();
        assert_eq!(s.to_bits(), s2.to_bits());
    }

    #[test]
    fn factored_map_adjoint() {
        let l = Arc::new(CMat::from_fn(5, 3, |i, j| c((i + j) as f64, i as f64 - j as f64)));
        let r = Arc::new(CMat::from_fn(4, 3, |i, j| c(1.0 / (1.0 + i as f64 + j as f64), 0.3)));
        let m = FactoredMap { left: l, right: r, weights: vec![c(1.0, 0.5), c(-2.0, 0.0)] };
        let dense = m.to_dense();
        let y = vec![c(1.0, 0.0), c(0.0, 1.0), c(2.0, -1.0), c(0.5, 0.5), c(-1.0, 0.0)];
        let mut expect = vec![ZERO; 4];
        linalg::matvec_adjoint(&dense, &y, &mut expect);
        let got = m.apply_adjoint(&y);
        assert!(got.iter().zip(&expect).all(|(u, v)| (u - v).norm() < 1e-12));
    }
}
