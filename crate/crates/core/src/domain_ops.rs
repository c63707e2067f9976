//! Dirichlet finite-difference operators on O = (0, ℓ), extension, Steklov smoothing and weighted norms.
//!
//! Closed grid nodes x_i = i·h, i = 0..M. Dirichlet unknowns live on the interior nodes 1..M−1,
//! stored node-major with n components. Flux points are the M midpoints. The extended grid covers
//! (−ℓ, 2ℓ) with nodes −M..2M.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::cell_problems::CellData;
use crate::coefficients::{CoefficientSet, SymbolB};
use crate::error::{HomogError, Result};
use crate::linalg::{self, c, CMat, C64, I, ONE, ZERO};
use crate::linear_map::{spectral_norm, Csr, LinearMap};
use crate::periodic_cell::PeriodicField;

// ─── Grid ───

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DomainGrid {
    length: f64,
    intervals: usize,
    eps: Option<f64>,
    n_per: Option<usize>,
}

impl DomainGrid {
    pub fn new(length: f64, intervals: usize) -> Result<Self> {
        if !(length.is_finite() && length > 0.0) {
            return Err(HomogError::InvalidInput(format!("domain length must be positive, got {length}")));
        }
        if intervals < 4 {
            return Err(HomogError::InvalidInput(format!("need at least 4 intervals, got {intervals}")));
        }
        Ok(DomainGrid { length, intervals, eps: None, n_per: None })
    }

    /// Grid with h = ε·L/n_per, where L is the period length.
    pub fn for_epsilon(length: f64, eps: f64, n_per: usize, period: f64) -> Result<Self> {
        if n_per < 8 || n_per % 2 != 0 {
            return Err(HomogError::InvalidInput(format!("n_per must be even and ≥ 8, got {n_per}")));
        }
        if !(eps.is_finite() && eps > 0.0) {
            return Err(HomogError::InvalidInput(format!("ε must be positive, got {eps}")));
        }
        let h = eps * period / n_per as f64;
        let ratio = length / h;
        let m = ratio.round();
        if (ratio - m).abs() > 1e-9 * ratio.max(1.0) || m < 4.0 {
            return Err(HomogError::IndivisibleEpsilon { eps, ratio: n_per as f64, cells: length / (eps * period) });
        }
        Ok(DomainGrid { length, intervals: m as usize, eps: Some(eps), n_per: Some(n_per) })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn diameter(&self) -> f64 {
        self.length
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn interior(&self) -> usize {
        self.intervals - 1
    }

    pub fn h(&self) -> f64 {
        self.length / self.intervals as f64
    }

    pub fn eps(&self) -> Option<f64> {
        self.eps
    }

    pub fn n_per(&self) -> Option<usize> {
        self.n_per
    }

    /// Coordinate of closed-grid node i (i may be negative on the extended grid).
    pub fn x(&self, i: isize) -> f64 {
        i as f64 * self.h()
    }

    pub fn midpoint(&self, k: isize) -> f64 {
        (k as f64 + 0.5) * self.h()
    }

    /// Number of nodes of a space.
    pub fn nodes(&self, space: Space) -> usize {
        let m = self.intervals;
        match space {
            Space::Interior => m - 1,
            Space::Closed => m + 1,
            Space::Flux => m,
            Space::Extended => 3 * m + 1,
            Space::ExtendedFlux => 3 * m,
        }
    }

    fn require_eps(&self) -> Result<(f64, usize)> {
        match (self.eps, self.n_per) {
            (Some(e), Some(n)) => Ok((e, n)),
            _ => Err(HomogError::InvalidInput("grid is not tied to an ε".into())),
        }
    }
}

/// Node sets on which grid functions live.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    Interior,
    Closed,
    Flux,
    Extended,
    ExtendedFlux,
}

/// Target norm of an operator-norm measurement.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NormTag {
    L2,
    H1,
    /// H¹ over O′ = {x : dist(x, ∂O) > delta}.
    H1Sub { delta: f64 },
}

// ─── Block tridiagonal matrices ───

/// Block tridiagonal matrix with n×n blocks whose lower blocks are the adjoints of the upper ones.
#[derive(Clone, Debug)]
pub struct BlockTridiag {
    pub diag: Vec<CMat>,
    /// upper[i] is block (i, i+1); block (i+1, i) is upper[i]*.
    pub upper: Vec<CMat>,
}

impl BlockTridiag {
    pub fn zeros(nodes: usize, n: usize) -> Self {
        BlockTridiag { diag: vec![linalg::zeros(n, n); nodes], upper: vec![linalg::zeros(n, n); nodes.saturating_sub(1)] }
    }

    pub fn block(&self) -> usize {
        self.diag[0].nrows()
    }

    pub fn nodes(&self) -> usize {
        self.diag.len()
    }

    pub fn dim(&self) -> usize {
        self.nodes() * self.block()
    }

    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        let n = self.block();
        let mut out = vec![ZERO; self.dim()];
        let mut tmp = vec![ZERO; n];
        for i in 0..self.nodes() {
            linalg::matvec(&self.diag[i], &x[i * n..(i + 1) * n], &mut tmp);
            for r in 0..n {
                out[i * n + r] += tmp[r];
            }
            if i + 1 < self.nodes() {
                linalg::matvec(&self.upper[i], &x[(i + 1) * n..(i + 2) * n], &mut tmp);
                for r in 0..n {
                    out[i * n + r] += tmp[r];
                }
                linalg::matvec_adjoint(&self.upper[i], &x[i * n..(i + 1) * n], &mut tmp);
                for r in 0..n {
                    out[(i + 1) * n + r] += tmp[r];
                }
            }
        }
        out
    }

    pub fn to_csr(&self) -> Csr {
        let n = self.block();
        let mut trip = Vec::with_capacity(self.nodes() * 3 * n * n);
        for i in 0..self.nodes() {
            for r in 0..n {
                for s in 0..n {
                    trip.push((i * n + r, i * n + s, self.diag[i][(r, s)]));
                    if i + 1 < self.nodes() {
                        trip.push((i * n + r, (i + 1) * n + s, self.upper[i][(r, s)]));
                        trip.push(((i + 1) * n + s, i * n + r, self.upper[i][(r, s)].conj()));
                    }
                }
            }
        }
        Csr::from_triplets(self.dim(), self.dim(), trip)
    }

    pub fn to_dense(&self) -> CMat {
        self.to_csr().to_dense()
    }

    /// self − ζ·blockdiag(weights).
    pub fn shifted(&self, zeta: C64, weights: &[CMat]) -> BlockTridiag {
        let mut out = self.clone();
        for (d, w) in out.diag.iter_mut().zip(weights) {
            *d = &*d - &linalg::scale(w, zeta);
        }
        out
    }

    /// Adds s·blockdiag(weights) to the diagonal.
    pub fn add_diag(&mut self, s: f64, weights: &[CMat]) {
        for (d, w) in self.diag.iter_mut().zip(weights) {
            *d = &*d + &linalg::scale_re(w, s);
        }
    }

    /// Number of negative eigenvalues of the Hermitian matrix self − σ·blockdiag(weights), from the
    /// block LDL* factorisation (Sylvester's law of inertia). Returns None when a pivot is singular.
    pub fn negative_count(&self, sigma: f64, weights: Option<&[CMat]>) -> Result<Option<usize>> {
        let n = self.block();
        let mut count = 0;
        let mut s_prev: Option<CMat> = None;
        for i in 0..self.nodes() {
            let mut s = self.diag[i].clone();
            if let Some(w) = weights {
                s = &s - &linalg::scale_re(&w[i], sigma);
            } else {
                s = &s - &linalg::scale_re(&linalg::identity(n), sigma);
            }
            if let Some(sp) = &s_prev {
                // S_i = A_ii − A_{i,i−1} S_{i−1}⁻¹ A_{i−1,i}
                let u = &self.upper[i - 1];
                let corr = &(&linalg::adjoint(u) * &linalg::inverse(sp)) * u;
                s = &s - &corr;
            }
            let s = linalg::hermitize(&s);
            let ev = linalg::herm_eigenvalues(&s)?;
            let scale = ev.iter().fold(1e-300_f64, |m, v| m.max(v.abs()));
            if ev.iter().any(|v| v.abs() <= 1e-14 * scale) || !ev.iter().all(|v| v.is_finite()) {
                return Ok(None);
            }
            count += ev.iter().filter(|v| **v < 0.0).count();
            s_prev = Some(s);
        }
        Ok(Some(count))
    }

    pub fn is_positive_definite(&self, weights: Option<&[CMat]>) -> Result<bool> {
        Ok(self.negative_count(0.0, weights)? == Some(0))
    }

    fn gershgorin(&self) -> (f64, f64) {
        let n = self.block();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..self.nodes() {
            for r in 0..n {
                let mut rad = 0.0;
                for s in 0..n {
                    if s != r {
                        rad += self.diag[i][(r, s)].norm();
                    }
                    if i + 1 < self.nodes() {
                        rad += self.upper[i][(r, s)].norm();
                    }
                    if i > 0 {
                        rad += self.upper[i - 1][(s, r)].norm();
                    }
                }
                let d = self.diag[i][(r, r)].re;
                lo = lo.min(d - rad);
                hi = hi.max(d + rad);
            }
        }
        (lo, hi)
    }

    /// Smallest eigenvalue of the pencil (self, blockdiag(weights)) by inertia bisection.
    pub fn smallest_eigenvalue(&self, weights: Option<&[CMat]>) -> Result<f64> {
        let (mut lo, mut hi) = self.gershgorin();
        if let Some(w) = weights {
            let wmin = w.iter().map(|b| linalg::herm_eigenvalues(b).map(|e| e[0])).collect::<Result<Vec<_>>>()?;
            let wmax = w.iter().map(|b| linalg::herm_eigenvalues(b).map(|e| *e.last().unwrap())).collect::<Result<Vec<_>>>()?;
            let (wl, wh) = (wmin.iter().copied().fold(f64::INFINITY, f64::min), wmax.iter().copied().fold(0.0, f64::max));
            lo = if lo < 0.0 { lo / wl } else { lo / wh };
            hi = if hi > 0.0 { hi / wl } else { hi / wh };
        }
        lo -= 1e-12 * lo.abs().max(1.0);
        let span = (hi - lo).abs().max(1e-300);
        for _ in 0..200 {
            if hi - lo <= 1e-12 * span.max(lo.abs()) {
                break;
            }
            let mid = 0.5 * (lo + hi);
            match self.negative_count(mid, weights)? {
                Some(0) => lo = mid,
                _ => hi = mid,
            }
        }
        Ok(0.5 * (lo + hi))
    }

    pub fn hermiticity_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for d in &self.diag {
            worst = worst.max(linalg::max_abs(&(d - &linalg::adjoint(d))));
            scale = scale.max(linalg::max_abs(d));
        }
        if scale == 0.0 {
            0.0
        } else {
            worst / scale
        }
    }
}

// ─── Banded LU with partial pivoting ───

/// LU factorisation of a general banded matrix with row pivoting (for B − ζQ₀ at complex ζ).
pub struct BandedLu {
    n: usize,
    rows: Vec<(usize, Vec<C64>)>,
    piv: Vec<usize>,
    mult: Vec<Vec<C64>>,
    kl: usize,
}

impl BandedLu {
    pub fn factor_tridiag(a: &BlockTridiag) -> Result<Self> {
        let nb = a.block();
        let dim = a.dim();
        let kl = 2 * nb - 1;
        // row r stores columns lo..lo+len
        let mut rows: Vec<(usize, Vec<C64>)> = Vec::with_capacity(dim);
        for i in 0..a.nodes() {
            for r in 0..nb {
                let lo = i.saturating_sub(1) * nb;
                let hi = ((i + 2) * nb).min(dim);
                let mut v = vec![ZERO; hi - lo];
                for s in 0..nb {
                    v[i * nb + s - lo] = a.diag[i][(r, s)];
                    if i + 1 < a.nodes() {
                        v[(i + 1) * nb + s - lo] = a.upper[i][(r, s)];
                    }
                    if i > 0 {
                        v[(i - 1) * nb + s - lo] = a.upper[i - 1][(s, r)].conj();
                    }
                }
                rows.push((lo, v));
            }
        }
        Self::factor(dim, kl, rows)
    }

    fn get(row: &(usize, Vec<C64>), col: usize) -> C64 {
        if col < row.0 || col >= row.0 + row.1.len() {
            ZERO
        } else {
            row.1[col - row.0]
        }
    }

    fn factor(n: usize, kl: usize, mut rows: Vec<(usize, Vec<C64>)>) -> Result<Self> {
        let mut piv = vec![0; n];
        let mut mult = vec![Vec::new(); n];
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = Self::get(&rows[k], k).norm();
            for r in k + 1..=last {
                let v = Self::get(&rows[r], k).norm();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(HomogError::SolveFailure(format!("zero pivot at column {k}")));
            }
            rows.swap(k, p);
            piv[k] = p;
            let pivot = Self::get(&rows[k], k);
            let (plo, pvals) = (rows[k].0, rows[k].1.clone());
            let phi = plo + pvals.len();
            let mut ms = Vec::with_capacity(last - k);
            for r in k + 1..=last {
                let l = Self::get(&rows[r], k) / pivot;
                ms.push(l);
                if l == ZERO {
                    continue;
                }
                let row = &mut rows[r];
                // widen the row to cover the pivot row's extent
                let rhi = row.0 + row.1.len();
                if phi > rhi {
                    row.1.extend(std::iter::repeat(ZERO).take(phi - rhi));
                }
                if plo < row.0 {
                    let mut v = vec![ZERO; row.0 - plo];
                    v.extend_from_slice(&row.1);
                    row.1 = v;
                    row.0 = plo;
                }
                for col in k..phi {
                    let pv = pvals[col - plo];
                    if pv != ZERO {
                        row.1[col - row.0] -= l * pv;
                    }
                }
            }
            mult[k] = ms;
        }
        Ok(BandedLu { n, rows, piv, mult, kl })
    }

    pub fn solve(&self, b: &[C64]) -> Vec<C64> {
        let n = self.n;
        let mut x = b.to_vec();
        for k in 0..n {
            x.swap(k, self.piv[k]);
            let xk = x[k];
            for (j, l) in self.mult[k].iter().enumerate() {
                x[k + 1 + j] -= l * xk;
            }
        }
        for k in (0..n).rev() {
            let (lo, ref v) = self.rows[k];
            let mut s = x[k];
            for col in k + 1..lo + v.len() {
                s -= v[col - lo] * x[col];
            }
            x[k] = s / v[k - lo];
        }
        let _ = self.kl;
        x
    }
}

// ─── Operators ───

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OperatorKind {
    Beps { eps: f64 },
    Aeps { eps: f64 },
    B0,
}

/// Hermitian matrix on the interior nodes plus the weight Q₀ and the sandwich factor f.
#[derive(Clone, Debug)]
pub struct DiscreteOperator {
    pub kind: OperatorKind,
    pub grid: DomainGrid,
    pub matrix: BlockTridiag,
    pub q0: Vec<CMat>,
    pub f: Vec<CMat>,
}

impl DiscreteOperator {
    pub fn n(&self) -> usize {
        self.matrix.block()
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    /// Smallest eigenvalue of B̃ = f*Bf (equivalently of the pencil (B, Q₀)).
    pub fn smallest_eigenvalue(&self) -> Result<f64> {
        self.matrix.smallest_eigenvalue(Some(&self.q0))
    }

    pub fn f_csr(&self) -> Csr {
        Csr::block_diagonal(&self.f)
    }
}

fn check_cell_grid(coeffs: &CoefficientSet, grid: &DomainGrid) -> Result<usize> {
    let (_, n_per) = grid.require_eps()?;
    let cg = coeffs.grid();
    if cg.dim() != 1 {
        return Err(HomogError::Unsupported("Dirichlet domain operators are one-dimensional".into()));
    }
    if cg.sizes()[0] != n_per || cg.offset() != 0.0 {
        return Err(HomogError::InvalidInput(format!(
            "coefficients must be sampled on the vertex cell grid with {n_per} nodes (got {} nodes, offset {})",
            cg.sizes()[0],
            cg.offset()
        )));
    }
    if coeffs.g_dual.is_none() {
        return Err(HomogError::InvalidInput("coefficients need g on the dual cell grid".into()));
    }
    Ok(n_per)
}

/// Principal part Σ over flux points of (1/h²)·(difference)* b₁*g b₁ (difference), interior block rows.
fn principal(grid: &DomainGrid, b: &SymbolB, g_at_flux: impl Fn(usize) -> CMat, factor: f64) -> BlockTridiag {
    let n = b.n();
    let b1 = &b.b()[0];
    let h2 = grid.h() * grid.h();
    let m = grid.intervals();
    let gk: Vec<CMat> = (0..m)
        .map(|k| linalg::hermitize(&linalg::scale_re(&(&(&linalg::adjoint(b1) * &g_at_flux(k)) * b1), factor / h2)))
        .collect();
    let mut t = BlockTridiag::zeros(m - 1, n);
    for i in 1..m {
        let row = i - 1;
        t.diag[row] = &gk[i - 1] + &gk[i];
        if i + 1 < m {
            t.upper[row] = linalg::scale_re(&gk[i], -1.0);
        }
    }
    t
}

/// Adds a_i D + D a_i* with centred differences: block (i,i+1) −i/(2h)(a_i + a_{i+1}*).
fn add_first_order(t: &mut BlockTridiag, grid: &DomainGrid, a_at_node: impl Fn(usize) -> CMat) {
    let h = grid.h();
    let s = -I / (2.0 * h);
    for i in 1..grid.intervals() - 1 {
        let blk = &a_at_node(i) + &linalg::adjoint(&a_at_node(i + 1));
        t.upper[i - 1] = &t.upper[i - 1] + &linalg::scale(&blk, s);
    }
}

fn beps_matrix(coeffs: &CoefficientSet, grid: &DomainGrid, principal_factor: f64, lambda: f64) -> Result<(BlockTridiag, Vec<CMat>)> {
    let np = check_cell_grid(coeffs, grid)?;
    let gd = coeffs.g_dual.as_ref().unwrap();
    let mut t = principal(grid, &coeffs.symbol, |k| gd.at(k % np), principal_factor);
    add_first_order(&mut t, grid, |i| coeffs.a[0].at(i % np));
    let q0: Vec<CMat> = (1..grid.intervals()).map(|i| coeffs.q0.at(i % np)).collect();
    for (row, i) in (1..grid.intervals()).enumerate() {
        t.diag[row] = linalg::hermitize(&(&(&t.diag[row] + &coeffs.q.at(i % np)) + &linalg::scale_re(&q0[row], lambda)));
    }
    Ok((t, q0))
}

/// B_{D,ε} with the λ stored in `coeffs`; fails unless positive definite.
pub fn assemble_beps(coeffs: &CoefficientSet, grid: &DomainGrid) -> Result<DiscreteOperator> {
    let (eps, _) = grid.require_eps()?;
    let np = check_cell_grid(coeffs, grid)?;
    let (matrix, q0) = beps_matrix(coeffs, grid, 1.0, coeffs.lambda)?;
    if !matrix.is_positive_definite(Some(&q0))? {
        return Err(HomogError::NotPositiveDefinite(matrix.smallest_eigenvalue(Some(&q0))?));
    }
    let f = (1..grid.intervals()).map(|i| coeffs.f.at(i % np)).collect();
    Ok(DiscreteOperator { kind: OperatorKind::Beps { eps }, grid: grid.clone(), matrix, q0, f })
}

/// A_{D,ε} = b(D)*g^ε b(D).
pub fn assemble_aeps(coeffs: &CoefficientSet, grid: &DomainGrid) -> Result<DiscreteOperator> {
    let (eps, _) = grid.require_eps()?;
    let np = check_cell_grid(coeffs, grid)?;
    let gd = coeffs.g_dual.as_ref().unwrap();
    let matrix = principal(grid, &coeffs.symbol, |k| gd.at(k % np), 1.0);
    let n = coeffs.symbol.n();
    let ones = vec![linalg::identity(n); grid.interior()];
    Ok(DiscreteOperator { kind: OperatorKind::Aeps { eps }, grid: grid.clone(), matrix, q0: ones.clone(), f: ones })
}

fn b0_matrix(cell: &CellData, grid: &DomainGrid, principal_factor: f64, lambda: f64) -> BlockTridiag {
    let mut t = principal(grid, &cell.symbol, |_| cell.g0.clone(), principal_factor);
    let k = cell.effective_first_order();
    // K D_c with K Hermitian: the a-term with a_i + a*_{i+1} = K
    let h = grid.h();
    for u in t.upper.iter_mut() {
        *u = &*u + &linalg::scale(&k[0], -I / (2.0 * h));
    }
    let zero = &cell.effective_zero_order() + &linalg::scale_re(&cell.q0_bar, lambda);
    for d in t.diag.iter_mut() {
        *d = linalg::hermitize(&(&*d + &zero));
    }
    t
}

/// B⁰ = b*g⁰b − b*V − V*b + Σ ā_j D_j − W + Q̄ + λQ̄₀ on the same grid.
pub fn assemble_b0(cell: &CellData, grid: &DomainGrid) -> Result<DiscreteOperator> {
    if cell.symbol.d() != 1 {
        return Err(HomogError::Unsupported("Dirichlet domain operators are one-dimensional".into()));
    }
    let matrix = b0_matrix(cell, grid, 1.0, cell.lambda);
    let q0 = vec![cell.q0_bar.clone(); grid.interior()];
    if !matrix.is_positive_definite(Some(&q0))? {
        return Err(HomogError::NotPositiveDefinite(matrix.smallest_eigenvalue(Some(&q0))?));
    }
    let f = vec![cell.f0.clone(); grid.interior()];
    Ok(DiscreteOperator { kind: OperatorKind::B0, grid: grid.clone(), matrix, q0, f })
}

/// Scale of the lower-order data used for λ resolution and the divergence cap.
pub fn lambda_scale(coeffs: &CoefficientSet) -> Result<f64> {
    let qmax = coeffs.q.max_norm()?;
    let amax = coeffs.a.iter().map(|a| a.max_norm()).collect::<Result<Vec<_>>>()?.into_iter().fold(0.0, f64::max);
    let q0min = coeffs.q0.min_eigenvalue()?;
    Ok(1f64.max((qmax + amax * amax * coeffs.g_inv_max()? / coeffs.symbol.alpha0()) / q0min))
}

/// Smallest λ ≥ 0 (times 1.1) such that B_{D,ε} − ¼A_{D,ε} ≥ 0 for every ε; when `cell` is given
/// the effective operator B⁰ − ¼A⁰ is held to the same requirement.
pub fn calibrate_lambda(coeffs: &CoefficientSet, cell: Option<&CellData>, length: f64, eps_list: &[f64]) -> Result<f64> {
    if eps_list.is_empty() {
        return Err(HomogError::InvalidInput("calibration needs at least one ε".into()));
    }
    let np = coeffs.grid().sizes()[0];
    let period = coeffs.grid().lattice().lengths()[0];
    let mut mats: Vec<(BlockTridiag, Vec<CMat>)> = Vec::new();
    for &eps in eps_list {
        let grid = DomainGrid::for_epsilon(length, eps, np, period)?;
        mats.push(beps_matrix(coeffs, &grid, 0.75, 0.0)?);
        if let Some(cell) = cell {
            let q0 = vec![cell.q0_bar.clone(); grid.interior()];
            mats.push((b0_matrix(cell, &grid, 0.75, 0.0), q0));
        }
    }
    let pd = |lam: f64| -> Result<bool> {
        for (t, q0) in &mats {
            let mut s = t.clone();
            s.add_diag(lam, q0);
            if !s.is_positive_definite(None)? {
                return Ok(false);
            }
        }
        Ok(true)
    };
    if pd(0.0)? {
        return Ok(0.0);
    }
    let scale = lambda_scale(coeffs)?;
    let mut lo = 0.0;
    let mut hi = scale;
    while !pd(hi)? {
        lo = hi;
        hi *= 2.0;
        if hi > 1e6 * scale {
            return Err(HomogError::CalibrationDiverged(1e6 * scale));
        }
    }
    while hi - lo > 1e-3 * scale {
        let mid = 0.5 * (lo + hi);
        if pd(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(1.1 * hi)
}

// ─── Grid transfer, extension and smoothing ───

fn block_identity_triplets(trip: &mut Vec<(usize, usize, C64)>, row: usize, col: usize, comps: usize, s: C64) {
    for c in 0..comps {
        trip.push((row * comps + c, col * comps + c, s));
    }
}

/// Zero padding of Dirichlet data: Interior → Closed.
pub fn embed_interior(grid: &DomainGrid, comps: usize) -> Csr {
    let mut trip = Vec::new();
    for i in 1..grid.intervals() {
        block_identity_triplets(&mut trip, i, i - 1, comps, ONE);
    }
    Csr::from_triplets(grid.nodes(Space::Closed) * comps, grid.nodes(Space::Interior) * comps, trip)
}

/// Closed → Interior.
pub fn restrict_interior(grid: &DomainGrid, comps: usize) -> Csr {
    embed_interior(grid, comps).adjoint()
}

/// Extended → Closed (R_O).
pub fn restriction(grid: &DomainGrid, comps: usize) -> Csr {
    let m = grid.intervals();
    let mut trip = Vec::new();
    for i in 0..=m {
        block_identity_triplets(&mut trip, i, i + m, comps, ONE);
    }
    Csr::from_triplets(grid.nodes(Space::Closed) * comps, grid.nodes(Space::Extended) * comps, trip)
}

/// Reflection coefficients c_k at the points k·|x| (k = 1, 2, 3), matching values, first and
/// second derivatives across the boundary.
pub const REFLECTION: [f64; 3] = [6.0, -8.0, 3.0];

/// C^∞ step: 0 for t ≤ 0, 1 for t ≥ 1.
fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if t >= 1.0 {
        return 1.0;
    }
    let a = (-1.0 / t).exp();
    let b = (-1.0 / (1.0 - t)).exp();
    a / (a + b)
}

/// Cutoff χ(x): 1 on [0, ℓ], vanishing at distance ℓ/3 outside.
pub fn extension_cutoff(grid: &DomainGrid, x: f64) -> f64 {
    let l = grid.length();
    let dist = if x < 0.0 {
        -x
    } else if x > l {
        x - l
    } else {
        0.0
    };
    smooth_step(1.0 - dist / (l / 3.0))
}

/// P_O: Closed → Extended, C² reflection followed by the cutoff.
pub fn extension_matrix(grid: &DomainGrid, comps: usize) -> Csr {
    let m = grid.intervals() as isize;
    let mut trip = Vec::new();
    for e in -m..=2 * m {
        let row = (e + m) as usize;
        if (0..=m).contains(&e) {
            block_identity_triplets(&mut trip, row, e as usize, comps, ONE);
            continue;
        }
        let (j, left) = if e < 0 { (-e, true) } else { (e - m, false) };
        if 3 * j >= m {
            continue;
        }
        let chi = extension_cutoff(grid, grid.x(e));
        if chi == 0.0 {
            continue;
        }
        for (k, ck) in REFLECTION.iter().enumerate() {
            let src = if left { (k as isize + 1) * j } else { m - (k as isize + 1) * j };
            block_identity_triplets(&mut trip, row, src as usize, comps, c(ck * chi, 0.0));
        }
    }
    Csr::from_triplets(grid.nodes(Space::Extended) * comps, grid.nodes(Space::Closed) * comps, trip)
}

pub fn extension_po(grid: &DomainGrid, u_closed: &[C64], comps: usize) -> Vec<C64> {
    extension_matrix(grid, comps).apply(u_closed)
}

/// Where a Steklov average is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stagger {
    /// Extended nodes → closed nodes.
    Nodes,
    /// Extended midpoints → domain midpoints.
    Midpoints,
}

/// Number of grid steps in one ε-period.
pub fn window_steps(grid: &DomainGrid, eps: f64, period: f64) -> Result<usize> {
    let r = eps * period / grid.h();
    let w = r.round();
    if (r - w).abs() > 1e-9 * r.max(1.0) || w < 2.0 || (w as usize) % 2 != 0 {
        return Err(HomogError::IndivisibleEpsilon { eps, ratio: r, cells: grid.length() / (eps * period) });
    }
    Ok(w as usize)
}

/// S_ε as a trapezoid box filter over one centred ε-cell (N steps, half-weighted endpoints),
/// restricted to O.
pub fn steklov_matrix(grid: &DomainGrid, eps: f64, period: f64, comps: usize, at: Stagger) -> Result<Csr> {
    let nw = window_steps(grid, eps, period)?;
    let m = grid.intervals();
    if nw / 2 > m {
        return Err(HomogError::WindowExceedsMargin { window: nw, margin: m });
    }
    let (outputs, src_space, dst_space) = match at {
        Stagger::Nodes => (m + 1, Space::Extended, Space::Closed),
        Stagger::Midpoints => (m, Space::ExtendedFlux, Space::Flux),
    };
    let half = (nw / 2) as isize;
    let mut trip = Vec::with_capacity(outputs * (nw + 1) * comps);
    for i in 0..outputs {
        let centre = (i + m) as isize;
        for k in -half..=half {
            let w = if k.abs() == half { 0.5 } else { 1.0 } / nw as f64;
            block_identity_triplets(&mut trip, i, (centre + k) as usize, comps, c(w, 0.0));
        }
    }
    Ok(Csr::from_triplets(grid.nodes(dst_space) * comps, grid.nodes(src_space) * comps, trip))
}

/// S_ε applied to an extended-grid function; result on the closed grid.
pub fn steklov_smooth(grid: &DomainGrid, u_ext: &[C64], eps: f64, period: f64, comps: usize) -> Result<Vec<C64>> {
    Ok(steklov_matrix(grid, eps, period, comps, Stagger::Nodes)?.apply(u_ext))
}

/// Exact discrete transfer factor of the trapezoid window for e^{iκx}.
pub fn steklov_transfer(grid: &DomainGrid, eps: f64, period: f64, kappa: f64) -> Result<f64> {
    let nw = window_steps(grid, eps, period)? as isize;
    let h = grid.h();
    let half = nw / 2;
    Ok((-half..=half).map(|k| if k.abs() == half { 0.5 } else { 1.0 } * (kappa * k as f64 * h).cos()).sum::<f64>() / nw as f64)
}

fn b_triplets(trip: &mut Vec<(usize, usize, C64)>, b1: &CMat, row: usize, col: usize, coef: C64) {
    let (m, n) = (b1.nrows(), b1.ncols());
    for r in 0..m {
        for s in 0..n {
            trip.push((row * m + r, col * n + s, b1[(r, s)] * coef));
        }
    }
}

/// Centred b(D_h) on the extended grid (n → m components); zero data beyond the ends.
pub fn centered_b_extended(grid: &DomainGrid, b: &SymbolB) -> Csr {
    let b1 = &b.b()[0];
    let len = grid.nodes(Space::Extended);
    let s = -I / (2.0 * grid.h());
    let mut trip = Vec::new();
    for e in 0..len {
        if e + 1 < len {
            b_triplets(&mut trip, b1, e, e + 1, s);
        }
        if e > 0 {
            b_triplets(&mut trip, b1, e, e - 1, -s);
        }
    }
    Csr::from_triplets(len * b.m(), len * b.n(), trip)
}

/// Forward b(D_h) from extended nodes to extended midpoints.
pub fn forward_b_extended(grid: &DomainGrid, b: &SymbolB) -> Csr {
    let b1 = &b.b()[0];
    let len = grid.nodes(Space::ExtendedFlux);
    let s = -I / grid.h();
    let mut trip = Vec::new();
    for k in 0..len {
        b_triplets(&mut trip, b1, k, k + 1, s);
        b_triplets(&mut trip, b1, k, k, -s);
    }
    Csr::from_triplets(len * b.m(), grid.nodes(Space::Extended) * b.n(), trip)
}

/// Forward b(D_h) from closed nodes to the M flux points.
pub fn forward_b_closed(grid: &DomainGrid, b: &SymbolB) -> Csr {
    let b1 = &b.b()[0];
    let m = grid.intervals();
    let s = -I / grid.h();
    let mut trip = Vec::new();
    for k in 0..m {
        b_triplets(&mut trip, b1, k, k + 1, s);
        b_triplets(&mut trip, b1, k, k, -s);
    }
    Csr::from_triplets(m * b.m(), (m + 1) * b.n(), trip)
}

/// Average of neighbouring extended nodes onto extended midpoints.
pub fn midpoint_average_extended(grid: &DomainGrid, comps: usize) -> Csr {
    let len = grid.nodes(Space::ExtendedFlux);
    let mut trip = Vec::new();
    for k in 0..len {
        block_identity_triplets(&mut trip, k, k, comps, c(0.5, 0.0));
        block_identity_triplets(&mut trip, k, k + 1, comps, c(0.5, 0.0));
    }
    Csr::from_triplets(len * comps, grid.nodes(Space::Extended) * comps, trip)
}

/// Average of neighbouring closed nodes onto flux points.
pub fn midpoint_average_closed(grid: &DomainGrid, comps: usize) -> Csr {
    let m = grid.intervals();
    let mut trip = Vec::new();
    for k in 0..m {
        block_identity_triplets(&mut trip, k, k, comps, c(0.5, 0.0));
        block_identity_triplets(&mut trip, k, k + 1, comps, c(0.5, 0.0));
    }
    Csr::from_triplets(m * comps, (m + 1) * comps, trip)
}

/// Flux values averaged back to closed nodes (end nodes take their single neighbour).
pub fn flux_to_nodes(grid: &DomainGrid, comps: usize) -> Csr {
    let m = grid.intervals();
    let mut trip = Vec::new();
    for i in 0..=m {
        if i == 0 {
            block_identity_triplets(&mut trip, 0, 0, comps, ONE);
        } else if i == m {
            block_identity_triplets(&mut trip, m, m - 1, comps, ONE);
        } else {
            block_identity_triplets(&mut trip, i, i - 1, comps, c(0.5, 0.0));
            block_identity_triplets(&mut trip, i, i, comps, c(0.5, 0.0));
        }
    }
    Csr::from_triplets((m + 1) * comps, m * comps, trip)
}

/// b(D_h) on the closed grid: centred inside, one-sided second order at both ends.
pub fn onesided_b_closed(grid: &DomainGrid, b: &SymbolB) -> Csr {
    let b1 = &b.b()[0];
    let m = grid.intervals();
    let h = grid.h();
    let mut trip = Vec::new();
    let s = -I / (2.0 * h);
    for i in 0..=m {
        if i == 0 {
            b_triplets(&mut trip, b1, 0, 0, s * -3.0);
            b_triplets(&mut trip, b1, 0, 1, s * 4.0);
            b_triplets(&mut trip, b1, 0, 2, -s);
        } else if i == m {
            b_triplets(&mut trip, b1, m, m, s * 3.0);
            b_triplets(&mut trip, b1, m, m - 1, s * -4.0);
            b_triplets(&mut trip, b1, m, m - 2, s);
        } else {
            b_triplets(&mut trip, b1, i, i + 1, s);
            b_triplets(&mut trip, b1, i, i - 1, -s);
        }
    }
    Csr::from_triplets((m + 1) * b.m(), (m + 1) * b.n(), trip)
}

/// Multiplication by Φ^ε at closed nodes, Φ sampled on the vertex cell grid.
pub fn multiplier_nodes(grid: &DomainGrid, phi: &PeriodicField) -> Result<Csr> {
    let np = phi.grid().sizes()[0];
    if phi.grid().offset() != 0.0 || grid.n_per() != Some(np) {
        return Err(HomogError::InvalidInput("nodal multiplier needs a vertex cell field with n_per nodes".into()));
    }
    let blocks: Vec<CMat> = (0..=grid.intervals()).map(|i| phi.at(i % np)).collect();
    Ok(Csr::block_diagonal(&blocks))
}

/// Multiplication by Φ^ε at the flux points, Φ sampled on the dual cell grid.
pub fn multiplier_flux(grid: &DomainGrid, phi: &PeriodicField) -> Result<Csr> {
    let np = phi.grid().sizes()[0];
    if (phi.grid().offset() - 0.5).abs() > 1e-15 || grid.n_per() != Some(np) {
        return Err(HomogError::InvalidInput("flux multiplier needs a dual cell field with n_per nodes".into()));
    }
    let blocks: Vec<CMat> = (0..grid.intervals()).map(|k| phi.at(k % np)).collect();
    Ok(Csr::block_diagonal(&blocks))
}

// ─── Norms ───

/// Closed-grid node mask of O′ = {x : δ < x < ℓ − δ}.
pub fn subdomain_mask(grid: &DomainGrid, delta: f64) -> Result<Vec<bool>> {
    let tol = 1e-12 * grid.length();
    let mask: Vec<bool> = (0..=grid.intervals())
        .map(|i| {
            let x = grid.x(i as isize);
            x > delta + tol && x < grid.length() - delta - tol
        })
        .collect();
    if !(delta >= 0.0) || !mask.iter().any(|&b| b) {
        return Err(HomogError::EmptySubdomain(delta));
    }
    Ok(mask)
}

/// J with J*J equal to the weight matrix of `norm` on `space` (n components per node).
/// H¹ norms are h Σ w_i|v_i|² + h Σ |Δv/h|² with trapezoid weights on the closed grid.
pub fn norm_factor(grid: &DomainGrid, space: Space, norm: NormTag, comps: usize) -> Result<Csr> {
    let h = grid.h();
    let m = grid.intervals();
    let sq = h.sqrt();
    let nodes = grid.nodes(space);
    match (space, norm) {
        (Space::Flux, NormTag::L2) | (Space::Interior, NormTag::L2) => {
            Ok(Csr::identity(nodes * comps).scale(c(sq, 0.0)))
        }
        (Space::Closed, NormTag::L2) => {
            let mut trip = Vec::new();
            for i in 0..=m {
                let w = if i == 0 || i == m { 0.5 * h } else { h };
                block_identity_triplets(&mut trip, i, i, comps, c(w.sqrt(), 0.0));
            }
            Ok(Csr::from_triplets(nodes * comps, nodes * comps, trip))
        }
        (Space::Interior, _) | (Space::Closed, _) => {
            let offset = if space == Space::Interior { 1 } else { 0 };
            let mask: Vec<bool> = match norm {
                NormTag::H1Sub { delta } => subdomain_mask(grid, delta)?,
                _ => vec![true; m + 1],
            };
            let to_col = |i: usize| -> Option<usize> {
                if space == Space::Interior {
                    if i == 0 || i == m {
                        None
                    } else {
                        Some(i - offset)
                    }
                } else {
                    Some(i)
                }
            };
            let mut trip = Vec::new();
            let mut row = 0;
            for i in 0..=m {
                if !mask[i] {
                    continue;
                }
                let w = if space == Space::Closed && matches!(norm, NormTag::H1) && (i == 0 || i == m) { 0.5 * h } else { h };
                if let Some(col) = to_col(i) {
                    block_identity_triplets(&mut trip, row, col, comps, c(w.sqrt(), 0.0));
                }
                row += 1;
            }
            for k in 0..m {
                if !(mask[k] && mask[k + 1]) {
                    continue;
                }
                let s = 1.0 / sq;
                if let Some(col) = to_col(k + 1) {
                    block_identity_triplets(&mut trip, row, col, comps, c(s, 0.0));
                }
                if let Some(col) = to_col(k) {
                    block_identity_triplets(&mut trip, row, col, comps, c(-s, 0.0));
                }
                row += 1;
            }
            Ok(Csr::from_triplets(row * comps, nodes * comps, trip))
        }
        _ => Err(HomogError::Unsupported(format!("{norm:?} norm on {space:?} grid functions"))),
    }
}

/// Value and tags of an operator-norm measurement.
#[derive(Clone, Debug, Serialize)]
pub struct LinearMapNorm {
    pub source: NormTag,
    pub target: NormTag,
    pub value: f64,
}

/// ‖T‖ from L² on `source` (n_in components) to `target` on `target_space` (n_out components).
pub fn operator_norm(
    t: &dyn LinearMap,
    grid: &DomainGrid,
    source: Space,
    n_in: usize,
    target_space: Space,
    target: NormTag,
    n_out: usize,
    seed: u64,
) -> Result<LinearMapNorm> {
    let js = norm_factor(grid, source, NormTag::L2, n_in)?;
    // J_s is diagonal; invert entrywise
    let js_inv = Csr::from_triplets(js.ncols(), js.nrows(), js.triplets().map(|(r, c, v)| (c, r, ONE / v)).collect());
    let jt = norm_factor(grid, target_space, target, n_out)?;
    if t.ncols() != js_inv.nrows() || t.nrows() != jt.ncols() {
        return Err(HomogError::InvalidInput(format!(
            "operator is {}×{} but the spaces need {}×{}",
            t.nrows(),
            t.ncols(),
            jt.ncols(),
            js_inv.nrows()
        )));
    }
    let wrapped = Weighted { left: &jt, inner: t, right: &js_inv };
    let value = spectral_norm(&wrapped, 1e-6, seed)?;
    Ok(LinearMapNorm { source: NormTag::L2, target, value })
}

struct Weighted<'a> {
    left: &'a Csr,
    inner: &'a dyn LinearMap,
    right: &'a Csr,
}

impl LinearMap for Weighted<'_> {
    fn nrows(&self) -> usize {
        self.left.nrows()
    }

    fn ncols(&self) -> usize {
        self.right.ncols()
    }

    fn apply(&self, x: &[C64]) -> Vec<C64> {
        self.left.apply(&self.inner.apply(&self.right.apply(x)))
    }

    fn apply_adjoint(&self, y: &[C64]) -> Vec<C64> {
        self.right.apply_adjoint(&self.inner.apply_adjoint(&self.left.apply_adjoint(y)))
    }
}

/// Discrete L² norm of a grid function on a space.
pub fn grid_norm(grid: &DomainGrid, space: Space, norm: NormTag, comps: usize, v: &[C64]) -> Result<f64> {
    Ok(linalg::vnorm(&norm_factor(grid, space, norm, comps)?.apply(v)))
}

// ─── Export ───

/// Coordinate text format: header `rows cols nnz`, then `i j re im` per entry (0-based).
pub fn export_coordinate(m: &Csr, out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "{} {} {}", m.nrows(), m.ncols(), m.nnz())?;
    for (i, j, v) in m.triplets() {
        writeln!(out, "{} {} {:.17e} {:.17e}", i, j, v.re, v.im)?;
    }
    Ok(())
}

/// Exact Dirichlet eigenvalues (4/h²)·sin²(kπh/2ℓ) of the three-point Laplacian.
pub fn fd_laplacian_eigenvalue(grid: &DomainGrid, k: usize) -> f64 {
    let h = grid.h();
    let s = (k as f64 * PI * h / (2.0 * grid.length())).sin();
    4.0 * s * s / (h * h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{CoefficientModel, scalar_fn};
    use crate::linear_map::DenseMap;
    use crate::periodic_cell::{Lattice, PeriodicGrid};
    use std::sync::Arc;

    fn model(g: impl Fn(f64) -> f64 + Send + Sync + 'static, q: f64) -> CoefficientModel {
        CoefficientModel {
            lattice: Lattice::unit(1),
            symbol: SymbolB::gradient(1),
            g: scalar_fn(move |y| g(y[0])),
            a: vec![scalar_fn(|_| 0.0)],
            q: scalar_fn(move |_| q),
            q0: scalar_fn(|_| 1.0),
            lambda: 0.0,
        }
    }

    fn cell_set(m: &CoefficientModel, n: usize) -> CoefficientSet {
        m.sample(&PeriodicGrid::vertex(Lattice::unit(1), vec![n]).unwrap()).unwrap()
    }

    #[test]
    fn laplacian_spectrum() {
        let set = cell_set(&model(|_| 1.0, 0.0), 8);
        let grid = DomainGrid::for_epsilon(1.0, 1.0 / 32.0, 8, 1.0).unwrap();
        assert_eq!(grid.intervals(), 256);
        let b = assemble_beps(&set, &grid).unwrap();
        let lo = b.smallest_eigenvalue().unwrap();
        assert!((lo - PI * PI).abs() < 0.01 * PI * PI);
        assert!((lo - fd_laplacian_eigenvalue(&grid, 1)).abs() < 1e-8 * lo);
        assert!(b.matrix.hermiticity_defect() < 1e-12);
    }

    #[test]
    fn indivisible_eps_rejected() {
        assert!(matches!(DomainGrid::for_epsilon(1.0, 0.3, 8, 1.0), Err(HomogError::IndivisibleEpsilon { .. })));
        assert!(DomainGrid::for_epsilon(1.0, 0.25, 6, 1.0).is_err());
    }

    #[test]
    fn banded_lu_solves() {
        let set = cell_set(&model(|y| 2.0 + (2.0 * PI * y).sin(), 0.3), 8);
        let grid = DomainGrid::for_epsilon(1.0, 0.25, 8, 1.0).unwrap();
        let b = assemble_beps(&set, &grid).unwrap();
        let z = c(1.5, 7.0);
        let shifted = b.matrix.shifted(z, &b.q0);
        let lu = BandedLu::factor_tridiag(&shifted).unwrap();
        let rhs: Vec<C64> = (0..b.dim()).map(|i| c((i as f64).sin(), (i as f64 * 0.3).cos())).collect();
        let x = lu.solve(&rhs);
        let r = shifted.matvec(&x);
        let err: f64 = r.iter().zip(&rhs).map(|(u, v)| (u - v).norm()).fold(0.0, f64::max);
        assert!(err < 1e-10, "residual {err}");
        let dense = shifted.to_dense();
        let xd = linalg::solve(&dense, &CMat::from_fn(rhs.len(), 1, |i, _| rhs[i]));
        assert!((0..rhs.len()).all(|i| (xd[(i, 0)] - x[i]).norm() < 1e-10));
    }

    #[test]
    fn calibration_examples() {
        let set = cell_set(&model(|_| 1.0, 0.0), 8);
        assert_eq!(calibrate_lambda(&set, None, 1.0, &[0.25, 0.125]).unwrap(), 0.0);
        // Q = −c: need ¾λ₁(−Δ_h) − c + λ ≥ 0
        let cq = 20.0;
        let set = cell_set(&model(|_| 1.0, -cq), 8);
        let grid = DomainGrid::for_epsilon(1.0, 0.125, 8, 1.0).unwrap();
        let lam = calibrate_lambda(&set, None, 1.0, &[0.125]).unwrap();
        let expect = 1.1 * (cq - 0.75 * fd_laplacian_eigenvalue(&grid, 1));
        let scale = lambda_scale(&set).unwrap();
        assert!((lam - expect).abs() <= 1.1e-3 * scale + 1e-12, "{lam} vs {expect}");
        let lam2 = calibrate_lambda(&set, None, 1.0, &[0.125, 0.0625]).unwrap();
        assert!(lam2 >= lam);
    }

    #[test]
    fn extension_properties() {
        let grid = DomainGrid::new(1.0, 60).unwrap();
        let u: Vec<C64> = (0..=60).map(|i| {
            let x = grid.x(i);
            c(x * (1.0 - x), 0.0)
        }).collect();
        let ext = extension_po(&grid, &u, 1);
        let back = restriction(&grid, 1).apply(&ext);
        assert!(back.iter().zip(&u).all(|(a, b)| a == b));
        // first differences on either side of x = 0 and x = 1 agree to O(h)
        let m = 60usize;
        let d_in = (ext[m + 1] - ext[m]).re / grid.h();
        let d_out = (ext[m] - ext[m - 1]).re / grid.h();
        assert!((d_in - d_out).abs() <= 4.0 * grid.h(), "{d_in} {d_out}");
        let d_in = (ext[2 * m] - ext[2 * m - 1]).re / grid.h();
        let d_out = (ext[2 * m + 1] - ext[2 * m]).re / grid.h();
        assert!((d_in - d_out).abs() <= 4.0 * grid.h());
        assert!(ext[0].norm() == 0.0 && ext[3 * m].norm() == 0.0);
    }

    #[test]
    fn steklov_sine() {
        let eps = 1.0 / 8.0;
        let grid = DomainGrid::for_epsilon(1.0, eps, 16, 1.0).unwrap();
        let u: Vec<C64> = (-(grid.intervals() as isize)..=2 * grid.intervals() as isize)
            .map(|e| c((2.0 * PI * grid.x(e)).sin(), 0.0))
            .collect();
        let s = steklov_smooth(&grid, &u, eps, 1.0, 1).unwrap();
        let tf = steklov_transfer(&grid, eps, 1.0, 2.0 * PI).unwrap();
        let cont = (PI * eps).sin() / (PI * eps);
        for i in 0..=grid.intervals() {
            let x = grid.x(i as isize);
            assert!((s[i].re - tf * (2.0 * PI * x).sin()).abs() < 1e-12);
        }
        // trapezoid transfer is second-order accurate in h
        assert!((tf - cont).abs() < (2.0 * PI * grid.h()).powi(2) / 12.0 + 1e-12);
        let ones = vec![c(1.0, 0.0); u.len()];
        let s1 = steklov_smooth(&grid, &ones, eps, 1.0, 1).unwrap();
        assert!(s1.iter().all(|v| (v - c(1.0, 0.0)).norm() < 1e-14));
    }

    #[test]
    fn norms_basic() {
        let grid = DomainGrid::new(1.0, 64).unwrap();
        let n = grid.interior();
        let id = Csr::identity(n);
        let v = operator_norm(&id, &grid, Space::Interior, 1, Space::Interior, NormTag::L2, 1, 1).unwrap();
        assert!((v.value - 1.0).abs() < 1e-12);
        let two = id.scale(c(2.0, 0.0));
        let v = operator_norm(&two, &grid, Space::Interior, 1, Space::Interior, NormTag::L2, 1, 1).unwrap();
        assert!((v.value - 2.0).abs() < 1e-12);
        // identity into H¹: σ² = 1 + λ_max(−Δ_h)
        let v = operator_norm(&id, &grid, Space::Interior, 1, Space::Interior, NormTag::H1, 1, 1).unwrap();
        let expect = (1.0 + fd_laplacian_eigenvalue(&grid, n)).sqrt();
        assert!((v.value - expect).abs() < 1e-4 * expect);
        let sub = operator_norm(&id, &grid, Space::Interior, 1, Space::Interior, NormTag::H1Sub { delta: 0.25 }, 1, 1).unwrap();
        assert!(sub.value <= v.value + 1e-12);
        assert!(matches!(subdomain_mask(&grid, 0.5), Err(HomogError::EmptySubdomain(_))));
        let mask = subdomain_mask(&grid, 0.25).unwrap();
        assert_eq!(mask.iter().filter(|&&b| b).count(), 31);
        let _ = DenseMap(linalg::identity(1));
        let _ = Arc::new(0);
    }
}
