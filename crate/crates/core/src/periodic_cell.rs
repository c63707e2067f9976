//! Lattice geometry, periodic grids and fields, and periodic elliptic solvers.

use std::f64::consts::PI;

use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::coefficients::SymbolB;
use crate::error::{HomogError, Result};
use crate::linalg::{self, CMat, C64, I, ZERO};

// ─── Lattice ───

/// Rectangular lattice with cell (0, L₁) × … × (0, L_d).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    lengths: Vec<f64>,
}

impl Lattice {
    pub fn new(lengths: Vec<f64>) -> Result<Self> {
        if lengths.is_empty() || lengths.len() > 2 {
            return Err(HomogError::InvalidInput(format!("lattice dimension {} not in {{1,2}}", lengths.len())));
        }
        if lengths.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(HomogError::InvalidInput(format!("lattice lengths must be positive, got {lengths:?}")));
        }
        Ok(Lattice { lengths })
    }

    pub fn unit(d: usize) -> Self {
        Lattice { lengths: vec![1.0; d] }
    }

    pub fn dim(&self) -> usize {
        self.lengths.len()
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    /// Cell volume |Ω|.
    pub fn volume(&self) -> f64 {
        self.lengths.iter().product()
    }

    /// Half the cell diameter.
    pub fn r1(&self) -> f64 {
        0.5 * self.lengths.iter().map(|l| l * l).sum::<f64>().sqrt()
    }
}

// ─── Grid ───

/// Uniform periodic grid on the cell. Node k along axis j sits at (k + offset)·h_j.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodicGrid {
    lattice: Lattice,
    sizes: Vec<usize>,
    offset: f64,
}

impl PeriodicGrid {
    /// Cell-centred grid.
    pub fn new(lattice: Lattice, sizes: Vec<usize>) -> Result<Self> {
        Self::with_offset(lattice, sizes, 0.5)
    }

    /// Grid whose first node sits on the cell corner.
    pub fn vertex(lattice: Lattice, sizes: Vec<usize>) -> Result<Self> {
        Self::with_offset(lattice, sizes, 0.0)
    }

    pub fn with_offset(lattice: Lattice, sizes: Vec<usize>, offset: f64) -> Result<Self> {
        if sizes.len() != lattice.dim() {
            return Err(HomogError::InvalidInput(format!(
                "grid has {} axes but lattice dimension is {}",
                sizes.len(),
                lattice.dim()
            )));
        }
        if sizes.iter().any(|&n| n < 8 || n % 2 != 0) {
            return Err(HomogError::InvalidInput(format!("samples per axis must be even and ≥ 8, got {sizes:?}")));
        }
        Ok(PeriodicGrid { lattice, sizes, offset: offset.rem_euclid(1.0) })
    }

    /// Grid shifted by half a step: flux points of the staggered scheme.
    pub fn dual(&self) -> PeriodicGrid {
        PeriodicGrid { lattice: self.lattice.clone(), sizes: self.sizes.clone(), offset: (self.offset + 0.5).rem_euclid(1.0) }
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn dim(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn len(&self) -> usize {
        self.sizes.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn step(&self, axis: usize) -> f64 {
        self.lattice.lengths[axis] / self.sizes[axis] as f64
    }

    /// Flat index, last axis fastest.
    pub fn index(&self, multi: &[usize]) -> usize {
        let mut idx = 0;
        for (j, &k) in multi.iter().enumerate() {
            idx = idx * self.sizes[j] + k % self.sizes[j];
        }
        idx
    }

    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for j in (0..self.dim()).rev() {
            out[j] = idx % self.sizes[j];
            idx /= self.sizes[j];
        }
        out
    }

    pub fn coords(&self, idx: usize) -> Vec<f64> {
        self.multi_index(idx)
            .iter()
            .enumerate()
            .map(|(j, &k)| (k as f64 + self.offset) * self.step(j))
            .collect()
    }

    /// Index of the node one step further along `axis` (periodic wrap).
    pub fn neighbor(&self, idx: usize, axis: usize, shift: isize) -> usize {
        let mut m = self.multi_index(idx);
        let n = self.sizes[axis] as isize;
        m[axis] = ((m[axis] as isize + shift).rem_euclid(n)) as usize;
        self.index(&m)
    }

    /// Signed integer frequency of DFT bin k on an axis of n samples.
    fn frequency(k: usize, n: usize) -> i64 {
        if k <= n / 2 {
            k as i64
        } else {
            k as i64 - n as i64
        }
    }

    /// Angular wavenumber 2πm/L_j of DFT bin k on `axis`.
    pub fn wavenumber(&self, axis: usize, k: usize) -> f64 {
        2.0 * PI * Self::frequency(k, self.sizes[axis]) as f64 / self.lattice.lengths[axis]
    }

    pub fn is_nyquist(&self, axis: usize, k: usize) -> bool {
        k == self.sizes[axis] / 2
    }
}

// ─── Fields ───

/// Complex k×l matrix per node of a periodic grid.
#[derive(Clone, Debug)]
pub struct PeriodicField {
    grid: PeriodicGrid,
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl PeriodicField {
    pub fn zeros(grid: &PeriodicGrid, rows: usize, cols: usize) -> Self {
        PeriodicField { grid: grid.clone(), rows, cols, data: vec![ZERO; grid.len() * rows * cols] }
    }

    pub fn from_fn(grid: &PeriodicGrid, rows: usize, cols: usize, f: impl Fn(&[f64]) -> CMat) -> Result<Self> {
        let mut out = Self::zeros(grid, rows, cols);
        for idx in 0..grid.len() {
            let m = f(&grid.coords(idx));
            if m.nrows() != rows || m.ncols() != cols {
                return Err(HomogError::InvalidInput(format!(
                    "closure returned {}×{} but field is {rows}×{cols}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            if !linalg::is_finite(&m) {
                return Err(HomogError::InvalidInput(format!("non-finite sample at node {idx}")));
            }
            out.set(idx, &m);
        }
        Ok(out)
    }

    pub fn scalar_from_fn(grid: &PeriodicGrid, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        Self::from_fn(grid, 1, 1, |y| linalg::real_scalar(f(y)))
    }

    pub fn constant(grid: &PeriodicGrid, m: &CMat) -> Self {
        let mut out = Self::zeros(grid, m.nrows(), m.ncols());
        for idx in 0..grid.len() {
            out.set(idx, m);
        }
        out
    }

    /// Field from node-major component data (`rows·cols` values per node, row-major).
    pub fn from_data(grid: &PeriodicGrid, rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != grid.len() * rows * cols {
            return Err(HomogError::InvalidInput("field data length does not match grid".into()));
        }
        Ok(PeriodicField { grid: grid.clone(), rows, cols, data })
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn entry(&self, idx: usize, r: usize, c: usize) -> C64 {
        self.data[(idx * self.rows + r) * self.cols + c]
    }

    pub fn at(&self, idx: usize) -> CMat {
        CMat::from_fn(self.rows, self.cols, |r, c| self.entry(idx, r, c))
    }

    pub fn set(&mut self, idx: usize, m: &CMat) {
        for r in 0..self.rows {
            for c in 0..self.cols {
                self.data[(idx * self.rows + r) * self.cols + c] = m[(r, c)];
            }
        }
    }

    /// Nodal values of one matrix entry.
    pub fn component(&self, r: usize, c: usize) -> Vec<C64> {
        (0..self.grid.len()).map(|i| self.entry(i, r, c)).collect()
    }

    pub fn set_component(&mut self, r: usize, c: usize, values: &[C64]) {
        for (i, v) in values.iter().enumerate() {
            self.data[(i * self.rows + r) * self.cols + c] = *v;
        }
    }

    /// Column `c` as a rows×1 field.
    pub fn column(&self, c: usize) -> PeriodicField {
        let mut out = PeriodicField::zeros(&self.grid, self.rows, 1);
        for r in 0..self.rows {
            out.set_component(r, 0, &self.component(r, c));
        }
        out
    }

    pub fn from_columns(cols: &[PeriodicField]) -> Result<PeriodicField> {
        let grid = cols[0].grid.clone();
        let rows = cols[0].rows;
        let mut out = PeriodicField::zeros(&grid, rows, cols.len());
        for (c, col) in cols.iter().enumerate() {
            if col.cols != 1 || col.rows != rows {
                return Err(HomogError::InvalidInput("columns must be rows×1 fields of equal height".into()));
            }
            for r in 0..rows {
                out.set_component(r, c, &col.component(r, 0));
            }
        }
        Ok(out)
    }

    pub fn map(&self, f: impl Fn(&CMat) -> CMat) -> Result<PeriodicField> {
        let first = f(&self.at(0));
        let mut out = PeriodicField::zeros(&self.grid, first.nrows(), first.ncols());
        for idx in 0..self.grid.len() {
            let m = f(&self.at(idx));
            if m.nrows() != first.nrows() || m.ncols() != first.ncols() {
                return Err(HomogError::InvalidInput("map changed shape between nodes".into()));
            }
            out.set(idx, &m);
        }
        Ok(out)
    }

    /// Pointwise product self(x)·other(x).
    pub fn mul(&self, other: &PeriodicField) -> Result<PeriodicField> {
        if self.grid.len() != other.grid.len() || self.cols != other.rows {
            return Err(HomogError::InvalidInput("incompatible fields in pointwise product".into()));
        }
        let mut out = PeriodicField::zeros(&self.grid, self.rows, other.cols);
        for idx in 0..self.grid.len() {
            out.set(idx, &(&self.at(idx) * &other.at(idx)));
        }
        Ok(out)
    }

    pub fn adjoint(&self) -> PeriodicField {
        let mut out = PeriodicField::zeros(&self.grid, self.cols, self.rows);
        for idx in 0..self.grid.len() {
            out.set(idx, &linalg::adjoint(&self.at(idx)));
        }
        out
    }

    pub fn add(&self, other: &PeriodicField) -> Result<PeriodicField> {
        if self.data.len() != other.data.len() || self.shape() != other.shape() {
            return Err(HomogError::InvalidInput("incompatible fields in sum".into()));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(PeriodicField { grid: self.grid.clone(), rows: self.rows, cols: self.cols, data })
    }

    pub fn scale(&self, s: C64) -> PeriodicField {
        PeriodicField { grid: self.grid.clone(), rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * s).collect() }
    }

    /// Largest nodal spectral norm.
    pub fn max_norm(&self) -> Result<f64> {
        let mut m: f64 = 0.0;
        for idx in 0..self.grid.len() {
            m = m.max(linalg::norm2(&self.at(idx))?);
        }
        Ok(m)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.norm()))
    }

    pub fn is_real(&self) -> bool {
        self.data.iter().all(|v| v.im == 0.0)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        if self.rows != self.cols {
            return false;
        }
        (0..self.grid.len()).all(|idx| {
            let m = self.at(idx);
            linalg::fro_norm(&(&m - &linalg::adjoint(&m))) <= tol * (1.0 + linalg::fro_norm(&m))
        })
    }

    /// Smallest nodal eigenvalue of the Hermitian part.
    pub fn min_eigenvalue(&self) -> Result<f64> {
        let mut m = f64::INFINITY;
        for idx in 0..self.grid.len() {
            m = m.min(linalg::herm_eigenvalues(&self.at(idx))?[0]);
        }
        Ok(m)
    }

    pub fn is_positive_definite(&self) -> Result<bool> {
        Ok(self.is_hermitian(1e-10) && self.min_eigenvalue()? > 0.0)
    }

    /// Node-major vector of a rows×1 field.
    pub fn to_vector(&self) -> Vec<C64> {
        self.data.clone()
    }
}

/// Node average, the trapezoid rule on a uniform periodic grid.
pub fn mean_value(f: &PeriodicField) -> CMat {
    let n = f.grid.len();
    let mut sums = vec![ZERO; f.rows * f.cols];
    for idx in 0..n {
        for (k, s) in sums.iter_mut().enumerate() {
            *s += f.data[idx * f.rows * f.cols + k];
        }
    }
    CMat::from_fn(f.rows, f.cols, |r, c| sums[r * f.cols + c] / n as f64)
}

/// Inverse of the mean of pointwise inverses.
pub fn underline_mean(f: &PeriodicField) -> Result<CMat> {
    if f.rows != f.cols {
        return Err(HomogError::InvalidInput("underline mean needs square values".into()));
    }
    let n = f.grid.len();
    let mut acc = linalg::zeros(f.rows, f.rows);
    for idx in 0..n {
        let m = f.at(idx);
        let cond = linalg::condition(&m)?;
        if cond > 1e12 {
            return Err(HomogError::SingularSample { node: idx, cond });
        }
        acc = &acc + &linalg::inverse(&m);
    }
    Ok(linalg::inverse(&linalg::scale_re(&acc, 1.0 / n as f64)))
}

// ─── FFT ───

/// In-place DFT of one scalar nodal vector (unnormalised forward, 1/N inverse).
pub fn fft(grid: &PeriodicGrid, data: &mut [C64], inverse: bool) {
    let mut planner = FftPlanner::new();
    let sizes = grid.sizes();
    match sizes.len() {
        1 => {
            let plan = if inverse { planner.plan_fft_inverse(sizes[0]) } else { planner.plan_fft_forward(sizes[0]) };
            plan.process(data);
        }
        _ => {
            let (n0, n1) = (sizes[0], sizes[1]);
            let p1 = if inverse { planner.plan_fft_inverse(n1) } else { planner.plan_fft_forward(n1) };
            for row in data.chunks_mut(n1) {
                p1.process(row);
            }
            let p0 = if inverse { planner.plan_fft_inverse(n0) } else { planner.plan_fft_forward(n0) };
            let mut col = vec![ZERO; n0];
            for j in 0..n1 {
                for i in 0..n0 {
                    col[i] = data[i * n1 + j];
                }
                p0.process(&mut col);
                for i in 0..n0 {
                    data[i * n1 + j] = col[i];
                }
            }
        }
    }
    if inverse {
        let s = 1.0 / grid.len() as f64;
        for v in data.iter_mut() {
            *v *= s;
        }
    }
}

/// Wavenumber vector of flat DFT bin `idx`.
fn bin_wavenumbers(grid: &PeriodicGrid, idx: usize) -> Vec<f64> {
    grid.multi_index(idx).iter().enumerate().map(|(j, &k)| grid.wavenumber(j, k)).collect()
}

/// Spectral ∂_axis of a scalar nodal vector; the Nyquist bin is dropped.
pub fn spectral_derivative(grid: &PeriodicGrid, values: &[C64], axis: usize) -> Vec<C64> {
    let mut hat = values.to_vec();
    fft(grid, &mut hat, false);
    for (idx, v) in hat.iter_mut().enumerate() {
        let k = grid.multi_index(idx)[axis];
        *v = if grid.is_nyquist(axis, k) { ZERO } else { *v * I * grid.wavenumber(axis, k) };
    }
    fft(grid, &mut hat, true);
    hat
}

/// Zero-mean Φ with ΔΦ = v, solved mode by mode.
pub fn poisson_periodic(v: &PeriodicField) -> Result<PeriodicField> {
    if v.shape() != (1, 1) {
        return Err(HomogError::InvalidInput("poisson_periodic expects a scalar field".into()));
    }
    let grid = v.grid();
    let vals = v.component(0, 0);
    check_zero_mean(&vals)?;
    let mut hat = vals;
    fft(grid, &mut hat, false);
    for (idx, h) in hat.iter_mut().enumerate() {
        let k2: f64 = bin_wavenumbers(grid, idx).iter().map(|k| k * k).sum();
        *h = if k2 == 0.0 { ZERO } else { -*h / k2 };
    }
    fft(grid, &mut hat, true);
    PeriodicField::from_data(grid, 1, 1, hat)
}

fn check_zero_mean(vals: &[C64]) -> Result<()> {
    let n = vals.len() as f64;
    let mean: C64 = vals.iter().sum::<C64>() / n;
    let rms = (vals.iter().map(|v| v.norm_sqr()).sum::<f64>() / n).sqrt();
    if mean.norm() > 1e-10 * (1.0 + rms) {
        return Err(HomogError::NonZeroMeanRHS(mean.norm()));
    }
    Ok(())
}

/// Trigonometric interpolant of a scalar field, evaluable anywhere in the cell.
#[derive(Clone, Debug)]
pub struct TrigInterpolant {
    grid: PeriodicGrid,
    coeffs: Vec<C64>,
}

impl TrigInterpolant {
    pub fn new(f: &PeriodicField, r: usize, c: usize) -> Self {
        let mut coeffs = f.component(r, c);
        fft(f.grid(), &mut coeffs, false);
        let n = f.grid().len() as f64;
        for v in coeffs.iter_mut() {
            *v /= n;
        }
        TrigInterpolant { grid: f.grid().clone(), coeffs }
    }

    pub fn eval(&self, y: &[f64]) -> C64 {
        let g = &self.grid;
        let mut s = ZERO;
        for (idx, ch) in self.coeffs.iter().enumerate() {
            if ch.norm() == 0.0 {
                continue;
            }
            let mi = g.multi_index(idx);
            // Nyquist bins contribute a cosine so that real data interpolates to real values.
            let mut term = *ch;
            for j in 0..g.dim() {
                let x = y[j] - g.offset() * g.step(j);
                let k = g.wavenumber(j, mi[j]);
                if g.is_nyquist(j, mi[j]) {
                    term *= (k.abs() * x).cos();
                } else {
                    term *= C64::from_polar(1.0, k * x);
                }
            }
            s += term;
        }
        s
    }
}

// ─── Periodic elliptic operator b(D)* g b(D) ───

/// Discretisation of b(D) on the cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellScheme {
    /// Fourier pseudo-spectral derivatives, all quantities at the same nodes.
    Spectral,
    /// Forward differences onto the dual grid (1D); g lives on the dual grid.
    /// Matches the Dirichlet finite-difference operators of `domain_ops`.
    Staggered,
}

/// b(D)* g b(D) on a periodic grid. For the staggered scheme `g` must live on `nodes.dual()`.
pub struct CellOperator<'a> {
    pub scheme: CellScheme,
    pub symbol: &'a SymbolB,
    pub g: &'a PeriodicField,
    pub nodes: PeriodicGrid,
}

impl<'a> CellOperator<'a> {
    pub fn new(scheme: CellScheme, symbol: &'a SymbolB, g: &'a PeriodicField, nodes: &PeriodicGrid) -> Result<Self> {
        let (m, n) = (symbol.m(), symbol.n());
        if g.shape() != (m, m) {
            return Err(HomogError::InvalidInput(format!("g must be {m}×{m}")));
        }
        if symbol.d() != nodes.dim() {
            return Err(HomogError::InvalidInput("symbol dimension does not match grid".into()));
        }
        let _ = n;
        match scheme {
            CellScheme::Spectral => {
                if g.grid() != nodes {
                    return Err(HomogError::InvalidInput("spectral scheme needs g on the solution grid".into()));
                }
            }
            CellScheme::Staggered => {
                if nodes.dim() != 1 {
                    return Err(HomogError::Unsupported("staggered cell scheme is one-dimensional".into()));
                }
                if g.grid() != &nodes.dual() {
                    return Err(HomogError::InvalidInput("staggered scheme needs g on the dual grid".into()));
                }
            }
        }
        Ok(CellOperator { scheme, symbol, g, nodes: nodes.clone() })
    }

    fn n(&self) -> usize {
        self.symbol.n()
    }

    fn m(&self) -> usize {
        self.symbol.m()
    }

    /// b(D_h)u: n components per node → m components per flux point.
    pub fn gradient(&self, u: &[C64]) -> Vec<C64> {
        let (n, m) = (self.n(), self.m());
        let len = self.nodes.len();
        let mut out = vec![ZERO; len * m];
        match self.scheme {
            CellScheme::Spectral => {
                for j in 0..self.nodes.dim() {
                    let bj = &self.symbol.b()[j];
                    for c in 0..n {
                        let comp: Vec<C64> = (0..len).map(|i| u[i * n + c]).collect();
                        let du = spectral_derivative(&self.nodes, &comp, j);
                        for i in 0..len {
                            let dv = -I * du[i];
                            for r in 0..m {
                                out[i * m + r] += bj[(r, c)] * dv;
                            }
                        }
                    }
                }
            }
            CellScheme::Staggered => {
                let h = self.nodes.step(0);
                let b1 = &self.symbol.b()[0];
                for i in 0..len {
                    let ip = (i + 1) % len;
                    for c in 0..n {
                        let dv = -I * (u[ip * n + c] - u[i * n + c]) / h;
                        for r in 0..m {
                            out[i * m + r] += b1[(r, c)] * dv;
                        }
                    }
                }
            }
        }
        out
    }

    /// b(D_h)* w: adjoint of `gradient` in the node-sum inner product.
    pub fn divergence(&self, w: &[C64]) -> Vec<C64> {
        let (n, m) = (self.n(), self.m());
        let len = self.nodes.len();
        let mut out = vec![ZERO; len * n];
        match self.scheme {
            CellScheme::Spectral => {
                for j in 0..self.nodes.dim() {
                    let bj = &self.symbol.b()[j];
                    for c in 0..n {
                        let mut acc = vec![ZERO; len];
                        for i in 0..len {
                            for r in 0..m {
                                acc[i] += bj[(r, c)].conj() * w[i * m + r];
                            }
                        }
                        let d = spectral_derivative(&self.nodes, &acc, j);
                        for i in 0..len {
                            out[i * n + c] += -I * d[i];
                        }
                    }
                }
            }
            CellScheme::Staggered => {
                let h = self.nodes.step(0);
                let b1 = &self.symbol.b()[0];
                for i in 0..len {
                    let im = (i + len - 1) % len;
                    for c in 0..n {
                        let mut s = ZERO;
                        for r in 0..m {
                            s += b1[(r, c)].conj() * (w[im * m + r] - w[i * m + r]);
                        }
                        out[i * n + c] = I * s / h;
                    }
                }
            }
        }
        out
    }

    /// Pointwise multiplication by g at flux points.
    pub fn apply_g(&self, w: &[C64]) -> Vec<C64> {
        let m = self.m();
        let mut out = vec![ZERO; w.len()];
        for i in 0..self.nodes.len() {
            let gi = self.g.at(i);
            linalg::matvec(&gi, &w[i * m..(i + 1) * m], &mut out[i * m..(i + 1) * m]);
        }
        out
    }

    pub fn apply(&self, u: &[C64]) -> Vec<C64> {
        self.divergence(&self.apply_g(&self.gradient(u)))
    }

    /// Per-axis derivative symbols s_j(κ) of the scheme for DFT bin `idx`.
    fn symbols(&self, idx: usize) -> Vec<C64> {
        let g = &self.nodes;
        let mi = g.multi_index(idx);
        (0..g.dim())
            .map(|j| match self.scheme {
                CellScheme::Spectral => {
                    if g.is_nyquist(j, mi[j]) {
                        ZERO
                    } else {
                        C64::new(g.wavenumber(j, mi[j]), 0.0)
                    }
                }
                CellScheme::Staggered => {
                    let h = g.step(j);
                    let kh = g.wavenumber(j, mi[j]) * h;
                    -I * (C64::from_polar(1.0, kh) - 1.0) / h
                }
            })
            .collect()
    }

    /// Inverses of the constant-coefficient symbols σ(κ)* ḡ σ(κ); `None` on null bins.
    fn preconditioner(&self) -> Result<Vec<Option<CMat>>> {
        let gbar = linalg::hermitize(&mean_value(self.g));
        let n = self.n();
        let mut out = Vec::with_capacity(self.nodes.len());
        for idx in 0..self.nodes.len() {
            let s = self.symbols(idx);
            if s.iter().all(|v| v.norm() < 1e-14) {
                out.push(None);
                continue;
            }
            let mut sigma = linalg::zeros(self.m(), n);
            for (j, sj) in s.iter().enumerate() {
                sigma = &sigma + &linalg::scale(&self.symbol.b()[j], *sj);
            }
            let p = &(&linalg::adjoint(&sigma) * &gbar) * &sigma;
            out.push(Some(linalg::inverse(&linalg::hermitize(&p))));
        }
        Ok(out)
    }

    fn apply_preconditioner(&self, pre: &[Option<CMat>], r: &[C64]) -> Vec<C64> {
        let n = self.n();
        let len = self.nodes.len();
        let mut hats: Vec<Vec<C64>> = (0..n)
            .map(|c| {
                let mut v: Vec<C64> = (0..len).map(|i| r[i * n + c]).collect();
                fft(&self.nodes, &mut v, false);
                v
            })
            .collect();
        let mut tmp_in = vec![ZERO; n];
        let mut tmp_out = vec![ZERO; n];
        for idx in 0..len {
            for c in 0..n {
                tmp_in[c] = hats[c][idx];
            }
            match &pre[idx] {
                Some(p) => linalg::matvec(p, &tmp_in, &mut tmp_out),
                None => tmp_out.iter_mut().for_each(|v| *v = ZERO),
            }
            for c in 0..n {
                hats[c][idx] = tmp_out[c];
            }
        }
        let mut out = vec![ZERO; len * n];
        for (c, hat) in hats.iter_mut().enumerate() {
            fft(&self.nodes, hat, true);
            for i in 0..len {
                out[i * n + c] = hat[i];
            }
        }
        out
    }

    /// Removes the components the operator annihilates identically (constants; for the
    /// spectral scheme also the all-Nyquist bins).
    fn project_range(&self, v: &mut [C64], pre: &[Option<CMat>]) {
        let n = self.n();
        let len = self.nodes.len();
        for c in 0..n {
            let mut comp: Vec<C64> = (0..len).map(|i| v[i * n + c]).collect();
            fft(&self.nodes, &mut comp, false);
            for (idx, p) in pre.iter().enumerate() {
                if p.is_none() {
                    comp[idx] = ZERO;
                }
            }
            fft(&self.nodes, &mut comp, true);
            for i in 0..len {
                v[i * n + c] = comp[i];
            }
        }
    }

    /// Zero-mean solution of b(D)*g b(D)u = rhs for one n-component right-hand side.
    pub fn solve(&self, rhs: &[C64]) -> Result<Vec<C64>> {
        let n = self.n();
        let len = self.nodes.len();
        for c in 0..n {
            let comp: Vec<C64> = (0..len).map(|i| rhs[i * n + c]).collect();
            check_zero_mean(&comp)?;
        }
        let pre = self.preconditioner()?;
        let mut b = rhs.to_vec();
        self.project_range(&mut b, &pre);
        let bnorm = linalg::vnorm(&b);
        let mut x = vec![ZERO; len * n];
        if bnorm == 0.0 {
            return Ok(x);
        }
        let mut r = b.clone();
        let mut z = self.apply_preconditioner(&pre, &r);
        let mut p = z.clone();
        let mut rz = linalg::dot(&r, &z).re;
        let cap = 10 * len * n;
        let mut res = 1.0;
        for _ in 0..cap {
            let ap = self.apply(&p);
            let pap = linalg::dot(&p, &ap).re;
            if pap <= 0.0 {
                break;
            }
            let alpha = rz / pap;
            linalg::axpy(C64::new(alpha, 0.0), &p, &mut x);
            linalg::axpy(C64::new(-alpha, 0.0), &ap, &mut r);
            res = linalg::vnorm(&r) / bnorm;
            if res <= 1e-10 {
                // recompute the true residual once to guard against drift
                let ax = self.apply(&x);
                let tr: Vec<C64> = b.iter().zip(&ax).map(|(u, v)| u - v).collect();
                res = linalg::vnorm(&tr) / bnorm;
                if res <= 1e-10 {
                    self.project_range(&mut x, &pre);
                    return Ok(x);
                }
                r = tr;
            }
            z = self.apply_preconditioner(&pre, &r);
            let rz_new = linalg::dot(&r, &z).re;
            let beta = rz_new / rz;
            rz = rz_new;
            for (pi, zi) in p.iter_mut().zip(&z) {
                *pi = zi + beta * *pi;
            }
        }
        Err(HomogError::NoConvergence { iterations: cap, residual: res })
    }
}

/// Zero-mean periodic solution u of b(D)* g b(D) u = rhs, column by column.
pub fn periodic_elliptic_solve(
    g: &PeriodicField,
    b: &SymbolB,
    rhs: &PeriodicField,
    scheme: CellScheme,
) -> Result<PeriodicField> {
    let (n, k) = rhs.shape();
    if n != b.n() {
        return Err(HomogError::InvalidInput(format!("rhs has {n} rows but symbol has n = {}", b.n())));
    }
    let op = CellOperator::new(scheme, b, g, rhs.grid())?;
    let cols = (0..k)
        .map(|c| {
            let col = rhs.column(c);
            let u = op.solve(&col.to_vector())?;
            PeriodicField::from_data(rhs.grid(), n, 1, u)
        })
        .collect::<Result<Vec<_>>>()?;
    PeriodicField::from_columns(&cols)
}
