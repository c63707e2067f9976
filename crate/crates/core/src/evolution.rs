//! Exact-in-time evolution through the eigen-decomposition of B̃ = F*BF, contour cross-checks and Duhamel sums.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::domain_ops::{BandedLu, BlockTridiag, DiscreteOperator, OperatorKind};
use crate::error::{HomogError, Result};
use crate::linalg::{self, c, CMat, C64, ZERO};
use crate::linear_map::FactoredMap;

/// Modes whose weight falls below this fraction of the largest one are dropped from E(t).
pub const MODE_CUTOFF: f64 = 1e-15;

// ─── Factorisation ───

#[derive(Clone)]
pub struct SpectralFactorization {
    pub kind: OperatorKind,
    /// Eigenvalues of B̃, ascending.
    pub mu: Vec<f64>,
    /// F·U, whose columns give E(t) = (FU) diag(e^{−μt}) (FU)*.
    pub fu: Arc<CMat>,
    /// Largest ‖B̃v − μv‖ / max(1, |μ|) over all pairs.
    pub residual: f64,
    /// ‖F‖² = max over nodes of ‖f_i‖².
    pub f_norm_sq: f64,
    pub block: usize,
}

/// B̃ = F*BF as a dense matrix.
fn sandwich_blocks(op: &DiscreteOperator) -> BlockTridiag {
    let t = &op.matrix;
    let nodes = t.nodes();
    let mut out = BlockTridiag::zeros(nodes, t.block());
    for i in 0..nodes {
        let fi_adj = linalg::adjoint(&op.f[i]);
        out.diag[i] = &(&fi_adj * &t.diag[i]) * &op.f[i];
        if i + 1 < nodes {
            out.upper[i] = &(&fi_adj * &t.upper[i]) * &op.f[i + 1];
        }
    }
    out
}

/// Dense Hermitian eigen-decomposition of F*BF.
pub fn factorize(op: &DiscreteOperator) -> Result<SpectralFactorization> {
    let n = op.n();
    let blocks = sandwich_blocks(op);
    let (mu, u) = linalg::herm_eigen(&blocks.to_dense())?;
    if mu.iter().any(|m| !m.is_finite()) {
        return Err(HomogError::EigFailure);
    }
    let dim = blocks.dim();
    // residuals, one pair per column
    let residual = (0..dim)
        .into_par_iter()
        .map(|j| {
            let v: Vec<C64> = (0..dim).map(|i| u[(i, j)]).collect();
            let bv = blocks.matvec(&v);
            let r: f64 = bv.iter().zip(&v).map(|(a, b)| (a - b * mu[j]).norm_sqr()).sum::<f64>().sqrt();
            r / mu[j].abs().max(1.0)
        })
        .reduce(|| 0.0, f64::max);
    let mut fu = linalg::zeros(dim, dim);
    for i in 0..op.matrix.nodes() {
        let fi = &op.f[i];
        for j in 0..dim {
            for r in 0..n {
                let mut s = ZERO;
                for k in 0..n {
                    s += fi[(r, k)] * u[(i * n + k, j)];
                }
                fu[(i * n + r, j)] = s;
            }
        }
    }
    let f_norm_sq = op.f.iter().map(|f| linalg::norm2(f).map(|v| v * v)).collect::<Result<Vec<_>>>()?.into_iter().fold(0.0, f64::max);
    Ok(SpectralFactorization { kind: op.kind.clone(), mu, fu: Arc::new(fu), residual, f_norm_sq, block: n })
}

impl SpectralFactorization {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// E(t) = F e^{−B̃t} F* as a factored map, negligible modes dropped.
    pub fn semigroup_map(&self, t: f64) -> FactoredMap {
        let w0 = (-self.mu[0] * t).exp();
        let weights: Vec<C64> = self
            .mu
            .iter()
            .map(|m| (-m * t).exp())
            .take_while(|w| *w >= MODE_CUTOFF * w0)
            .map(|w| c(w, 0.0))
            .collect();
        FactoredMap { left: self.fu.clone(), right: self.fu.clone(), weights }
    }

    /// (B − ζQ₀)⁻¹ = F(B̃ − ζ)⁻¹F*.
    pub fn resolvent_map(&self, zeta: C64) -> FactoredMap {
        let weights = self.mu.iter().map(|m| C64::new(1.0, 0.0) / (c(*m, 0.0) - zeta)).collect();
        FactoredMap { left: self.fu.clone(), right: self.fu.clone(), weights }
    }

    /// E(t) as an explicit dense matrix.
    pub fn semigroup_matrix(&self, t: f64) -> CMat {
        let map = self.semigroup_map(t);
        let k = map.weights.len();
        let dim = self.dim();
        let fu = &*self.fu;
        let mut out = linalg::zeros(dim, dim);
        for j in 0..dim {
            for i in 0..dim {
                let mut s = ZERO;
                for (m, w) in map.weights.iter().enumerate().take(k) {
                    s += fu[(i, m)] * w * fu[(j, m)].conj();
                }
                out[(i, j)] = s;
            }
        }
        out
    }

    /// e^{−B̃t} in the eigenbasis, for the semigroup-law check.
    pub fn tilde_semigroup(&self, t: f64, coef: &[C64]) -> Vec<C64> {
        coef.iter().zip(&self.mu).map(|(v, m)| v * (-m * t).exp()).collect()
    }

    fn project(&self, x: &[C64]) -> Vec<C64> {
        let fu = &*self.fu;
        let dim = self.dim();
        (0..dim).map(|j| (0..dim).map(|i| fu[(i, j)].conj() * x[i]).sum()).collect()
    }

    fn expand(&self, coef: &[C64]) -> Vec<C64> {
        let fu = &*self.fu;
        let dim = self.dim();
        let mut out = vec![ZERO; dim];
        for (j, cj) in coef.iter().enumerate() {
            if *cj == ZERO {
                continue;
            }
            for (i, o) in out.iter_mut().enumerate() {
                *o += fu[(i, j)] * cj;
            }
        }
        out
    }
}

// ─── Contour integral ───

#[derive(Clone, Debug, Serialize)]
pub struct ContourSpec {
    pub c_flat: f64,
    /// Truncation height along each ray; None picks e^{−(c♭/2 + T)t} = 1e−10.
    pub t_max: Option<f64>,
    pub nodes_per_ray: usize,
}

pub const CONTOUR_TAIL_TOL: f64 = 1e-8;
pub const GL_PANEL: usize = 16;

/// Gauss–Legendre nodes and weights on [−1, 1] (Newton on P_n).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Panel breakpoints on [0, T]: first panel of length ≈ c♭, then geometric growth.
fn contour_panels(c_flat: f64, t_max: f64, panels: usize) -> Vec<f64> {
    if panels == 1 {
        return vec![0.0, t_max];
    }
    let first = c_flat.min(t_max / panels as f64).max(1e-12);
    let q = (t_max / first).powf(1.0 / (panels - 1) as f64);
    let mut b = vec![0.0];
    for k in 0..panels {
        b.push(first * q.powi(k as i32));
    }
    *b.last_mut().unwrap() = t_max;
    b
}

/// Default truncation height.
pub fn default_t_max(c_flat: f64, t: f64) -> f64 {
    ((1e10f64).ln() / t - 0.5 * c_flat).max(1.0)
}

/// −(2πi)⁻¹∮ e^{−ζt}(B − ζQ₀)⁻¹φ dζ over Re ζ = |Im ζ| + c♭/2, one LU per node.
pub fn contour_semigroup(op: &DiscreteOperator, spec: &ContourSpec, f_norm_sq: f64, t: f64, phi: &[C64]) -> Result<Vec<C64>> {
    if !(t > 0.0) {
        return Err(HomogError::InvalidInput(format!("contour evaluation needs t > 0, got {t}")));
    }
    if spec.nodes_per_ray < GL_PANEL || !(spec.c_flat > 0.0) {
        return Err(HomogError::InvalidInput("contour needs c♭ > 0 and at least 16 nodes per ray".into()));
    }
    let half = 0.5 * spec.c_flat;
    let t_max = spec.t_max.unwrap_or_else(|| default_t_max(spec.c_flat, t));
    // tail beyond T: ∫_T^∞ e^{−(c♭/2+s)t}·‖F‖²/s ds·√2/(2π)
    let tail = (2f64).sqrt() / (2.0 * PI) * f_norm_sq * (-(half + t_max) * t).exp() / (t * t_max);
    if tail > CONTOUR_TAIL_TOL {
        return Err(HomogError::TailTooLarge { tail, t });
    }
    let panels = spec.nodes_per_ray.div_ceil(GL_PANEL);
    let (gx, gw) = gauss_legendre(GL_PANEL);
    let bp = contour_panels(spec.c_flat, t_max, panels);
    let mut nodes = Vec::with_capacity(panels * GL_PANEL * 2);
    for p in 0..panels {
        let (a, b) = (bp[p], bp[p + 1]);
        for (x, w) in gx.iter().zip(&gw) {
            let s = 0.5 * (a + b) + 0.5 * (b - a) * x;
            let ws = 0.5 * (b - a) * w;
            // upper ray ζ = c♭/2 + (1+i)s with factor (1+i), lower ζ = c♭/2 + (1−i)s with (−1+i)
            nodes.push((c(half + s, s), c(1.0, 1.0) * ws));
            nodes.push((c(half + s, -s), c(-1.0, 1.0) * ws));
        }
    }
    let terms: Vec<Vec<C64>> = nodes
        .par_iter()
        .map(|(zeta, w)| -> Result<Vec<C64>> {
            let lu = BandedLu::factor_tridiag(&op.matrix.shifted(*zeta, &op.q0))?;
            let x = lu.solve(phi);
            let s = (-zeta * t).exp() * w / c(0.0, 2.0 * PI);
            Ok(x.into_iter().map(|v| v * s).collect())
        })
        .collect::<Result<_>>()?;
    let mut out = vec![ZERO; phi.len()];
    for term in &terms {
        for (o, v) in out.iter_mut().zip(term) {
            *o += v;
        }
    }
    Ok(out)
}

// ─── Duhamel ───

/// Source F sampled on the uniform grid t_j = j·dt, j = 0..len.
#[derive(Clone, Debug)]
pub struct TimeSamples {
    pub dt: f64,
    pub values: Vec<Vec<C64>>,
}

impl TimeSamples {
    pub fn from_fn(dt: f64, steps: usize, f: impl Fn(f64) -> Vec<C64>) -> Self {
        TimeSamples { dt, values: (0..=steps).map(|j| f(j as f64 * dt)).collect() }
    }

    pub fn horizon(&self) -> f64 {
        self.dt * (self.values.len() - 1) as f64
    }

    /// Largest second difference / 8 relative to the largest sample.
    pub fn interpolation_estimate(&self) -> (f64, f64) {
        let fmax = self.values.iter().map(|v| linalg::vnorm(v)).fold(0.0, f64::max);
        let mut est: f64 = 0.0;
        for j in 1..self.values.len().saturating_sub(1) {
            let d: f64 = self.values[j + 1]
                .iter()
                .zip(&self.values[j])
                .zip(&self.values[j - 1])
                .map(|((a, b), cc)| (a - b * 2.0 + cc).norm_sqr())
                .sum::<f64>()
                .sqrt();
            est = est.max(d / 8.0);
        }
        (est, fmax)
    }
}

/// (e^z − 1)/z.
fn phi1(z: f64) -> f64 {
    if z.abs() < 1e-5 {
        1.0 + z / 2.0 + z * z / 6.0
    } else {
        z.exp_m1() / z
    }
}

/// (e^z − 1 − z)/z².
fn phi2(z: f64) -> f64 {
    if z.abs() < 1e-3 {
        0.5 + z / 6.0 + z * z / 24.0 + z * z * z / 120.0
    } else {
        (z.exp_m1() - z) / (z * z)
    }
}

/// u(t) = E(t)φ + ∫₀ᵗ E(t−s)F(s) ds with F piecewise linear in s, at each requested time.
pub fn duhamel_solve(fact: &SpectralFactorization, phi: &[C64], source: &TimeSamples, times: &[f64]) -> Result<Vec<Vec<C64>>> {
    let tmax = times.iter().copied().fold(0.0, f64::max);
    if source.values.is_empty() || source.horizon() < tmax * (1.0 - 1e-12) {
        return Err(HomogError::InvalidInput(format!("source covers [0, {}] but t = {tmax} requested", source.horizon())));
    }
    let (est, fmax) = source.interpolation_estimate();
    if est > 1e-6 * fmax {
        return Err(HomogError::TimeGridTooCoarse { estimate: est, limit: 1e-6 * fmax });
    }
    let c0 = fact.project(phi);
    let coefs: Vec<Vec<C64>> = source.values.par_iter().map(|v| fact.project(v)).collect();
    let dt = source.dt;
    let out = times
        .iter()
        .map(|&t| {
            let mut acc: Vec<C64> = fact.tilde_semigroup(t, &c0);
            let full = ((t / dt) * (1.0 + 1e-12)).floor() as usize;
            let mut segs: Vec<(f64, f64, Vec<C64>, Vec<C64>)> = (0..full.min(coefs.len() - 1))
                .map(|j| (j as f64 * dt, (j + 1) as f64 * dt, coefs[j].clone(), coefs[j + 1].clone()))
                .collect();
            let a = full as f64 * dt;
            if t - a > 1e-14 * t.max(1.0) && full + 1 < coefs.len() {
                let theta = (t - a) / dt;
                let end: Vec<C64> = coefs[full].iter().zip(&coefs[full + 1]).map(|(x, y)| x + (y - x) * theta).collect();
                segs.push((a, t, coefs[full].clone(), end));
            }
            for (a, b, fa, fb) in &segs {
                let len = b - a;
                for (k, m) in fact.mu.iter().enumerate() {
                    let decay = (-m * (t - b)).exp();
                    if decay == 0.0 {
                        continue;
                    }
                    let z = -m * len;
                    acc[k] += decay * len * (fa[k] * phi1(z) + (fb[k] - fa[k]) * phi2(z));
                }
            }
            fact.expand(&acc)
        })
        .collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{scalar_fn, CoefficientModel, CoefficientSet, SymbolB};
    use crate::domain_ops::{assemble_beps, DomainGrid};
    use crate::linear_map::LinearMap;
    use crate::periodic_cell::{Lattice, PeriodicGrid};

    fn heat(h_inv: usize) -> (DiscreteOperator, DomainGrid) {
        let m = CoefficientModel {
            lattice: Lattice::unit(1),
            symbol: SymbolB::gradient(1),
            g: scalar_fn(|_| 1.0),
            a: vec![scalar_fn(|_| 0.0)],
            q: scalar_fn(|_| 0.0),
            q0: scalar_fn(|_| 1.0),
            lambda: 0.0,
        };
        let set: CoefficientSet = m.sample(&PeriodicGrid::vertex(Lattice::unit(1), vec![8]).unwrap()).unwrap();
        let grid = DomainGrid::for_epsilon(1.0, 8.0 / h_inv as f64, 8, 1.0).unwrap();
        (assemble_beps(&set, &grid).unwrap(), grid)
    }

    fn sine(grid: &DomainGrid) -> Vec<C64> {
        (1..grid.intervals()).map(|i| c((PI * grid.x(i as isize)).sin(), 0.0)).collect()
    }

    #[test]
    fn gauss_legendre_exact() {
        let (x, w) = gauss_legendre(16);
        let s: f64 = w.iter().sum();
        assert!((s - 2.0).abs() < 1e-14);
        let m30: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(30)).sum();
        assert!((m30 - 2.0 / 31.0).abs() < 1e-14);
    }

    #[test]
    fn heat_mode_decay() {
        let (op, grid) = heat(256);
        let fact = factorize(&op).unwrap();
        assert!(fact.residual < 1e-9);
        assert!((fact.mu[0] - PI * PI).abs() < 0.01 * PI * PI);
        let phi = sine(&grid);
        let t = 0.1;
        let u = fact.semigroup_map(t).apply(&phi);
        let e = (-PI * PI * t).exp();
        let err = u.iter().zip(&phi).map(|(a, b)| (a - b * e).norm()).fold(0.0, f64::max);
        assert!(err < 1e-4, "{err}");
        let e0 = fact.semigroup_matrix(0.0);
        assert!((linalg::max_abs(&(&e0 - &linalg::identity(fact.dim())))) < 1e-12);
    }

    #[test]
    fn contour_matches_eigen() {
        let (op, grid) = heat(64);
        let fact = factorize(&op).unwrap();
        let phi: Vec<C64> = (1..grid.intervals()).map(|i| c(grid.x(i as isize).powi(2), 0.3)).collect();
        let spec = ContourSpec { c_flat: 0.25, t_max: None, nodes_per_ray: 64 };
        for t in [0.1, 1.0] {
            let a = contour_semigroup(&op, &spec, 1.0, t, &phi).unwrap();
            let b = fact.semigroup_map(t).apply(&phi);
            let rel = linalg::vnorm(&a.iter().zip(&b).map(|(x, y)| x - y).collect::<Vec<_>>()) / linalg::vnorm(&b);
            assert!(rel < 1e-6, "t={t} rel={rel}");
        }
        let short = ContourSpec { t_max: Some(5.0), ..spec };
        assert!(matches!(contour_semigroup(&op, &short, 1.0, 0.1, &phi), Err(HomogError::TailTooLarge { .. })));
    }

    #[test]
    fn duhamel_constant_source() {
        let (op, grid) = heat(64);
        let fact = factorize(&op).unwrap();
        let f = sine(&grid);
        let src = TimeSamples::from_fn(0.05, 20, |_| f.clone());
        let zero = vec![ZERO; f.len()];
        let u = duhamel_solve(&fact, &zero, &src, &[0.3, 1.0]).unwrap();
        // exact for an eigenvector: (1 − e^{−μt})/μ
        let mu = fact.mu[0];
        for (k, t) in [0.3, 1.0].iter().enumerate() {
            let s = (1.0 - (-mu * t).exp()) / mu;
            let err = u[k].iter().zip(&f).map(|(a, b)| (a - b * s).norm()).fold(0.0, f64::max);
            assert!(err < 1e-8, "{err}");
        }
    }
}
