//! Cell problems for Λ and Λ̃ and the effective constants built from them.

use rayon::prelude::*;
use serde::Serialize;

use crate::coefficients::{CoefficientSet, SymbolB};
use crate::error::{HomogError, Result};
use crate::linalg::{self, CMat, C64, I, ZERO};
use crate::periodic_cell::{mean_value, spectral_derivative, underline_mean, CellOperator, CellScheme, PeriodicField, PeriodicGrid};

// ─── Corrector solves ───

/// Grid on which b(D)u lives for a scheme: the nodes themselves or the staggered flux points.
pub fn flux_grid(nodes: &PeriodicGrid, scheme: CellScheme) -> PeriodicGrid {
    match scheme {
        CellScheme::Spectral => nodes.clone(),
        CellScheme::Staggered => nodes.dual(),
    }
}

/// Solves b(D)*g(b(D)Λ + 1_m) = 0 column by column; Λ is n×m on `nodes`.
pub fn solve_lambda(g: &PeriodicField, b: &SymbolB, nodes: &PeriodicGrid, scheme: CellScheme) -> Result<PeriodicField> {
    let op = CellOperator::new(scheme, b, g, nodes)?;
    let (m, n) = (b.m(), b.n());
    let len = nodes.len();
    let cols: Vec<Vec<C64>> = (0..m)
        .into_par_iter()
        .map(|k| {
            // flux of the constant e_k is g e_k at every flux point
            let w: Vec<C64> = (0..len).flat_map(|i| (0..m).map(move |r| (i, r))).map(|(i, r)| g.entry(i, r, k)).collect();
            let rhs: Vec<C64> = op.divergence(&w).into_iter().map(|v| -v).collect();
            op.solve(&rhs)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut data = vec![ZERO; len * n * m];
    for (k, col) in cols.iter().enumerate() {
        for i in 0..len {
            for r in 0..n {
                data[(i * n + r) * m + k] = col[i * n + r];
            }
        }
    }
    PeriodicField::from_data(nodes, n, m, data)
}

/// Right-hand side −Σ_j D_j a_j* (n×n) for the Λ̃ problem.
pub fn lambda_tilde_rhs(a: &[PeriodicField], nodes: &PeriodicGrid, scheme: CellScheme) -> Result<PeriodicField> {
    let n = a[0].shape().0;
    let len = nodes.len();
    let mut out = PeriodicField::zeros(nodes, n, n);
    for (j, aj) in a.iter().enumerate() {
        let astar = aj.adjoint();
        for r in 0..n {
            for cidx in 0..n {
                let comp = astar.component(r, cidx);
                let d: Vec<C64> = match scheme {
                    CellScheme::Spectral => spectral_derivative(nodes, &comp, j).into_iter().map(|v| -I * v).collect(),
                    CellScheme::Staggered => {
                        let h = nodes.step(0);
                        (0..len).map(|i| -I * (comp[(i + 1) % len] - comp[(i + len - 1) % len]) / (2.0 * h)).collect()
                    }
                };
                let mut cur = out.component(r, cidx);
                for i in 0..len {
                    cur[i] -= d[i];
                }
                out.set_component(r, cidx, &cur);
            }
        }
    }
    Ok(out)
}

/// Solves b(D)*g b(D)Λ̃ = −Σ_j D_j a_j*; Λ̃ is n×n on `nodes`.
pub fn solve_lambda_tilde(
    g: &PeriodicField,
    b: &SymbolB,
    a: &[PeriodicField],
    nodes: &PeriodicGrid,
    scheme: CellScheme,
) -> Result<PeriodicField> {
    if a.len() != b.d() {
        return Err(HomogError::InvalidInput(format!("need {} first-order coefficients", b.d())));
    }
    let rhs = lambda_tilde_rhs(a, nodes, scheme)?;
    crate::periodic_cell::periodic_elliptic_solve(g, b, &rhs, scheme)
}

/// b(D)U for a matrix-valued field U (n×k), returned as an m×k field on the flux grid.
pub fn apply_b(g: &PeriodicField, b: &SymbolB, u: &PeriodicField, scheme: CellScheme) -> Result<PeriodicField> {
    let nodes = u.grid().clone();
    let op = CellOperator::new(scheme, b, g, &nodes)?;
    let (n, k) = u.shape();
    let m = b.m();
    let len = nodes.len();
    let fg = flux_grid(&nodes, scheme);
    let mut data = vec![ZERO; len * m * k];
    for cidx in 0..k {
        let col = u.column(cidx).to_vector();
        debug_assert_eq!(col.len(), len * n);
        let w = op.gradient(&col);
        for i in 0..len {
            for r in 0..m {
                data[(i * m + r) * k + cidx] = w[i * m + r];
            }
        }
    }
    PeriodicField::from_data(&fg, m, k, data)
}

/// g̃ = g(b(D)Λ + 1_m) on the flux grid and g⁰ = mean(g̃), Hermitized.
pub fn effective_tensor(g: &PeriodicField, b_lambda: &PeriodicField) -> Result<(PeriodicField, CMat)> {
    let m = g.shape().0;
    let shifted = b_lambda.add(&PeriodicField::constant(b_lambda.grid(), &linalg::identity(m)))?;
    let gt = g.mul(&shifted)?;
    let g0 = linalg::hermitize(&mean_value(&gt));
    Ok((gt, g0))
}

/// V = mean((bΛ)* g bΛ̃), W = mean((bΛ̃)* g bΛ̃) (Hermitized).
pub fn lower_order_constants(g: &PeriodicField, b_lambda: &PeriodicField, b_lambda_tilde: &PeriodicField) -> Result<(CMat, CMat)> {
    let gbt = g.mul(b_lambda_tilde)?;
    let v = mean_value(&b_lambda.adjoint().mul(&gbt)?);
    let w = linalg::hermitize(&mean_value(&b_lambda_tilde.adjoint().mul(&gbt)?));
    Ok((v, w))
}

// ─── Cell data ───

/// Every cell-problem output and effective constant.
#[derive(Clone, Debug)]
pub struct CellData {
    pub scheme: CellScheme,
    pub symbol: SymbolB,
    pub nodes: PeriodicGrid,
    /// g on the flux grid, as used by the scheme.
    pub g_flux: PeriodicField,
    pub lambda_corr: PeriodicField,
    pub lambda_tilde: PeriodicField,
    pub b_lambda: PeriodicField,
    pub b_lambda_tilde: PeriodicField,
    pub g_tilde: PeriodicField,
    pub g0: CMat,
    pub v: CMat,
    pub w: CMat,
    pub a_bar: Vec<CMat>,
    pub q_bar: CMat,
    pub q0_bar: CMat,
    pub f0: CMat,
    pub lambda: f64,
    pub c_flat: f64,
    pub alpha0: f64,
    pub g_inv_max: f64,
    pub q0_max: f64,
    pub diameter: f64,
}

/// Picks the g samples a scheme works with.
pub fn scheme_g(coeffs: &CoefficientSet, scheme: CellScheme) -> Result<&PeriodicField> {
    match scheme {
        CellScheme::Spectral => Ok(&coeffs.g),
        CellScheme::Staggered => coeffs
            .g_dual
            .as_ref()
            .ok_or_else(|| HomogError::InvalidInput("staggered scheme needs g sampled on the dual grid".into())),
    }
}

/// c♭ = ¼ α₀ ‖g⁻¹‖⁻¹ ‖Q₀‖⁻¹ diam⁻².
pub fn c_flat(alpha0: f64, g_inv_max: f64, q0_max: f64, diameter: f64) -> f64 {
    0.25 * alpha0 / (g_inv_max * q0_max * diameter * diameter)
}

pub fn assemble_cell_data(coeffs: &CoefficientSet, domain_diameter: f64, scheme: CellScheme) -> Result<CellData> {
    if !(domain_diameter.is_finite() && domain_diameter > 0.0) {
        return Err(HomogError::InvalidInput(format!("domain diameter must be positive, got {domain_diameter}")));
    }
    let nodes = coeffs.grid().clone();
    let b = &coeffs.symbol;
    let g = scheme_g(coeffs, scheme)?;
    let lambda_corr = solve_lambda(g, b, &nodes, scheme)?;
    let lambda_tilde = solve_lambda_tilde(g, b, &coeffs.a, &nodes, scheme)?;
    let b_lambda = apply_b(g, b, &lambda_corr, scheme)?;
    let b_lambda_tilde = apply_b(g, b, &lambda_tilde, scheme)?;
    let (g_tilde, g0) = effective_tensor(g, &b_lambda)?;
    let (v, w) = lower_order_constants(g, &b_lambda, &b_lambda_tilde)?;
    let a_bar = coeffs.a.iter().map(|aj| Ok(linalg::hermitize(&mean_value(&aj.add(&aj.adjoint())?)))).collect::<Result<Vec<_>>>()?;
    let q_bar = linalg::hermitize(&mean_value(&coeffs.q));
    let q0_bar = linalg::hermitize(&mean_value(&coeffs.q0));
    let f0 = linalg::herm_inv_sqrt(&q0_bar)?;
    let alpha0 = b.alpha0();
    let g_inv_max = coeffs.g_inv_max()?;
    let q0_max = coeffs.q0.max_norm()?;
    let cf = c_flat(alpha0, g_inv_max, q0_max, domain_diameter);
    Ok(CellData {
        scheme,
        symbol: b.clone(),
        nodes,
        g_flux: g.clone(),
        lambda_corr,
        lambda_tilde,
        b_lambda,
        b_lambda_tilde,
        g_tilde,
        g0,
        v,
        w,
        a_bar,
        q_bar,
        q0_bar,
        f0,
        lambda: coeffs.lambda,
        c_flat: cf,
        alpha0,
        g_inv_max,
        q0_max,
        diameter: domain_diameter,
    })
}

/// Smallest eigenvalues of g⁰ − underline(g) and overline(g) − g⁰.
pub fn voigt_reuss_margins(g: &PeriodicField, g0: &CMat) -> Result<(f64, f64)> {
    let under = linalg::hermitize(&underline_mean(g)?);
    let over = linalg::hermitize(&mean_value(g));
    let lo = linalg::herm_eigenvalues(&(g0 - &under))?[0];
    let hi = linalg::herm_eigenvalues(&(&over - g0))?[0];
    Ok((lo, hi))
}

/// Residuals of the zero-corrector relations: max |b(D)* g e_k| and max |Σ D_j a_j*|.
pub fn zero_corrector_residuals(coeffs: &CoefficientSet, scheme: CellScheme) -> Result<(f64, f64)> {
    let nodes = coeffs.grid().clone();
    let b = &coeffs.symbol;
    let g = scheme_g(coeffs, scheme)?;
    let op = CellOperator::new(scheme, b, g, &nodes)?;
    let m = b.m();
    let len = nodes.len();
    let mut rg: f64 = 0.0;
    for k in 0..m {
        let w: Vec<C64> = (0..len).flat_map(|i| (0..m).map(move |r| (i, r))).map(|(i, r)| g.entry(i, r, k)).collect();
        rg = rg.max(op.divergence(&w).iter().fold(0.0, |acc, v| acc.max(v.norm())));
    }
    let ra = lambda_tilde_rhs(&coeffs.a, &nodes, scheme)?.max_abs();
    Ok((rg, ra))
}

/// Max deviation of g̃ from its mean; zero in the special case g⁰ = underline(g).
pub fn g_tilde_variation(cell: &CellData) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..cell.g_tilde.grid().len() {
        worst = worst.max(linalg::max_abs(&(&cell.g_tilde.at(i) - &cell.g0)));
    }
    worst
}

// ─── JSON summary ───

pub type MatJson = Vec<Vec<[f64; 2]>>;

#[derive(Clone, Debug, Serialize)]
pub struct FieldJson {
    pub rows: usize,
    pub cols: usize,
    pub coords: Vec<Vec<f64>>,
    /// values[node][row][col] = [re, im]
    pub values: Vec<MatJson>,
}

impl FieldJson {
    pub fn from_field(f: &PeriodicField) -> Self {
        let (rows, cols) = f.shape();
        let g = f.grid();
        FieldJson {
            rows,
            cols,
            coords: (0..g.len()).map(|i| g.coords(i)).collect(),
            values: (0..g.len()).map(|i| linalg::to_rows(&f.at(i))).collect(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CellSummary {
    pub scheme: CellScheme,
    pub d: usize,
    pub m: usize,
    pub n: usize,
    pub samples: Vec<usize>,
    pub lattice: Vec<f64>,
    pub g0: MatJson,
    pub v: MatJson,
    pub w: MatJson,
    pub a_bar: Vec<MatJson>,
    pub q_bar: MatJson,
    pub q0_bar: MatJson,
    pub f0: MatJson,
    pub lambda: f64,
    pub c_flat: f64,
    pub alpha0: f64,
    pub alpha1: f64,
    pub g_inv_max: f64,
    pub q0_max: f64,
    pub diameter: f64,
    pub voigt_reuss_lower_margin: f64,
    pub voigt_reuss_upper_margin: f64,
    pub lambda_mean_abs: f64,
    pub lambda_tilde_mean_abs: f64,
}

impl CellData {
    pub fn summary(&self) -> Result<CellSummary> {
        let (lo, hi) = voigt_reuss_margins(&self.g_flux, &self.g0)?;
        Ok(CellSummary {
            scheme: self.scheme,
            d: self.symbol.d(),
            m: self.symbol.m(),
            n: self.symbol.n(),
            samples: self.nodes.sizes().to_vec(),
            lattice: self.nodes.lattice().lengths().to_vec(),
            g0: linalg::to_rows(&self.g0),
            v: linalg::to_rows(&self.v),
            w: linalg::to_rows(&self.w),
            a_bar: self.a_bar.iter().map(linalg::to_rows).collect(),
            q_bar: linalg::to_rows(&self.q_bar),
            q0_bar: linalg::to_rows(&self.q0_bar),
            f0: linalg::to_rows(&self.f0),
            lambda: self.lambda,
            c_flat: self.c_flat,
            alpha0: self.alpha0,
            alpha1: self.symbol.alpha1(),
            g_inv_max: self.g_inv_max,
            q0_max: self.q0_max,
            diameter: self.diameter,
            voigt_reuss_lower_margin: lo,
            voigt_reuss_upper_margin: hi,
            lambda_mean_abs: linalg::max_abs(&mean_value(&self.lambda_corr)),
            lambda_tilde_mean_abs: linalg::max_abs(&mean_value(&self.lambda_tilde)),
        })
    }

    /// First-order coefficients K_j = ā_j − b_j*V − V*b_j of the effective operator.
    pub fn effective_first_order(&self) -> Vec<CMat> {
        self.symbol
            .b()
            .iter()
            .zip(&self.a_bar)
            .map(|(bj, ab)| {
                let bv = &linalg::adjoint(bj) * &self.v;
                linalg::hermitize(&(&(ab - &bv) - &linalg::adjoint(&bv)))
            })
            .collect()
    }

    /// Zero-order coefficient −W + Q̄ (λQ̄₀ added separately).
    pub fn effective_zero_order(&self) -> CMat {
        linalg::hermitize(&(&self.q_bar - &self.w))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::c;
    use crate::periodic_cell::Lattice;
    use std::f64::consts::PI;

    fn grid1(n: usize) -> PeriodicGrid {
        PeriodicGrid::new(Lattice::unit(1), vec![n]).unwrap()
    }

    #[test]
    fn harmonic_mean_case_spectral() {
        let grid = grid1(64);
        let g = PeriodicField::scalar_from_fn(&grid, |y| 1.0 / (2.0 + (2.0 * PI * y[0]).sin())).unwrap();
        let b = SymbolB::gradient(1);
        let lam = solve_lambda(&g, &b, &grid, CellScheme::Spectral).unwrap();
        let bl = apply_b(&g, &b, &lam, CellScheme::Spectral).unwrap();
        let (gt, g0) = effective_tensor(&g, &bl).unwrap();
        assert!((g0[(0, 0)] - c(0.5, 0.0)).norm() < 1e-8);
        // DΛ = g⁰/g − 1 = sin/2 with D = −i∂ ⇒ Λ = −i·cos/(4π)
        for i in 0..grid.len() {
            let y = grid.coords(i)[0];
            assert!((lam.entry(i, 0, 0) - c(0.0, -(2.0 * PI * y).cos() / (4.0 * PI))).norm() < 1e-9);
            assert!((gt.entry(i, 0, 0) - c(0.5, 0.0)).norm() < 1e-8);
        }
    }

    #[test]
    fn harmonic_mean_case_staggered() {
        let nodes = PeriodicGrid::vertex(Lattice::unit(1), vec![16]).unwrap();
        let dual = nodes.dual();
        let g = PeriodicField::scalar_from_fn(&dual, |y| 1.0 / (2.0 + (2.0 * PI * y[0]).sin())).unwrap();
        let b = SymbolB::gradient(1);
        let lam = solve_lambda(&g, &b, &nodes, CellScheme::Staggered).unwrap();
        let bl = apply_b(&g, &b, &lam, CellScheme::Staggered).unwrap();
        let (gt, g0) = effective_tensor(&g, &bl).unwrap();
        let under = underline_mean(&g).unwrap();
        assert!((g0[(0, 0)] - under[(0, 0)]).norm() < 1e-10);
        // harmonic mean of the dual samples; trapezoid on a periodic smooth integrand is spectrally exact
        assert!((g0[(0, 0)].re - 0.5).abs() < 1e-8);
        for i in 0..16 {
            assert!((gt.entry(i, 0, 0) - g0[(0, 0)]).norm() < 1e-9);
        }
    }

    #[test]
    fn lambda_tilde_single_mode() {
        let grid = grid1(32);
        let one = PeriodicField::scalar_from_fn(&grid, |_| 1.0).unwrap();
        let a = PeriodicField::scalar_from_fn(&grid, |y| (2.0 * PI * y[0]).cos()).unwrap();
        let b = SymbolB::gradient(1);
        let lt = solve_lambda_tilde(&one, &b, &[a.clone()], &grid, CellScheme::Spectral).unwrap();
        // −Λ̃'' = −D cos = i ∂cos = −2πi sin ⇒ Λ̃ = −i sin/(2π)
        for i in 0..grid.len() {
            let y = grid.coords(i)[0];
            assert!((lt.entry(i, 0, 0) - c(0.0, -(2.0 * PI * y).sin() / (2.0 * PI))).norm() < 1e-10);
        }
        // W by definition versus Parseval: |bΛ̃|² = cos²(2πy) ⇒ W = 1/2
        let blt = apply_b(&one, &b, &lt, CellScheme::Spectral).unwrap();
        let zero = PeriodicField::zeros(&grid, 1, 1);
        let (v, w) = lower_order_constants(&one, &zero, &blt).unwrap();
        assert!(v[(0, 0)].norm() < 1e-15);
        assert!((w[(0, 0)].re - 0.5).abs() < 1e-9);
        // doubling a doubles Λ̃
        let lt2 = solve_lambda_tilde(&one, &b, &[a.scale(c(2.0, 0.0))], &grid, CellScheme::Spectral).unwrap();
        for i in 0..grid.len() {
            assert!((lt2.entry(i, 0, 0) - lt.entry(i, 0, 0) * 2.0).norm() < 1e-12);
        }
    }

    #[test]
    fn constant_coefficients_give_zero_correctors() {
        let grid = PeriodicGrid::new(Lattice::unit(2), vec![16, 16]).unwrap();
        let gmat = linalg::from_real_rows(&[vec![2.0, 0.3], vec![0.3, 1.0]]);
        let g = PeriodicField::constant(&grid, &gmat);
        let a = vec![PeriodicField::constant(&grid, &linalg::real_scalar(0.4)); 2];
        let q = PeriodicField::zeros(&grid, 1, 1);
        let q0 = PeriodicField::constant(&grid, &linalg::identity(1));
        let set = CoefficientSet::new(SymbolB::gradient(2), g, a, q, q0, 0.0).unwrap();
        let cell = assemble_cell_data(&set, 1.0, CellScheme::Spectral).unwrap();
        assert!(cell.lambda_corr.max_abs() < 1e-14 && cell.lambda_tilde.max_abs() < 1e-14);
        assert!(linalg::max_abs(&(&cell.g0 - &gmat)) < 1e-14);
        assert!(linalg::max_abs(&cell.v) < 1e-14 && linalg::max_abs(&cell.w) < 1e-14);
    }

    #[test]
    fn c_flat_constant_example() {
        // g = 2, Q₀ = 1, diam 1 ⇒ c♭ = α₀/(4‖g⁻¹‖) = 2/4
        assert!((c_flat(1.0, 0.5, 1.0, 1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn voigt_reuss_in_2d() {
        let grid = PeriodicGrid::new(Lattice::unit(2), vec![32, 32]).unwrap();
        let g = PeriodicField::from_fn(&grid, 2, 2, |y| {
            let s = 2.0 + (2.0 * PI * y[0]).sin() * (2.0 * PI * y[1]).cos();
            linalg::from_real_rows(&[vec![s, 0.2], vec![0.2, 1.5 + 0.5 * (2.0 * PI * y[1]).sin()]])
        })
        .unwrap();
        let b = SymbolB::gradient(2);
        let lam = solve_lambda(&g, &b, &grid, CellScheme::Spectral).unwrap();
        let bl = apply_b(&g, &b, &lam, CellScheme::Spectral).unwrap();
        let (_, g0) = effective_tensor(&g, &bl).unwrap();
        let (lo, hi) = voigt_reuss_margins(&g, &g0).unwrap();
        assert!(lo >= -1e-9 && hi >= -1e-9, "margins {lo} {hi}");
        assert!(mean_value(&lam).norm_l2() < 1e-12);
    }
}
