//! First-order approximations v_ε = u₀ + εK u₀ and flux approximations, smoothed and plain.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cell_problems::CellData;
use crate::domain_ops::{
    centered_b_extended, embed_interior, extension_matrix, flux_to_nodes, forward_b_closed, forward_b_extended,
    midpoint_average_closed, midpoint_average_extended, multiplier_flux, multiplier_nodes, onesided_b_closed,
    operator_norm, steklov_matrix, subdomain_mask, DomainGrid, LinearMapNorm, NormTag, Space, Stagger,
};
use crate::error::{HomogError, Result};
use crate::linalg::{C64, ZERO};
use crate::linear_map::{Compose, Csr, LinearMap, MapRef};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Smoothed,
    Plain,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Subdomain {
    Full,
    Interior { delta: f64 },
}

// ─── Operators at fixed ε ───

/// Sparse pieces of the corrector and flux maps on one grid.
/// Corrector maps go Interior(n) → Closed(n); flux maps go Interior(n) → Flux(m).
pub struct CorrectorOps {
    pub grid: DomainGrid,
    pub eps: f64,
    pub n: usize,
    pub m: usize,
    pub kd_smoothed: Arc<Csr>,
    pub kd_plain: Arc<Csr>,
    pub flux_true: Arc<Csr>,
    pub flux_smoothed: Arc<Csr>,
    pub flux_plain: Arc<Csr>,
    pub embed: Arc<Csr>,
}

impl CorrectorOps {
    pub fn new(grid: &DomainGrid, cell: &CellData, eps: f64) -> Result<Self> {
        if cell.symbol.d() != 1 {
            return Err(HomogError::Unsupported("correctors on a domain are one-dimensional".into()));
        }
        let period = cell.nodes.lattice().lengths()[0];
        let b = &cell.symbol;
        let (n, m) = (b.n(), b.m());
        let embed = embed_interior(grid, n);
        let ext = extension_matrix(grid, n).matmul(&embed);
        let lam = multiplier_nodes(grid, &cell.lambda_corr)?;
        let lam_t = multiplier_nodes(grid, &cell.lambda_tilde)?;

        // Λ^ε S_ε b(D) P_O + Λ̃^ε S_ε P_O, b(D_h) taken before S_ε
        let s_m = steklov_matrix(grid, eps, period, m, Stagger::Nodes)?;
        let s_n = steklov_matrix(grid, eps, period, n, Stagger::Nodes)?;
        let kd_smoothed = lam
            .matmul(&s_m.matmul(&centered_b_extended(grid, b).matmul(&ext)))
            .add(&lam_t.matmul(&s_n.matmul(&ext)));
        let kd_plain = lam.matmul(&onesided_b_closed(grid, b).matmul(&embed)).add(&lam_t.matmul(&embed));

        let g_eps = multiplier_flux(grid, &cell.g_flux)?;
        let fb = forward_b_closed(grid, b).matmul(&embed);
        let flux_true = g_eps.matmul(&fb);

        let gt = multiplier_flux(grid, &cell.g_tilde)?;
        let gblt = cell.g_flux.mul(&cell.b_lambda_tilde)?;
        let gbl = multiplier_flux(grid, &gblt)?;
        let sm_m = steklov_matrix(grid, eps, period, m, Stagger::Midpoints)?;
        let sm_n = steklov_matrix(grid, eps, period, n, Stagger::Midpoints)?;
        let flux_smoothed = gt
            .matmul(&sm_m.matmul(&forward_b_extended(grid, b).matmul(&ext)))
            .add(&gbl.matmul(&sm_n.matmul(&midpoint_average_extended(grid, n).matmul(&ext))));
        let flux_plain = gt.matmul(&fb).add(&gbl.matmul(&midpoint_average_closed(grid, n).matmul(&embed)));

        Ok(CorrectorOps {
            grid: grid.clone(),
            eps,
            n,
            m,
            kd_smoothed: Arc::new(kd_smoothed),
            kd_plain: Arc::new(kd_plain),
            flux_true: Arc::new(flux_true),
            flux_smoothed: Arc::new(flux_smoothed),
            flux_plain: Arc::new(flux_plain),
            embed: Arc::new(embed),
        })
    }

    pub fn kd(&self, variant: Variant) -> Arc<Csr> {
        match variant {
            Variant::Smoothed => self.kd_smoothed.clone(),
            Variant::Plain => self.kd_plain.clone(),
        }
    }

    pub fn flux(&self, variant: Variant) -> Arc<Csr> {
        match variant {
            Variant::Smoothed => self.flux_smoothed.clone(),
            Variant::Plain => self.flux_plain.clone(),
        }
    }

    /// K applied after an effective map (semigroup or resolvent of B⁰).
    pub fn corrector_map(&self, variant: Variant, effective: MapRef) -> Compose {
        Compose::new(self.kd(variant), effective)
    }

    /// Flux approximation after an effective map.
    pub fn flux_approx_map(&self, variant: Variant, effective: MapRef) -> Compose {
        Compose::new(self.flux(variant), effective)
    }

    /// p_ε = g^ε b(D_h) u_ε at the flux points.
    pub fn flux_true_map(&self, exact: MapRef) -> Compose {
        Compose::new(self.flux_true.clone(), exact)
    }
}

/// ε·K_D(t;ε)φ on the closed grid, given u₀ = f₀e^{−B̃⁰t}f₀φ.
pub fn corrector_kd(ops: &CorrectorOps, u0: &[C64]) -> Vec<C64> {
    ops.kd_smoothed.apply(u0)
}

/// Plain corrector: no extension and no smoothing, one-sided b(D_h) at the ends.
pub fn corrector_kd0(ops: &CorrectorOps, u0: &[C64]) -> Vec<C64> {
    ops.kd_plain.apply(u0)
}

pub fn flux_true(ops: &CorrectorOps, u_eps: &[C64]) -> Vec<C64> {
    ops.flux_true.apply(u_eps)
}

pub fn flux_approx(ops: &CorrectorOps, u0: &[C64], variant: Variant) -> Vec<C64> {
    ops.flux(variant).apply(u0)
}

/// ‖T‖ from L² on Interior(n) to H¹(O′) on the closed grid.
pub fn interior_norm_pack(t: &dyn LinearMap, grid: &DomainGrid, n: usize, delta: f64, seed: u64) -> Result<LinearMapNorm> {
    subdomain_mask(grid, delta)?;
    operator_norm(t, grid, Space::Interior, n, Space::Closed, NormTag::H1Sub { delta }, n, seed)
}

// ─── Bundles ───

/// One (ε, t) snapshot; grid functions on the closed grid (fluxes averaged to nodes).
#[derive(Clone, Debug, Serialize)]
pub struct CorrectorBundle {
    pub t: f64,
    pub eps: f64,
    pub variant: Variant,
    pub subdomain: Subdomain,
    pub x: Vec<f64>,
    pub u_eps: Vec<C64>,
    pub u0: Vec<C64>,
    pub k_phi: Vec<C64>,
    pub v_eps: Vec<C64>,
    pub flux_true: Vec<C64>,
    pub flux_approx: Vec<C64>,
    /// u_ε from the contour integral, closed grid, when requested.
    pub u_contour: Option<Vec<C64>>,
}

impl CorrectorBundle {
    /// Assembles the bundle from interior-node solutions u_ε and u₀.
    pub fn build(ops: &CorrectorOps, t: f64, variant: Variant, subdomain: Subdomain, u_eps: &[C64], u0: &[C64]) -> Self {
        let emb = &ops.embed;
        let k_phi = ops.kd(variant).apply(u0);
        let u0c = emb.apply(u0);
        let v_eps: Vec<C64> = u0c.iter().zip(&k_phi).map(|(a, k)| a + k * ops.eps).collect();
        let to_nodes = flux_to_nodes(&ops.grid, ops.m);
        CorrectorBundle {
            t,
            eps: ops.eps,
            variant,
            subdomain,
            x: (0..=ops.grid.intervals()).map(|i| ops.grid.x(i as isize)).collect(),
            u_eps: emb.apply(u_eps),
            u0: u0c,
            k_phi,
            v_eps,
            flux_true: to_nodes.apply(&ops.flux_true.apply(u_eps)),
            flux_approx: to_nodes.apply(&ops.flux(variant).apply(u0)),
            u_contour: None,
        }
    }

    /// CSV: x, then re/im pairs per component for u_eps, u0, v_eps, p_eps, flux_approx (and u_eps_contour).
    pub fn write_csv(&self, n: usize, m: usize, out: &mut impl Write) -> std::io::Result<()> {
        let mut cols: Vec<(&str, &Vec<C64>, usize)> = vec![
            ("u_eps", &self.u_eps, n),
            ("u0", &self.u0, n),
            ("v_eps", &self.v_eps, n),
            ("p_eps", &self.flux_true, m),
            ("flux_approx", &self.flux_approx, m),
        ];
        if let Some(uc) = &self.u_contour {
            cols.push(("u_eps_contour", uc, n));
        }
        let mut header = vec!["x".to_string()];
        for (name, _, k) in &cols {
            for c in 0..*k {
                let suffix = if *k == 1 { String::new() } else { format!("_{c}") };
                header.push(format!("{name}{suffix}_re"));
                header.push(format!("{name}{suffix}_im"));
            }
        }
        write_csv_rows(out, &header, self.x.len(), |i, row| {
            row.push(self.x[i]);
            for (_, v, k) in &cols {
                for c in 0..*k {
                    let z = v.get(i * k + c).copied().unwrap_or(ZERO);
                    row.push(z.re);
                    row.push(z.im);
                }
            }
        })
    }
}

/// Comma-separated rows with a header, LF endings, shortest round-trip float formatting.
pub fn write_csv_rows(
    out: &mut impl Write,
    header: &[String],
    rows: usize,
    mut fill: impl FnMut(usize, &mut Vec<f64>),
) -> std::io::Result<()> {
    writeln!(out, "{}", header.join(","))?;
    let mut row = Vec::with_capacity(header.len());
    for i in 0..rows {
        row.clear();
        fill(i, &mut row);
        let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell_problems::assemble_cell_data;
    use crate::coefficients::{scalar_fn, CoefficientModel, SymbolB};
    use crate::domain_ops::{assemble_b0, DomainGrid};
    use crate::evolution::factorize;
    use crate::linalg::c;
    use crate::periodic_cell::{CellScheme, Lattice, PeriodicGrid};
    use std::f64::consts::PI;

    fn cell(g: impl Fn(f64) -> f64 + Send + Sync + 'static, n_per: usize) -> CellData {
        let m = CoefficientModel {
            lattice: Lattice::unit(1),
            symbol: SymbolB::gradient(1),
            g: scalar_fn(move |y| g(y[0])),
            a: vec![scalar_fn(|_| 0.0)],
            q: scalar_fn(|_| 0.0),
            q0: scalar_fn(|_| 1.0),
            lambda: 0.0,
        };
        let set = m.sample(&PeriodicGrid::vertex(Lattice::unit(1), vec![n_per]).unwrap()).unwrap();
        assemble_cell_data(&set, 1.0, CellScheme::Staggered).unwrap()
    }

    #[test]
    fn constant_coefficients_have_no_corrector() {
        let cd = cell(|_| 1.5, 8);
        let grid = DomainGrid::for_epsilon(1.0, 0.125, 8, 1.0).unwrap();
        let ops = CorrectorOps::new(&grid, &cd, 0.125).unwrap();
        let u: Vec<C64> = (0..grid.interior()).map(|i| c((i as f64).sin(), 0.0)).collect();
        assert!(corrector_kd(&ops, &u).iter().all(|v| v.norm() < 1e-12));
        assert!(corrector_kd0(&ops, &u).iter().all(|v| v.norm() < 1e-12));
        // flux approximation equals g·b(D)u₀
        let a = flux_approx(&ops, &u, Variant::Plain);
        let b = flux_true(&ops, &u);
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).norm() < 1e-10));
    }

    #[test]
    fn smoothed_corrector_matches_straight_line() {
        let n_per = 16;
        let eps = 0.125;
        let cd = cell(|y| 1.0 / (2.0 + (2.0 * PI * y).sin()), n_per);
        let grid = DomainGrid::for_epsilon(1.0, eps, n_per, 1.0).unwrap();
        let ops = CorrectorOps::new(&grid, &cd, eps).unwrap();
        let b0 = assemble_b0(&cd, &grid).unwrap();
        let fact = factorize(&b0).unwrap();
        let phi: Vec<C64> = (1..grid.intervals()).map(|i| c((PI * grid.x(i as isize)).sin(), 0.0)).collect();
        let u0 = fact.semigroup_map(0.25).apply(&phi);
        let k = corrector_kd(&ops, &u0);

        // independent composition, scalar loops
        let mm = grid.intervals() as isize;
        let h = grid.h();
        let closed = |i: isize| if i <= 0 || i >= mm { 0.0 } else { u0[(i - 1) as usize].re };
        let chi = |e: isize| crate::domain_ops::extension_cutoff(&grid, grid.x(e));
        let ext = |e: isize| -> f64 {
            if (0..=mm).contains(&e) {
                return closed(e);
            }
            let (j, left) = if e < 0 { (-e, true) } else { (e - mm, false) };
            if 3 * j >= mm {
                return 0.0;
            }
            let at = |k: isize| if left { closed(k * j) } else { closed(mm - k * j) };
            chi(e) * (6.0 * at(1) - 8.0 * at(2) + 3.0 * at(3))
        };
        // D = −i d/dx, so b(D)u = −i u'
        let du = |e: isize| -> f64 {
            let up = if e + 1 <= 2 * mm { ext(e + 1) } else { 0.0 };
            let dn = if e - 1 >= -mm { ext(e - 1) } else { 0.0 };
            (up - dn) / (2.0 * h)
        };
        let half = (n_per / 2) as isize;
        for i in 0..=mm {
            let mut avg = 0.0;
            for k in -half..=half {
                let w = if k.abs() == half { 0.5 } else { 1.0 };
                avg += w * du(i + k);
            }
            avg /= n_per as f64;
            let lam = cd.lambda_corr.at((i as usize) % n_per)[(0, 0)];
            let expect = lam * c(0.0, -avg);
            assert!((k[i as usize] - expect).norm() < 1e-9, "node {i}: {} vs {}", k[i as usize], expect);
        }
    }

    #[test]
    fn bundle_identity_and_csv() {
        let cd = cell(|y| 1.0 / (2.0 + (2.0 * PI * y).sin()), 8);
        let grid = DomainGrid::for_epsilon(1.0, 0.125, 8, 1.0).unwrap();
        let ops = CorrectorOps::new(&grid, &cd, 0.125).unwrap();
        let u: Vec<C64> = (1..grid.intervals()).map(|i| c((PI * grid.x(i as isize)).sin(), 0.0)).collect();
        let b = CorrectorBundle::build(&ops, 0.25, Variant::Smoothed, Subdomain::Full, &u, &u);
        for i in 0..b.x.len() {
            assert_eq!(b.v_eps[i], b.u0[i] + b.k_phi[i] * 0.125);
        }
        let mut buf = Vec::new();
        b.write_csv(1, 1, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x,u_eps_re,u_eps_im,u0_re"));
        assert_eq!(text.lines().count(), grid.intervals() + 2);
        assert!(matches!(interior_norm_pack(&*ops.embed, &grid, 1, 0.5, 0), Err(HomogError::EmptySubdomain(_))));
    }
}
