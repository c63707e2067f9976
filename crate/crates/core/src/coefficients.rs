//! Operator data b, g, a_j, Q, Q₀ and builders for the magnetic and ground-state families.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{HomogError, Result};
use crate::linalg::{self, c, CMat, C64, I, ZERO};
use crate::periodic_cell::{self, fft, mean_value, poisson_periodic, spectral_derivative, Lattice, PeriodicField, PeriodicGrid, TrigInterpolant};

// ─── Symbol ───

/// b(ξ) = Σ_j b_j ξ_j with b_j ∈ C^{m×n}.
#[derive(Clone, Debug)]
pub struct SymbolB {
    b: Vec<CMat>,
    alpha0: f64,
    alpha1: f64,
}

/// Sample directions on the unit sphere used to bound b(θ)*b(θ).
fn sphere_samples(d: usize) -> Vec<Vec<f64>> {
    match d {
        1 => vec![vec![1.0], vec![-1.0]],
        _ => (0..720)
            .map(|k| {
                let a = 2.0 * PI * k as f64 / 720.0;
                vec![a.cos(), a.sin()]
            })
            .collect(),
    }
}

/// Extreme eigenvalues (α₀, α₁) of b(θ)*b(θ) over the sampled unit sphere.
pub fn validate_symbol(b: &[CMat]) -> Result<(f64, f64)> {
    if b.is_empty() || b.len() > 2 {
        return Err(HomogError::InvalidInput(format!("symbol needs 1 or 2 matrices, got {}", b.len())));
    }
    let (m, n) = (b[0].nrows(), b[0].ncols());
    if b.iter().any(|bj| bj.nrows() != m || bj.ncols() != n) {
        return Err(HomogError::InvalidInput("symbol matrices must share one shape".into()));
    }
    if m < n || n == 0 {
        return Err(HomogError::InvalidInput(format!("symbol must satisfy m ≥ n ≥ 1, got m={m}, n={n}")));
    }
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for theta in sphere_samples(b.len()) {
        let mut bt = linalg::zeros(m, n);
        for (j, bj) in b.iter().enumerate() {
            bt = &bt + &linalg::scale_re(bj, theta[j]);
        }
        let ev = linalg::herm_eigenvalues(&(&linalg::adjoint(&bt) * &bt))?;
        lo = lo.min(ev[0]);
        hi = hi.max(*ev.last().unwrap());
    }
    if lo <= 1e-12 {
        return Err(HomogError::RankDeficientSymbol(lo));
    }
    Ok((lo, hi))
}

impl SymbolB {
    pub fn new(b: Vec<CMat>) -> Result<Self> {
        let (alpha0, alpha1) = validate_symbol(&b)?;
        Ok(SymbolB { b, alpha0, alpha1 })
    }

    /// b(D) = D = −i∇ acting on scalars (m = d, n = 1).
    pub fn gradient(d: usize) -> Self {
        let b = (0..d).map(|j| CMat::from_fn(d, 1, |r, _| if r == j { c(1.0, 0.0) } else { ZERO })).collect();
        SymbolB::new(b).expect("gradient symbol is elliptic")
    }

    pub fn d(&self) -> usize {
        self.b.len()
    }

    pub fn m(&self) -> usize {
        self.b[0].nrows()
    }

    pub fn n(&self) -> usize {
        self.b[0].ncols()
    }

    pub fn b(&self) -> &[CMat] {
        &self.b
    }

    pub fn alpha0(&self) -> f64 {
        self.alpha0
    }

    pub fn alpha1(&self) -> f64 {
        self.alpha1
    }

    pub fn at(&self, xi: &[f64]) -> CMat {
        let mut out = linalg::zeros(self.m(), self.n());
        for (j, bj) in self.b.iter().enumerate() {
            out = &out + &linalg::scale_re(bj, xi[j]);
        }
        out
    }
}

// ─── Coefficient models (closures) and sampled sets ───

pub type MatFn = Arc<dyn Fn(&[f64]) -> CMat + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

pub fn const_fn(m: CMat) -> MatFn {
    Arc::new(move |_| m.clone())
}

pub fn scalar_fn(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> MatFn {
    Arc::new(move |y| linalg::real_scalar(f(y)))
}

/// Γ-periodic coefficients given as closures on the cell.
#[derive(Clone)]
pub struct CoefficientModel {
    pub lattice: Lattice,
    pub symbol: SymbolB,
    pub g: MatFn,
    pub a: Vec<MatFn>,
    pub q: MatFn,
    pub q0: MatFn,
    pub lambda: f64,
}

impl CoefficientModel {
    /// Samples the closures at the nodes of `grid`; in 1D g is also sampled on the dual grid.
    pub fn sample(&self, grid: &PeriodicGrid) -> Result<CoefficientSet> {
        let (m, n) = (self.symbol.m(), self.symbol.n());
        let g = PeriodicField::from_fn(grid, m, m, |y| (self.g)(y))?;
        let a = self.a.iter().map(|aj| PeriodicField::from_fn(grid, n, n, |y| aj(y))).collect::<Result<Vec<_>>>()?;
        let q = PeriodicField::from_fn(grid, n, n, |y| (self.q)(y))?;
        let q0 = PeriodicField::from_fn(grid, n, n, |y| (self.q0)(y))?;
        let mut set = CoefficientSet::new(self.symbol.clone(), g, a, q, q0, self.lambda)?;
        if grid.dim() == 1 {
            let gd = PeriodicField::from_fn(&grid.dual(), m, m, |y| (self.g)(y))?;
            set = set.with_dual_g(gd)?;
        }
        Ok(set)
    }
}

/// Coefficients sampled on a cell grid; f = Q₀^{-1/2} pointwise.
#[derive(Clone, Debug)]
pub struct CoefficientSet {
    pub symbol: SymbolB,
    pub g: PeriodicField,
    /// g on the dual grid (flux points of the staggered scheme), when available.
    pub g_dual: Option<PeriodicField>,
    pub a: Vec<PeriodicField>,
    pub q: PeriodicField,
    pub q0: PeriodicField,
    pub f: PeriodicField,
    pub lambda: f64,
}

fn check_positive_hermitian(name: &str, f: &PeriodicField) -> Result<()> {
    if !f.is_hermitian(1e-10) {
        return Err(HomogError::InvalidInput(format!("{name} is not Hermitian")));
    }
    let lo = f.min_eigenvalue()?;
    if lo <= 0.0 {
        return Err(HomogError::InvalidInput(format!("{name} is not positive definite (min eigenvalue {lo:.3e})")));
    }
    Ok(())
}

impl CoefficientSet {
    pub fn new(
        symbol: SymbolB,
        g: PeriodicField,
        a: Vec<PeriodicField>,
        q: PeriodicField,
        q0: PeriodicField,
        lambda: f64,
    ) -> Result<Self> {
        let (m, n, d) = (symbol.m(), symbol.n(), symbol.d());
        let grid = g.grid().clone();
        if grid.dim() != d {
            return Err(HomogError::InvalidInput("coefficient grid dimension differs from symbol".into()));
        }
        if g.shape() != (m, m) {
            return Err(HomogError::InvalidInput(format!("g must be {m}×{m}")));
        }
        if a.len() != d || a.iter().any(|aj| aj.shape() != (n, n) || aj.grid() != &grid) {
            return Err(HomogError::InvalidInput(format!("need {d} first-order coefficients of shape {n}×{n}")));
        }
        for (name, fld) in [("Q", &q), ("Q0", &q0)] {
            if fld.shape() != (n, n) || fld.grid() != &grid {
                return Err(HomogError::InvalidInput(format!("{name} must be {n}×{n} on the coefficient grid")));
            }
        }
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(HomogError::InvalidInput(format!("λ must be a nonnegative real, got {lambda}")));
        }
        check_positive_hermitian("g", &g)?;
        if !q.is_hermitian(1e-10) {
            return Err(HomogError::InvalidInput("Q is not Hermitian".into()));
        }
        check_positive_hermitian("Q0", &q0)?;
        let f = q0.map(|m| linalg::herm_inv_sqrt(m).expect("Q0 checked positive definite"))?;
        Ok(CoefficientSet { symbol, g, g_dual: None, a, q, q0, f, lambda })
    }

    pub fn with_dual_g(mut self, g_dual: PeriodicField) -> Result<Self> {
        if g_dual.grid() != &self.g.grid().dual() || g_dual.shape() != self.g.shape() {
            return Err(HomogError::InvalidInput("dual g must live on the dual grid".into()));
        }
        check_positive_hermitian("g", &g_dual)?;
        self.g_dual = Some(g_dual);
        Ok(self)
    }

    pub fn grid(&self) -> &PeriodicGrid {
        self.g.grid()
    }

    /// Largest nodal ‖g⁻¹‖ over every sample of g held.
    pub fn g_inv_max(&self) -> Result<f64> {
        let mut lo = self.g.min_eigenvalue()?;
        if let Some(gd) = &self.g_dual {
            lo = lo.min(gd.min_eigenvalue()?);
        }
        Ok(1.0 / lo)
    }
}

// ─── Magnetic (ε⁻¹ potential) builder ───

/// Output of [`build_scalar_magnetic`] with the intermediate potentials.
#[derive(Clone, Debug)]
pub struct MagneticBuild {
    pub coeffs: CoefficientSet,
    pub phi: PeriodicField,
    pub xi: Vec<PeriodicField>,
    /// max |Σ_j ∂_j ξ_j + v| over the nodes.
    pub identity_residual: f64,
}

fn mean_of(f: &PeriodicField) -> C64 {
    mean_value(f)[(0, 0)]
}

fn check_potential_mean(v: &PeriodicField) -> Result<()> {
    let mean = mean_of(v).norm();
    let rms = (v.data().iter().map(|x| x.norm_sqr()).sum::<f64>() / v.grid().len() as f64).sqrt();
    if mean > 1e-10 * (1.0 + rms) {
        return Err(HomogError::NonZeroMeanPotential(mean));
    }
    Ok(())
}

/// Rewrites (D−A)*g(D−A) + ε⁻¹v + 𝒱 as b(D)*g b(D) + Σ(a_j D_j + D_j a_j*) + Q with b(D) = D.
pub fn build_scalar_magnetic(
    g: &PeriodicField,
    a_pot: &[PeriodicField],
    v: &PeriodicField,
    vpot: &PeriodicField,
) -> Result<MagneticBuild> {
    let grid = g.grid().clone();
    let d = grid.dim();
    if g.shape() != (d, d) || a_pot.len() != d || a_pot.iter().any(|f| f.shape() != (1, 1)) {
        return Err(HomogError::InvalidInput("magnetic builder expects g d×d and d scalar vector-potential fields".into()));
    }
    for (name, f) in [("g", g), ("v", v), ("V", vpot)].into_iter().chain(a_pot.iter().map(|f| ("A", f))) {
        if !f.is_real() {
            return Err(HomogError::InvalidInput(format!("{name} must be real-valued")));
        }
    }
    check_potential_mean(v)?;
    let phi = poisson_periodic(v)?;
    let phi_vals = phi.component(0, 0);
    let xi: Vec<Vec<C64>> = (0..d)
        .map(|j| spectral_derivative(&grid, &phi_vals, j).into_iter().map(|z| -C64::new(z.re, 0.0)).collect())
        .collect();
    // identity Σ ∂_j ξ_j = −v
    let mut div = vec![ZERO; grid.len()];
    for xj in xi.iter().enumerate() {
        let dj = spectral_derivative(&grid, xj.1, xj.0);
        for (s, t) in div.iter_mut().zip(dj) {
            *s += t;
        }
    }
    let vv = v.component(0, 0);
    let identity_residual = div.iter().zip(&vv).fold(0.0_f64, |m, (s, t)| m.max((s + t).norm()));

    let mut a_fields = Vec::with_capacity(d);
    for j in 0..d {
        let mut aj = PeriodicField::zeros(&grid, 1, 1);
        for i in 0..grid.len() {
            let gi = g.at(i);
            let eta: C64 = (0..d).map(|l| gi[(j, l)] * a_pot[l].entry(i, 0, 0)).sum();
            aj.set(i, &linalg::scalar(-eta + I * xi[j][i]));
        }
        a_fields.push(aj);
    }
    let mut q = PeriodicField::zeros(&grid, 1, 1);
    for i in 0..grid.len() {
        let gi = g.at(i);
        let mut form = ZERO;
        for j in 0..d {
            for l in 0..d {
                form += a_pot[j].entry(i, 0, 0) * gi[(j, l)] * a_pot[l].entry(i, 0, 0);
            }
        }
        q.set(i, &linalg::scalar(vpot.entry(i, 0, 0) + form));
    }
    let q0 = PeriodicField::constant(&grid, &linalg::identity(1));
    let xi_fields = xi.into_iter().map(|x| PeriodicField::from_data(&grid, 1, 1, x)).collect::<Result<Vec<_>>>()?;
    let coeffs = CoefficientSet::new(SymbolB::gradient(d), g.clone(), a_fields, q, q0, 0.0)?;
    Ok(MagneticBuild { coeffs, phi, xi: xi_fields, identity_residual })
}

/// Closure-level magnetic family: ξ is computed spectrally at `resolution` and interpolated.
pub fn magnetic_model(
    lattice: &Lattice,
    g: MatFn,
    a_pot: Vec<ScalarFn>,
    v: ScalarFn,
    vpot: ScalarFn,
    q0: MatFn,
    resolution: usize,
) -> Result<CoefficientModel> {
    let d = lattice.dim();
    let grid = PeriodicGrid::new(lattice.clone(), vec![resolution; d])?;
    let gf = PeriodicField::from_fn(&grid, d, d, |y| g(y))?;
    let af = a_pot.iter().map(|f| PeriodicField::scalar_from_fn(&grid, |y| f(y))).collect::<Result<Vec<_>>>()?;
    let vf = PeriodicField::scalar_from_fn(&grid, |y| v(y))?;
    let vpf = PeriodicField::scalar_from_fn(&grid, |y| vpot(y))?;
    let built = build_scalar_magnetic(&gf, &af, &vf, &vpf)?;
    let xi: Vec<TrigInterpolant> = built.xi.iter().map(|f| TrigInterpolant::new(f, 0, 0)).collect();
    let xi = Arc::new(xi);
    let a_pot = Arc::new(a_pot);
    let mut a: Vec<MatFn> = Vec::with_capacity(d);
    for j in 0..d {
        let (g, xi, a_pot) = (g.clone(), xi.clone(), a_pot.clone());
        a.push(Arc::new(move |y: &[f64]| {
            let gy = g(y);
            let eta: f64 = (0..d).map(|l| gy[(j, l)].re * a_pot[l](y)).sum();
            linalg::scalar(c(-eta, xi[j].eval(y).re))
        }));
    }
    let q: MatFn = {
        let (g, a_pot) = (g.clone(), a_pot.clone());
        Arc::new(move |y: &[f64]| {
            let gy = g(y);
            let av: Vec<f64> = (0..d).map(|l| a_pot[l](y)).collect();
            let mut form = 0.0;
            for j in 0..d {
                for l in 0..d {
                    form += av[j] * gy[(j, l)].re * av[l];
                }
            }
            linalg::real_scalar(vpot(y) + form)
        })
    };
    Ok(CoefficientModel { lattice: lattice.clone(), symbol: SymbolB::gradient(d), g, a, q, q0, lambda: 0.0 })
}

// ─── Ground-state factorisation ───

/// Lowest periodic eigenpair of D*ǧD + v̌, normalised so that mean(ω²) = 1.
#[derive(Clone, Debug)]
pub struct GroundState {
    pub omega: PeriodicField,
    pub shift: f64,
    pub gap: f64,
    /// ‖(D*ǧD + v̌ − μ)ω‖ / ‖ω‖ in the Fourier–Galerkin space.
    pub residual: f64,
    interp: TrigInterpolant,
}

impl GroundState {
    pub fn eval(&self, y: &[f64]) -> f64 {
        self.interp.eval(y).re
    }
}

/// Fourier bins retained by the Galerkin space: |frequency| < N/2 on every axis.
fn galerkin_bins(grid: &PeriodicGrid) -> Vec<usize> {
    (0..grid.len()).filter(|&idx| grid.multi_index(idx).iter().enumerate().all(|(j, &k)| !grid.is_nyquist(j, k))).collect()
}

fn signed_freq(k: usize, n: usize) -> i64 {
    if k <= n / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

pub fn ground_state_factorize(gcheck: &PeriodicField, vcheck: &PeriodicField) -> Result<GroundState> {
    let grid = gcheck.grid().clone();
    let d = grid.dim();
    if gcheck.shape() != (d, d) || vcheck.shape() != (1, 1) || vcheck.grid() != &grid {
        return Err(HomogError::InvalidInput("ground state expects ǧ d×d and scalar v̌ on one grid".into()));
    }
    if !gcheck.is_real() || !vcheck.is_real() {
        return Err(HomogError::InvalidInput("ǧ and v̌ must be real".into()));
    }
    check_positive_hermitian("ǧ", gcheck)?;
    let len = grid.len() as f64;
    let hat = |vals: Vec<C64>| -> Vec<C64> {
        let mut h = vals;
        fft(&grid, &mut h, false);
        h.into_iter().map(|z| z / len).collect()
    };
    let ghat: Vec<Vec<Vec<C64>>> =
        (0..d).map(|j| (0..d).map(|l| hat(gcheck.component(j, l))).collect()).collect();
    let vhat = hat(vcheck.component(0, 0));
    let bins = galerkin_bins(&grid);
    let nb = bins.len();
    let freqs: Vec<Vec<i64>> = bins
        .iter()
        .map(|&idx| grid.multi_index(idx).iter().enumerate().map(|(j, &k)| signed_freq(k, grid.sizes()[j])).collect())
        .collect();
    // coefficient of e^{i p·y} for an integer frequency difference p; outside the grid band → 0
    let coef = |tab: &Vec<C64>, p: &[i64]| -> C64 {
        let mut multi = Vec::with_capacity(d);
        for (j, &pj) in p.iter().enumerate() {
            let n = grid.sizes()[j] as i64;
            if pj.abs() >= n / 2 {
                return ZERO;
            }
            multi.push(pj.rem_euclid(n) as usize);
        }
        tab[grid.index(&multi)]
    };
    let kvec = |f: &[i64]| -> Vec<f64> {
        f.iter().enumerate().map(|(j, &m)| 2.0 * PI * m as f64 / grid.lattice().lengths()[j]).collect()
    };
    let mut a = CMat::zeros(nb, nb);
    for r in 0..nb {
        let kr = kvec(&freqs[r]);
        for s in 0..nb {
            let ks = kvec(&freqs[s]);
            let p: Vec<i64> = freqs[r].iter().zip(&freqs[s]).map(|(x, y)| x - y).collect();
            let mut val = coef(&vhat, &p);
            for j in 0..d {
                for l in 0..d {
                    val += kr[j] * ks[l] * coef(&ghat[j][l], &p);
                }
            }
            a[(r, s)] = val;
        }
    }
    let a = linalg::hermitize(&a);
    let ev = linalg::herm_eigenvalues(&a)?;
    let gap = ev[1] - ev[0];
    if gap < 1e-8 {
        return Err(HomogError::DegenerateGroundState(gap));
    }
    // inverse iteration with a shift below the spectrum
    let vmin = vcheck.data().iter().fold(f64::INFINITY, |m, z| m.min(z.re));
    let sigma = vmin.min(ev[0]) - 1.0;
    let shifted = &a - &linalg::scale_re(&linalg::identity(nb), sigma);
    let lu = shifted.partial_piv_lu();
    let zero_bin = freqs.iter().position(|f| f.iter().all(|&x| x == 0)).unwrap();
    let mut x = CMat::zeros(nb, 1);
    x[(zero_bin, 0)] = c(1.0, 0.0);
    let mut mu = 0.0;
    let mut residual = f64::INFINITY;
    for _ in 0..1000 {
        use faer::linalg::solvers::Solve;
        let y = lu.solve(&x);
        let nrm = linalg::fro_norm(&y);
        x = linalg::scale_re(&y, 1.0 / nrm);
        let ax = &a * &x;
        mu = linalg::dot(&col(&x), &col(&ax)).re;
        let r = &ax - &linalg::scale_re(&x, mu);
        residual = linalg::fro_norm(&r);
        if residual <= 1e-10 {
            break;
        }
    }
    if residual > 1e-8 {
        return Err(HomogError::NoConvergence { iterations: 1000, residual });
    }
    // synthesis on the grid
    let mut spec = vec![ZERO; grid.len()];
    for (r, &idx) in bins.iter().enumerate() {
        spec[idx] = x[(r, 0)] * len;
    }
    fft(&grid, &mut spec, true);
    let phase = spec.iter().max_by(|p, q| p.norm().total_cmp(&q.norm())).copied().unwrap();
    let rot = phase.conj() / phase.norm();
    let mut vals: Vec<f64> = spec.iter().map(|z| (z * rot).re).collect();
    let ms = vals.iter().map(|v| v * v).sum::<f64>() / len;
    let scale = 1.0 / ms.sqrt();
    vals.iter_mut().for_each(|v| *v *= scale);
    let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        return Err(HomogError::NonPositiveGroundState(min));
    }
    let omega = PeriodicField::from_data(&grid, 1, 1, vals.iter().map(|&v| c(v, 0.0)).collect())?;
    let interp = TrigInterpolant::new(&omega, 0, 0);
    Ok(GroundState { omega, shift: mu, gap, residual, interp })
}

fn col(m: &CMat) -> Vec<C64> {
    (0..m.nrows()).map(|i| m[(i, 0)]).collect()
}

// ─── Strong-singular (ε⁻² potential) builder ───

/// Field-level builder on one grid: g = ω²ǧ, v = (v̂ − c)ω², 𝒱 = 𝒱̌ω², Q₀ = ω².
pub fn build_strong_singular(
    gcheck: &PeriodicField,
    vcheck: &PeriodicField,
    a_pot: &[PeriodicField],
    vhat: &PeriodicField,
    vpot_check: &PeriodicField,
) -> Result<(CoefficientSet, GroundState)> {
    let gs = ground_state_factorize(gcheck, vcheck)?;
    let grid = gcheck.grid().clone();
    let w2: Vec<f64> = gs.omega.data().iter().map(|z| z.re * z.re).collect();
    let weighted = vhat.data().iter().zip(&w2).map(|(v, w)| v.re * w).sum::<f64>() / w2.iter().sum::<f64>();
    let g = gcheck.map(|m| m.clone())?;
    let mut g = g;
    for i in 0..grid.len() {
        g.set(i, &linalg::scale_re(&gcheck.at(i), w2[i]));
    }
    let v = PeriodicField::from_data(&grid, 1, 1, (0..grid.len()).map(|i| c((vhat.entry(i, 0, 0).re - weighted) * w2[i], 0.0)).collect())?;
    let vp = PeriodicField::from_data(&grid, 1, 1, (0..grid.len()).map(|i| c(vpot_check.entry(i, 0, 0).re * w2[i], 0.0)).collect())?;
    let built = build_scalar_magnetic(&g, a_pot, &v, &vp)?;
    let q0 = PeriodicField::from_data(&grid, 1, 1, w2.iter().map(|&w| c(w, 0.0)).collect())?;
    let set = CoefficientSet::new(built.coeffs.symbol.clone(), built.coeffs.g, built.coeffs.a, built.coeffs.q, q0, 0.0)?;
    Ok((set, gs))
}

/// Closure-level strong-singular family, resolved spectrally at `resolution`.
pub struct StrongSingularModel {
    pub model: CoefficientModel,
    pub ground: Arc<GroundState>,
    /// ω²-weighted mean removed from v̂.
    pub vhat_mean: f64,
}

pub fn strong_singular_model(
    lattice: &Lattice,
    gcheck: MatFn,
    vcheck: ScalarFn,
    a_pot: Vec<ScalarFn>,
    vhat: ScalarFn,
    vpot_check: ScalarFn,
    resolution: usize,
) -> Result<StrongSingularModel> {
    let d = lattice.dim();
    let grid = PeriodicGrid::new(lattice.clone(), vec![resolution; d])?;
    let gf = PeriodicField::from_fn(&grid, d, d, |y| gcheck(y))?;
    let vf = PeriodicField::scalar_from_fn(&grid, |y| vcheck(y))?;
    let gs = Arc::new(ground_state_factorize(&gf, &vf)?);
    let w2: Vec<f64> = gs.omega.data().iter().map(|z| z.re * z.re).collect();
    let vhat_mean = (0..grid.len()).map(|i| vhat(&grid.coords(i)) * w2[i]).sum::<f64>() / w2.iter().sum::<f64>();
    let om = gs.clone();
    let g: MatFn = {
        let om = om.clone();
        Arc::new(move |y: &[f64]| {
            let w = om.eval(y);
            linalg::scale_re(&gcheck(y), w * w)
        })
    };
    let v: ScalarFn = {
        let om = om.clone();
        Arc::new(move |y: &[f64]| {
            let w = om.eval(y);
            (vhat(y) - vhat_mean) * w * w
        })
    };
    let vp: ScalarFn = {
        let om = om.clone();
        Arc::new(move |y: &[f64]| {
            let w = om.eval(y);
            vpot_check(y) * w * w
        })
    };
    let q0: MatFn = {
        let om = om.clone();
        Arc::new(move |y: &[f64]| {
            let w = om.eval(y);
            linalg::real_scalar(w * w)
        })
    };
    let model = magnetic_model(lattice, g, a_pot, v, vp, q0, resolution)?;
    Ok(StrongSingularModel { model, ground: gs, vhat_mean })
}

/// Quadratic form (1/N)Σ ⟨g(D−A)u,(D−A)u⟩ + (v + 𝒱)|u|² with spectral D.
pub fn magnetic_form(g: &PeriodicField, a_pot: &[PeriodicField], v: &PeriodicField, vpot: &PeriodicField, u: &[C64]) -> f64 {
    let grid = g.grid();
    let d = grid.dim();
    let du: Vec<Vec<C64>> = (0..d).map(|j| spectral_derivative(grid, u, j).into_iter().map(|z| -I * z).collect()).collect();
    let mut s = 0.0;
    for i in 0..grid.len() {
        let w: Vec<C64> = (0..d).map(|j| du[j][i] - a_pot[j].entry(i, 0, 0) * u[i]).collect();
        let gi = g.at(i);
        for j in 0..d {
            for l in 0..d {
                s += (w[j].conj() * gi[(j, l)] * w[l]).re;
            }
        }
        s += (v.entry(i, 0, 0).re + vpot.entry(i, 0, 0).re) * u[i].norm_sqr();
    }
    s / grid.len() as f64
}

/// Quadratic form of b(D)*g b(D) + Σ(a_j D_j + D_j a_j*) + Q with spectral D (n = 1).
pub fn generic_form(set: &CoefficientSet, u: &[C64]) -> f64 {
    let grid = set.grid();
    let d = grid.dim();
    let du: Vec<Vec<C64>> = (0..d).map(|j| spectral_derivative(grid, u, j).into_iter().map(|z| -I * z).collect()).collect();
    let mut s = 0.0;
    for i in 0..grid.len() {
        let gi = set.g.at(i);
        for j in 0..d {
            for l in 0..d {
                s += (du[j][i].conj() * gi[(j, l)] * du[l][i]).re;
            }
            s += 2.0 * (u[i].conj() * set.a[j].entry(i, 0, 0) * du[j][i]).re;
        }
        s += set.q.entry(i, 0, 0).re * u[i].norm_sqr();
    }
    s / grid.len() as f64
}

/// Zero-mean field check used by callers of the builders.
pub fn field_mean_abs(f: &PeriodicField) -> f64 {
    periodic_cell::mean_value(f)[(0, 0)].norm()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid1(n: usize) -> PeriodicGrid {
        PeriodicGrid::new(Lattice::unit(1), vec![n]).unwrap()
    }

    #[test]
    fn symbol_examples() {
        let s = SymbolB::new(vec![linalg::real_scalar(1.0)]).unwrap();
        assert_eq!((s.alpha0(), s.alpha1()), (1.0, 1.0));
        let gsym = SymbolB::gradient(2);
        assert!((gsym.alpha0() - 1.0).abs() < 1e-12 && (gsym.alpha1() - 1.0).abs() < 1e-12);
        let b = linalg::from_real_rows(&[vec![1.0], vec![2.0]]);
        let (a0, a1) = validate_symbol(&[b]).unwrap();
        assert!((a0 - 5.0).abs() < 1e-12 && (a1 - 5.0).abs() < 1e-12);
        let bad = vec![linalg::from_real_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]])];
        assert!(matches!(validate_symbol(&bad), Err(HomogError::RankDeficientSymbol(_))));
        // one direction of a 2D symbol missing
        let b1 = linalg::from_real_rows(&[vec![1.0]]);
        let b2 = linalg::from_real_rows(&[vec![0.0]]);
        assert!(matches!(validate_symbol(&[b1, b2]), Err(HomogError::RankDeficientSymbol(_))));
    }

    #[test]
    fn coefficient_set_factor_f() {
        let g = grid1(16);
        let q0 = PeriodicField::scalar_from_fn(&g, |y| 1.0 + 0.5 * (2.0 * PI * y[0]).sin()).unwrap();
        let one = PeriodicField::scalar_from_fn(&g, |_| 1.0).unwrap();
        let zero = PeriodicField::zeros(&g, 1, 1);
        let set = CoefficientSet::new(SymbolB::gradient(1), one, vec![zero.clone()], zero, q0.clone(), 0.0).unwrap();
        for i in 0..g.len() {
            let f = set.f.at(i);
            let p = &(&linalg::adjoint(&f) * &f) * &q0.at(i);
            assert!((p[(0, 0)] - c(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn coefficient_set_rejects_indefinite_g() {
        let g = grid1(16);
        let bad = PeriodicField::scalar_from_fn(&g, |y| (2.0 * PI * y[0]).sin()).unwrap();
        let zero = PeriodicField::zeros(&g, 1, 1);
        let one = PeriodicField::scalar_from_fn(&g, |_| 1.0).unwrap();
        assert!(CoefficientSet::new(SymbolB::gradient(1), bad, vec![zero.clone()], zero, one, 0.0).is_err());
    }

    #[test]
    fn magnetic_trivial_and_sine() {
        let g = grid1(32);
        let one = PeriodicField::scalar_from_fn(&g, |_| 1.0).unwrap();
        let zero = PeriodicField::zeros(&g, 1, 1);
        let b = build_scalar_magnetic(&one, &[zero.clone()], &zero, &zero).unwrap();
        assert!(b.coeffs.a[0].max_abs() < 1e-15 && b.coeffs.q.max_abs() < 1e-15);

        let v = PeriodicField::scalar_from_fn(&g, |y| (2.0 * PI * y[0]).sin()).unwrap();
        let b = build_scalar_magnetic(&one, &[zero.clone()], &v, &zero).unwrap();
        for i in 0..g.len() {
            let y = g.coords(i)[0];
            let exact = c(0.0, (2.0 * PI * y).cos() / (2.0 * PI));
            assert!((b.coeffs.a[0].entry(i, 0, 0) - exact).norm() < 1e-10);
        }
        assert!(b.coeffs.q.max_abs() < 1e-15);
        assert!(b.identity_residual < 1e-8);

        let a = PeriodicField::scalar_from_fn(&g, |y| (2.0 * PI * y[0]).cos()).unwrap();
        let b = build_scalar_magnetic(&one, &[a], &zero, &zero).unwrap();
        for i in 0..g.len() {
            let cs = (2.0 * PI * g.coords(i)[0]).cos();
            assert!((b.coeffs.a[0].entry(i, 0, 0) - c(-cs, 0.0)).norm() < 1e-14);
            assert!((b.coeffs.q.entry(i, 0, 0) - c(cs * cs, 0.0)).norm() < 1e-14);
        }
        let bad = PeriodicField::scalar_from_fn(&g, |_| 1.0).unwrap();
        assert!(matches!(build_scalar_magnetic(&one, &[zero.clone()], &bad, &zero), Err(HomogError::NonZeroMeanPotential(_))));
    }

    #[test]
    fn ground_state_trivial() {
        let g = grid1(32);
        let gc = PeriodicField::scalar_from_fn(&g, |y| 1.5 + 0.5 * (2.0 * PI * y[0]).cos()).unwrap();
        let zero = PeriodicField::zeros(&g, 1, 1);
        let gs = ground_state_factorize(&gc, &zero).unwrap();
        assert!(gs.shift.abs() < 1e-12);
        assert!(gs.omega.data().iter().all(|z| (z.re - 1.0).abs() < 1e-10));
    }

    #[test]
    fn ground_state_perturbative() {
        let g = grid1(64);
        let amp = 0.1;
        let one = PeriodicField::scalar_from_fn(&g, |_| 1.0).unwrap();
        let v = PeriodicField::scalar_from_fn(&g, |y| amp * (2.0 * PI * y[0]).cos()).unwrap();
        let gs = ground_state_factorize(&one, &v).unwrap();
        // second-order shift −amp²/(8π²); third-order term vanishes by symmetry
        let shift2 = -amp * amp / (8.0 * PI * PI);
        assert!((gs.shift - shift2).abs() < 1e-4 * amp * amp, "shift {} vs {}", gs.shift, shift2);
        for i in 0..g.len() {
            let y = g.coords(i)[0];
            let first = 1.0 - amp * (2.0 * PI * y).cos() / (4.0 * PI * PI);
            assert!((gs.omega.entry(i, 0, 0).re - first).abs() < 2.0 * amp * amp / (4.0 * PI * PI));
        }
        let m2 = gs.omega.data().iter().map(|z| z.re * z.re).sum::<f64>() / g.len() as f64;
        assert!((m2 - 1.0).abs() < 1e-10);
        assert!(gs.residual <= 1e-8);
    }

    #[test]
    fn strong_singular_reduces_to_plain() {
        let g = grid1(32);
        let gc = PeriodicField::scalar_from_fn(&g, |y| 2.0 + (2.0 * PI * y[0]).sin()).unwrap();
        let zero = PeriodicField::zeros(&g, 1, 1);
        let (set, gs) = build_strong_singular(&gc, &zero, &[zero.clone()], &zero, &zero).unwrap();
        assert!(gs.shift.abs() < 1e-12);
        for i in 0..g.len() {
            assert!((set.g.entry(i, 0, 0) - gc.entry(i, 0, 0)).norm() < 1e-10);
        }
        assert!(set.a[0].max_abs() < 1e-10 && set.q.max_abs() < 1e-10);
    }
}
