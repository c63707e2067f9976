//! Acceptance suite: one PASS/FAIL line per criterion, sub-checks indented below it.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::time::Instant;

use homog_core::cell_problems::assemble_cell_data;
use homog_core::coefficients::{build_scalar_magnetic, generic_form, ground_state_factorize, magnetic_form};
use homog_core::convergence_lab::{
    run_duhamel_sweep, run_elliptic_sweep, run_parabolic_sweep, ConvergenceReport, EpsContext, Measure, Problem, SourceKind, SourceSpec,
    SweepConfig, TimePoint,
};
use homog_core::domain_ops::{assemble_beps, operator_norm, steklov_smooth, DomainGrid, NormTag, Space};
use homog_core::evolution::{contour_semigroup, ContourSpec};
use homog_core::linalg::{c, C64};
use homog_core::linear_map::LinearMap;
use homog_core::periodic_cell::{CellScheme, Lattice, PeriodicField, PeriodicGrid};
use homog_core::presets::{preset, PRESET_NAMES};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: [f64; 4] = [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0];

struct Outcome {
    checks: Vec<(bool, String)>,
}

impl Outcome {
    fn new() -> Self {
        Outcome { checks: Vec::new() }
    }
    fn check(&mut self, ok: bool, msg: String) {
        self.checks.push((ok, msg));
    }
    fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.0)
    }
    fn gates(&mut self, report: &ConvergenceReport, filter: impl Fn(&str) -> bool) {
        let mut any = false;
        for g in report.gates.iter().filter(|g| filter(&g.name)) {
            any = true;
            self.check(g.passed, format!("{}: {:.4} ({})", g.name, g.value, g.rule));
        }
        if !any {
            self.check(false, "no matching gates in report".into());
        }
    }
}

fn random_vec(len: usize, seed: u64) -> Vec<C64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
}

fn params(kv: &[(&str, f64)]) -> BTreeMap<String, f64> {
    kv.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn sweep_cfg(name: &str, measures: Vec<Measure>) -> SweepConfig {
    let mut cfg = SweepConfig::new(name, EPS.to_vec(), vec![TimePoint::Fixed(0.25)], measures);
    cfg.max_eps = EPS[0];
    cfg.seed = 2024;
    cfg
}

fn envelope_times() -> Vec<TimePoint> {
    vec![TimePoint::Tag("eps2".into()), TimePoint::Fixed(0.05), TimePoint::Fixed(0.25), TimePoint::Fixed(1.0)]
}

// ─── Criteria ───

fn criterion1() -> Outcome {
    let mut o = Outcome::new();
    let p = preset("sine_g", &BTreeMap::new()).unwrap();
    let grid = PeriodicGrid::new(Lattice::unit(1), vec![64]).unwrap();
    let cell = assemble_cell_data(&p.model.sample(&grid).unwrap(), 1.0, CellScheme::Spectral).unwrap();
    let g0 = cell.g0[(0, 0)].re;
    o.check((g0 - 0.5).abs() <= 1e-8, format!("sine_g g0 = {g0:.12} (|g0 - 1/2| = {:.1e} <= 1e-8)", (g0 - 0.5).abs()));
    let mut worst = f64::INFINITY;
    for seed in 0..10u64 {
        let dim = (1 + seed % 2) as f64;
        let p = preset("random", &params(&[("seed", seed as f64), ("dim", dim)])).unwrap();
        let res = if dim == 1.0 { 64 } else { 16 };
        let grid = PeriodicGrid::new(p.model.lattice.clone(), vec![res; dim as usize]).unwrap();
        let s = assemble_cell_data(&p.model.sample(&grid).unwrap(), 1.0, CellScheme::Spectral).unwrap().summary().unwrap();
        worst = worst.min(s.voigt_reuss_lower_margin.min(s.voigt_reuss_upper_margin));
    }
    o.check(worst >= -1e-9, format!("Voigt-Reuss min eigenvalue margin over 10 random presets = {worst:.3e} (>= -1e-9)"));
    o
}

/// Criteria 2–4 and the refinement guard share one sine_g sweep.
fn sine_sweep() -> ConvergenceReport {
    let mut cfg = sweep_cfg(
        "sine_g",
        vec![Measure::L2, Measure::H1Corrector, Measure::H1CorrectorPlain, Measure::Flux, Measure::FluxPlain, Measure::H1Interior],
    );
    cfg.delta0 = Some(0.25);
    cfg.envelope_times = envelope_times();
    cfg.refinement_check = true;
    run_parabolic_sweep(&cfg).unwrap().0
}

fn criterion2(r: &ConvergenceReport) -> Outcome {
    let mut o = Outcome::new();
    o.gates(r, |n| n == "l2 t=0.25" || n.starts_with("envelope uniformity"));
    o
}

fn criterion3(r: &ConvergenceReport) -> Outcome {
    let mut o = Outcome::new();
    o.gates(r, |n| ["h1_corrector t=0.25", "h1_corrector_plain t=0.25", "flux t=0.25", "flux_plain t=0.25"].contains(&n));
    o
}

fn criterion4(r: &ConvergenceReport) -> Outcome {
    let mut o = Outcome::new();
    o.gates(r, |n| n == "h1_interior t=0.25");
    o
}

fn criterion5() -> Outcome {
    let mut o = Outcome::new();
    let (r, _) = run_parabolic_sweep(&sweep_cfg("zero_corrector", vec![Measure::H1, Measure::L2])).unwrap();
    o.gates(&r, |n| n == "h1 t=0.25");
    o
}

fn criterion6() -> Outcome {
    let mut o = Outcome::new();
    let zetas = [c(-1.0, 0.0), c(0.0, 4.0), c(0.0, 16.0)];
    let (r, _) = run_elliptic_sweep(&sweep_cfg("sine_g", vec![Measure::L2]), &zetas).unwrap();
    o.gates(&r, |n| n == "l2 zeta=-1+0i" || n.starts_with("|zeta| scaling"));
    o
}

fn criterion7() -> Outcome {
    let mut o = Outcome::new();
    let src = SourceSpec { kind: SourceKind::Constant, amplitude: 1.0, steps: 20 };
    let mut cfg = sweep_cfg("sine_g", vec![Measure::L2]);
    cfg.times = vec![TimePoint::Fixed(0.25), TimePoint::Fixed(0.5), TimePoint::Fixed(1.0)];
    let (r, _) = run_duhamel_sweep(&cfg, f64::INFINITY, &src).unwrap();
    o.gates(&r, |n| n.starts_with("duhamel"));
    o
}

fn criterion8() -> Outcome {
    let mut o = Outcome::new();
    let eps = 1.0 / 16.0;
    for name in ["sine_g", "magnetic_sine"] {
        let pr = Problem::prepare(preset(name, &BTreeMap::new()).unwrap(), 16, 1.0, &[eps], None).unwrap();
        let ctx = EpsContext::build(&pr, eps).unwrap();
        let spec = ContourSpec { c_flat: pr.cell.c_flat, t_max: None, nodes_per_ray: 64 };
        let phi = random_vec(ctx.exact.dim(), 8);
        for t in [0.1, 1.0] {
            let a = contour_semigroup(&ctx.beps, &spec, ctx.exact.f_norm_sq, t, &phi).unwrap();
            let b = ctx.exact.semigroup_map(t).apply(&phi);
            let num: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
            let den: f64 = b.iter().map(|y| y.norm_sqr()).sum::<f64>().sqrt();
            o.check(num / den <= 1e-6, format!("contour vs eigen {name} t={t}: rel. deviation {:.2e} (<= 1e-6)", num / den));
        }
    }
    let times = [0.05, 0.1, 0.25, 1.0, 2.0];
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for name in PRESET_NAMES {
        let pr = Problem::prepare(preset(name, &BTreeMap::new()).unwrap(), 16, 1.0, &[eps], None).unwrap();
        let ctx = EpsContext::build(&pr, eps).unwrap();
        let cf = pr.cell.c_flat;
        let n = ctx.ops.n;
        for (label, fact) in [("exact", &ctx.exact), ("effective", &ctx.effective)] {
            for t in times {
                let e = fact.semigroup_map(t);
                let norm = operator_norm(&e, &ctx.grid, Space::Interior, n, Space::Interior, NormTag::L2, n, 3).unwrap().value;
                let bound = fact.f_norm_sq * (-0.9 * cf * t).exp();
                worst = worst.max(norm / bound);
                if norm > bound * (1.0 + 1e-9) {
                    failures.push(format!("{name}/{label} t={t}"));
                }
            }
        }
    }
    o.check(failures.is_empty(), format!("decay ||E(t)|| <= |f|^2 exp(-0.9 c_flat t) on all presets, t in {times:?}: worst ratio {worst:.4} {failures:?}"));
    o
}

fn criterion9() -> Outcome {
    let mut o = Outcome::new();
    let grid = PeriodicGrid::new(Lattice::unit(1), vec![64]).unwrap();
    let s = |y: &[f64]| (2.0 * PI * y[0]).sin();
    let cs = |y: &[f64]| (2.0 * PI * y[0]).cos();
    let g = PeriodicField::scalar_from_fn(&grid, |y| 1.0 / (1.0 + 0.5 * s(y))).unwrap();
    let a = PeriodicField::scalar_from_fn(&grid, |y| 0.5 * cs(y)).unwrap();
    let v = PeriodicField::scalar_from_fn(&grid, s).unwrap();
    let vp = PeriodicField::scalar_from_fn(&grid, |y| 0.3 * cs(y)).unwrap();
    let built = build_scalar_magnetic(&g, &[a.clone()], &v, &vp).unwrap();
    let mut worst = 0.0f64;
    for seed in 0..5u64 {
        let coef = random_vec(9, seed);
        let u: Vec<C64> = (0..grid.len())
            .map(|i| {
                let y = grid.coords(i)[0];
                coef.iter().enumerate().map(|(k, z)| z * C64::from_polar(1.0, 2.0 * PI * (k as f64 - 4.0) * y)).sum()
            })
            .collect();
        let lhs = magnetic_form(&g, &[a.clone()], &v, &vp, &u);
        let rhs = generic_form(&built.coeffs, &u);
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(1e-300));
    }
    o.check(worst <= 1e-8, format!("magnetic form reconstruction: rel. defect {worst:.2e} (<= 1e-8)"));

    let gc = PeriodicField::scalar_from_fn(&grid, |y| 1.0 / (1.0 + 0.5 * s(y))).unwrap();
    let vc = PeriodicField::scalar_from_fn(&grid, cs).unwrap();
    let gs = ground_state_factorize(&gc, &vc).unwrap();
    let w = gs.omega.data();
    let positive = w.iter().all(|z| z.re > 0.0);
    let m2 = w.iter().map(|z| z.re * z.re).sum::<f64>() / w.len() as f64;
    o.check(gs.residual <= 1e-8, format!("ground state residual {:.2e} (<= 1e-8)", gs.residual));
    o.check(positive, format!("ground state positive at all {} nodes", w.len()));
    o.check((m2 - 1.0).abs() <= 1e-10, format!("mean(omega^2) = 1 + {:.1e} (tol 1e-10)", m2 - 1.0));

    let mut cfg = sweep_cfg("strong_singular_sine", vec![Measure::L2]);
    cfg.envelope_times = envelope_times();
    let (r, _) = run_parabolic_sweep(&cfg).unwrap();
    o.gates(&r, |n| n == "l2 t=0.25" || n.starts_with("envelope uniformity"));
    o
}

fn criterion10(sine: &ConvergenceReport) -> Outcome {
    let mut o = Outcome::new();
    // Steklov contraction and first-order bound on random data
    let (mut contraction, mut first) = (0.0f64, 0.0f64);
    for (k, &(eps, n_per)) in [(0.25, 8), (0.125, 16), (0.0625, 16)].iter().enumerate() {
        let grid = DomainGrid::for_epsilon(1.0, eps, n_per, 1.0).unwrap();
        let m = grid.intervals() as isize;
        for seed in 0..10u64 {
            let u = random_vec(3 * m as usize + 1, seed + 100 * k as u64);
            let su = steklov_smooth(&grid, &u, eps, 1.0, 1).unwrap();
            let n2 = |v: &[C64]| v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            contraction = contraction.max(n2(&su) / n2(&u));
            let coef = random_vec(4, seed);
            let w: Vec<C64> = (-m..=2 * m)
                .map(|i| coef.iter().enumerate().map(|(j, a)| a * (PI * (j + 1) as f64 * grid.x(i)).sin()).sum())
                .collect();
            let sw = steklov_smooth(&grid, &w, eps, 1.0, 1).unwrap();
            let d: Vec<C64> = (0..=m as usize).map(|i| sw[i] - w[i + m as usize]).collect();
            let dw: Vec<C64> = w.windows(2).map(|p| (p[1] - p[0]) / grid.h()).collect();
            first = first.max(n2(&d) / (eps * n2(&dw)));
        }
    }
    o.check(contraction <= 1.0 + 1e-10, format!("Steklov contraction: max ||S u|| / ||u|| = {contraction:.6} (<= 1)"));
    o.check(first <= 0.5 + 1e-10, format!("Steklov first-order: max ||S u - u|| / (eps ||u'||) = {first:.4} (<= 1/2)"));

    // Hermiticity and coercivity of B_eps on every preset
    let (mut herm, mut coer) = (0.0f64, f64::INFINITY);
    for name in PRESET_NAMES {
        let pr = Problem::prepare(preset(name, &BTreeMap::new()).unwrap(), 16, 1.0, &[0.0625], None).unwrap();
        let op = assemble_beps(&pr.set, &pr.grid(0.0625).unwrap()).unwrap();
        herm = herm.max(op.matrix.hermiticity_defect());
        coer = coer.min(op.smallest_eigenvalue().unwrap() / pr.cell.c_flat);
    }
    o.check(herm <= 1e-12, format!("Hermiticity defect of B_eps over presets {herm:.1e} (<= 1e-12)"));
    o.check(coer >= 0.9, format!("coercivity min mu_1 / c_flat over presets {coer:.3} (>= 0.9)"));

    // discretisation guard from the sine_g sweep
    o.gates(sine, |n| n.starts_with("refinement"));

    // byte-identical reports
    let mut cfg = SweepConfig::new("sine_g", vec![0.25, 0.125, 0.0625], vec![TimePoint::Fixed(0.25)], vec![Measure::L2, Measure::Flux]);
    cfg.n_per = 8;
    cfg.seed = 5;
    let a = run_parabolic_sweep(&cfg).unwrap().0.to_json();
    let b = run_parabolic_sweep(&cfg).unwrap().0.to_json();
    o.check(a == b, format!("report bytes identical across runs ({} bytes)", a.len()));
    o
}

fn main() {
    let start = Instant::now();
    let sine = sine_sweep();
    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (1, "effective coefficients", criterion1()),
        (2, "L2 semigroup rate and small-time envelope", criterion2(&sine)),
        (3, "corrector and flux rates", criterion3(&sine)),
        (4, "interior rate", criterion4(&sine)),
        (5, "zero-corrector rate", criterion5()),
        (6, "elliptic rates", criterion6()),
        (7, "Duhamel rate", criterion7()),
        (8, "semigroup cross-validation and decay", criterion8()),
        (9, "magnetic and ground-state builders", criterion9()),
        (10, "property suites", criterion10(&sine)),
    ];
    results.sort_by_key(|r| r.0);
    let mut all = true;
    for (k, title, out) in &results {
        let ok = out.passed();
        all &= ok;
        println!("criterion {k:>2} {}: {title}", if ok { "PASS" } else { "FAIL" });
        for (c_ok, msg) in &out.checks {
            println!("      [{}] {msg}", if *c_ok { "ok" } else { "FAIL" });
        }
    }
    println!("acceptance: {} ({:.0} s)", if all { "all criteria passed" } else { "some criteria failed" }, start.elapsed().as_secs_f64());
    if !all {
        std::process::exit(1);
    }
}
