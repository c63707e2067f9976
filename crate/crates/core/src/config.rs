//! JSON run configuration and the command pipeline behind the CLI.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cell_problems::{assemble_cell_data, CellData, CellSummary, FieldJson, MatJson};
use crate::convergence_lab::{
    run_duhamel_sweep, run_elliptic_sweep, run_parabolic_sweep, ConvergenceReport, EpsContext, Measure, Problem, SourceKind, SourceSpec,
    SweepConfig, TimePoint, Timings,
};
use crate::correctors::{CorrectorBundle, Subdomain, Variant};
use crate::domain_ops::calibrate_lambda;
use crate::error::{HomogError, Result};
use crate::evolution::{contour_semigroup, ContourSpec};
use crate::linalg::{self, c, C64};
use crate::linear_map::LinearMap;
use crate::periodic_cell::{CellScheme, PeriodicGrid};
use crate::presets::{preset, Preset};

/// Environment variable overriding the output directory (below `--out`).
pub const OUT_DIR_ENV: &str = "HOMOG_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "homog_out";

fn default_length() -> f64 {
    1.0
}
fn default_n_per() -> usize {
    16
}
fn default_max_eps() -> f64 {
    0.25
}
fn default_resolution() -> usize {
    32
}
fn default_scheme() -> CellScheme {
    CellScheme::Spectral
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellOptions {
    /// Samples per lattice direction.
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default = "default_scheme")]
    pub scheme: CellScheme,
}

impl Default for CellOptions {
    fn default() -> Self {
        CellOptions { resolution: default_resolution(), scheme: default_scheme() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    /// sin(kπx/ℓ) in every component.
    Sine { #[serde(default = "one_usize")] mode: usize },
    /// Uniform random values in [−1, 1] + i[−1, 1] at interior nodes.
    Random { #[serde(default)] seed: u64 },
}

fn one_usize() -> usize {
    1
}

impl Default for InitialData {
    fn default() -> Self {
        InitialData::Sine { mode: 1 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolveOptions {
    pub eps: f64,
    pub t: f64,
    #[serde(default)]
    pub initial: InitialData,
    #[serde(default = "default_variant")]
    pub variant: Variant,
    #[serde(default)]
    pub delta0: Option<f64>,
    /// Adds a u_eps_contour column from the contour integral (t > 0).
    #[serde(default)]
    pub contour: bool,
    #[serde(default)]
    pub lambda: Option<f64>,
}

fn default_variant() -> Variant {
    Variant::Smoothed
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKindOpt {
    Parabolic,
    Elliptic,
    Duhamel,
}

fn default_kind() -> SweepKindOpt {
    SweepKindOpt::Parabolic
}
fn default_source() -> SourceSpec {
    SourceSpec { kind: SourceKind::Constant, amplitude: 1.0, steps: 20 }
}
fn default_measures() -> Vec<Measure> {
    vec![Measure::L2]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepOptions {
    #[serde(default = "default_kind")]
    pub kind: SweepKindOpt,
    #[serde(default = "default_measures")]
    pub measures: Vec<Measure>,
    #[serde(default)]
    pub delta0: Option<f64>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub contour_validation: bool,
    #[serde(default)]
    pub refinement_check: bool,
    #[serde(default)]
    pub envelope_times: Vec<TimePoint>,
    #[serde(default)]
    pub gate_times: Option<Vec<f64>>,
    /// ζ values as [re, im] (elliptic).
    #[serde(default)]
    pub zetas: Vec<[f64; 2]>,
    /// Summability exponent r (Duhamel); absent or null means ∞.
    #[serde(default)]
    pub r: Option<f64>,
    #[serde(default = "default_source")]
    pub source: SourceSpec,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    /// Cell side lengths; must match the preset's lattice.
    #[serde(default)]
    pub lattice: Option<Vec<f64>>,
    #[serde(default = "default_length")]
    pub length: f64,
    #[serde(default = "default_n_per")]
    pub n_per: usize,
    #[serde(default)]
    pub eps_list: Vec<f64>,
    #[serde(default = "default_max_eps")]
    pub max_eps: f64,
    #[serde(default)]
    pub times: Vec<TimePoint>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub cell: CellOptions,
    #[serde(default)]
    pub evolve: Option<EvolveOptions>,
    #[serde(default)]
    pub sweep: Option<SweepOptions>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| HomogError::InvalidInput(format!("config parse error: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HomogError::InvalidInput(format!("config not found: {} ({e})", path.display())))?;
        Self::from_json(&text)
    }

    /// `--out` flag, then the environment override, then `output_dir`, then the default.
    pub fn resolve_out_dir(&self, flag: Option<&Path>) -> PathBuf {
        if let Some(p) = flag {
            return p.to_path_buf();
        }
        if let Some(p) = std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()) {
            return PathBuf::from(p);
        }
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }

    pub fn preset(&self) -> Result<Preset> {
        let p = preset(&self.preset, &self.params)?;
        if let Some(l) = &self.lattice {
            let want = p.model.lattice.lengths();
            if l.len() != want.len() || l.iter().zip(want).any(|(a, b)| (a - b).abs() > 1e-12) {
                return Err(HomogError::InvalidInput(format!("lattice {l:?} does not match preset '{}' lattice {want:?}", self.preset)));
            }
        }
        Ok(p)
    }

    pub fn sweep_config(&self) -> Result<SweepConfig> {
        let s = self.sweep.clone().ok_or_else(|| HomogError::InvalidInput("config has no 'sweep' section".into()))?;
        let cfg = SweepConfig {
            preset: self.preset.clone(),
            params: self.params.clone(),
            length: self.length,
            eps_list: self.eps_list.clone(),
            max_eps: self.max_eps,
            times: self.times.clone(),
            n_per: self.n_per,
            measures: s.measures,
            delta0: s.delta0,
            lambda: s.lambda,
            contour_validation: s.contour_validation,
            refinement_check: s.refinement_check,
            envelope_times: s.envelope_times,
            gate_times: s.gate_times,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

// ─── cell / effective ───

#[derive(Clone, Debug, Serialize)]
pub struct CellOutput {
    pub summary: CellSummary,
    pub lambda_field: FieldJson,
    pub lambda_tilde_field: FieldJson,
}

fn cell_data(cfg: &RunConfig) -> Result<(Preset, CellData)> {
    let p = cfg.preset()?;
    let res = cfg.cell.resolution;
    if res < 4 {
        return Err(HomogError::InvalidInput(format!("cell resolution must be ≥ 4, got {res}")));
    }
    let d = p.model.lattice.dim();
    // vertex nodes so the same samples feed the domain operators used by λ calibration
    let grid = PeriodicGrid::vertex(p.model.lattice.clone(), vec![res; d])?;
    let mut set = p.model.sample(&grid)?;
    let mut cell = assemble_cell_data(&set, cfg.length, cfg.cell.scheme)?;
    let lambda = if p.model.lambda > 0.0 || cfg.eps_list.is_empty() || d != 1 {
        p.model.lambda
    } else {
        calibrate_lambda(&set, Some(&cell), cfg.length, &cfg.eps_list)?
    };
    set.lambda = lambda;
    cell.lambda = lambda;
    Ok((p, cell))
}

/// Cell problems: returns the JSON payload and a human summary.
pub fn run_cell(cfg: &RunConfig) -> Result<(CellOutput, String)> {
    let (_, cell) = cell_data(cfg)?;
    let summary = cell.summary()?;
    let mut text = String::new();
    let _ = writeln!(text, "preset {} ({:?} scheme, samples {:?})", cfg.preset, summary.scheme, summary.samples);
    let _ = writeln!(text, "g0 = {}", fmt_mat(&summary.g0));
    let _ = writeln!(text, "Voigt-Reuss margins: lower {:.3e}, upper {:.3e}", summary.voigt_reuss_lower_margin, summary.voigt_reuss_upper_margin);
    let _ = writeln!(text, "V = {}", fmt_mat(&summary.v));
    let _ = writeln!(text, "W = {}", fmt_mat(&summary.w));
    let _ = writeln!(text, "lambda = {}", summary.lambda);
    let _ = writeln!(text, "c_flat = {:.6e}", summary.c_flat);
    let out = CellOutput { summary, lambda_field: FieldJson::from_field(&cell.lambda_corr), lambda_tilde_field: FieldJson::from_field(&cell.lambda_tilde) };
    Ok((out, text))
}

pub fn write_cell(out: &CellOutput, text: &str, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io)?;
    write_json(&dir.join("cell_data.json"), out)?;
    write_json(&dir.join("lambda.json"), &out.lambda_field)?;
    write_json(&dir.join("lambda_tilde.json"), &out.lambda_tilde_field)?;
    std::fs::write(dir.join("cell_summary.txt"), text).map_err(io)
}

#[derive(Clone, Debug, Serialize)]
pub struct EffectiveOutput {
    pub g0: MatJson,
    /// First-order coefficients, one per direction.
    pub first_order: Vec<MatJson>,
    /// Zero-order coefficient without the λQ̄₀ term.
    pub zero_order: MatJson,
    pub q0_bar: MatJson,
    pub f0: MatJson,
    pub lambda: f64,
    pub c_flat: f64,
}

pub fn run_effective(cfg: &RunConfig) -> Result<(EffectiveOutput, String)> {
    let (_, cell) = cell_data(cfg)?;
    let out = EffectiveOutput {
        g0: linalg::to_rows(&cell.g0),
        first_order: cell.effective_first_order().iter().map(linalg::to_rows).collect(),
        zero_order: linalg::to_rows(&cell.effective_zero_order()),
        q0_bar: linalg::to_rows(&cell.q0_bar),
        f0: linalg::to_rows(&cell.f0),
        lambda: cell.lambda,
        c_flat: cell.c_flat,
    };
    let mut text = String::new();
    let _ = writeln!(text, "effective operator for preset {}", cfg.preset);
    let _ = writeln!(text, "g0 = {}", fmt_mat(&out.g0));
    for (j, k) in out.first_order.iter().enumerate() {
        let _ = writeln!(text, "first-order[{j}] = {}", fmt_mat(k));
    }
    let _ = writeln!(text, "zero-order = {}", fmt_mat(&out.zero_order));
    let _ = writeln!(text, "mean Q0 = {}", fmt_mat(&out.q0_bar));
    let _ = writeln!(text, "lambda = {}, c_flat = {:.6e}", out.lambda, out.c_flat);
    Ok((out, text))
}

pub fn write_effective(out: &EffectiveOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io)?;
    write_json(&dir.join("effective.json"), out)
}

fn fmt_mat(m: &MatJson) -> String {
    let rows: Vec<String> = m
        .iter()
        .map(|r| {
            let cells: Vec<String> = r.iter().map(|z| if z[1].abs() < 1e-14 { format!("{:.10}", z[0]) } else { format!("{:.10}{:+.10}i", z[0], z[1]) }).collect();
            format!("[{}]", cells.join(", "))
        })
        .collect();
    format!("[{}]", rows.join(", "))
}

// ─── evolve ───

#[derive(Clone, Debug, Serialize)]
pub struct EvolveOutput {
    pub eps: f64,
    pub t: f64,
    pub lambda: f64,
    pub c_flat: f64,
    pub intervals: usize,
    pub l2_difference: f64,
    pub contour_max_deviation: Option<f64>,
    #[serde(skip)]
    pub bundle: CorrectorBundle,
    #[serde(skip)]
    pub n: usize,
    #[serde(skip)]
    pub m: usize,
}

pub fn initial_vector(init: &InitialData, x: &[f64], length: f64, n: usize) -> Vec<C64> {
    match init {
        InitialData::Sine { mode } => x.iter().flat_map(|xi| std::iter::repeat(c((*mode as f64 * PI * xi / length).sin(), 0.0)).take(n)).collect(),
        InitialData::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            (0..x.len() * n).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
        }
    }
}

/// One (ε, t) snapshot of u_ε, u₀, the first-order approximation and the fluxes.
pub fn run_evolve(cfg: &RunConfig) -> Result<EvolveOutput> {
    let e = cfg.evolve.clone().ok_or_else(|| HomogError::InvalidInput("config has no 'evolve' section".into()))?;
    if !(e.t >= 0.0) {
        return Err(HomogError::InvalidInput(format!("t must be ≥ 0, got {}", e.t)));
    }
    if cfg.n_per < 8 || cfg.n_per % 2 != 0 {
        return Err(HomogError::InvalidInput(format!("n_per must be even and ≥ 8, got {}", cfg.n_per)));
    }
    if e.eps > cfg.max_eps * (1.0 + 1e-12) {
        return Err(HomogError::InvalidInput(format!("ε = {} exceeds max_eps = {}", e.eps, cfg.max_eps)));
    }
    let problem = Problem::prepare(cfg.preset()?, cfg.n_per, cfg.length, &[e.eps], e.lambda)?;
    let ctx = EpsContext::build(&problem, e.eps)?;
    let n = ctx.ops.n;
    let xs: Vec<f64> = (1..ctx.grid.intervals()).map(|i| ctx.grid.x(i as isize)).collect();
    let phi = initial_vector(&e.initial, &xs, cfg.length, n);
    let u_eps = ctx.exact.semigroup_map(e.t).apply(&phi);
    let u0 = ctx.effective.semigroup_map(e.t).apply(&phi);
    let subdomain = match e.delta0 {
        Some(delta) => Subdomain::Interior { delta },
        None => Subdomain::Full,
    };
    let mut bundle = CorrectorBundle::build(&ctx.ops, e.t, e.variant, subdomain, &u_eps, &u0);
    let mut contour_dev = None;
    if e.contour {
        let spec = ContourSpec { c_flat: problem.cell.c_flat, t_max: None, nodes_per_ray: 64 };
        let uc = contour_semigroup(&ctx.beps, &spec, ctx.exact.f_norm_sq, e.t, &phi)?;
        let diff: Vec<C64> = uc.iter().zip(&u_eps).map(|(a, b)| a - b).collect();
        contour_dev = Some(linalg::vnorm(&diff) / linalg::vnorm(&u_eps).max(1e-300));
        bundle.u_contour = Some(ctx.ops.embed.apply(&uc));
    }
    let diff: Vec<C64> = u_eps.iter().zip(&u0).map(|(a, b)| a - b).collect();
    Ok(EvolveOutput {
        eps: e.eps,
        t: e.t,
        lambda: problem.lambda,
        c_flat: problem.cell.c_flat,
        intervals: ctx.grid.intervals(),
        l2_difference: ctx.grid.h().sqrt() * linalg::vnorm(&diff),
        contour_max_deviation: contour_dev,
        n,
        m: ctx.ops.m,
        bundle,
    })
}

pub fn write_evolve(out: &EvolveOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut csv = Vec::new();
    out.bundle.write_csv(out.n, out.m, &mut csv).map_err(io)?;
    std::fs::write(dir.join("snapshot.csv"), csv).map_err(io)?;
    write_json(&dir.join("evolve.json"), out)
}

// ─── sweep / report ───

pub fn run_sweep(cfg: &RunConfig) -> Result<(ConvergenceReport, Timings)> {
    let sc = cfg.sweep_config()?;
    let s = cfg.sweep.as_ref().expect("checked by sweep_config");
    match s.kind {
        SweepKindOpt::Parabolic => run_parabolic_sweep(&sc),
        SweepKindOpt::Elliptic => {
            let zetas: Vec<C64> = if s.zetas.is_empty() { vec![c(-1.0, 0.0)] } else { s.zetas.iter().map(|z| c(z[0], z[1])).collect() };
            run_elliptic_sweep(&sc, &zetas)
        }
        SweepKindOpt::Duhamel => run_duhamel_sweep(&sc, s.r.unwrap_or(f64::INFINITY), &s.source),
    }
}

pub fn write_sweep(report: &ConvergenceReport, timings: &Timings, dir: &Path) -> Result<()> {
    report.write_outputs(dir).map_err(io)?;
    write_json(&dir.join("timings.json"), timings)
}

/// Reloads `report.json`, rewrites CSV and plot files, and returns a gate summary.
pub fn run_report(dir: &Path) -> Result<(ConvergenceReport, String)> {
    let path = dir.join("report.json");
    let text = std::fs::read_to_string(&path).map_err(|e| HomogError::InvalidInput(format!("report not found: {} ({e})", path.display())))?;
    let mut report: ConvergenceReport = serde_json::from_str(&text).map_err(|e| HomogError::InvalidInput(format!("report parse error: {e}")))?;
    // the overall flag is re-derived from the gate list
    report.passed = report.failed_gates().is_empty();
    report.write_outputs(dir).map_err(io)?;
    Ok((report.clone(), summarize(&report)))
}

pub fn summarize(report: &ConvergenceReport) -> String {
    let mut s = String::new();
    let md = &report.metadata;
    let _ = writeln!(s, "{:?} sweep, preset {}, n_per {}, lambda {}, c_flat {:.4e}", report.kind, md.preset, md.n_per, md.lambda, md.c_flat);
    for t in &report.tables {
        let fit = t.fit.map(|f| format!("slope {:.4} (rms {:.1e})", f.slope, f.rms_residual)).unwrap_or_else(|| "no fit".into());
        let _ = writeln!(s, "  {:<22} {:<18} {}", t.measure, t.label, fit);
    }
    for g in &report.gates {
        let _ = writeln!(s, "  [{}] {} = {:.6} ({})", if g.passed { "PASS" } else { "FAIL" }, g.name, g.value, g.rule);
    }
    let _ = writeln!(s, "{}", if report.passed { "all gates passed" } else { "gate failures" });
    s
}

fn io(e: std::io::Error) -> HomogError {
    HomogError::SolveFailure(format!("i/o error: {e}"))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| HomogError::SolveFailure(format!("serialisation: {e}")))?;
    std::fs::write(path, text + "\n").map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_minimal_and_reject_unknown() {
        let cfg = RunConfig::from_json(r#"{"preset":"sine_g"}"#).unwrap();
        assert_eq!(cfg.n_per, 16);
        assert_eq!(cfg.cell.resolution, 32);
        assert!(RunConfig::from_json(r#"{"preset":"sine_g","bogus":1}"#).is_err());
        assert!(matches!(RunConfig::load(Path::new("/nonexistent/x.json")), Err(HomogError::InvalidInput(m)) if m.starts_with("config not found")));
    }

    #[test]
    fn sine_g_cell_gives_half() {
        let cfg = RunConfig::from_json(r#"{"preset":"sine_g","cell":{"resolution":64}}"#).unwrap();
        let (out, text) = run_cell(&cfg).unwrap();
        assert!((out.summary.g0[0][0][0] - 0.5).abs() < 1e-8);
        assert!(text.contains("g0 = [[0.5000000000]]"), "{text}");
    }

    #[test]
    fn heat_mode_snapshot() {
        let cfg = RunConfig::from_json(r#"{"preset":"heat","evolve":{"eps":0.0625,"t":0.25}}"#).unwrap();
        let out = run_evolve(&cfg).unwrap();
        let b = &out.bundle;
        let worst = b.x.iter().zip(&b.u_eps).map(|(x, u)| (u.re - (-PI * PI * 0.25f64).exp() * (PI * x).sin()).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-5, "{worst}");
    }
}
