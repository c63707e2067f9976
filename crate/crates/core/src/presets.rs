//! Named coefficient families with parameter maps.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::coefficients::{const_fn, magnetic_model, scalar_fn, strong_singular_model, CoefficientModel, GroundState, MatFn, SymbolB};
use crate::error::{HomogError, Result};
use crate::linalg::{self, c};
use crate::periodic_cell::Lattice;

pub const PRESET_NAMES: [&str; 7] = ["constant", "heat", "sine_g", "magnetic_sine", "strong_singular_sine", "zero_corrector", "random"];

/// Resolution used for potentials and ground states built spectrally inside a preset.
pub const BUILDER_RESOLUTION: usize = 128;

#[derive(Clone)]
pub struct Preset {
    pub name: String,
    pub params: BTreeMap<String, f64>,
    pub model: CoefficientModel,
    /// Ground state of the strong-singular family (u_ε is then (ω^ε)⁻¹ times the original solution).
    pub ground: Option<Arc<GroundState>>,
    /// True when B_ε coincides with B⁰ for every ε.
    pub trivial: bool,
}

fn take(params: &BTreeMap<String, f64>, allowed: &[(&str, f64)], name: &str) -> Result<BTreeMap<String, f64>> {
    for k in params.keys() {
        if !allowed.iter().any(|(a, _)| a == k) {
            let names: Vec<&str> = allowed.iter().map(|(a, _)| *a).collect();
            return Err(HomogError::InvalidInput(format!("preset {name}: unknown parameter '{k}' (allowed: {names:?})")));
        }
    }
    let mut out = BTreeMap::new();
    for (k, d) in allowed {
        let v = params.get(*k).copied().unwrap_or(*d);
        if !v.is_finite() {
            return Err(HomogError::InvalidInput(format!("preset {name}: parameter '{k}' is not finite")));
        }
        out.insert(k.to_string(), v);
    }
    Ok(out)
}

fn scalar_model(g: MatFn, a: MatFn, q: MatFn, q0: MatFn, lambda: f64) -> CoefficientModel {
    CoefficientModel { lattice: Lattice::unit(1), symbol: SymbolB::gradient(1), g, a: vec![a], q, q0, lambda }
}

/// Builds a preset by name; `params` overrides the defaults listed for each family.
pub fn preset(name: &str, params: &BTreeMap<String, f64>) -> Result<Preset> {
    let s = |y: &[f64]| (2.0 * PI * y[0]).sin();
    let cs = |y: &[f64]| (2.0 * PI * y[0]).cos();
    let (p, model, ground, trivial) = match name {
        "constant" | "heat" => {
            let p = take(params, &[("g", 1.0), ("q", 0.0), ("q0", 1.0), ("lambda", 0.0)], name)?;
            if p["g"] <= 0.0 || p["q0"] <= 0.0 {
                return Err(HomogError::InvalidInput(format!("preset {name}: g and q0 must be positive")));
            }
            let (g, q, q0) = (p["g"], p["q"], p["q0"]);
            let m = scalar_model(scalar_fn(move |_| g), scalar_fn(|_| 0.0), scalar_fn(move |_| q), scalar_fn(move |_| q0), p["lambda"]);
            (p, m, None, true)
        }
        "sine_g" => {
            // g = 1/(mean + amp·sin 2πy), harmonic mean 1/mean
            let p = take(params, &[("mean", 2.0), ("amp", 1.0), ("lambda", 0.0)], name)?;
            let (mean, amp) = (p["mean"], p["amp"]);
            if mean <= amp.abs() {
                return Err(HomogError::InvalidInput("preset sine_g: need mean > |amp|".into()));
            }
            let m = scalar_model(
                scalar_fn(move |y| 1.0 / (mean + amp * s(y))),
                scalar_fn(|_| 0.0),
                scalar_fn(|_| 0.0),
                scalar_fn(|_| 1.0),
                p["lambda"],
            );
            (p, m, None, amp == 0.0)
        }
        "magnetic_sine" => {
            let p = take(params, &[("g_amp", 0.5), ("a_amp", 0.5), ("v_amp", 1.0), ("vpot_amp", 0.0), ("lambda", 0.0)], name)?;
            let (ga, aa, va, wa) = (p["g_amp"], p["a_amp"], p["v_amp"], p["vpot_amp"]);
            if ga.abs() >= 1.0 {
                return Err(HomogError::InvalidInput("preset magnetic_sine: need |g_amp| < 1".into()));
            }
            let mut m = magnetic_model(
                &Lattice::unit(1),
                scalar_fn(move |y| 1.0 / (1.0 + ga * s(y))),
                vec![Arc::new(move |y: &[f64]| aa * cs(y))],
                Arc::new(move |y: &[f64]| va * s(y)),
                Arc::new(move |y: &[f64]| wa * cs(y)),
                scalar_fn(|_| 1.0),
                BUILDER_RESOLUTION,
            )?;
            m.lambda = p["lambda"];
            (p, m, None, false)
        }
        "strong_singular_sine" => {
            let p = take(params, &[("g_amp", 0.5), ("vcheck_amp", 1.0), ("vhat_amp", 0.5), ("vpot_amp", 0.0), ("lambda", 0.0)], name)?;
            let (ga, va, ha, wa) = (p["g_amp"], p["vcheck_amp"], p["vhat_amp"], p["vpot_amp"]);
            if ga.abs() >= 1.0 {
                return Err(HomogError::InvalidInput("preset strong_singular_sine: need |g_amp| < 1".into()));
            }
            let ss = strong_singular_model(
                &Lattice::unit(1),
                scalar_fn(move |y| 1.0 / (1.0 + ga * s(y))),
                Arc::new(move |y: &[f64]| va * cs(y)),
                vec![Arc::new(|_: &[f64]| 0.0)],
                Arc::new(move |y: &[f64]| ha * s(y)),
                Arc::new(move |y: &[f64]| wa * cs(y)),
                BUILDER_RESOLUTION,
            )?;
            let mut m = ss.model;
            m.lambda = p["lambda"];
            (p, m, Some(ss.ground), false)
        }
        "zero_corrector" => {
            // b = (1, 0)ᵀ with the first row of g constant: Λ = 0; constant a: Λ̃ = 0
            let p = take(params, &[("g12", 0.3), ("g22_amp", 0.5), ("a", 0.3), ("q_amp", 1.0), ("q0_amp", 0.5), ("lambda", 0.0)], name)?;
            let (g12, g22, a, qa, q0a) = (p["g12"], p["g22_amp"], p["a"], p["q_amp"], p["q0_amp"]);
            if q0a.abs() >= 1.0 || g22.abs() + g12 * g12 >= 1.0 {
                return Err(HomogError::InvalidInput("preset zero_corrector: coefficients not positive definite".into()));
            }
            let symbol = SymbolB::new(vec![linalg::from_real_rows(&[vec![1.0], vec![0.0]])])?;
            let g: MatFn = Arc::new(move |y: &[f64]| linalg::from_real_rows(&[vec![1.0, g12], vec![g12, 1.0 + g22 * s(y)]]));
            let m = CoefficientModel {
                lattice: Lattice::unit(1),
                symbol,
                g,
                a: vec![const_fn(linalg::scalar(c(a, 0.0)))],
                q: scalar_fn(move |y| qa * s(y)),
                q0: scalar_fn(move |y| 1.0 + q0a * cs(y)),
                lambda: p["lambda"],
            };
            (p, m, None, false)
        }
        "random" => {
            let p = take(params, &[("seed", 0.0), ("modes", 3.0), ("dim", 1.0)], name)?;
            let m = random_model(p["seed"] as u64, p["modes"] as usize, p["dim"] as usize)?;
            (p, m, None, false)
        }
        _ => return Err(HomogError::InvalidInput(format!("unknown preset '{name}' (known: {PRESET_NAMES:?})"))),
    };
    Ok(Preset { name: name.to_string(), params: p, model, ground, trivial })
}

/// Random positive coefficients: g = LLᵀ + ½I with trigonometric-polynomial entries of L.
/// d = 1 uses b₁ = (1, 1)ᵀ (m = 2, n = 1); d = 2 uses the gradient symbol.
pub fn random_model(seed: u64, modes: usize, dim: usize) -> Result<CoefficientModel> {
    if !(1..=2).contains(&dim) || modes == 0 || modes > 8 {
        return Err(HomogError::InvalidInput("random preset: dim ∈ {1,2}, modes ∈ 1..=8".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = 2;
    // L entries: Σ_k c_k cos(2π k·y) + s_k sin(2π k·y)
    let mut entries = Vec::new();
    for _ in 0..m * m {
        let terms: Vec<(Vec<i32>, f64, f64)> = (0..modes)
            .map(|_| {
                let k: Vec<i32> = (0..dim).map(|_| rng.gen_range(-2..=2)).collect();
                (k, rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5))
            })
            .collect();
        entries.push(terms);
    }
    let entries = Arc::new(entries);
    let g: MatFn = Arc::new(move |y: &[f64]| {
        let l: Vec<f64> = entries
            .iter()
            .map(|terms| {
                terms
                    .iter()
                    .map(|(k, a, b)| {
                        let ph = 2.0 * PI * k.iter().zip(y).map(|(ki, yi)| *ki as f64 * yi).sum::<f64>();
                        a * ph.cos() + b * ph.sin()
                    })
                    .sum()
            })
            .collect();
        let (a, b, cc, d) = (l[0], l[1], l[2], l[3]);
        linalg::from_real_rows(&[vec![a * a + b * b + 0.5, a * cc + b * d], vec![a * cc + b * d, cc * cc + d * d + 0.5]])
    });
    let symbol = if dim == 2 { SymbolB::gradient(2) } else { SymbolB::new(vec![linalg::from_real_rows(&[vec![1.0], vec![1.0]])])? };
    Ok(CoefficientModel {
        lattice: Lattice::unit(dim),
        symbol,
        g,
        a: (0..dim).map(|_| scalar_fn(|_| 0.0)).collect(),
        q: scalar_fn(|_| 0.0),
        q0: scalar_fn(|_| 1.0),
        lambda: 0.0,
    })
}
