//! Browser bindings: three self-contained experiments that simulate data,
//! run one part of the toolkit and return JSON for plotting.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use weakid::cli::config::BenchProblem;
use weakid::cli::{problem_model, relative_errors, rms};
use weakid::coarse::{coarse_grain, solve_linear_density, Warnings};
use weakid::library::{fokker_planck_library, pde_poly_library};
use weakid::pipeline::{discover, SparseSettings, WeakSettings};
use weakid::sim::{band_limited_initial, integrate_ks, integrate_ode, ks_space_axis, ks_time_axis, BuiltinOde, Diffusion, Drift, InitialDistribution, ParticleEnsemble};
use weakid::wendy::{ee_ols_estimate, wendy_estimate, WendySettings};
use weakid::{add_noise, Axis, Dataset, NoiseSpec};

/// Keep every `step`-th sample of a scalar (x, t) field, row-major in x.
fn thin(d: &Dataset, step: usize) -> Value {
    let shape = d.grid().shape();
    let (nx, nt) = (shape[0], shape[1]);
    let xs: Vec<usize> = (0..nx).step_by(step).collect();
    let ts: Vec<usize> = (0..nt).step_by(step).collect();
    let values: Vec<f64> = xs.iter().flat_map(|&ix| ts.iter().map(move |&it| ix * nt + it)).map(|i| d.values()[i]).collect();
    json!({ "nx": xs.len(), "nt": ts.len(), "values": values })
}

fn noise(level: f64, seed: u32) -> NoiseSpec {
    NoiseSpec::gaussian(level, seed as u64)
}

/// Simulate Kuramoto-Sivashinsky, add noise and search the 43-term library.
pub fn discover_ks_json(noise_level: f64, seed: u32) -> Result<String, String> {
    let x = ks_space_axis();
    let clean = integrate_ks(&band_limited_initial(&x, 16, seed as u64 + 1000), &x, &ks_time_axis()).map_err(|e| e.to_string())?;
    let noisy = add_noise(&clean, &noise(noise_level, seed)).map_err(|e| e.to_string())?;
    let lib = pde_poly_library(6, 6);
    let r = discover(&noisy, &lib, &WeakSettings::default(), &SparseSettings::default()).map_err(|e| e.to_string())?;
    let m = &r.models[0];
    Ok(json!({
        "library_size": lib.len(),
        "terms": m.terms,
        "truth": [["d/dx(u^2)", -0.5], ["d^2/dx^2(u^1)", -1.0], ["d^4/dx^4(u^1)", -1.0]],
        "residual": m.residual,
        "lambda_star": m.lambda_star,
        "loss_curve": m.loss_curve,
        "seconds": r.assembly_seconds + r.regression_seconds,
        "field": thin(&noisy, 2),
    })
    .to_string())
}

fn builtin(name: &str) -> Result<BuiltinOde, String> {
    match name {
        "logistic" => Ok(BuiltinOde::Logistic),
        "lorenz" => Ok(BuiltinOde::Lorenz),
        "fitzhugh-nagumo" => Ok(BuiltinOde::FitzhughNagumo),
        _ => Err(format!("unknown model '{name}' (expected logistic, lorenz or fitzhugh-nagumo)")),
    }
}

/// Estimate the true-support coefficients of a noisy ODE three ways.
pub fn estimate_ode_json(model: &str, noise_level: f64, seed: u32) -> Result<String, String> {
    let m = builtin(model)?;
    let clean = integrate_ode(&m.model(), &m.initial_state(), &m.time_axis(), 1e-10).map_err(|e| e.to_string())?;
    let noisy = add_noise(&clean, &noise(noise_level, seed)).map_err(|e| e.to_string())?;
    let (lib, supports, truth) = problem_model(&BenchProblem::Ode { model: m }).map_err(|e| e.to_string())?;
    let w = wendy_estimate(&noisy, &lib, &supports, &WendySettings::default()).map_err(|e| e.to_string())?;
    let ee: Vec<f64> = ee_ols_estimate(&noisy, &lib, &supports).map_err(|e| e.to_string())?.concat();
    let gls: Vec<f64> = w.components.iter().flat_map(|c| c.gls.w.clone()).collect();
    let ols: Vec<f64> = w.components.iter().flat_map(|c| c.ols.clone()).collect();
    let labels: Vec<String> = w.components.iter().flat_map(|c| c.labels.iter().map(move |l| format!("{}:{l}", c.component))).collect();
    let method = |name: &str, p: &[f64]| json!({ "method": name, "parameters": p, "rms_rel_error": rms(&relative_errors(p, &truth)) });
    let nc = clean.components();
    let series = |d: &Dataset| -> Vec<Vec<f64>> { (0..nc).map(|c| d.values().iter().skip(c).step_by(nc).copied().collect()).collect() };
    Ok(json!({
        "labels": labels,
        "truth": truth,
        "noise_std": w.noise_std,
        "methods": [method("wendy", &gls), method("weak-ols", &ols), method("ee-ols", &ee)],
        "t": clean.grid().axis(0).coords(),
        "clean": series(&clean),
        "noisy": series(&noisy),
    })
    .to_string())
}

/// Coarse-grain an Ornstein-Uhlenbeck ensemble into a Fokker-Planck model.
pub fn coarse_grain_ou_json(particles: u32, seed: u32) -> Result<String, String> {
    let ens = ParticleEnsemble {
        particles: particles as usize,
        initial: InitialDistribution::Gaussian { mean: 2.0, std: 0.3 },
        drift: Drift::Linear { theta: 1.0 },
        diffusion: Diffusion::Constant { d: 0.5 },
        seed: seed as u64,
    };
    let x = Axis::new(81, -4.0, 4.0).map_err(|e| e.to_string())?;
    let t = Axis::new(41, 0.0, 4.0).map_err(|e| e.to_string())?;
    let lib = fokker_planck_library(2, 2);
    let (r, density) = coarse_grain(&ens, &x, &t, 2e-3, &lib, &WeakSettings::default(), &SparseSettings::default(), &Warnings::default())
        .map_err(|e| e.to_string())?;
    let m = &r.discovery.models[0];
    let model = solve_linear_density(&lib, &m.coefficients, &density).ok();
    let nt = t.n;
    let slice = |d: &Dataset, it: usize| -> Vec<f64> { (0..x.n).map(|ix| d.values()[ix * nt + it]).collect() };
    let times = [0, 5, 10, 20, 40];
    let snapshots: Vec<Value> = times
        .iter()
        .map(|&it| json!({ "t": t.coord(it), "histogram": slice(&density, it), "model": model.as_ref().map(|s| slice(s, it)) }))
        .collect();
    Ok(json!({
        "terms": m.terms,
        "truth": [["d/dx(x^1*u^1)", 1.0], ["d^2/dx^2(u^1)", 0.5]],
        "residual": m.residual,
        "l1_mean": r.l1_mean,
        "high_residual": r.high_residual,
        "x": x.coords(),
        "snapshots": snapshots,
    })
    .to_string())
}

#[wasm_bindgen(js_name = discoverKs)]
pub fn discover_ks(noise_level: f64, seed: u32) -> Result<String, JsError> {
    discover_ks_json(noise_level, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = estimateOde)]
pub fn estimate_ode(model: &str, noise_level: f64, seed: u32) -> Result<String, JsError> {
    estimate_ode_json(model, noise_level, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = coarseGrainOu)]
pub fn coarse_grain_ou(particles: u32, seed: u32) -> Result<String, JsError> {
    coarse_grain_ou_json(particles, seed).map_err(|e| JsError::new(&e))
}
