//! Output-error baseline: fit parameters by repeatedly solving the forward
//! problem and matching the data, minimized with Nelder-Mead.

use crate::Instant;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::library::{FeatureLibrary, Nonlinearity};
use crate::sim::{integrate_ode, integrate_periodic, OdeModel, SpectralTerm, KS_DT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NelderMeadSettings {
    pub max_evals: usize,
    /// Stop when every vertex is within `x_tol * max(1, |x_best|)` of the best.
    pub x_tol: f64,
    /// ... and every objective value is within `f_tol` of the best.
    pub f_tol: f64,
    /// Initial simplex offset, relative to each coordinate (absolute 2.5e-4
    /// for zero coordinates).
    pub initial_step: f64,
}

impl Default for NelderMeadSettings {
    fn default() -> Self {
        NelderMeadSettings { max_evals: 1000, x_tol: 1e-8, f_tol: 1e-14, initial_step: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evaluations: usize,
    /// Best objective after each iteration.
    pub history: Vec<f64>,
    pub converged: bool,
}

/// Minimize `f` from `x0`. Non-finite objective values count as `+inf`.
pub fn nelder_mead(mut f: impl FnMut(&[f64]) -> f64, x0: &[f64], s: &NelderMeadSettings) -> Result<NelderMeadResult> {
    let n = x0.len();
    if n == 0 {
        return Err(Error::domain("no parameters to optimize"));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("initial guess".into()));
    }
    let evals = std::cell::Cell::new(0usize);
    let mut eval = |x: &[f64]| {
        evals.set(evals.get() + 1);
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), eval(x0)));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] = if x[i] != 0.0 { x[i] * (1.0 + s.initial_step) } else { 2.5e-4 };
        let fx = eval(&x);
        simplex.push((x, fx));
    }
    let mut history = Vec::new();
    let mut converged = false;
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        history.push(simplex[0].1);
        let best = &simplex[0];
        let scale = best.0.iter().map(|v| v.abs()).fold(1.0, f64::max);
        let x_spread = simplex[1..].iter().flat_map(|(x, _)| x.iter().zip(&best.0).map(|(a, b)| (a - b).abs())).fold(0.0, f64::max);
        let f_spread = simplex[1..].iter().map(|(_, v)| (v - best.1).abs()).fold(0.0, f64::max);
        if x_spread <= s.x_tol * scale && f_spread <= s.f_tol {
            converged = true;
            break;
        }
        if evals.get() >= s.max_evals {
            break;
        }
        let centroid: Vec<f64> = (0..n).map(|i| simplex[..n].iter().map(|(x, _)| x[i]).sum::<f64>() / n as f64).collect();
        let worst = simplex[n].clone();
        let along = |t: f64| -> Vec<f64> { centroid.iter().zip(&worst.0).map(|(c, w)| c + t * (c - w)).collect() };
        let xr = along(1.0);
        let fr = eval(&xr);
        if fr < simplex[0].1 {
            let xe = along(2.0);
            let fe = eval(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < worst.1 {
                let x = along(0.5);
                let v = eval(&x);
                (x, v)
            } else {
                let x = along(-0.5);
                let v = eval(&x);
                (x, v)
            };
            if fc < worst.1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let x0 = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = x0.iter().zip(&v.0).map(|(a, b)| a + 0.5 * (b - a)).collect();
                    let fx = eval(&x);
                    *v = (x, fx);
                }
            }
        }
    }
    let (x, fx) = simplex.swap_remove(0);
    if !fx.is_finite() {
        return Err(Error::numerical("every objective evaluation failed"));
    }
    Ok(NelderMeadResult { x, f: fx, evaluations: evals.get(), history, converged })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OeSettings {
    pub optimizer: NelderMeadSettings,
    /// Integrator tolerance for ODE models.
    pub ode_tol: f64,
    /// Largest internal step for periodic PDE models.
    pub dt_max: f64,
    /// Also fit the initial state of ODE models, starting from the first
    /// data slice. Periodic models always start from the data.
    pub fit_initial: bool,
}

impl Default for OeSettings {
    fn default() -> Self {
        OeSettings { optimizer: NelderMeadSettings::default(), ode_tol: 1e-8, dt_max: KS_DT, fit_initial: true }
    }
}

/// Forward solver for a fixed model structure, started from the first time
/// slice of the data.
#[derive(Debug, Clone)]
pub enum ForwardModel {
    Ode { library: FeatureLibrary, supports: Vec<Vec<usize>> },
    /// Scalar field on a periodic power-of-two grid with `d_x^k (u^p)` terms.
    Periodic { terms: Vec<(u32, u32)> },
}

impl ForwardModel {
    pub fn new(lib: &FeatureLibrary, supports: &[Vec<usize>]) -> Result<Self> {
        if supports.len() != lib.components() {
            return Err(Error::Shape(format!("{} supports for {} components", supports.len(), lib.components())));
        }
        if let Some(j) = supports.iter().flatten().find(|&&j| j >= lib.len()) {
            return Err(Error::domain(format!("support index {j} out of range for {} terms", lib.len())));
        }
        match lib.spatial_dims() {
            0 => Ok(ForwardModel::Ode { library: lib.clone(), supports: supports.to_vec() }),
            1 if lib.components() == 1 => {
                let terms = supports[0]
                    .iter()
                    .map(|&j| {
                        let t = &lib.terms()[j];
                        match &t.nonlinearity {
                            Nonlinearity::Monomial { powers } if t.coord_powers.iter().all(|&p| p == 0) => {
                                Ok((t.derivative_order(0) as u32, powers.first().copied().unwrap_or(0)))
                            }
                            _ => Err(Error::domain(format!("term {t} has no spectral forward model"))),
                        }
                    })
                    .collect::<Result<_>>()?;
                Ok(ForwardModel::Periodic { terms })
            }
            _ => Err(Error::domain("forward models cover ODEs and scalar 1-D periodic PDEs")),
        }
    }

    pub fn parameter_count(&self) -> usize {
        match self {
            ForwardModel::Ode { supports, .. } => supports.iter().map(|s| s.len()).sum(),
            ForwardModel::Periodic { terms } => terms.len(),
        }
    }

    /// Solve with parameters `theta` (support coefficients, component by
    /// component) on the grid of `d`.
    pub fn simulate(&self, theta: &[f64], d: &Dataset, s: &OeSettings) -> Result<Dataset> {
        self.simulate_from(theta, None, d, s)
    }

    /// As [`ForwardModel::simulate`], with an explicit ODE initial state.
    pub fn simulate_from(&self, theta: &[f64], initial: Option<&[f64]>, d: &Dataset, s: &OeSettings) -> Result<Dataset> {
        if theta.len() != self.parameter_count() {
            return Err(Error::Shape(format!("{} parameters for a model with {}", theta.len(), self.parameter_count())));
        }
        match self {
            ForwardModel::Ode { library, supports } => {
                let mut coefs = vec![vec![0.0; library.len()]; library.components()];
                let mut it = theta.iter();
                for (c, s) in supports.iter().enumerate() {
                    for &j in s {
                        coefs[c][j] = *it.next().expect("length checked");
                    }
                }
                let model = OdeModel::new(library.clone(), coefs)?;
                let nc = d.components();
                integrate_ode(&model, initial.unwrap_or(&d.values()[..nc]), d.grid().axis(0), s.ode_tol)
            }
            ForwardModel::Periodic { terms } => {
                let grid = d.grid();
                if grid.ndim() != 2 {
                    return Err(Error::Shape("periodic forward model needs an (x, t) grid".into()));
                }
                let nt = grid.shape()[1];
                let u0: Vec<f64> = (0..grid.shape()[0]).map(|ix| d.values()[ix * nt]).collect();
                let st: Vec<SpectralTerm> = terms.iter().zip(theta).map(|(&(order, power), &coef)| SpectralTerm { order, power, coef }).collect();
                integrate_periodic(&st, &u0, grid.axis(0), grid.axis(1), s.dt_max)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OeResult {
    /// Support coefficients, component by component.
    pub parameters: Vec<f64>,
    /// Fitted initial state, when it was estimated.
    pub initial_state: Option<Vec<f64>>,
    /// `|solve(w) - d|^2 / |d|^2` at the returned parameters.
    pub objective: f64,
    pub evaluations: usize,
    pub failed_evaluations: usize,
    pub history: Vec<f64>,
    pub converged: bool,
    pub seconds: f64,
}

/// Fit the support coefficients by matching forward solutions to `d`.
/// `w0` lists the starting coefficients in the same order as the
/// parameters (support by support).
pub fn output_error_estimate(d: &Dataset, lib: &FeatureLibrary, supports: &[Vec<usize>], w0: &[f64], s: &OeSettings) -> Result<OeResult> {
    let start = Instant::now();
    let model = ForwardModel::new(lib, supports)?;
    if w0.len() != model.parameter_count() {
        return Err(Error::Shape(format!("{} starting values for {} parameters", w0.len(), model.parameter_count())));
    }
    let norm2: f64 = d.values().iter().map(|v| v * v).sum();
    let norm2 = if norm2 > 0.0 { norm2 } else { 1.0 };
    let np = w0.len();
    let fit_initial = s.fit_initial && matches!(model, ForwardModel::Ode { .. });
    let mut x0 = w0.to_vec();
    if fit_initial {
        x0.extend_from_slice(&d.values()[..d.components()]);
    }
    let mut failed = 0usize;
    let nm = nelder_mead(
        |x| {
            let initial = fit_initial.then(|| &x[np..]);
            match model.simulate_from(&x[..np], initial, d, s) {
                Ok(sim) => sim.values().iter().zip(d.values()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / norm2,
                Err(_) => {
                    failed += 1;
                    f64::INFINITY
                }
            }
        },
        &x0,
        &s.optimizer,
    )
    .map_err(|e| e.context("output error: no forward solve from the starting point succeeded"))?;
    let mut x = nm.x;
    let initial_state = fit_initial.then(|| x.split_off(np));
    Ok(OeResult {
        parameters: x,
        initial_state,
        objective: nm.f,
        evaluations: nm.evaluations,
        failed_evaluations: failed,
        history: nm.history,
        converged: nm.converged,
        seconds: start.elapsed().as_secs_f64(),
    })
}
