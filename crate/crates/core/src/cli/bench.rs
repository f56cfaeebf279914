//! Seeded Monte Carlo comparison of estimators over noise levels.
//!
//! Trial `i` uses run seed `seed + i`: it fixes the clean data (for KS, the
//! initial condition), and independent streams derived from it drive the
//! noise at each level and the output-error starting point.

use crate::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{BenchConfig, BenchMethod, BenchProblem};
use super::stream_seed;
use crate::data::{add_noise, Dataset, NoiseSpec};
use crate::error::{Error, Result};
use crate::library::{FeatureLibrary, Term};
use crate::sim::{band_limited_initial, integrate_ode, integrate_periodic, ks_terms, KS_DT};
use crate::wendy::{ee_ols_estimate, output_error_estimate, wendy_estimate, WendySettings};

const NOISE_STREAM: u64 = 1;
const START_STREAM: u64 = 2;

/// Errors below this are clamped before taking logarithms.
pub const ERROR_FLOOR: f64 = 1e-16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub seed: u64,
    pub noise_level: f64,
    pub walltime_s: f64,
    /// Root mean square of the per-parameter relative errors; NaN when the
    /// method failed.
    pub rms_rel_error: f64,
    pub parameters: Vec<f64>,
    pub rel_errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub noise_level: f64,
    pub trials: usize,
    pub failures: usize,
    pub geomean_error: f64,
    pub geomean_walltime_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    /// `component:label` for each parameter.
    pub parameters: Vec<String>,
    pub truth: Vec<f64>,
    pub rows: Vec<BenchRow>,
    pub summary: Vec<SummaryRow>,
}

/// Geometric mean of the finite entries, each clamped below at
/// [`ERROR_FLOOR`]. NaN when there are none.
pub fn geometric_mean(v: &[f64]) -> f64 {
    let logs: Vec<f64> = v.iter().filter(|x| x.is_finite()).map(|&x| x.max(ERROR_FLOOR).ln()).collect();
    if logs.is_empty() {
        return f64::NAN;
    }
    (logs.iter().sum::<f64>() / logs.len() as f64).exp()
}

/// Per-parameter relative errors (absolute where the truth is zero).
pub fn relative_errors(estimate: &[f64], truth: &[f64]) -> Vec<f64> {
    estimate.iter().zip(truth).map(|(e, t)| if *t == 0.0 { (e - t).abs() } else { ((e - t) / t).abs() }).collect()
}

pub fn rms(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

/// Library, supports and flattened true coefficients for a problem.
pub fn problem_model(p: &BenchProblem) -> Result<(FeatureLibrary, Vec<Vec<usize>>, Vec<f64>)> {
    match p {
        BenchProblem::Ks { .. } => {
            let lib = FeatureLibrary::new(1, 1, vec![Term::dx_power(1, 2), Term::dx_power(2, 1), Term::dx_power(4, 1)])?;
            let truth = ks_terms().iter().map(|t| t.coef).collect();
            Ok((lib, vec![vec![0, 1, 2]], truth))
        }
        BenchProblem::Ode { model } => {
            let m = model.model();
            let mut supports = Vec::new();
            let mut truth = Vec::new();
            for row in m.coefficients() {
                let s: Vec<usize> = (0..row.len()).filter(|&j| row[j] != 0.0).collect();
                truth.extend(s.iter().map(|&j| row[j]));
                supports.push(s);
            }
            Ok((m.library().clone(), supports, truth))
        }
    }
}

fn clean_data(p: &BenchProblem, seed: u64) -> Result<Dataset> {
    match p {
        BenchProblem::Ks { initial_modes, x, t } => {
            let u0 = band_limited_initial(x, *initial_modes, seed);
            integrate_periodic(&ks_terms(), &u0, x, t, KS_DT)
        }
        BenchProblem::Ode { model } => integrate_ode(&model.model(), &model.initial_state(), &model.time_axis(), 1e-10),
    }
}

struct Trial<'a> {
    cfg: &'a BenchConfig,
    lib: &'a FeatureLibrary,
    supports: &'a [Vec<usize>],
    truth: &'a [f64],
    seed: u64,
    level: f64,
}

impl Trial<'_> {
    fn run(&self, clean: &Dataset) -> Result<Vec<BenchRow>> {
        let d = add_noise(clean, &NoiseSpec::gaussian(self.level, stream_seed(self.seed, NOISE_STREAM)))?;
        let mut rows = Vec::new();
        for &m in &self.cfg.methods {
            let start = Instant::now();
            let est = self.estimate(m, &d);
            let walltime_s = start.elapsed().as_secs_f64();
            let (parameters, rel_errors, rms_rel_error) = match est {
                Ok(p) => {
                    let e = relative_errors(&p, self.truth);
                    let r = rms(&e);
                    (p, e, r)
                }
                Err(_) => (vec![f64::NAN; self.truth.len()], vec![f64::NAN; self.truth.len()], f64::NAN),
            };
            rows.push(BenchRow { method: m.name().into(), seed: self.seed, noise_level: self.level, walltime_s, rms_rel_error, parameters, rel_errors });
        }
        Ok(rows)
    }

    fn estimate(&self, m: BenchMethod, d: &Dataset) -> Result<Vec<f64>> {
        let flat = |rows: Vec<Vec<f64>>| rows.into_iter().flatten().collect::<Vec<f64>>();
        match m {
            BenchMethod::Wendy => {
                let r = wendy_estimate(d, self.lib, self.supports, &self.cfg.wendy)?;
                Ok(flat(r.components.into_iter().map(|c| c.gls.w).collect()))
            }
            BenchMethod::WeakOls => {
                let s = WendySettings { noise_std: Some(0.0), ..self.cfg.wendy.clone() };
                let r = wendy_estimate(d, self.lib, self.supports, &s)?;
                Ok(flat(r.components.into_iter().map(|c| c.ols).collect()))
            }
            BenchMethod::EeOls => Ok(flat(ee_ols_estimate(d, self.lib, self.supports)?)),
            BenchMethod::Oe => {
                let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(self.seed, START_STREAM));
                let p = self.cfg.initial_perturbation;
                let w0: Vec<f64> = self.truth.iter().map(|&t| t * (1.0 + rng.random_range(-p..=p))).collect();
                Ok(output_error_estimate(d, self.lib, self.supports, &w0, &self.cfg.oe)?.parameters)
            }
        }
    }
}

pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.trials == 0 || cfg.methods.is_empty() || cfg.noise_levels.is_empty() {
        return Err(Error::Config("bench needs at least one trial, method and noise level".into()));
    }
    if !(cfg.initial_perturbation >= 0.0) {
        return Err(Error::Config("initial_perturbation must be >= 0".into()));
    }
    let (lib, supports, truth) = problem_model(&cfg.problem)?;
    let labels = lib.labels();
    let parameters = supports.iter().enumerate().flat_map(|(c, s)| s.iter().map(move |&j| (c, j))).map(|(c, j)| format!("{c}:{}", labels[j])).collect();
    let seeds: Vec<u64> = (0..cfg.trials as u64).map(|i| cfg.seed.wrapping_add(i)).collect();
    // ODE benchmarks share one clean trajectory; KS draws new initial data per trial
    let shared = match cfg.problem {
        BenchProblem::Ode { .. } => Some(clean_data(&cfg.problem, 0)?),
        BenchProblem::Ks { .. } => None,
    };
    let per_seed: Vec<Result<Vec<BenchRow>>> = seeds
        .par_iter()
        .map(|&seed| {
            let clean = match &shared {
                Some(d) => d.clone(),
                None => clean_data(&cfg.problem, seed)?,
            };
            let mut rows = Vec::new();
            for &level in &cfg.noise_levels {
                let trial = Trial { cfg, lib: &lib, supports: &supports, truth: &truth, seed, level };
                rows.extend(trial.run(&clean)?);
            }
            Ok(rows)
        })
        .collect();
    let mut rows = Vec::new();
    for r in per_seed {
        rows.extend(r?);
    }
    rows.sort_by(|a, b| a.noise_level.total_cmp(&b.noise_level).then(a.seed.cmp(&b.seed)));
    let mut summary = Vec::new();
    for &level in &cfg.noise_levels {
        for &m in &cfg.methods {
            let sel: Vec<&BenchRow> = rows.iter().filter(|r| r.noise_level == level && r.method == m.name()).collect();
            let errors: Vec<f64> = sel.iter().map(|r| r.rms_rel_error).collect();
            let times: Vec<f64> = sel.iter().map(|r| r.walltime_s).collect();
            summary.push(SummaryRow {
                method: m.name().into(),
                noise_level: level,
                trials: sel.len(),
                failures: errors.iter().filter(|e| !e.is_finite()).count(),
                geomean_error: geometric_mean(&errors),
                geomean_walltime_s: geometric_mean(&times),
            });
        }
    }
    Ok(BenchReport { parameters, truth, rows, summary })
}
