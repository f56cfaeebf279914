//! Coarse graining: particle ensemble -> histogram density -> discovered
//! density equation, checked by solving that equation forward and comparing
//! with the histograms.

use crate::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{Axis, Dataset, Grid};
use crate::error::{Error, Result};
use crate::library::FeatureLibrary;
use crate::pipeline::{discover, Discovery, SparseSettings, WeakSettings};
use crate::sim::{histogram_density, integrate_fn, simulate_ips, ParticleEnsemble};

/// Tolerance for the method-of-lines solve.
const MOL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseGrainReport {
    pub discovery: Discovery,
    /// Largest fraction of particles outside the histogram bins.
    pub outside_fraction: f64,
    /// Time-averaged and worst `int |p_particles - p_model| dx`; NaN when
    /// the discovered model could not be solved forward.
    pub l1_mean: f64,
    pub l1_max: f64,
    /// Set when the weak-form residual or the mean L1 error exceeds its
    /// warning level, or the model cannot be solved forward. The usual cause
    /// is too few particles for the bin width.
    pub high_residual: bool,
    /// Arithmetic and harmonic means of the diffusivity over a period.
    pub diffusivity_means: (f64, f64),
    pub simulation_seconds: f64,
}

/// Levels above which a coarse-grained model is flagged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Warnings {
    /// Relative weak-form residual.
    pub residual: f64,
    /// Time-averaged L1 distance between histograms and model solution.
    pub l1: f64,
}

impl Default for Warnings {
    fn default() -> Self {
        Warnings { residual: 0.2, l1: 0.3 }
    }
}

/// Simulate, histogram on `x` at the times of `t`, and discover with `lib`.
#[allow(clippy::too_many_arguments)]
pub fn coarse_grain(
    ens: &ParticleEnsemble,
    x: &Axis,
    t: &Axis,
    dt_max: f64,
    lib: &FeatureLibrary,
    weak: &WeakSettings,
    sparse: &SparseSettings,
    warn: &Warnings,
) -> Result<(CoarseGrainReport, Dataset)> {
    if lib.components() != 1 || lib.spatial_dims() != 1 {
        return Err(Error::Config("coarse graining needs a scalar library on one spatial axis".into()));
    }
    let start = Instant::now();
    let traj = simulate_ips(ens, t, dt_max)?;
    let (density, outside_fraction) = histogram_density(&traj, x)?;
    let simulation_seconds = start.elapsed().as_secs_f64();
    let discovery = discover(&density, lib, weak, sparse)?;
    let model = &discovery.models[0];
    // an ill-posed discovered model (say, negative diffusion) has no forward
    // solution; that is reported through NaN errors, not as a failure
    let solved = if model.support.is_empty() { None } else { solve_linear_density(lib, &model.coefficients, &density).ok() };
    let (l1_mean, l1_max) = solved.map_or((f64::NAN, f64::NAN), |s| l1_errors(&density, &s));
    let high_residual = model.residual > warn.residual || !(l1_mean <= warn.l1);
    let report = CoarseGrainReport {
        discovery,
        outside_fraction,
        l1_mean,
        l1_max,
        high_residual,
        diffusivity_means: ens.diffusion.means(),
        simulation_seconds,
    };
    Ok((report, density))
}

/// Central difference of order `k` with zero values beyond both ends.
fn zero_padded_diff(v: &[f64], k: usize, h: f64) -> Vec<f64> {
    let n = v.len();
    let at = |w: &[f64], i: isize| if i < 0 || i as usize >= n { 0.0 } else { w[i as usize] };
    let mut cur = v.to_vec();
    for _ in 0..k / 2 {
        cur = (0..n as isize).map(|i| (at(&cur, i + 1) - 2.0 * at(&cur, i) + at(&cur, i - 1)) / (h * h)).collect();
    }
    if k % 2 == 1 {
        cur = (0..n as isize).map(|i| (at(&cur, i + 1) - at(&cur, i - 1)) / (2.0 * h)).collect();
    }
    cur
}

/// Solve `p_t = sum_j w_j d_x^k_j (f_j(p, x))` by central differences in
/// space with the density vanishing outside the grid, starting from the
/// first time slice of `like` and sampling at its times.
pub fn solve_linear_density(lib: &FeatureLibrary, w: &[f64], like: &Dataset) -> Result<Dataset> {
    if w.len() != lib.len() {
        return Err(Error::Shape(format!("{} coefficients for {} terms", w.len(), lib.len())));
    }
    let grid = like.grid();
    if grid.ndim() != 2 || like.components() != 1 {
        return Err(Error::Shape("expected a scalar density on (x, t)".into()));
    }
    let (xa, ta) = (*grid.axis(0), *grid.axis(1));
    let (nx, nt) = (xa.n, ta.n);
    let h = xa.spacing();
    let xs = xa.coords();
    let active: Vec<usize> = (0..w.len()).filter(|&j| w[j] != 0.0).collect();
    let p0: Vec<f64> = (0..nx).map(|i| like.values()[i * nt]).collect();
    let rhs = |p: &[f64], out: &mut [f64]| {
        out.iter_mut().for_each(|o| *o = 0.0);
        for &j in &active {
            let term = &lib.terms()[j];
            let f: Vec<f64> = p.iter().zip(&xs).map(|(&u, &x)| term.eval(&[u], &[x])).collect();
            let df = zero_padded_diff(&f, term.derivative_order(0), h);
            for (o, v) in out.iter_mut().zip(df) {
                *o += w[j] * v;
            }
        }
    };
    let series = integrate_fn(rhs, &p0, &ta, MOL_TOL).map_err(|e| e.context("density solve"))?;
    let mut values = vec![0.0; nx * nt];
    for it in 0..nt {
        for ix in 0..nx {
            values[ix * nt + it] = series.values()[it * nx + ix];
        }
    }
    Dataset::new(Grid::from_axes(vec![xa, ta])?, 1, values)
}

/// Mean and max over time of the discrete L1 distance between densities.
pub fn l1_errors(a: &Dataset, b: &Dataset) -> (f64, f64) {
    let shape = a.grid().shape();
    let (nx, nt) = (shape[0], shape[1]);
    let h = a.grid().spacing(0);
    let per_time: Vec<f64> =
        (0..nt).map(|it| h * (0..nx).map(|ix| (a.values()[ix * nt + it] - b.values()[ix * nt + it]).abs()).sum::<f64>()).collect();
    let mean = per_time.iter().sum::<f64>() / nt as f64;
    let max = per_time.iter().copied().fold(0.0, f64::max);
    (mean, max)
}
