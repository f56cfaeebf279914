//! First-order stochastic particle systems and their histogram densities.
//!
//! Particles follow `dX = mu(X) dt + sqrt(2 D(X)) dW`, whose density obeys
//! `p_t = -(mu p)_x + (D p)_xx`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Axis, Dataset, Grid};
use crate::error::{Error, Result};

/// Particles per independently seeded chunk. Fixed so results do not
/// depend on the thread count.
const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Drift {
    Zero,
    /// `mu(x) = -theta x`.
    Linear { theta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Diffusion {
    Constant { d: f64 },
    /// `D(x) = d0 (1 + amplitude sin(omega x))`, `|amplitude| < 1`.
    Oscillatory { d0: f64, amplitude: f64, omega: f64 },
}

impl Drift {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Drift::Zero => 0.0,
            Drift::Linear { theta } => -theta * x,
        }
    }
}

impl Diffusion {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Diffusion::Constant { d } => d,
            Diffusion::Oscillatory { d0, amplitude, omega } => d0 * (1.0 + amplitude * (omega * x).sin()),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Diffusion::Constant { d } => d >= 0.0 && d.is_finite(),
            Diffusion::Oscillatory { d0, amplitude, omega } => {
                d0 >= 0.0 && d0.is_finite() && amplitude.abs() < 1.0 && omega.is_finite() && omega > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::domain(format!("diffusion {self:?} is not nonnegative and finite")))
        }
    }

    /// Arithmetic and harmonic means over one period.
    pub fn means(&self) -> (f64, f64) {
        match *self {
            Diffusion::Constant { d } => (d, d),
            Diffusion::Oscillatory { d0, amplitude, .. } => (d0, d0 * (1.0 - amplitude * amplitude).sqrt()),
        }
    }
}

/// Initial particle distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialDistribution {
    Point { x: f64 },
    Gaussian { mean: f64, std: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleEnsemble {
    pub particles: usize,
    pub initial: InitialDistribution,
    pub drift: Drift,
    pub diffusion: Diffusion,
    pub seed: u64,
}

/// Particle positions at each saved time (`positions[save][particle]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectories {
    pub times: Axis,
    pub positions: Vec<Vec<f64>>,
}

fn chunk_rng(seed: u64, chunk: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk as u64);
    rng
}

/// Euler-Maruyama with internal step at most `dt_max`, chosen to divide the
/// save interval evenly.
pub fn simulate_ips(ens: &ParticleEnsemble, t: &Axis, dt_max: f64) -> Result<Trajectories> {
    if ens.particles == 0 {
        return Err(Error::domain("particle count must be >= 1"));
    }
    ens.diffusion.validate()?;
    if !(dt_max > 0.0) || dt_max > t.spacing() * (1.0 + 1e-12) {
        return Err(Error::domain(format!("internal step {dt_max} must be positive and at most the save interval {}", t.spacing())));
    }
    let substeps = (t.spacing() / dt_max).ceil() as usize;
    let dt = t.spacing() / substeps as f64;
    let n = ens.particles;
    let nt = t.n;
    let chunks: Vec<(usize, usize)> = (0..n.div_ceil(CHUNK)).map(|c| (c * CHUNK, ((c + 1) * CHUNK).min(n))).collect();
    let results: Vec<Result<Vec<f64>>> = chunks
        .par_iter()
        .enumerate()
        .map(|(ci, &(a, b))| {
            let mut rng = chunk_rng(ens.seed, ci);
            let len = b - a;
            let mut x: Vec<f64> = (0..len)
                .map(|_| match ens.initial {
                    InitialDistribution::Point { x } => x,
                    InitialDistribution::Gaussian { mean, std } => {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        mean + std * z
                    }
                })
                .collect();
            let mut out = Vec::with_capacity(len * nt);
            out.extend_from_slice(&x);
            for _ in 1..nt {
                for _ in 0..substeps {
                    for xi in x.iter_mut() {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        let d = ens.diffusion.eval(*xi).max(0.0);
                        *xi += ens.drift.eval(*xi) * dt + (2.0 * d * dt).sqrt() * z;
                    }
                }
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::numerical("particle positions became non-finite"));
                }
                out.extend_from_slice(&x);
            }
            Ok(out)
        })
        .collect();
    let mut positions = vec![Vec::with_capacity(n); nt];
    for (r, &(a, b)) in results.into_iter().zip(&chunks) {
        let block = r?;
        let len = b - a;
        for (it, p) in positions.iter_mut().enumerate() {
            p.extend_from_slice(&block[it * len..(it + 1) * len]);
        }
    }
    Ok(Trajectories { times: *t, positions })
}

/// Histogram density on bins centred at the points of `x`
/// (`count / (N dx)`), as a space-time dataset. Also returns the largest
/// fraction of particles that fell outside the bins in any slice; more than
/// 1% is an error.
pub fn histogram_density(traj: &Trajectories, x: &Axis) -> Result<(Dataset, f64)> {
    let dx = x.spacing();
    let lo = x.lo - dx / 2.0;
    let nt = traj.times.n;
    let mut values = vec![0.0; x.n * nt];
    let mut worst: f64 = 0.0;
    for (it, pos) in traj.positions.iter().enumerate() {
        let n = pos.len() as f64;
        let mut counts = vec![0usize; x.n];
        let mut outside = 0usize;
        for &p in pos {
            let b = ((p - lo) / dx).floor();
            if b >= 0.0 && (b as usize) < x.n {
                counts[b as usize] += 1;
            } else {
                outside += 1;
            }
        }
        worst = worst.max(outside as f64 / n);
        for (ix, c) in counts.into_iter().enumerate() {
            values[ix * nt + it] = c as f64 / (n * dx);
        }
    }
    if worst > 0.01 {
        return Err(Error::domain(format!("{:.2}% of particles fall outside the histogram bins", 100.0 * worst)));
    }
    Ok((Dataset::new(Grid::from_axes(vec![*x, traj.times])?, 1, values)?, worst))
}
