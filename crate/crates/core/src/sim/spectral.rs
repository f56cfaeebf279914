//! Pseudospectral exponential time differencing (ETDRK4) for scalar
//! periodic PDEs of the form `u_t = sum_j w_j d_x^{k_j} (u^{p_j})`.
//!
//! Terms with `p = 1` form the diagonal linear operator; all others are
//! evaluated in physical space and dealiased with the 2/3 rule. The
//! `phi`-function coefficients are computed by contour integrals so they stay
//! accurate where the linear symbol is near zero.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::data::{Axis, Dataset, Grid};
use crate::error::{Error, Result};

type C64 = Complex<f64>;

/// One term `coef * d_x^order (u^power)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralTerm {
    pub order: u32,
    pub power: u32,
    pub coef: f64,
}

/// Kuramoto-Sivashinsky in the `d_x^k (u^p)` basis:
/// `u_t = -1/2 (u^2)_x - u_xx - u_xxxx`.
pub fn ks_terms() -> Vec<SpectralTerm> {
    vec![
        SpectralTerm { order: 1, power: 2, coef: -0.5 },
        SpectralTerm { order: 2, power: 1, coef: -1.0 },
        SpectralTerm { order: 4, power: 1, coef: -1.0 },
    ]
}

/// Default periodic spatial axis for KS: 256 points on `[0, 32 pi)`.
pub fn ks_space_axis() -> Axis {
    let n = 256;
    let l = 32.0 * PI;
    Axis { n, lo: 0.0, hi: l * (n - 1) as f64 / n as f64 }
}

/// Default KS time axis: 301 saves on `[0, 150]`.
pub fn ks_time_axis() -> Axis {
    Axis { n: 301, lo: 0.0, hi: 150.0 }
}

/// Default internal time step.
pub const KS_DT: f64 = 0.05;

/// Smooth random initial data: a sum of the first `modes` Fourier modes
/// of the periodic domain with Gaussian amplitudes, normalized to unit RMS.
pub fn band_limited_initial(x: &Axis, modes: usize, seed: u64) -> Vec<f64> {
    let l = x.spacing() * x.n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase = Uniform::new(0.0, 2.0 * PI).expect("valid range");
    let coefs: Vec<(f64, f64)> = (1..=modes).map(|_| (StandardNormal.sample(&mut rng), phase.sample(&mut rng))).collect();
    let mut u: Vec<f64> = (0..x.n)
        .map(|i| {
            let xi = x.coord(i);
            coefs.iter().enumerate().map(|(m, &(a, ph))| a * (2.0 * PI * (m + 1) as f64 * xi / l + ph).cos()).sum()
        })
        .collect();
    let r = crate::data::rms(&u);
    if r > 0.0 {
        u.iter_mut().for_each(|v| *v /= r);
    }
    u
}

struct Solver {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// `(power, coef * (ik)^order * dealias)` for each nonlinear term.
    nonlinear: Vec<(u32, Vec<C64>)>,
    e: Vec<C64>,
    e2: Vec<C64>,
    q: Vec<C64>,
    f1: Vec<C64>,
    f2: Vec<C64>,
    f3: Vec<C64>,
}

fn ik_pow(k: f64, order: u32) -> C64 {
    C64::new(0.0, k).powu(order)
}

impl Solver {
    fn new(terms: &[SpectralTerm], n: usize, length: f64, dt: f64) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let wav: Vec<f64> = (0..n)
            .map(|j| {
                let m = if j < n / 2 {
                    j as f64
                } else if j == n / 2 {
                    0.0
                } else {
                    j as f64 - n as f64
                };
                2.0 * PI * m / length
            })
            .collect();
        let cutoff = n / 3;
        let dealias: Vec<f64> = (0..n).map(|j| if j.min(n - j) <= cutoff && j != n / 2 { 1.0 } else { 0.0 }).collect();
        let mut lin = vec![C64::new(0.0, 0.0); n];
        let mut nonlinear: Vec<(u32, Vec<C64>)> = Vec::new();
        for t in terms {
            if t.power == 1 {
                for (l, &k) in lin.iter_mut().zip(&wav) {
                    *l += t.coef * ik_pow(k, t.order);
                }
            } else {
                let sym = wav.iter().zip(&dealias).map(|(&k, &d)| t.coef * d * ik_pow(k, t.order)).collect();
                match nonlinear.iter_mut().find(|(p, _)| *p == t.power) {
                    Some((_, s)) => s.iter_mut().zip(&sym).for_each(|(a, b): (&mut C64, &C64)| *a += b),
                    None => nonlinear.push((t.power, sym)),
                }
            }
        }
        const M: usize = 32;
        let roots: Vec<C64> = (0..M).map(|j| C64::from_polar(1.0, 2.0 * PI * (j as f64 + 0.5) / M as f64)).collect();
        let mut e = Vec::with_capacity(n);
        let mut e2 = Vec::with_capacity(n);
        let (mut q, mut f1, mut f2, mut f3) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for &l in &lin {
            let hl = l * dt;
            e.push(hl.exp());
            e2.push((hl / 2.0).exp());
            let (mut sq, mut s1, mut s2, mut s3) = (C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0));
            for &r in &roots {
                let z = hl + r;
                let ez = z.exp();
                let z3 = z * z * z;
                sq += ((z / 2.0).exp() - 1.0) / z;
                s1 += (-4.0 - z + ez * (4.0 - 3.0 * z + z * z)) / z3;
                s2 += (2.0 + z + ez * (z - 2.0)) / z3;
                s3 += (-4.0 - 3.0 * z - z * z + ez * (4.0 - z)) / z3;
            }
            let mf = dt / M as f64;
            q.push(sq * mf);
            f1.push(s1 * mf);
            f2.push(s2 * mf);
            f3.push(s3 * mf);
        }
        Solver { n, fwd, inv, nonlinear, e, e2, q, f1, f2, f3 }
    }

    fn to_physical(&self, v: &[C64], buf: &mut [C64]) -> Vec<f64> {
        buf.copy_from_slice(v);
        self.inv.process(buf);
        buf.iter().map(|c| c.re / self.n as f64).collect()
    }

    fn nonlinear(&self, v: &[C64], out: &mut [C64], buf: &mut [C64]) {
        out.iter_mut().for_each(|o| *o = C64::new(0.0, 0.0));
        if self.nonlinear.is_empty() {
            return;
        }
        let u = self.to_physical(v, buf);
        for (p, sym) in &self.nonlinear {
            for (b, &x) in buf.iter_mut().zip(&u) {
                *b = C64::new(x.powi(*p as i32), 0.0);
            }
            self.fwd.process(buf);
            for ((o, b), s) in out.iter_mut().zip(buf.iter()).zip(sym) {
                *o += b * s;
            }
        }
    }

    fn step(&self, v: &mut [C64], s: &mut Scratch) {
        let n = self.n;
        self.nonlinear(v, &mut s.nv, &mut s.buf);
        for i in 0..n {
            s.a[i] = self.e2[i] * v[i] + self.q[i] * s.nv[i];
        }
        self.nonlinear(&s.a, &mut s.na, &mut s.buf);
        for i in 0..n {
            s.b[i] = self.e2[i] * v[i] + self.q[i] * s.na[i];
        }
        self.nonlinear(&s.b, &mut s.nb, &mut s.buf);
        for i in 0..n {
            s.c[i] = self.e2[i] * s.a[i] + self.q[i] * (2.0 * s.nb[i] - s.nv[i]);
        }
        self.nonlinear(&s.c, &mut s.nc, &mut s.buf);
        for i in 0..n {
            v[i] = self.e[i] * v[i] + s.nv[i] * self.f1[i] + 2.0 * (s.na[i] + s.nb[i]) * self.f2[i] + s.nc[i] * self.f3[i];
        }
    }
}

struct Scratch {
    nv: Vec<C64>,
    na: Vec<C64>,
    nb: Vec<C64>,
    nc: Vec<C64>,
    a: Vec<C64>,
    b: Vec<C64>,
    c: Vec<C64>,
    buf: Vec<C64>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        let z = vec![C64::new(0.0, 0.0); n];
        Scratch { nv: z.clone(), na: z.clone(), nb: z.clone(), nc: z.clone(), a: z.clone(), b: z.clone(), c: z.clone(), buf: z }
    }
}

/// Solve on the periodic grid `x` (its `hi` is the last sample, one spacing
/// short of the period) and sample on `t`. The internal step is the largest
/// value `<= dt_max` that divides the save interval evenly.
pub fn integrate_periodic(terms: &[SpectralTerm], u0: &[f64], x: &Axis, t: &Axis, dt_max: f64) -> Result<Dataset> {
    let n = x.n;
    if !n.is_power_of_two() {
        return Err(Error::domain(format!("spectral grid size must be a power of two, got {n}")));
    }
    if u0.len() != n {
        return Err(Error::Shape(format!("initial data has {} samples for a {n}-point grid", u0.len())));
    }
    if u0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("initial data".into()));
    }
    if !(dt_max > 0.0) {
        return Err(Error::domain("time step must be positive"));
    }
    let save = t.spacing();
    let substeps = (save / dt_max).ceil().max(1.0) as usize;
    let dt = save / substeps as f64;
    let length = x.spacing() * n as f64;
    let solver = Solver::new(terms, n, length, dt);
    let mut scratch = Scratch::new(n);
    let mut v: Vec<C64> = u0.iter().map(|&r| C64::new(r, 0.0)).collect();
    solver.fwd.process(&mut v);

    let nt = t.n;
    let mut values = vec![0.0; n * nt];
    let mut buf = vec![C64::new(0.0, 0.0); n];
    let mut record = |v: &[C64], it: usize, buf: &mut [C64]| {
        let u = solver.to_physical(v, buf);
        for (ix, val) in u.into_iter().enumerate() {
            values[ix * nt + it] = val;
        }
    };
    record(&v, 0, &mut buf);
    for it in 1..nt {
        for s in 0..substeps {
            solver.step(&mut v, &mut scratch);
            if v.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
                let time = t.lo + (it - 1) as f64 * save + (s + 1) as f64 * dt;
                return Err(Error::numerical(format!("solution blew up at t = {time:.4}")));
            }
        }
        record(&v, it, &mut buf);
    }
    Dataset::new(Grid::from_axes(vec![*x, *t])?, 1, values)
}

/// Kuramoto-Sivashinsky with the canonical coefficients.
pub fn integrate_ks(u0: &[f64], x: &Axis, t: &Axis) -> Result<Dataset> {
    integrate_periodic(&ks_terms(), u0, x, t, KS_DT)
}
